//! Monte Carlo checks of the fusion generalization bound: the pointwise
//! Hölder inequality, the oracle inequality with gating regret, and risk
//! comparisons on seeded synthetic channel pairs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fusion::{entropy_gate, shannon_entropy};

/// Floor applied before taking logs of channel probabilities.
pub const LOSS_FLOOR: f64 = 1e-12;

/// How the two channels relate to the true answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioMode {
    /// Independent symmetric Dirichlet draws with concentration 1/sharpness.
    Plain,
    /// Each channel peaks on the true answer with a random strength scaled by
    /// its sharpness, so lower entropy always means lower loss.
    Calibrated,
    /// The sharper channel peaks on a wrong answer.
    AntiCalibrated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticScenario {
    pub answer_count: usize,
    pub sharpness_b: f64,
    pub sharpness_d: f64,
    pub mode: ScenarioMode,
    pub trials: usize,
    pub rng_seed: u64,
}

impl SyntheticScenario {
    pub fn validate(&self) -> Result<(), String> {
        if self.answer_count < 2 {
            return Err("answer_count must be >= 2".into());
        }
        if !(self.sharpness_b > 0.0 && self.sharpness_d > 0.0) {
            return Err("sharpness must be positive".into());
        }
        if self.trials == 0 {
            return Err("trials must be >= 1".into());
        }
        Ok(())
    }
}

/// One synthetic draw: two channel distributions and the true answer.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSample {
    pub p_b: Vec<f64>,
    pub p_d: Vec<f64>,
    pub y: usize,
}

/// Generator for trial `index`: the seed picks the key, the index the stream,
/// so every trial is reproducible on its own.
pub fn trial_rng(seed: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn normalize_log(logs: &[f64]) -> Vec<f64> {
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// Symmetric Dirichlet(a) draw, computed from log-gamma variates so tiny
/// concentrations do not underflow to an all-zero vector.
pub fn dirichlet<R: Rng>(rng: &mut R, n: usize, a: f64) -> Vec<f64> {
    if a == 0.0 {
        let mut p = vec![0.0; n];
        p[rng.random_range(0..n)] = 1.0;
        return p;
    }
    // G(a) = G(a+1)·U^(1/a)
    let gamma = Gamma::new(a + 1.0, 1.0).expect("positive shape");
    let logs: Vec<f64> = (0..n)
        .map(|_| {
            let g: f64 = gamma.sample(rng);
            let u: f64 = 1.0 - rng.random::<f64>();
            g.ln() + u.ln() / a
        })
        .collect();
    normalize_log(&logs)
}

/// softmax(κ·e_peak) over n answers; κ = ∞ gives a point mass.
pub fn peaked(n: usize, peak: usize, kappa: f64) -> Vec<f64> {
    if kappa.is_infinite() {
        let mut p = vec![0.0; n];
        p[peak] = 1.0;
        return p;
    }
    let logs: Vec<f64> = (0..n).map(|i| if i == peak { kappa } else { 0.0 }).collect();
    normalize_log(&logs)
}

pub fn sample_channel_pair(s: &SyntheticScenario, index: u64) -> ChannelSample {
    let n = s.answer_count;
    let mut rng = trial_rng(s.rng_seed, index);
    let y = rng.random_range(0..n);
    let strength = Exp::new(0.5).expect("positive rate");
    match s.mode {
        ScenarioMode::Plain => {
            let p_b = dirichlet(&mut rng, n, 1.0 / s.sharpness_b);
            let p_d = dirichlet(&mut rng, n, 1.0 / s.sharpness_d);
            ChannelSample { p_b, p_d, y }
        }
        ScenarioMode::Calibrated => {
            let kb = s.sharpness_b * strength.sample(&mut rng);
            let kd = s.sharpness_d * strength.sample(&mut rng);
            ChannelSample {
                p_b: peaked(n, y, kb),
                p_d: peaked(n, y, kd),
                y,
            }
        }
        ScenarioMode::AntiCalibrated => {
            let kb = s.sharpness_b * strength.sample(&mut rng);
            let kd = s.sharpness_d * strength.sample(&mut rng);
            let wrong = (y + 1 + rng.random_range(0..n - 1)) % n;
            let (sharp_peak_b, sharp_peak_d) = if kb >= kd { (wrong, y) } else { (y, wrong) };
            ChannelSample {
                p_b: peaked(n, sharp_peak_b, kb),
                p_d: peaked(n, sharp_peak_d, kd),
                y,
            }
        }
    }
}

/// Log loss with the probability floored.
pub fn log_loss(p: &[f64], y: usize) -> f64 {
    -p[y].max(LOSS_FLOOR).ln()
}

/// Fused distribution with the same flooring used by the losses.
pub fn fused(p_b: &[f64], p_d: &[f64], alpha: f64) -> Vec<f64> {
    let logs: Vec<f64> = p_b
        .iter()
        .zip(p_d)
        .map(|(&b, &d)| (1.0 - alpha) * b.max(LOSS_FLOOR).ln() + alpha * d.max(LOSS_FLOOR).ln())
        .collect();
    normalize_log(&logs)
}

/// [(1−α)ℓ_B + αℓ_D] − ℓ_F at the true answer; never below −1e-9.
pub fn check_pointwise_bound(p_b: &[f64], p_d: &[f64], alpha: f64, y: usize) -> f64 {
    let mix = (1.0 - alpha) * log_loss(p_b, y) + alpha * log_loss(p_d, y);
    mix - log_loss(&fused(p_b, p_d, alpha), y)
}

/// Random (P_B, P_D, α, y) with |A| ∈ {2..=8} and mixed concentrations.
pub fn random_triple(seed: u64, index: u64) -> (Vec<f64>, Vec<f64>, f64, usize) {
    let mut rng = trial_rng(seed, index);
    let n = rng.random_range(2..=8);
    let conc = [0.05, 0.3, 1.0, 5.0];
    let ab = conc[rng.random_range(0..conc.len())];
    let ad = conc[rng.random_range(0..conc.len())];
    let p_b = dirichlet(&mut rng, n, ab);
    let p_d = dirichlet(&mut rng, n, ad);
    let alpha = rng.random::<f64>();
    let y = rng.random_range(0..n);
    (p_b, p_d, alpha, y)
}

/// Per-trial quantities behind the risk estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialLoss {
    pub loss_b: f64,
    pub loss_d: f64,
    pub loss_fused: f64,
    pub alpha: f64,
    /// 1 when the depth channel has the lower conditional loss.
    pub alpha_oracle: f64,
    pub entropy_b: f64,
    pub entropy_d: f64,
}

impl TrialLoss {
    /// ℓ_D − ℓ_B.
    pub fn gap(&self) -> f64 {
        self.loss_d - self.loss_b
    }

    pub fn regret(&self) -> f64 {
        self.gap().abs() * (self.alpha - self.alpha_oracle).abs()
    }

    pub fn oracle_loss(&self) -> f64 {
        self.loss_b.min(self.loss_d)
    }

    /// (1−α)ℓ_B + αℓ_D, the Hölder upper bound on the fused loss.
    pub fn mixture_bound(&self) -> f64 {
        (1.0 - self.alpha) * self.loss_b + self.alpha * self.loss_d
    }
}

/// The scenarios make the realized per-trial loss the conditional loss given
/// the channel entropies, so the oracle gate is read off directly.
pub fn trial_loss(s: &SyntheticScenario, index: u64) -> TrialLoss {
    let ChannelSample { p_b, p_d, y } = sample_channel_pair(s, index);
    let (entropy_b, entropy_d) = (shannon_entropy(&p_b), shannon_entropy(&p_d));
    let alpha = entropy_gate(entropy_b, entropy_d);
    let loss_b = log_loss(&p_b, y);
    let loss_d = log_loss(&p_d, y);
    TrialLoss {
        loss_b,
        loss_d,
        loss_fused: log_loss(&fused(&p_b, &p_d, alpha), y),
        alpha,
        alpha_oracle: if loss_d < loss_b { 1.0 } else { 0.0 },
        entropy_b,
        entropy_d,
    }
}

/// Mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub trials: usize,
    pub risk_b: f64,
    pub risk_d: f64,
    pub risk_fused: f64,
    pub risk_oracle: f64,
    pub gate_regret: f64,
    pub bound_violations: usize,
    pub se_b: f64,
    pub se_d: f64,
    pub se_fused: f64,
    pub se_regret: f64,
    /// risk_fused − min(risk_b, risk_d).
    pub fused_excess: f64,
    /// Standard error of the paired per-trial difference behind `fused_excess`.
    pub se_fused_excess: f64,
    /// Standard error of the paired per-trial ℓ_B − ℓ_D.
    pub se_channel_gap: f64,
    /// Largest per-trial |ℓ_bound − (min + (α − α*)Δ)|.
    pub max_decomposition_error: f64,
}

impl RiskReport {
    /// R(P_F) ≤ R_oracle + E_gate up to `tol`.
    pub fn oracle_inequality_holds(&self, tol: f64) -> bool {
        self.risk_fused <= self.risk_oracle + self.gate_regret + tol
    }

    /// Fused risk within `k` standard errors of the better channel.
    pub fn fused_within(&self, k: f64) -> bool {
        self.fused_excess <= k * self.se_fused_excess
    }

    /// Gate regret within `k` standard errors of zero.
    pub fn regret_within(&self, k: f64) -> bool {
        self.gate_regret <= k * self.se_regret
    }
}

pub fn summarize(losses: &[TrialLoss]) -> RiskReport {
    let col = |f: fn(&TrialLoss) -> f64| losses.iter().map(f).collect::<Vec<f64>>();
    let (risk_b, se_b) = mean_se(&col(|t| t.loss_b));
    let (risk_d, se_d) = mean_se(&col(|t| t.loss_d));
    let (risk_fused, se_fused) = mean_se(&col(|t| t.loss_fused));
    let (risk_oracle, _) = mean_se(&col(TrialLoss::oracle_loss));
    let (gate_regret, se_regret) = mean_se(&col(TrialLoss::regret));
    let better_is_b = risk_b <= risk_d;
    let excess: Vec<f64> = losses
        .iter()
        .map(|t| t.loss_fused - if better_is_b { t.loss_b } else { t.loss_d })
        .collect();
    let (fused_excess, se_fused_excess) = mean_se(&excess);
    let (_, se_channel_gap) = mean_se(&col(|t| t.loss_b - t.loss_d));
    let bound_violations = losses
        .iter()
        .filter(|t| t.mixture_bound() - t.loss_fused < -1e-9)
        .count();
    let max_decomposition_error = losses
        .iter()
        .map(|t| (t.mixture_bound() - (t.oracle_loss() + (t.alpha - t.alpha_oracle) * t.gap())).abs())
        .fold(0.0, f64::max);
    RiskReport {
        trials: losses.len(),
        risk_b,
        risk_d,
        risk_fused,
        risk_oracle,
        gate_regret,
        bound_violations,
        se_b,
        se_d,
        se_fused,
        se_regret,
        fused_excess,
        se_fused_excess,
        se_channel_gap,
        max_decomposition_error,
    }
}

/// Monte Carlo risk estimates. Trials are independent streams, so the
/// parallel map reproduces the sequential result exactly.
pub fn estimate_risks(s: &SyntheticScenario) -> RiskReport {
    let losses: Vec<TrialLoss> = (0..s.trials as u64).into_par_iter().map(|i| trial_loss(s, i)).collect();
    summarize(&losses)
}

pub fn estimate_risks_sequential(s: &SyntheticScenario) -> RiskReport {
    let losses: Vec<TrialLoss> = (0..s.trials as u64).map(|i| trial_loss(s, i)).collect();
    summarize(&losses)
}

pub const CSV_HEADER: &str = "mode,answer_count,sharpness_b,sharpness_d,trials,seed,risk_b,risk_d,risk_fused,risk_oracle,gate_regret,se_regret,fused_excess,se_fused_excess,bound_violations";

fn mode_name(m: ScenarioMode) -> &'static str {
    match m {
        ScenarioMode::Plain => "plain",
        ScenarioMode::Calibrated => "calibrated",
        ScenarioMode::AntiCalibrated => "anti_calibrated",
    }
}

/// Comma-separated table with one row per scenario.
pub fn risk_table(rows: &[(SyntheticScenario, RiskReport)]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (s, r) in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            mode_name(s.mode),
            s.answer_count,
            s.sharpness_b,
            s.sharpness_d,
            r.trials,
            s.rng_seed,
            r.risk_b,
            r.risk_d,
            r.risk_fused,
            r.risk_oracle,
            r.gate_regret,
            r.se_regret,
            r.fused_excess,
            r.se_fused_excess,
            r.bound_violations
        ));
    }
    out
}
