//! Path scoring, per-channel answer distributions, the entropy gate, log-linear
//! fusion, calibration and MAP selection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine, EmbedError, Vector};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FusionError {
    #[error("no path supports any answer")]
    NoSupportingPaths,
    #[error("neither channel supports any answer")]
    BothChannelsEmpty,
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperParams(String),
}

/// Tunable constants of scoring, fusion and chain extraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    pub lambda_off: f64,
    pub lambda_ord: f64,
    pub tau: f64,
    pub gamma: f64,
    pub beta: f64,
    pub delta: f64,
    pub l_breadth: usize,
    pub l_depth: usize,
    pub k: usize,
    /// Paths kept per supported answer; 0 keeps every path.
    pub beam: usize,
    pub epsilon_floor: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            lambda_off: 1.0,
            lambda_ord: 1.0,
            tau: 0.5,
            gamma: 1.0,
            beta: 0.0,
            delta: 0.05,
            l_breadth: 5,
            l_depth: 6,
            k: 8,
            beam: 64,
            epsilon_floor: 1e-12,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), FusionError> {
        let bad = |what: &str| Err(FusionError::InvalidHyperParams(what.to_string()));
        let finite = [
            self.lambda_off,
            self.lambda_ord,
            self.tau,
            self.gamma,
            self.beta,
            self.delta,
            self.epsilon_floor,
        ]
        .iter()
        .all(|x| x.is_finite());
        if !finite {
            return bad("values must be finite");
        }
        if self.lambda_off < 0.0 {
            return bad("lambda_off must be >= 0");
        }
        if self.lambda_ord < 0.0 {
            return bad("lambda_ord must be >= 0");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.gamma <= 0.0 {
            return bad("gamma must be > 0");
        }
        if self.beta < 0.0 {
            return bad("beta must be >= 0");
        }
        if self.delta <= 0.0 {
            return bad("delta must be > 0");
        }
        if self.l_breadth == 0 || self.l_depth == 0 {
            return bad("path length caps must be >= 1");
        }
        if self.k == 0 {
            return bad("k must be >= 1");
        }
        if !(self.epsilon_floor > 0.0 && self.epsilon_floor < 1.0) {
            return bad("epsilon_floor must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn beam_width(&self) -> Option<usize> {
        (self.beam > 0).then_some(self.beam)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Breadth,
    Depth,
}

/// A scored path labeled with one answer it supports.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPath {
    pub channel: Channel,
    pub nodes: Vec<usize>,
    pub edges: Vec<usize>,
    /// Index into the query's answers.
    pub answer: usize,
    pub score: f64,
}

/// Probabilities aligned with the query's answer order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerDistribution {
    pub answers: Vec<String>,
    pub probs: Vec<f64>,
    pub entropy: f64,
}

impl AnswerDistribution {
    pub fn new(answers: Vec<String>, probs: Vec<f64>) -> Self {
        let entropy = shannon_entropy(&probs);
        Self {
            answers,
            probs,
            entropy,
        }
    }

    pub fn prob(&self, answer: &str) -> Option<f64> {
        self.answers.iter().position(|a| a == answer).map(|i| self.probs[i])
    }
}

/// Σ over path nodes of max(0, 1 − cos(f(q), ḡ(v))).
pub fn offtopic_penalty(query_vec: &Vector, smoothed: &[&Vector]) -> Result<f64, EmbedError> {
    smoothed
        .iter()
        .try_fold(0.0, |acc, v| Ok(acc + node_drift(query_vec, v)?))
}

pub fn node_drift(query_vec: &Vector, smoothed: &Vector) -> Result<f64, EmbedError> {
    Ok((1.0 - cosine(query_vec, smoothed)?).max(0.0))
}

/// S_B(p) = Σ log s_B(e) − λ_off · Σ drift(v).
pub fn score_breadth_path(edge_confidences: &[f64], node_drifts: &[f64], lambda_off: f64) -> f64 {
    let log_sum = edge_confidences.iter().fold(0.0, |acc, c| acc + c.ln());
    let drift = node_drifts.iter().fold(0.0, |acc, d| acc + d);
    log_sum - lambda_off * drift
}

/// S_D(p) = Σ log s_D(e) − λ_ord · (1 − lcs/|O(q)|).
pub fn score_depth_path(edge_confidences: &[f64], lcs: usize, query_ops: usize, lambda_ord: f64) -> f64 {
    let log_sum = edge_confidences.iter().fold(0.0, |acc, c| acc + c.ln());
    log_sum - lambda_ord * (1.0 - lcs as f64 / query_ops as f64)
}

/// Per-answer log-sum-exp of path scores, normalized over the answers.
pub fn answer_distribution(paths: &[ScoredPath], answers: &[String]) -> Result<AnswerDistribution, FusionError> {
    let shift = paths
        .iter()
        .map(|p| p.score)
        .filter(|s| s.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if shift == f64::NEG_INFINITY {
        return Err(FusionError::NoSupportingPaths);
    }
    let mut mass = vec![0.0; answers.len()];
    for p in paths {
        mass[p.answer] += (p.score - shift).exp();
    }
    let total: f64 = mass.iter().sum();
    let probs = mass.into_iter().map(|m| m / total).collect();
    Ok(AnswerDistribution::new(answers.to_vec(), probs))
}

/// −Σ p ln p with 0 ln 0 = 0.
pub fn shannon_entropy(probs: &[f64]) -> f64 {
    let h: f64 = probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    h.max(0.0)
}

/// α = e^{−H_D} / (e^{−H_D} + e^{−H_B}), the weight on the depth channel.
pub fn entropy_gate(h_breadth: f64, h_depth: f64) -> f64 {
    1.0 / (1.0 + (h_depth - h_breadth).exp())
}

/// Max-shifted softmax; −∞ logits get probability 0.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|&x| (x - m).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// softmax(α·log P_D + (1−α)·log P_B) with each probability floored at ε.
pub fn fuse(
    p_breadth: &AnswerDistribution,
    p_depth: &AnswerDistribution,
    alpha: f64,
    epsilon: f64,
) -> AnswerDistribution {
    let logits: Vec<f64> = p_breadth
        .probs
        .iter()
        .zip(&p_depth.probs)
        .map(|(&b, &d)| alpha * d.max(epsilon).ln() + (1.0 - alpha) * b.max(epsilon).ln())
        .collect();
    AnswerDistribution::new(p_breadth.answers.clone(), softmax(&logits))
}

/// Gates and fuses whichever channels produced a distribution. A lone channel
/// passes through unchanged with α pinned to 1 (depth) or 0 (breadth).
pub fn fuse_channels(
    p_breadth: Option<&AnswerDistribution>,
    p_depth: Option<&AnswerDistribution>,
    epsilon: f64,
) -> Result<(AnswerDistribution, f64), FusionError> {
    match (p_breadth, p_depth) {
        (Some(b), Some(d)) => {
            let alpha = entropy_gate(b.entropy, d.entropy);
            Ok((fuse(b, d, alpha, epsilon), alpha))
        }
        (Some(b), None) => Ok((b.clone(), 0.0)),
        (None, Some(d)) => Ok((d.clone(), 1.0)),
        (None, None) => Err(FusionError::BothChannelsEmpty),
    }
}

/// softmax((1/γ)·log P − β·(H_B + H_D)).
pub fn calibrate(
    p_fused: &AnswerDistribution,
    gamma: f64,
    beta: f64,
    h_breadth: f64,
    h_depth: f64,
) -> AnswerDistribution {
    let penalty = beta * (h_breadth + h_depth);
    let logits: Vec<f64> = p_fused.probs.iter().map(|&p| p.ln() / gamma - penalty).collect();
    AnswerDistribution::new(p_fused.answers.clone(), softmax(&logits))
}

/// Argmax; exact ties go to the smaller answer id.
pub fn select_answer(p: &AnswerDistribution) -> &str {
    let mut best = 0;
    for i in 1..p.probs.len() {
        let better = p.probs[i] > p.probs[best] || (p.probs[i] == p.probs[best] && p.answers[i] < p.answers[best]);
        if better {
            best = i;
        }
    }
    &p.answers[best]
}
