//! End-to-end query evaluation over a breadth/depth graph pair and the
//! leave-one-out evidence chain.

use std::io::Write;
use std::process::{Command, Stdio};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::breadth::{rank_seeds, BeamBuckets, BreadthGraph, BreadthIndex, PathSearch};
use crate::depth::{extract_query_ops, lcs_typed, path_ops, paths_into, DepthGraph, DepthNodeKind};
use crate::embedding::{cosine, EmbedError, Embedder, Vector};
use crate::error::GraphError;
use crate::fusion::{
    answer_distribution, calibrate, fuse_channels, node_drift, score_depth_path, select_answer, AnswerDistribution,
    Channel, FusionError, HyperParams, ScoredPath,
};
use crate::query::{Answer, Query, QueryError};
use crate::trace::Status;
use crate::EdgeSet;

pub const OUTCOME_FORMAT: &str = "fusion-outcome";
pub const OUTCOME_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error("path verifier failed: {0}")]
    Verifier(String),
}

/// Whether independent evaluations may run on the rayon pool. Results are
/// identical either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Sequential,
    Parallel,
}

/// Optional external filter on answer-supporting paths.
pub trait PathVerifier: Send + Sync {
    /// `context` is the stitched text of the path's nodes.
    fn accept(&self, context: &str, answer: &Answer) -> Result<bool, String>;
}

/// Runs a command per path; it reads `{"context","answer"}` JSON on stdin and
/// prints `accept` or `reject`.
pub struct CommandVerifier {
    pub program: String,
    pub args: Vec<String>,
}

impl PathVerifier for CommandVerifier {
    fn accept(&self, context: &str, answer: &Answer) -> Result<bool, String> {
        let payload = serde_json::json!({ "context": context, "answer": answer.display });
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| format!("{}: {e}", self.program))?;
        child
            .stdin
            .take()
            .expect("stdin is piped")
            .write_all(payload.to_string().as_bytes())
            .map_err(|e| e.to_string())?;
        let out = child.wait_with_output().map_err(|e| e.to_string())?;
        match String::from_utf8_lossy(&out.stdout).trim() {
            "accept" => Ok(true),
            "reject" => Ok(false),
            other => Err(format!("unexpected verifier output `{other}`")),
        }
    }
}

/// Edges withheld from each graph during one evaluation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Mask {
    pub breadth: EdgeSet,
    pub depth: EdgeSet,
}

impl Mask {
    pub fn with(&self, edge: EdgeKey) -> Mask {
        let mut m = self.clone();
        match edge.channel {
            Channel::Breadth => m.breadth.insert(edge.index),
            Channel::Depth => m.depth.insert(edge.index),
        };
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeKey {
    pub channel: Channel,
    pub index: usize,
}

/// Serializable reference to one graph edge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeRef {
    pub channel: Channel,
    pub src: String,
    pub dst: String,
    pub relation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainEdge {
    pub edge: EdgeRef,
    pub delta: f64,
    pub confidence: f64,
}

/// Surviving chain with Δ_e, every candidate's Δ_e, and the pruned edges.
pub type ChainSplit = (Vec<(EdgeKey, f64)>, Vec<(EdgeKey, f64)>, Vec<EdgeKey>);

/// Result of one masked evaluation.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub breadth_paths: Vec<ScoredPath>,
    pub depth_paths: Vec<ScoredPath>,
    pub p_breadth: Option<AnswerDistribution>,
    pub p_depth: Option<AnswerDistribution>,
    /// `None` when both channels abstain.
    pub fused: Option<(AnswerDistribution, f64, AnswerDistribution)>,
}

impl Evaluation {
    /// Calibrated probability of `answer`; 0 when the pipeline abstains.
    pub fn calibrated_prob(&self, answer: usize) -> f64 {
        self.fused.as_ref().map_or(0.0, |(_, _, c)| c.probs[answer])
    }
}

/// Full replay record of one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionOutcome {
    pub format: String,
    pub version: u32,
    pub question_id: String,
    pub answers: Vec<Answer>,
    pub embedder: String,
    pub hyperparams: HyperParams,
    pub abstain: bool,
    pub p_breadth: Option<AnswerDistribution>,
    pub p_depth: Option<AnswerDistribution>,
    pub alpha: Option<f64>,
    pub p_fused: Option<AnswerDistribution>,
    pub p_calibrated: Option<AnswerDistribution>,
    pub map_answer: Option<String>,
    pub chain: Vec<ChainEdge>,
    /// Δ_e for every edge on a path supporting the MAP answer.
    pub edge_marginals: Vec<ChainEdge>,
    pub pruned: Vec<EdgeRef>,
}

impl FusionOutcome {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("outcome serializes");
        out.push(b'\n');
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }
}

/// Prepared query over a graph pair: embeddings, O(q) and answer support are
/// computed once and reused by every masked evaluation.
pub struct Engine<'a> {
    breadth: &'a BreadthGraph,
    depth: &'a DepthGraph,
    query: &'a Query,
    hp: HyperParams,
    execution: Execution,
    embedder_name: String,
    index: BreadthIndex<'a>,
    query_vec: Vector,
    query_ops: crate::depth::OpSequence,
    breadth_support: Vec<Vec<usize>>,
    depth_support: Vec<Vec<usize>>,
    verifier: Option<&'a dyn PathVerifier>,
}

impl<'a> Engine<'a> {
    pub fn new(
        breadth: &'a BreadthGraph,
        depth: &'a DepthGraph,
        query: &'a Query,
        hp: HyperParams,
        embedder: &dyn Embedder,
    ) -> Result<Self, PipelineError> {
        query.validate()?;
        hp.validate()?;
        let query_ops = extract_query_ops(query)?;
        let index = BreadthIndex::new(breadth, embedder)?;
        let query_vec = embedder.embed(&query.ranking_text())?;
        let breadth_support = breadth
            .nodes()
            .iter()
            .map(|n| query.supported_by(&n.label, &n.answer_support))
            .collect();
        let depth_support = depth
            .nodes()
            .iter()
            .map(|n| match &n.kind {
                DepthNodeKind::Action { .. } => vec![],
                DepthNodeKind::Validator { outcome, .. } if *outcome != Status::Ok => vec![],
                _ => query.supported_by(&n.label, &n.answer_support),
            })
            .collect();
        Ok(Self {
            breadth,
            depth,
            query,
            hp,
            execution: Execution::Sequential,
            embedder_name: embedder.name().to_string(),
            index,
            query_vec,
            query_ops,
            breadth_support,
            depth_support,
            verifier: None,
        })
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn with_verifier(mut self, verifier: &'a dyn PathVerifier) -> Self {
        self.verifier = Some(verifier);
        self
    }

    fn answer_ids(&self) -> Vec<String> {
        self.query.answers.iter().map(|a| a.id.clone()).collect()
    }

    fn verified(
        &self,
        paths: Vec<ScoredPath>,
        text: impl Fn(&ScoredPath) -> String,
    ) -> Result<Vec<ScoredPath>, PipelineError> {
        let Some(v) = self.verifier else { return Ok(paths) };
        let mut kept = Vec::with_capacity(paths.len());
        for p in paths {
            if v.accept(&text(&p), &self.query.answers[p.answer])
                .map_err(PipelineError::Verifier)?
            {
                kept.push(p);
            }
        }
        Ok(kept)
    }

    /// Breadth channel: smoothed seeds, best-first paths, path scores.
    pub fn breadth_paths(&self, removed: &EdgeSet) -> Result<Vec<ScoredPath>, PipelineError> {
        let smoothed = self.index.smoothed_all(removed);
        let mut scores = Vec::with_capacity(smoothed.len());
        let mut drift = Vec::with_capacity(smoothed.len());
        for s in &smoothed {
            scores.push(cosine(&self.query_vec, s)?);
            drift.push(node_drift(&self.query_vec, s)?);
        }
        let seeds = rank_seeds(&scores, self.hp.k);
        let search = PathSearch {
            max_len: self.hp.l_breadth,
            beam: self.hp.beam_width(),
            lambda_off: self.hp.lambda_off,
            drift: &drift,
            support: &self.breadth_support,
            answer_count: self.query.answers.len(),
        };
        let paths = self.index.enumerate_paths(&seeds, &search, removed);
        let scored = paths
            .into_iter()
            .flat_map(|p| {
                p.answers
                    .iter()
                    .map(|&a| ScoredPath {
                        channel: Channel::Breadth,
                        nodes: p.nodes.clone(),
                        edges: p.edges.clone(),
                        answer: a,
                        score: p.score,
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        let nodes = self.breadth.nodes();
        self.verified(scored, |p| {
            p.nodes
                .iter()
                .map(|&v| nodes[v].text.as_str())
                .collect::<Vec<_>>()
                .join(" | ")
        })
    }

    /// Depth channel: admissible paths into answer-supporting nodes, scored
    /// by edge confidence and typed-LCS agreement with O(q).
    pub fn depth_paths(&self, removed: &EdgeSet) -> Result<Vec<ScoredPath>, PipelineError> {
        let incoming = self.depth.incoming(removed);
        let edges = self.depth.edges();
        let mut candidates = Vec::new();
        for (t, support) in self.depth_support.iter().enumerate() {
            if support.is_empty() {
                continue;
            }
            for p in paths_into(self.depth, &incoming, t, self.hp.l_depth) {
                if p.edges.is_empty() {
                    continue;
                }
                let conf: Vec<f64> = p.edges.iter().map(|&e| edges[e].confidence).collect();
                let lcs = lcs_typed(&self.query_ops, &path_ops(self.depth, &p.nodes));
                let score = score_depth_path(&conf, lcs, self.query_ops.len(), self.hp.lambda_ord);
                candidates.push((score, p, support));
            }
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.nodes.cmp(&b.1.nodes)));
        let mut buckets = BeamBuckets::new(self.query.answers.len(), self.hp.beam_width());
        let mut scored = Vec::new();
        for (score, p, support) in candidates {
            if !buckets.admit(support) {
                continue;
            }
            for &a in support {
                scored.push(ScoredPath {
                    channel: Channel::Depth,
                    nodes: p.nodes.clone(),
                    edges: p.edges.clone(),
                    answer: a,
                    score,
                });
            }
            if buckets.full() {
                break;
            }
        }
        let nodes = self.depth.nodes();
        self.verified(scored, |p| {
            p.nodes
                .iter()
                .map(|&v| {
                    if nodes[v].label.is_empty() {
                        nodes[v].node_id.as_str()
                    } else {
                        nodes[v].label.as_str()
                    }
                })
                .collect::<Vec<_>>()
                .join(" -> ")
        })
    }

    /// Eqs. 3–8 with the masked edges removed.
    pub fn evaluate(&self, mask: &Mask) -> Result<Evaluation, PipelineError> {
        let (b, d) = match self.execution {
            Execution::Sequential => (self.breadth_paths(&mask.breadth), self.depth_paths(&mask.depth)),
            Execution::Parallel => rayon::join(|| self.breadth_paths(&mask.breadth), || self.depth_paths(&mask.depth)),
        };
        let (breadth_paths, depth_paths) = (b?, d?);
        let ids = self.answer_ids();
        let abstain_ok = |r: Result<AnswerDistribution, FusionError>| match r {
            Ok(p) => Ok(Some(p)),
            Err(FusionError::NoSupportingPaths) => Ok(None),
            Err(e) => Err(e),
        };
        let p_breadth = abstain_ok(answer_distribution(&breadth_paths, &ids))?;
        let p_depth = abstain_ok(answer_distribution(&depth_paths, &ids))?;
        let fused = match fuse_channels(p_breadth.as_ref(), p_depth.as_ref(), self.hp.epsilon_floor) {
            Ok((p, alpha)) => {
                let hb = p_breadth.as_ref().map_or(0.0, |p| p.entropy);
                let hd = p_depth.as_ref().map_or(0.0, |p| p.entropy);
                let cal = calibrate(&p, self.hp.gamma, self.hp.beta, hb, hd);
                Some((p, alpha, cal))
            }
            Err(FusionError::BothChannelsEmpty) => None,
            Err(e) => return Err(e.into()),
        };
        Ok(Evaluation {
            breadth_paths,
            depth_paths,
            p_breadth,
            p_depth,
            fused,
        })
    }

    pub fn edge_ref(&self, key: EdgeKey) -> EdgeRef {
        match key.channel {
            Channel::Breadth => {
                let e = &self.breadth.edges()[key.index];
                EdgeRef {
                    channel: Channel::Breadth,
                    src: e.src.clone(),
                    dst: e.dst.clone(),
                    relation: e.relation.as_str().into(),
                }
            }
            Channel::Depth => {
                let e = &self.depth.edges()[key.index];
                EdgeRef {
                    channel: Channel::Depth,
                    src: e.src.clone(),
                    dst: e.dst.clone(),
                    relation: e.relation.as_str().into(),
                }
            }
        }
    }

    fn confidence(&self, key: EdgeKey) -> f64 {
        match key.channel {
            Channel::Breadth => self.breadth.edges()[key.index].confidence,
            Channel::Depth => self.depth.edges()[key.index].confidence,
        }
    }

    /// Edges on paths supporting `answer`: breadth paths first, then depth,
    /// each in ranked order with edges in path order, first occurrence kept.
    pub fn chain_candidates(&self, eval: &Evaluation, answer: usize) -> Vec<EdgeKey> {
        let mut seen = std::collections::BTreeSet::new();
        eval.breadth_paths
            .iter()
            .chain(&eval.depth_paths)
            .filter(|p| p.answer == answer)
            .flat_map(|p| {
                p.edges.iter().map(|&index| EdgeKey {
                    channel: p.channel,
                    index,
                })
            })
            .filter(|k| seen.insert(*k))
            .collect()
    }

    /// Δ_e = P̃(a*) − P̃(a*) with `e` additionally masked, for each candidate.
    pub fn marginals(
        &self,
        base: &Mask,
        candidates: &[EdgeKey],
        answer: usize,
        p0: f64,
    ) -> Result<Vec<f64>, PipelineError> {
        let one = |k: &EdgeKey| -> Result<f64, PipelineError> {
            Ok(p0 - self.evaluate(&base.with(*k))?.calibrated_prob(answer))
        };
        match self.execution {
            Execution::Sequential => candidates.iter().map(one).collect(),
            Execution::Parallel => candidates.par_iter().map(one).collect(),
        }
    }

    /// Greedy pruning in ascending Δ_e, stopping before the first prune that
    /// would push the drop of P̃(a*) past δ. Returns the surviving edges in
    /// path order, every Δ_e, and the pruned edges in pruning order.
    pub fn minimal_evidence_chain(&self, eval: &Evaluation, answer: usize) -> Result<ChainSplit, PipelineError> {
        let p0 = eval.calibrated_prob(answer);
        let candidates = self.chain_candidates(eval, answer);
        let deltas = self.marginals(&Mask::default(), &candidates, answer, p0)?;
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by(|&a, &b| deltas[a].total_cmp(&deltas[b]).then(a.cmp(&b)));

        let mut mask = Mask::default();
        let mut pruned = Vec::new();
        for i in order {
            let trial = mask.with(candidates[i]);
            let drop = p0 - self.evaluate(&trial)?.calibrated_prob(answer);
            if drop > self.hp.delta {
                break;
            }
            mask = trial;
            pruned.push(candidates[i]);
        }
        let marginals: Vec<(EdgeKey, f64)> = candidates.iter().copied().zip(deltas.iter().copied()).collect();
        let chain = marginals.iter().filter(|(k, _)| !pruned.contains(k)).copied().collect();
        Ok((chain, marginals, pruned))
    }

    /// Mask that removes the given pruned edges.
    pub fn mask_of(edges: &[EdgeKey]) -> Mask {
        edges.iter().fold(Mask::default(), |m, k| m.with(*k))
    }

    pub fn run(&self) -> Result<FusionOutcome, PipelineError> {
        let eval = self.evaluate(&Mask::default())?;
        let mut outcome = FusionOutcome {
            format: OUTCOME_FORMAT.into(),
            version: OUTCOME_VERSION,
            question_id: self.query.question_id.clone(),
            answers: self.query.answers.clone(),
            embedder: self.embedder_name.clone(),
            hyperparams: self.hp,
            abstain: eval.fused.is_none(),
            p_breadth: eval.p_breadth.clone(),
            p_depth: eval.p_depth.clone(),
            alpha: None,
            p_fused: None,
            p_calibrated: None,
            map_answer: None,
            chain: vec![],
            edge_marginals: vec![],
            pruned: vec![],
        };
        let Some((fused, alpha, calibrated)) = &eval.fused else {
            return Ok(outcome);
        };
        let map = select_answer(calibrated).to_string();
        let answer = self
            .query
            .answers
            .iter()
            .position(|a| a.id == map)
            .expect("answer from query");
        let (chain, marginals, pruned) = self.minimal_evidence_chain(&eval, answer)?;
        let to_chain = |(k, delta): &(EdgeKey, f64)| ChainEdge {
            edge: self.edge_ref(*k),
            delta: *delta,
            confidence: self.confidence(*k),
        };
        outcome.alpha = Some(*alpha);
        outcome.p_fused = Some(fused.clone());
        outcome.p_calibrated = Some(calibrated.clone());
        outcome.map_answer = Some(map);
        outcome.chain = chain.iter().map(to_chain).collect();
        outcome.edge_marginals = marginals.iter().map(to_chain).collect();
        outcome.pruned = pruned.iter().map(|k| self.edge_ref(*k)).collect();
        Ok(outcome)
    }
}

/// Runs the whole pipeline on a prebuilt graph pair.
pub fn run_query(
    breadth: &BreadthGraph,
    depth: &DepthGraph,
    query: &Query,
    hp: HyperParams,
    embedder: &dyn Embedder,
    execution: Execution,
) -> Result<FusionOutcome, PipelineError> {
    Engine::new(breadth, depth, query, hp, embedder)?
        .with_execution(execution)
        .run()
}

/// Human-readable account of an outcome's answer and evidence chain.
pub fn explain(outcome: &FusionOutcome) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    let _ = writeln!(s, "question: {}", outcome.question_id);
    if outcome.abstain {
        let _ = writeln!(s, "abstain: neither channel supports any answer");
        return s;
    }
    let display = |id: &str| {
        outcome
            .answers
            .iter()
            .find(|a| a.id == id)
            .map_or(id.to_string(), |a| a.display.clone())
    };
    let map = outcome.map_answer.as_deref().unwrap_or_default();
    let _ = writeln!(s, "answer: {} ({})", map, display(map));
    let prob = |d: &Option<AnswerDistribution>| d.as_ref().and_then(|d| d.prob(map));
    let fmt = |p: Option<f64>| p.map_or("abstained".to_string(), |p| format!("{p:.6}"));
    let _ = writeln!(s, "breadth P(a*) = {}", fmt(prob(&outcome.p_breadth)));
    let _ = writeln!(s, "depth   P(a*) = {}", fmt(prob(&outcome.p_depth)));
    if let Some(alpha) = outcome.alpha {
        let _ = writeln!(s, "gate alpha    = {alpha:.6}");
    }
    let _ = writeln!(s, "calibrated    = {}", fmt(prob(&outcome.p_calibrated)));
    let _ = writeln!(
        s,
        "evidence chain ({} edges, delta budget {}):",
        outcome.chain.len(),
        outcome.hyperparams.delta
    );
    for (i, c) in outcome.chain.iter().enumerate() {
        let channel = match c.edge.channel {
            Channel::Breadth => "B",
            Channel::Depth => "D",
        };
        let _ = writeln!(
            s,
            "  {:>2}. [{channel}] {} -{}-> {}  s={:.3}  delta={:.6}",
            i + 1,
            c.edge.src,
            c.edge.relation,
            c.edge.dst,
            c.confidence,
            c.delta
        );
    }
    if !outcome.pruned.is_empty() {
        let _ = writeln!(s, "pruned {} edges", outcome.pruned.len());
    }
    s
}
