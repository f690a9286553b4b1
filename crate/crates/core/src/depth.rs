//! Depth causal graph: execution provenance of actions, artifacts and
//! validators, with every edge passing typing, temporal and unit gates.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::breadth::{event_label, read_graph_lines, write_line, GraphHeader, GRAPH_VERSION};
use crate::error::GraphError;
use crate::query::Query;
use crate::trace::{EventKind, EventValue, OpType, Status, Trace, TraceEvent};
use crate::units::{canonical_unit, normalize_unit, UNITLESS};
use crate::EdgeSet;

pub const DEPTH_FORMAT: &str = "depth-graph";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueType {
    Number,
    Text,
    Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DepthNodeKind {
    Action {
        tool: String,
        op_type: OpType,
        params_digest: String,
        env_sig: String,
        unit: Option<String>,
    },
    Artifact {
        value: Option<EventValue>,
        unit: Option<String>,
        value_type: ValueType,
    },
    Validator {
        check_kind: OpType,
        outcome: Status,
        unit: Option<String>,
    },
}

impl DepthNodeKind {
    fn tag(&self) -> &'static str {
        match self {
            DepthNodeKind::Action { .. } => "action",
            DepthNodeKind::Artifact { .. } => "artifact",
            DepthNodeKind::Validator { .. } => "validator",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthNode {
    pub node_id: String,
    pub timestamp: u64,
    pub kind: DepthNodeKind,
    /// Canonical payload label; empty for actions.
    pub label: String,
    pub answer_support: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthRelation {
    Consumes,
    Produces,
    VerifiedBy,
    Carryover,
}

impl DepthRelation {
    pub fn as_str(self) -> &'static str {
        match self {
            DepthRelation::Consumes => "consumes",
            DepthRelation::Produces => "produces",
            DepthRelation::VerifiedBy => "verified_by",
            DepthRelation::Carryover => "carryover",
        }
    }

    /// The only relation allowed between the given endpoint kinds.
    pub fn for_kinds(src: &DepthNodeKind, dst: &DepthNodeKind) -> Option<Self> {
        use DepthNodeKind::*;
        match (src, dst) {
            (Artifact { .. }, Action { .. }) => Some(DepthRelation::Consumes),
            (Action { .. }, Artifact { .. }) => Some(DepthRelation::Produces),
            (Artifact { .. }, Validator { .. }) => Some(DepthRelation::VerifiedBy),
            (Artifact { .. }, Artifact { .. }) => Some(DepthRelation::Carryover),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthEdge {
    pub src: String,
    pub dst: String,
    pub relation: DepthRelation,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate {
    Endpoint,
    Typing,
    Temporal,
    Units,
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gate::Endpoint => "endpoint",
            Gate::Typing => "typing",
            Gate::Temporal => "temporal",
            Gate::Units => "units",
        })
    }
}

/// A candidate edge rejected by an admission gate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedEdge {
    pub src: String,
    pub dst: String,
    pub gate: Gate,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DepthGraph {
    nodes: Vec<DepthNode>,
    edges: Vec<DepthEdge>,
    index: HashMap<String, usize>,
}

impl DepthGraph {
    pub fn from_parts(nodes: Vec<DepthNode>, edges: Vec<DepthEdge>) -> Result<Self, GraphError> {
        let mut nodes = nodes;
        for n in &mut nodes {
            n.answer_support.sort();
            n.answer_support.dedup();
        }
        nodes.sort_by(|a, b| a.node_id.cmp(&b.node_id));
        if let Some(w) = nodes.windows(2).find(|w| w[0].node_id == w[1].node_id) {
            return Err(GraphError::Invalid(format!("duplicate node id `{}`", w[0].node_id)));
        }
        let index: HashMap<String, usize> = nodes.iter().enumerate().map(|(i, n)| (n.node_id.clone(), i)).collect();
        let mut collapsed: BTreeMap<(String, String, DepthRelation), f64> = BTreeMap::new();
        for e in edges {
            if !(e.confidence > 0.0 && e.confidence <= 1.0) {
                return Err(GraphError::Invalid(format!(
                    "edge {}->{} confidence {} outside (0,1]",
                    e.src, e.dst, e.confidence
                )));
            }
            let (Some(&s), Some(&d)) = (index.get(&e.src), index.get(&e.dst)) else {
                return Err(GraphError::Invalid(format!(
                    "edge {}->{} has a missing endpoint",
                    e.src, e.dst
                )));
            };
            if DepthRelation::for_kinds(&nodes[s].kind, &nodes[d].kind) != Some(e.relation) {
                return Err(GraphError::Invalid(format!(
                    "edge {}->{} relation {} does not fit its endpoints",
                    e.src,
                    e.dst,
                    e.relation.as_str()
                )));
            }
            if nodes[s].timestamp >= nodes[d].timestamp {
                return Err(GraphError::Invalid(format!(
                    "edge {}->{} goes back in time",
                    e.src, e.dst
                )));
            }
            let slot = collapsed.entry((e.src, e.dst, e.relation)).or_insert(0.0);
            *slot = slot.max(e.confidence);
        }
        let edges = collapsed
            .into_iter()
            .map(|((src, dst, relation), confidence)| DepthEdge {
                src,
                dst,
                relation,
                confidence,
            })
            .collect();
        Ok(Self { nodes, edges, index })
    }

    pub fn nodes(&self) -> &[DepthNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[DepthEdge] {
        &self.edges
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn node(&self, id: &str) -> Option<&DepthNode> {
        self.node_index(id).map(|i| &self.nodes[i])
    }

    pub fn edge_index(&self, src: &str, dst: &str, relation: DepthRelation) -> Option<usize> {
        self.edges
            .binary_search_by(|e| (e.src.as_str(), e.dst.as_str(), e.relation).cmp(&(src, dst, relation)))
            .ok()
    }

    pub fn answer_support(&self) -> BTreeMap<String, BTreeSet<String>> {
        self.nodes
            .iter()
            .filter(|n| !n.answer_support.is_empty())
            .map(|n| (n.node_id.clone(), n.answer_support.iter().cloned().collect()))
            .collect()
    }

    /// Incoming edge indices per node, sorted by source node index.
    pub fn incoming(&self, removed: &EdgeSet) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.nodes.len()];
        for (ei, e) in self.edges.iter().enumerate() {
            if !removed.contains(&ei) {
                inc[self.index[&e.dst]].push(ei);
            }
        }
        for list in &mut inc {
            list.sort_by_key(|&ei| self.index[&self.edges[ei].src]);
        }
        inc
    }

    /// Kahn's algorithm over all edges.
    pub fn is_acyclic(&self) -> bool {
        let n = self.nodes.len();
        let mut indeg = vec![0usize; n];
        let mut out = vec![Vec::new(); n];
        for e in &self.edges {
            let (s, d) = (self.index[&e.src], self.index[&e.dst]);
            out[s].push(d);
            indeg[d] += 1;
        }
        let mut queue: VecDeque<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
        let mut seen = 0;
        while let Some(v) = queue.pop_front() {
            seen += 1;
            for &d in &out[v] {
                indeg[d] -= 1;
                if indeg[d] == 0 {
                    queue.push_back(d);
                }
            }
        }
        seen == n
    }

    pub fn without_edges(&self, removed: &EdgeSet) -> DepthGraph {
        let edges = self
            .edges
            .iter()
            .enumerate()
            .filter(|(i, _)| !removed.contains(i))
            .map(|(_, e)| e.clone())
            .collect();
        DepthGraph::from_parts(self.nodes.clone(), edges).expect("subgraph of a valid graph")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = GraphHeader {
            format: DEPTH_FORMAT.into(),
            version: GRAPH_VERSION,
            nodes: self.nodes.len(),
            edges: self.edges.len(),
        };
        let mut out = Vec::new();
        write_line(&mut out, &header);
        for n in &self.nodes {
            write_line(&mut out, n);
        }
        for e in &self.edges {
            write_line(&mut out, e);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GraphError> {
        let (nodes, edges) = read_graph_lines::<DepthNode, DepthEdge>(bytes, DEPTH_FORMAT)?;
        Self::from_parts(nodes, edges).map_err(|e| GraphError::SchemaMismatch(e.to_string()))
    }
}

/// Depth graph together with the edges the gates rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthBuild {
    pub graph: DepthGraph,
    pub dropped: Vec<DroppedEdge>,
}

impl DepthBuild {
    /// One JSON line per dropped edge.
    pub fn dropped_report(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for d in &self.dropped {
            write_line(&mut out, d);
        }
        out
    }
}

/// s_D = clamp(0.7·pass_rate + 0.3·min(repeats, 3)/3, 0.05, 1).
pub fn edge_confidence(validator_pass_rate: f64, repeats: usize) -> f64 {
    let r = repeats.min(3) as f64 / 3.0;
    (0.7 * validator_pass_rate + 0.3 * r).clamp(0.05, 1.0)
}

fn canonical_or_raw(unit: &str) -> String {
    canonical_unit(unit)
        .map(str::to_string)
        .unwrap_or_else(|| unit.trim().to_lowercase())
}

fn depth_kind(ev: &TraceEvent) -> Option<DepthNodeKind> {
    let unit = ev.unit.as_deref().map(canonical_or_raw);
    match ev.kind {
        EventKind::Action => Some(DepthNodeKind::Action {
            tool: ev.tool.clone().unwrap_or_default(),
            op_type: ev.op_type.unwrap_or(OpType::Other),
            params_digest: ev.params_digest.clone(),
            env_sig: ev.branch_id.clone(),
            unit,
        }),
        EventKind::Artifact => {
            let (value, unit, value_type) = match &ev.value {
                Some(EventValue::Number(x)) => {
                    let raw = ev.unit.as_deref().unwrap_or(UNITLESS);
                    match normalize_unit(*x, raw) {
                        Ok((v, canonical)) => (
                            Some(EventValue::Number(v)),
                            Some(canonical.to_string()),
                            ValueType::Number,
                        ),
                        Err(_) => (
                            Some(EventValue::Number(*x)),
                            Some(raw.trim().to_lowercase()),
                            ValueType::Number,
                        ),
                    }
                }
                Some(EventValue::Text(s)) => {
                    let vt = if s.contains('|') && s.contains('\n') {
                        ValueType::Table
                    } else {
                        ValueType::Text
                    };
                    (Some(EventValue::Text(s.clone())), unit, vt)
                }
                None => (None, unit, ValueType::Text),
            };
            Some(DepthNodeKind::Artifact {
                value,
                unit,
                value_type,
            })
        }
        EventKind::Validator => Some(DepthNodeKind::Validator {
            check_kind: ev.op_type.unwrap_or(OpType::Verify),
            outcome: ev.status,
            unit,
        }),
        EventKind::Note => None,
    }
}

fn artifact_unit(kind: &DepthNodeKind) -> Option<&str> {
    match kind {
        DepthNodeKind::Artifact { unit, .. } => unit.as_deref(),
        _ => None,
    }
}

/// Unit gate for carryover edges: both sides unitless-text, or the same
/// known canonical unit.
fn unit_gate(src: &DepthNodeKind, dst: &DepthNodeKind) -> Result<(), String> {
    match (artifact_unit(src), artifact_unit(dst)) {
        (None, None) => Ok(()),
        (Some(a), Some(b)) => {
            for u in [a, b] {
                if canonical_unit(u).is_none() {
                    return Err(format!("unknown unit `{u}`"));
                }
            }
            if a == b {
                Ok(())
            } else {
                Err(format!("unit `{a}` does not match `{b}`"))
            }
        }
        (a, b) => Err(format!(
            "unit `{}` does not match `{}`",
            a.unwrap_or("none"),
            b.unwrap_or("none")
        )),
    }
}

/// Builds the depth graph. Candidate edges come from event inputs (input →
/// consumer) and pass the typing, temporal and unit gates in that order.
/// Notes are not provenance nodes; edges touching them are skipped.
pub fn build_depth_graph(trace: &Trace) -> DepthBuild {
    let index = trace.index();
    let mut nodes = Vec::new();
    for ev in &trace.events {
        let Some(kind) = depth_kind(ev) else { continue };
        let (label, support) = match ev.kind {
            EventKind::Action => (String::new(), vec![]),
            _ => (event_label(ev), ev.answer_support.clone()),
        };
        nodes.push(DepthNode {
            node_id: ev.event_id.clone(),
            timestamp: ev.timestamp,
            kind,
            label,
            answer_support: support,
        });
    }
    let by_id: HashMap<&str, &DepthNode> = nodes.iter().map(|n| (n.node_id.as_str(), n)).collect();

    let mut admitted: Vec<(String, String, DepthRelation)> = Vec::new();
    let mut dropped = Vec::new();
    for ev in &trace.events {
        if ev.kind == EventKind::Note {
            continue;
        }
        for input in &ev.inputs {
            if index.get(input.as_str()).is_some_and(|e| e.kind == EventKind::Note) {
                continue;
            }
            let drop = |gate, reason: String| DroppedEdge {
                src: input.clone(),
                dst: ev.event_id.clone(),
                gate,
                reason,
            };
            let Some(src) = by_id.get(input.as_str()) else {
                dropped.push(drop(Gate::Endpoint, format!("no event `{input}`")));
                continue;
            };
            let dst = by_id[ev.event_id.as_str()];
            let Some(relation) = DepthRelation::for_kinds(&src.kind, &dst.kind) else {
                dropped.push(drop(
                    Gate::Typing,
                    format!("no relation from {} to {}", src.kind.tag(), dst.kind.tag()),
                ));
                continue;
            };
            if src.timestamp >= dst.timestamp {
                dropped.push(drop(
                    Gate::Temporal,
                    format!(
                        "source tick {} is not before target tick {}",
                        src.timestamp, dst.timestamp
                    ),
                ));
                continue;
            }
            if relation == DepthRelation::Carryover {
                if let Err(reason) = unit_gate(&src.kind, &dst.kind) {
                    dropped.push(drop(Gate::Units, reason));
                    continue;
                }
            }
            admitted.push((input.clone(), ev.event_id.clone(), relation));
        }
    }
    dropped.sort_by(|a, b| (&a.src, &a.dst, a.gate).cmp(&(&b.src, &b.dst, b.gate)));

    // downstream adjacency over admitted edges, for validator reachability
    let mut out: HashMap<&str, Vec<&str>> = HashMap::new();
    for (s, d, _) in &admitted {
        out.entry(s.as_str()).or_default().push(d.as_str());
    }
    let pass_rate = |start: &str| -> f64 {
        let mut seen = BTreeSet::from([start]);
        let mut stack = vec![start];
        let (mut passed, mut total) = (0usize, 0usize);
        while let Some(v) = stack.pop() {
            if let DepthNodeKind::Validator { outcome, .. } = &by_id[v].kind {
                total += 1;
                passed += usize::from(*outcome == Status::Ok);
            }
            for &w in out.get(v).map(Vec::as_slice).unwrap_or(&[]) {
                if seen.insert(w) {
                    stack.push(w);
                }
            }
        }
        if total == 0 {
            0.5
        } else {
            passed as f64 / total as f64
        }
    };
    let repeats = |anchor: &TraceEvent| -> usize {
        trace
            .events
            .iter()
            .filter(|e| {
                e.event_id != anchor.event_id
                    && e.status == Status::Ok
                    && e.kind == anchor.kind
                    && e.tool == anchor.tool
                    && e.op_type == anchor.op_type
                    && e.params_digest == anchor.params_digest
            })
            .count()
    };
    let anchor = |src: &str, dst: &str| -> Option<&TraceEvent> {
        let kinds = [src, dst].map(|id| index[id]);
        kinds
            .iter()
            .find(|e| e.kind == EventKind::Action)
            .or_else(|| kinds.iter().find(|e| e.kind == EventKind::Validator))
            .copied()
            .or_else(|| {
                index[src]
                    .inputs
                    .iter()
                    .filter_map(|i| index.get(i.as_str()))
                    .find(|e| e.kind == EventKind::Action)
                    .copied()
            })
    };
    let edges = admitted
        .iter()
        .map(|(s, d, relation)| DepthEdge {
            src: s.clone(),
            dst: d.clone(),
            relation: *relation,
            confidence: edge_confidence(pass_rate(d), anchor(s, d).map_or(0, repeats)),
        })
        .collect();
    let graph = DepthGraph::from_parts(nodes, edges).expect("gated edges form a valid graph");
    debug_assert!(graph.is_acyclic());
    DepthBuild { graph, dropped }
}

/// Subject-level merge: node ids are prefixed with their run id so runs never
/// collide; the result is independent of input order.
pub fn merge_depth_graphs(graphs: &[(String, DepthGraph)]) -> Result<DepthGraph, GraphError> {
    let mut sorted: Vec<&(String, DepthGraph)> = graphs.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let mut nodes: BTreeMap<String, DepthNode> = BTreeMap::new();
    let mut edges = Vec::new();
    for (run, g) in sorted {
        for n in g.nodes() {
            let id = format!("{run}/{}", n.node_id);
            let renamed = DepthNode {
                node_id: id.clone(),
                ..n.clone()
            };
            if let Some(prev) = nodes.get(&id) {
                if *prev != renamed {
                    return Err(GraphError::Invalid(format!("conflicting definitions of node `{id}`")));
                }
            }
            nodes.insert(id, renamed);
        }
        for e in g.edges() {
            edges.push(DepthEdge {
                src: format!("{run}/{}", e.src),
                dst: format!("{run}/{}", e.dst),
                ..e.clone()
            });
        }
    }
    DepthGraph::from_parts(nodes.into_values().collect(), edges)
}

/// One typed operation: an op type with an optional canonical unit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpStep {
    pub op: OpType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

impl OpStep {
    pub fn new(op: OpType) -> Self {
        Self { op, unit: None }
    }

    pub fn with_unit(op: OpType, unit: &str) -> Self {
        Self {
            op,
            unit: Some(canonical_or_raw(unit)),
        }
    }

    pub fn matches(&self, other: &OpStep) -> bool {
        self.op == other.op && self.unit == other.unit
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OpSequence(pub Vec<OpStep>);

impl OpSequence {
    pub fn ops(ops: &[OpType]) -> Self {
        Self(ops.iter().map(|&o| OpStep::new(o)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

const OP_KEYWORDS: &[(&str, OpType)] = &[
    ("look up", OpType::Search),
    ("find", OpType::Search),
    ("search", OpType::Search),
    ("retrieve", OpType::Search),
    ("read", OpType::Parse),
    ("extract", OpType::Parse),
    ("parse", OpType::Parse),
    ("simulate", OpType::Compute),
    ("run", OpType::Compute),
    ("count", OpType::Compute),
    ("compute", OpType::Compute),
    ("calculate", OpType::Compute),
    ("subtract", OpType::Compute),
    ("check", OpType::Verify),
    ("confirm", OpType::Verify),
    ("verify", OpType::Verify),
    ("validate", OpType::Verify),
];

/// O(q): the query's explicit override, otherwise keyword rules applied in
/// textual order with adjacent repeats collapsed.
pub fn extract_query_ops(q: &Query) -> Result<OpSequence, GraphError> {
    if let Some(ops) = &q.op_override {
        return if ops.is_empty() {
            Err(GraphError::EmptyOpSequence)
        } else {
            Ok(ops.clone())
        };
    }
    let words: Vec<String> = q
        .text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    let mut ops: Vec<OpType> = Vec::new();
    let mut i = 0;
    while i < words.len() {
        let hit = OP_KEYWORDS.iter().find_map(|(kw, op)| {
            let parts: Vec<&str> = kw.split(' ').collect();
            let matched = parts
                .iter()
                .enumerate()
                .all(|(j, p)| words.get(i + j).is_some_and(|w| w == p || is_inflection(w, p)));
            matched.then_some((parts.len(), *op))
        });
        match hit {
            Some((len, op)) => {
                if ops.last() != Some(&op) {
                    ops.push(op);
                }
                i += len;
            }
            None => i += 1,
        }
    }
    if ops.is_empty() {
        Err(GraphError::EmptyOpSequence)
    } else {
        Ok(OpSequence::ops(&ops))
    }
}

fn is_inflection(word: &str, stem: &str) -> bool {
    word.strip_prefix(stem)
        .is_some_and(|rest| matches!(rest, "s" | "es" | "ed" | "d" | "ing"))
}

/// Longest common subsequence where a match needs the same op and
/// compatible units.
pub fn lcs_typed(a: &OpSequence, b: &OpSequence) -> usize {
    let (a, b) = (&a.0, &b.0);
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.matches(y) {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// A directed path as node and edge indices, source first.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct DepthPath {
    pub nodes: Vec<usize>,
    pub edges: Vec<usize>,
}

/// R(p) = (∏ s_D(e))^τ.
pub fn path_reliability(confidences: &[f64], tau: f64) -> Result<f64, GraphError> {
    if confidences.is_empty() {
        return Err(GraphError::EmptyPath);
    }
    Ok(confidences.iter().product::<f64>().powf(tau))
}

/// O(p): the op steps of the action and validator nodes along the path.
pub fn path_ops(graph: &DepthGraph, nodes: &[usize]) -> OpSequence {
    OpSequence(
        nodes
            .iter()
            .filter_map(|&v| match &graph.nodes[v].kind {
                DepthNodeKind::Action { op_type, unit, .. } => Some(OpStep {
                    op: *op_type,
                    unit: unit.clone(),
                }),
                DepthNodeKind::Validator { unit, .. } => Some(OpStep {
                    op: OpType::Verify,
                    unit: unit.clone(),
                }),
                DepthNodeKind::Artifact { .. } => None,
            })
            .collect(),
    )
}

/// Every directed path of at most `max_len` edges that ends at `target`,
/// including the zero-length path, sorted by (length, node sequence).
pub fn enumerate_admissible_paths(
    graph: &DepthGraph,
    target: &str,
    max_len: usize,
) -> Result<Vec<DepthPath>, GraphError> {
    let t = graph
        .node_index(target)
        .ok_or_else(|| GraphError::UnknownNode(target.to_string()))?;
    Ok(paths_into(graph, &graph.incoming(&EdgeSet::new()), t, max_len))
}

pub(crate) fn paths_into(graph: &DepthGraph, incoming: &[Vec<usize>], target: usize, max_len: usize) -> Vec<DepthPath> {
    // walk backwards; the graph is acyclic so every walk is a simple path
    let mut out = Vec::new();
    let mut stack = vec![(vec![target], Vec::<usize>::new())];
    while let Some((rev_nodes, rev_edges)) = stack.pop() {
        let head = *rev_nodes.last().expect("non-empty");
        if rev_edges.len() < max_len {
            for &ei in &incoming[head] {
                let src = graph.index[&graph.edges[ei].src];
                let mut n = rev_nodes.clone();
                n.push(src);
                let mut e = rev_edges.clone();
                e.push(ei);
                stack.push((n, e));
            }
        }
        let mut nodes = rev_nodes;
        nodes.reverse();
        let mut edges = rev_edges;
        edges.reverse();
        out.push(DepthPath { nodes, edges });
    }
    out.sort_by(|a, b| a.edges.len().cmp(&b.edges.len()).then_with(|| a.nodes.cmp(&b.nodes)));
    out
}

/// Depth score for one target: max over paths with at least one edge of
/// R(p)·LCS(O(q), O(p))/|O(q)|, or 0 when no such path exists.
pub fn depth_score(graph: &DepthGraph, q: &Query, target: &str, max_len: usize, tau: f64) -> Result<f64, GraphError> {
    let oq = extract_query_ops(q)?;
    let paths = enumerate_admissible_paths(graph, target, max_len)?;
    let mut best = 0.0f64;
    for p in paths.iter().filter(|p| !p.edges.is_empty()) {
        let conf: Vec<f64> = p.edges.iter().map(|&e| graph.edges[e].confidence).collect();
        let r = path_reliability(&conf, tau)?;
        let frac = lcs_typed(&oq, &path_ops(graph, &p.nodes)) as f64 / oq.len() as f64;
        best = best.max(r * frac);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::Answer;
    use crate::trace::tests::event;

    fn artifact(id: &str, ts: u64, value: f64, unit: &str) -> TraceEvent {
        let mut e = event(id, ts, EventKind::Artifact);
        e.tool = None;
        e.op_type = None;
        e.value = Some(EventValue::Number(value));
        e.unit = Some(unit.into());
        e
    }

    fn action(id: &str, ts: u64, op: OpType, inputs: &[&str]) -> TraceEvent {
        let mut e = event(id, ts, EventKind::Action);
        e.op_type = Some(op);
        e.inputs = inputs.iter().map(|s| s.to_string()).collect();
        e
    }

    fn query(ops: Option<OpSequence>, text: &str) -> Query {
        Query {
            question_id: "q".into(),
            text: text.into(),
            answers: vec![Answer::new("a", "1"), Answer::new("b", "2")],
            op_override: ops,
            seed_terms: None,
        }
    }

    #[test]
    fn confidence_formula() {
        assert_eq!(edge_confidence(1.0, 3), 1.0);
        assert_eq!(edge_confidence(0.0, 0), 0.05);
        assert!((edge_confidence(0.5, 0) - 0.35).abs() < 1e-15);
        assert_eq!(edge_confidence(1.0, 10), 1.0);
    }

    #[test]
    fn reliability() {
        assert_eq!(path_reliability(&[1.0, 1.0, 1.0], 0.3).unwrap(), 1.0);
        assert_eq!(path_reliability(&[0.5, 0.5], 1.0).unwrap(), 0.25);
        assert_eq!(path_reliability(&[0.5, 0.5], 0.5).unwrap(), 0.5);
        assert!(matches!(path_reliability(&[], 0.5), Err(GraphError::EmptyPath)));
    }

    #[test]
    fn compute_produces_number() {
        let mut out = artifact("n", 2, 47.0, "steps");
        out.inputs = vec!["c".into()];
        let b = build_depth_graph(&Trace::new("r", "q", vec![action("c", 1, OpType::Compute, &[]), out]));
        assert_eq!(b.graph.edges().len(), 1);
        assert_eq!(b.graph.edges()[0].relation, DepthRelation::Produces);
        assert!(b.dropped.is_empty());
        let n = b.graph.node("n").unwrap();
        assert_eq!(n.label, "47 step");
    }

    #[test]
    fn temporal_gate() {
        let t = Trace::new(
            "r",
            "q",
            vec![action("c", 1, OpType::Compute, &["a"]), artifact("a", 5, 1.0, "m")],
        );
        let b = build_depth_graph(&t);
        assert!(b.graph.edges().is_empty());
        assert_eq!(b.dropped.len(), 1);
        assert_eq!(b.dropped[0].gate, Gate::Temporal);
    }

    #[test]
    fn typing_gate() {
        let t = Trace::new(
            "r",
            "q",
            vec![
                action("a", 1, OpType::Search, &[]),
                action("b", 2, OpType::Parse, &["a"]),
            ],
        );
        let b = build_depth_graph(&t);
        assert_eq!(b.dropped[0].gate, Gate::Typing);
    }

    #[test]
    fn unit_gate_on_carryover() {
        let mut ok = artifact("b", 2, 3.0, "km");
        ok.inputs = vec!["a".into()];
        let mut bad = artifact("c", 3, 3.0, "acre");
        bad.inputs = vec!["a".into()];
        let mut unknown = artifact("d", 4, 3.0, "furlong");
        unknown.inputs = vec!["a".into()];
        let t = Trace::new("r", "q", vec![artifact("a", 1, 1.0, "m"), ok, bad, unknown]);
        let b = build_depth_graph(&t);
        assert!(b.graph.edge_index("a", "b", DepthRelation::Carryover).is_some());
        let gates: Vec<_> = b.dropped.iter().map(|d| (d.dst.as_str(), d.gate)).collect();
        assert_eq!(gates, vec![("c", Gate::Units), ("d", Gate::Units)]);
        assert!(b.dropped[1].reason.contains("unknown unit"));
    }

    #[test]
    fn confidence_uses_downstream_validators_and_repeats() {
        let src = artifact("a", 1, 1.0, "count");
        let c1 = action("c1", 2, OpType::Compute, &["a"]);
        let mut c2 = action("c2", 3, OpType::Compute, &["a"]);
        c2.status = Status::Retry;
        let mut out = artifact("o", 4, 2.0, "count");
        out.inputs = vec!["c1".into()];
        let mut v = event("v", 5, EventKind::Validator);
        v.inputs = vec!["o".into()];
        let b = build_depth_graph(&Trace::new("r", "q", vec![src, c1, c2, out, v]));
        let g = &b.graph;
        let conf = |s, d, r| g.edges()[g.edge_index(s, d, r).unwrap()].confidence;
        // c1 reaches a passing validator; c2 is a retry so c1 has no ok repeat
        assert!((conf("a", "c1", DepthRelation::Consumes) - 0.7).abs() < 1e-15);
        // c2 has no validator downstream; c1 is an ok repeat of it
        assert!((conf("a", "c2", DepthRelation::Consumes) - (0.35 + 0.1)).abs() < 1e-15);
        assert!(g.is_acyclic());
    }

    #[test]
    fn keyword_ops() {
        let q = query(None, "find the transition table and count the steps");
        assert_eq!(
            extract_query_ops(&q).unwrap(),
            OpSequence::ops(&[OpType::Search, OpType::Compute])
        );
        assert!(matches!(
            extract_query_ops(&query(None, "hello")),
            Err(GraphError::EmptyOpSequence)
        ));
        let o = OpSequence::ops(&[OpType::Search, OpType::Parse, OpType::Compute, OpType::Verify]);
        assert_eq!(extract_query_ops(&query(Some(o.clone()), "hello")).unwrap(), o);
        let q = query(None, "Look up the grant, then check and confirm it");
        assert_eq!(
            extract_query_ops(&q).unwrap(),
            OpSequence::ops(&[OpType::Search, OpType::Verify])
        );
    }

    #[test]
    fn lcs_examples() {
        use OpType::*;
        let sc = OpSequence::ops(&[Search, Compute]);
        assert_eq!(lcs_typed(&sc, &sc), 2);
        let a = OpSequence::ops(&[Search, Parse, Compute, Verify]);
        let b = OpSequence::ops(&[Search, Compute, Verify]);
        assert_eq!(lcs_typed(&a, &b), 3);
        let x = OpSequence(vec![OpStep::with_unit(Compute, "acres")]);
        let y = OpSequence(vec![OpStep::with_unit(Compute, "seconds")]);
        assert_eq!(lcs_typed(&x, &y), 0);
    }

    fn chain(n: usize) -> DepthGraph {
        // alternating artifact/action chain n0 -> n1 -> ... with confidence 1
        let mut events = Vec::new();
        for i in 0..=n {
            let id = format!("n{i}");
            let mut e = if i % 2 == 0 {
                artifact(&id, i as u64, 1.0, "count")
            } else {
                action(&id, i as u64, OpType::Compute, &[])
            };
            if i > 0 {
                e.inputs = vec![format!("n{}", i - 1)];
            }
            events.push(e);
        }
        build_depth_graph(&Trace::new("r", "q", events)).graph
    }

    #[test]
    fn suffix_paths() {
        let g = chain(4);
        assert!(enumerate_admissible_paths(&g, "n0", 3)
            .unwrap()
            .iter()
            .all(|p| p.edges.is_empty()));
        let paths = enumerate_admissible_paths(&g, "n4", 2).unwrap();
        let seqs: Vec<Vec<usize>> = paths.iter().map(|p| p.nodes.clone()).collect();
        assert_eq!(seqs, vec![vec![4], vec![3, 4], vec![2, 3, 4]]);
    }

    #[test]
    fn depth_score_cases() {
        let g = chain(2);
        let q = query(Some(OpSequence::ops(&[OpType::Verify])), "");
        assert_eq!(depth_score(&g, &q, "n2", 6, 0.5).unwrap(), 0.0);
        let q = query(Some(OpSequence::ops(&[OpType::Compute])), "");
        let s = depth_score(&g, &q, "n2", 6, 0.5).unwrap();
        // the one-edge path n1 -> n2 already matches O(q) and is the most reliable
        let last = g.edges()[g.edge_index("n1", "n2", DepthRelation::Produces).unwrap()].confidence;
        assert_eq!(s, last.powf(0.5));
    }

    #[test]
    fn round_trip_and_drift() {
        let g = chain(3);
        let bytes = g.to_bytes();
        assert_eq!(DepthGraph::from_bytes(&bytes).unwrap().to_bytes(), bytes);
        let drifted = String::from_utf8(bytes)
            .unwrap()
            .replace("\"format\":\"depth-graph\"", "\"format\":\"breadth-graph\"");
        assert!(matches!(
            DepthGraph::from_bytes(drifted.as_bytes()),
            Err(GraphError::SchemaMismatch(_))
        ));
    }

    #[test]
    fn merge_is_order_independent() {
        let a = ("r1".to_string(), chain(2));
        let b = ("r2".to_string(), chain(3));
        let m1 = merge_depth_graphs(&[a.clone(), b.clone()]).unwrap();
        let m2 = merge_depth_graphs(&[b, a]).unwrap();
        assert_eq!(m1.to_bytes(), m2.to_bytes());
        assert_eq!(m1.nodes().len(), 7);
    }
}
