//! Breadth semantic graph: background anchors (entities, spans, symbols) joined
//! by confidence-weighted semantic and evidential relations.
//!
//! Retrieval treats the graph as undirected. Between any pair of nodes the
//! strongest surviving edge is the one traversed and the one used as the
//! smoothing weight; relation labels stay directed for provenance.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, tokenize, EmbedError, Embedder, Vector};
use crate::error::GraphError;
use crate::fusion::score_breadth_path;
use crate::query::Query;
use crate::trace::{EventKind, EventValue, Status, Trace, TraceEvent};
use crate::units::{format_number, format_quantity, normalize_answer_text, normalize_unit, UNITLESS};
use crate::EdgeSet;

pub const BREADTH_FORMAT: &str = "breadth-graph";
pub const GRAPH_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BreadthNodeKind {
    Entity,
    Span,
    Symbol,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BreadthNode {
    pub node_id: String,
    pub kind: BreadthNodeKind,
    pub label: String,
    pub text: String,
    pub source_event: Option<String>,
    /// Sorted answer annotations carried over from the trace.
    pub answer_support: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BreadthRelation {
    Mentions,
    Defines,
    Aliases,
    Cites,
    Supports,
    DerivedFrom,
}

impl BreadthRelation {
    pub fn as_str(self) -> &'static str {
        match self {
            BreadthRelation::Mentions => "mentions",
            BreadthRelation::Defines => "defines",
            BreadthRelation::Aliases => "aliases",
            BreadthRelation::Cites => "cites",
            BreadthRelation::Supports => "supports",
            BreadthRelation::DerivedFrom => "derived_from",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BreadthEdge {
    pub src: String,
    pub dst: String,
    pub relation: BreadthRelation,
    pub confidence: f64,
}

/// Default confidences per relation kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BreadthConfidences {
    pub mentions: f64,
    pub aliases: f64,
    pub defines: f64,
    pub cites: f64,
    /// Multiplied by the validator pass rate of the supporting artifact.
    pub supports_scale: f64,
    pub derived_from: f64,
}

impl Default for BreadthConfidences {
    fn default() -> Self {
        Self {
            mentions: 0.6,
            aliases: 0.9,
            defines: 0.8,
            cites: 0.8,
            supports_scale: 0.7,
            derived_from: 0.8,
        }
    }
}

/// Nodes sorted by id, edges sorted by (src, dst, relation); at most one edge
/// per (src, dst, relation).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BreadthGraph {
    nodes: Vec<BreadthNode>,
    edges: Vec<BreadthEdge>,
    index: HashMap<String, usize>,
}

impl BreadthGraph {
    /// Canonicalizes and checks the invariants.
    pub fn from_parts(nodes: Vec<BreadthNode>, edges: Vec<BreadthEdge>) -> Result<Self, GraphError> {
        let mut nodes = nodes;
        for n in &mut nodes {
            n.answer_support.sort();
            n.answer_support.dedup();
            if n.label.is_empty() {
                return Err(GraphError::Invalid(format!("node `{}` has an empty label", n.node_id)));
            }
        }
        nodes.sort_by(|a, b| a.node_id.cmp(&b.node_id));
        if let Some(w) = nodes.windows(2).find(|w| w[0].node_id == w[1].node_id) {
            return Err(GraphError::Invalid(format!("duplicate node id `{}`", w[0].node_id)));
        }
        let index: HashMap<String, usize> = nodes.iter().enumerate().map(|(i, n)| (n.node_id.clone(), i)).collect();

        let mut collapsed: BTreeMap<(String, String, BreadthRelation), f64> = BTreeMap::new();
        for e in edges {
            if !(e.confidence > 0.0 && e.confidence <= 1.0) {
                return Err(GraphError::Invalid(format!(
                    "edge {}->{} confidence {} outside (0,1]",
                    e.src, e.dst, e.confidence
                )));
            }
            for end in [&e.src, &e.dst] {
                if !index.contains_key(end) {
                    return Err(GraphError::Invalid(format!("edge endpoint `{end}` is not a node")));
                }
            }
            if e.src == e.dst {
                continue;
            }
            let slot = collapsed.entry((e.src, e.dst, e.relation)).or_insert(0.0);
            *slot = slot.max(e.confidence);
        }
        let edges = collapsed
            .into_iter()
            .map(|((src, dst, relation), confidence)| BreadthEdge {
                src,
                dst,
                relation,
                confidence,
            })
            .collect();
        Ok(Self { nodes, edges, index })
    }

    pub fn nodes(&self) -> &[BreadthNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[BreadthEdge] {
        &self.edges
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn node(&self, id: &str) -> Option<&BreadthNode> {
        self.node_index(id).map(|i| &self.nodes[i])
    }

    pub fn edge_index(&self, src: &str, dst: &str, relation: BreadthRelation) -> Option<usize> {
        self.edges
            .binary_search_by(|e| (e.src.as_str(), e.dst.as_str(), e.relation).cmp(&(src, dst, relation)))
            .ok()
    }

    /// node_id → answer annotations, for nodes that carry any.
    pub fn answer_support(&self) -> BTreeMap<String, BTreeSet<String>> {
        self.nodes
            .iter()
            .filter(|n| !n.answer_support.is_empty())
            .map(|n| (n.node_id.clone(), n.answer_support.iter().cloned().collect()))
            .collect()
    }

    /// Copy without the given edges.
    pub fn without_edges(&self, removed: &EdgeSet) -> BreadthGraph {
        let edges = self
            .edges
            .iter()
            .enumerate()
            .filter(|(i, _)| !removed.contains(i))
            .map(|(_, e)| e.clone())
            .collect();
        BreadthGraph::from_parts(self.nodes.clone(), edges).expect("subgraph of a valid graph")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = GraphHeader {
            format: BREADTH_FORMAT.into(),
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
        let (nodes, edges) = read_graph_lines::<BreadthNode, BreadthEdge>(bytes, BREADTH_FORMAT)?;
        let g = Self::from_parts(nodes, edges).map_err(|e| GraphError::SchemaMismatch(e.to_string()))?;
        Ok(g)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct GraphHeader {
    pub format: String,
    pub version: u32,
    pub nodes: usize,
    pub edges: usize,
}

pub(crate) fn write_line<T: Serialize>(out: &mut Vec<u8>, value: &T) {
    serde_json::to_writer(&mut *out, value).expect("graph record serializes");
    out.push(b'\n');
}

pub(crate) fn read_graph_lines<N, E>(bytes: &[u8], format: &str) -> Result<(Vec<N>, Vec<E>), GraphError>
where
    N: serde::de::DeserializeOwned,
    E: serde::de::DeserializeOwned,
{
    let text = std::str::from_utf8(bytes).map_err(|e| GraphError::SchemaMismatch(e.to_string()))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: GraphHeader = lines
        .next()
        .ok_or_else(|| GraphError::SchemaMismatch("missing header".into()))
        .and_then(|l| serde_json::from_str(l).map_err(|e| GraphError::SchemaMismatch(format!("header: {e}"))))?;
    if header.format != format || header.version != GRAPH_VERSION {
        return Err(GraphError::SchemaMismatch(format!(
            "expected {format}/{GRAPH_VERSION}, found {}/{}",
            header.format, header.version
        )));
    }
    let mut nodes = Vec::with_capacity(header.nodes);
    for i in 0..header.nodes {
        let line = lines
            .next()
            .ok_or_else(|| GraphError::SchemaMismatch(format!("missing node record {i}")))?;
        nodes
            .push(serde_json::from_str(line).map_err(|e| GraphError::SchemaMismatch(format!("node record {i}: {e}")))?);
    }
    let mut edges = Vec::with_capacity(header.edges);
    for i in 0..header.edges {
        let line = lines
            .next()
            .ok_or_else(|| GraphError::SchemaMismatch(format!("missing edge record {i}")))?;
        edges
            .push(serde_json::from_str(line).map_err(|e| GraphError::SchemaMismatch(format!("edge record {i}: {e}")))?);
    }
    if lines.next().is_some() {
        return Err(GraphError::SchemaMismatch(
            "trailing records after declared counts".into(),
        ));
    }
    Ok((nodes, edges))
}

const STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "an", "and", "any", "are", "as", "at", "be", "been", "but", "by", "can", "did", "do",
    "does", "for", "from", "had", "has", "have", "he", "her", "his", "how", "if", "in", "into", "is", "it", "its",
    "many", "more", "most", "much", "no", "not", "of", "on", "or", "our", "over", "she", "so", "than", "that", "the",
    "their", "them", "then", "there", "these", "they", "this", "those", "to", "too", "under", "up", "was", "we",
    "were", "what", "when", "where", "which", "while", "who", "whom", "why", "will", "with", "would", "you",
];

fn is_stopword(t: &str) -> bool {
    STOPWORDS.binary_search(&t).is_ok()
}

/// Distinct normalized terms of `text`, in order of first appearance.
pub fn extract_terms(text: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    tokenize(text)
        .into_iter()
        .filter(|t| !is_stopword(t))
        .filter(|t| seen.insert(t.clone()))
        .collect()
}

/// Splits out `$...$` formula symbols. Returns the remaining text and each
/// symbol with a flag telling whether the text defines it (`$x$ = ...`).
fn split_symbols(text: &str) -> (String, Vec<(String, bool)>) {
    let mut plain = String::new();
    let mut symbols: Vec<(String, bool)> = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find('$') {
        let after = &rest[start + 1..];
        let Some(len) = after.find('$') else { break };
        plain.push_str(&rest[..start]);
        plain.push(' ');
        let sym = after[..len].split_whitespace().collect::<Vec<_>>().join(" ");
        rest = &after[len + 1..];
        let tail = rest.trim_start();
        let defines = tail.starts_with(":=") || (tail.starts_with('=') && !tail.starts_with("=="));
        if !sym.is_empty() {
            match symbols.iter_mut().find(|(s, _)| *s == sym) {
                Some(entry) => entry.1 |= defines,
                None => symbols.push((sym, defines)),
            }
        }
    }
    plain.push_str(rest);
    (plain, symbols)
}

/// Canonical label of a trace event's payload: its normalized value when it
/// has one, else its normalized text.
pub fn event_label(event: &TraceEvent) -> String {
    let label = match &event.value {
        Some(EventValue::Number(x)) => {
            let unit = event.unit.as_deref().unwrap_or(UNITLESS);
            match normalize_unit(*x, unit) {
                Ok((v, canonical)) => format_quantity(v, canonical),
                Err(_) => format!("{} {}", format_number(*x), unit.trim().to_lowercase()),
            }
        }
        Some(EventValue::Text(s)) => normalize_answer_text(s),
        None => normalize_answer_text(&event.text),
    };
    if label.is_empty() {
        event.event_id.clone()
    } else {
        label
    }
}

pub fn span_id(run_id: &str, event_id: &str) -> String {
    format!("span:{run_id}:{event_id}")
}

pub fn term_id(term: &str) -> String {
    format!("term:{term}")
}

pub fn symbol_id(symbol: &str) -> String {
    format!("sym:{symbol}")
}

/// Builds the breadth graph from a validated trace.
///
/// Rules: one span node per artifact or note event and one entity node per
/// distinct term; `mentions` from a span to its terms (`defines`/`mentions`
/// for `$symbol$`s); `cites` when a span consumes another span directly;
/// `derived_from` when it consumes one through an action; `supports` from
/// artifacts that passed a validator to their terms, scaled by pass rate;
/// `aliases` from the alias table for aliases present in the graph.
pub fn build_breadth_graph(
    trace: &Trace,
    alias_table: &BTreeMap<String, String>,
    conf: &BreadthConfidences,
) -> BreadthGraph {
    let index = trace.index();
    let is_span = |e: &TraceEvent| matches!(e.kind, EventKind::Artifact | EventKind::Note);

    let mut nodes: BTreeMap<String, BreadthNode> = BTreeMap::new();
    let mut edges: Vec<BreadthEdge> = Vec::new();
    let mut push_edge = |src: &str, dst: &str, relation, confidence| {
        edges.push(BreadthEdge {
            src: src.to_string(),
            dst: dst.to_string(),
            relation,
            confidence,
        })
    };

    // validators per artifact: (passed, total)
    let mut checks: HashMap<&str, (usize, usize)> = HashMap::new();
    for v in trace.events.iter().filter(|e| e.kind == EventKind::Validator) {
        for input in &v.inputs {
            let slot = checks.entry(input.as_str()).or_default();
            slot.1 += 1;
            if v.status == Status::Ok {
                slot.0 += 1;
            }
        }
    }

    for ev in trace.events.iter().filter(|e| is_span(e)) {
        let sid = span_id(&trace.run_id, &ev.event_id);
        nodes.insert(
            sid.clone(),
            BreadthNode {
                node_id: sid.clone(),
                kind: BreadthNodeKind::Span,
                label: event_label(ev),
                text: ev.text.clone(),
                source_event: Some(ev.event_id.clone()),
                answer_support: ev.answer_support.clone(),
            },
        );

        let (plain, symbols) = split_symbols(&ev.text);
        let terms = extract_terms(&plain);
        for t in &terms {
            let tid = term_id(t);
            nodes.entry(tid.clone()).or_insert_with(|| BreadthNode {
                node_id: tid.clone(),
                kind: BreadthNodeKind::Entity,
                label: t.clone(),
                text: t.clone(),
                source_event: None,
                answer_support: vec![],
            });
            push_edge(&sid, &tid, BreadthRelation::Mentions, conf.mentions);
        }
        for (sym, defines) in &symbols {
            let yid = symbol_id(sym);
            nodes.entry(yid.clone()).or_insert_with(|| BreadthNode {
                node_id: yid.clone(),
                kind: BreadthNodeKind::Symbol,
                label: sym.clone(),
                text: sym.clone(),
                source_event: None,
                answer_support: vec![],
            });
            if *defines {
                push_edge(&sid, &yid, BreadthRelation::Defines, conf.defines);
            } else {
                push_edge(&sid, &yid, BreadthRelation::Mentions, conf.mentions);
            }
        }

        for input in &ev.inputs {
            let Some(src) = index.get(input.as_str()) else { continue };
            if is_span(src) {
                push_edge(&sid, &span_id(&trace.run_id, input), BreadthRelation::Cites, conf.cites);
            } else if src.kind == EventKind::Action {
                for upstream in &src.inputs {
                    if index.get(upstream.as_str()).is_some_and(|u| is_span(u)) {
                        push_edge(
                            &sid,
                            &span_id(&trace.run_id, upstream),
                            BreadthRelation::DerivedFrom,
                            conf.derived_from,
                        );
                    }
                }
            }
        }

        if ev.kind == EventKind::Artifact {
            if let Some(&(passed, total)) = checks.get(ev.event_id.as_str()) {
                if passed > 0 {
                    let rate = passed as f64 / total as f64;
                    for t in &terms {
                        push_edge(&sid, &term_id(t), BreadthRelation::Supports, conf.supports_scale * rate);
                    }
                }
            }
        }
    }

    for (alias, canonical) in alias_table {
        let alias = alias.trim().to_lowercase();
        let canonical = canonical.trim().to_lowercase();
        if alias == canonical || alias.is_empty() || canonical.is_empty() {
            continue;
        }
        let aid = term_id(&alias);
        if !nodes.contains_key(&aid) {
            continue;
        }
        let cid = term_id(&canonical);
        nodes.entry(cid.clone()).or_insert_with(|| BreadthNode {
            node_id: cid.clone(),
            kind: BreadthNodeKind::Entity,
            label: canonical.clone(),
            text: canonical.clone(),
            source_event: None,
            answer_support: vec![],
        });
        push_edge(&aid, &cid, BreadthRelation::Aliases, conf.aliases);
    }

    BreadthGraph::from_parts(nodes.into_values().collect(), edges).expect("builder emits a valid graph")
}

/// Two nodes of different kinds share one canonical label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeConflict {
    pub label: String,
    pub node_ids: (String, String),
}

/// Subject-level merge: nodes are unioned by canonical label (the smallest
/// node id names the merged node) and parallel edges keep their maximum
/// confidence. The result does not depend on the order of `graphs`.
pub fn merge_breadth_graphs(graphs: &[BreadthGraph]) -> Result<BreadthGraph, MergeConflict> {
    let mut groups: BTreeMap<&str, Vec<&BreadthNode>> = BTreeMap::new();
    for g in graphs {
        for n in &g.nodes {
            groups.entry(n.label.as_str()).or_default().push(n);
        }
    }
    let mut rename: HashMap<&str, String> = HashMap::new();
    let mut nodes = Vec::with_capacity(groups.len());
    for (label, mut members) in groups {
        members.sort_by(|a, b| a.node_id.cmp(&b.node_id).then(a.kind.cmp(&b.kind)));
        let head = members[0];
        if let Some(other) = members.iter().find(|n| n.kind != head.kind) {
            return Err(MergeConflict {
                label: label.to_string(),
                node_ids: (head.node_id.clone(), other.node_id.clone()),
            });
        }
        let mut support: Vec<String> = members.iter().flat_map(|n| n.answer_support.iter().cloned()).collect();
        support.sort();
        support.dedup();
        for m in &members {
            rename.insert(m.node_id.as_str(), head.node_id.clone());
        }
        nodes.push(BreadthNode {
            answer_support: support,
            ..head.clone()
        });
    }
    let edges = graphs
        .iter()
        .flat_map(|g| g.edges.iter())
        .map(|e| BreadthEdge {
            src: rename[e.src.as_str()].clone(),
            dst: rename[e.dst.as_str()].clone(),
            ..e.clone()
        })
        .collect();
    Ok(BreadthGraph::from_parts(nodes, edges).expect("merge of valid graphs"))
}

/// Graph plus precomputed raw node embeddings and pairwise adjacency.
pub struct BreadthIndex<'g> {
    graph: &'g BreadthGraph,
    raw: Vec<Vector>,
    /// For each node: (neighbor, edges joining the pair) sorted by neighbor.
    pairs: Vec<Vec<(usize, Vec<usize>)>>,
}

impl<'g> BreadthIndex<'g> {
    pub fn new(graph: &'g BreadthGraph, embedder: &dyn Embedder) -> Result<Self, EmbedError> {
        let texts: Vec<String> = graph.nodes.iter().map(|n| n.text.clone()).collect();
        let raw = if texts.is_empty() {
            vec![]
        } else {
            embedder.embed_batch(&texts)?
        };
        let mut map: Vec<BTreeMap<usize, Vec<usize>>> = vec![BTreeMap::new(); graph.nodes.len()];
        for (ei, e) in graph.edges.iter().enumerate() {
            let (s, d) = (graph.index[&e.src], graph.index[&e.dst]);
            map[s].entry(d).or_default().push(ei);
            map[d].entry(s).or_default().push(ei);
        }
        let pairs = map.into_iter().map(|m| m.into_iter().collect()).collect();
        Ok(Self { graph, raw, pairs })
    }

    pub fn graph(&self) -> &'g BreadthGraph {
        self.graph
    }

    pub fn raw(&self, v: usize) -> &Vector {
        &self.raw[v]
    }

    /// Strongest surviving edge for each neighbor of `v`.
    pub fn links(&self, v: usize, removed: &EdgeSet) -> Vec<(usize, usize, f64)> {
        self.pairs[v]
            .iter()
            .filter_map(|(u, edges)| {
                edges
                    .iter()
                    .filter(|ei| !removed.contains(ei))
                    .map(|&ei| (ei, self.graph.edges[ei].confidence))
                    .fold(None, |best: Option<(usize, f64)>, (ei, c)| match best {
                        Some((_, bc)) if bc >= c => best,
                        _ => Some((ei, c)),
                    })
                    .map(|(ei, c)| (*u, ei, c))
            })
            .collect()
    }

    /// One-hop confidence-weighted average of raw embeddings, L2-normalized.
    pub fn smoothed(&self, v: usize, removed: &EdgeSet) -> Vector {
        let links = self.links(v, removed);
        if links.is_empty() {
            return self.raw[v].clone();
        }
        let mut acc = self.raw[v].clone();
        let mut weight = 1.0;
        for (u, _, c) in links {
            for (a, b) in acc.0.iter_mut().zip(&self.raw[u].0) {
                *a += c * b;
            }
            weight += c;
        }
        for a in &mut acc.0 {
            *a /= weight;
        }
        if acc.is_zero() {
            return self.raw[v].clone();
        }
        acc.normalize();
        acc
    }

    pub fn smoothed_all(&self, removed: &EdgeSet) -> Vec<Vector> {
        (0..self.graph.nodes.len()).map(|v| self.smoothed(v, removed)).collect()
    }
}

/// ḡ_B(v): the node embedding averaged with its immediate neighbors.
pub fn smoothed_embedding(graph: &BreadthGraph, v: &str, embedder: &dyn Embedder) -> Result<Vector, GraphError> {
    let idx = graph
        .node_index(v)
        .ok_or_else(|| GraphError::UnknownNode(v.to_string()))?;
    let index = BreadthIndex::new(graph, embedder)?;
    Ok(index.smoothed(idx, &EdgeSet::new()))
}

/// Cosine between the query encoding and the smoothed node embedding.
pub fn breadth_score(graph: &BreadthGraph, query: &Query, v: &str, embedder: &dyn Embedder) -> Result<f64, GraphError> {
    let q = embedder.embed(&query.ranking_text())?;
    let g = smoothed_embedding(graph, v, embedder)?;
    Ok(cosine(&q, &g)?)
}

/// Top-k nodes by score; ties go to the smaller node id.
pub fn rank_seeds(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // node indices follow node id order, so index order is the id tie-break
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

pub fn seed_nodes(
    graph: &BreadthGraph,
    query: &Query,
    k: usize,
    embedder: &dyn Embedder,
) -> Result<Vec<String>, GraphError> {
    let index = BreadthIndex::new(graph, embedder)?;
    let q = embedder.embed(&query.ranking_text())?;
    let removed = EdgeSet::new();
    let scores: Vec<f64> = (0..graph.nodes.len())
        .map(|v| cosine(&q, &index.smoothed(v, &removed)))
        .collect::<Result<_, _>>()?;
    Ok(rank_seeds(&scores, k)
        .into_iter()
        .map(|i| graph.nodes[i].node_id.clone())
        .collect())
}

/// A simple path in the breadth graph, as node and edge indices.
#[derive(Debug, Clone, PartialEq)]
pub struct BreadthPath {
    pub nodes: Vec<usize>,
    pub edges: Vec<usize>,
    pub score: f64,
    /// Indices of query answers supported by the terminal node.
    pub answers: Vec<usize>,
}

/// Inputs for path search that do not change between seeds.
pub struct PathSearch<'a> {
    pub max_len: usize,
    /// `None` keeps every path.
    pub beam: Option<usize>,
    pub lambda_off: f64,
    /// Off-topic drift per node, max(0, 1 - cos(f(q), ḡ(v))).
    pub drift: &'a [f64],
    /// Supported answer indices per node.
    pub support: &'a [Vec<usize>],
    pub answer_count: usize,
}

struct Frontier {
    score: f64,
    log_sum: f64,
    drift_sum: f64,
    nodes: Vec<usize>,
    edges: Vec<usize>,
}

impl PartialEq for Frontier {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Frontier {}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Frontier {
    // max-heap: higher score first, then lexicographically smaller node sequence
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.nodes.cmp(&self.nodes))
    }
}

/// Keeps at most `beam` paths per supported answer (paths whose terminal
/// supports nothing share one extra bucket).
pub struct BeamBuckets {
    counts: Vec<usize>,
    beam: Option<usize>,
}

impl BeamBuckets {
    pub fn new(answer_count: usize, beam: Option<usize>) -> Self {
        Self {
            counts: vec![0; answer_count + 1],
            beam,
        }
    }

    fn keys<'k>(&self, answers: &'k [usize]) -> Box<dyn Iterator<Item = usize> + 'k> {
        if answers.is_empty() {
            Box::new(std::iter::once(self.counts.len() - 1))
        } else {
            Box::new(answers.iter().copied())
        }
    }

    /// Admits the path if any of its buckets has room.
    pub fn admit(&mut self, answers: &[usize]) -> bool {
        let Some(beam) = self.beam else { return true };
        if !self.keys(answers).any(|k| self.counts[k] < beam) {
            return false;
        }
        let keys: Vec<usize> = self.keys(answers).collect();
        for k in keys {
            self.counts[k] += 1;
        }
        true
    }

    pub fn full(&self) -> bool {
        self.beam.is_some_and(|b| self.counts.iter().all(|c| *c >= b))
    }
}

impl BreadthIndex<'_> {
    /// Best-first simple-path search from the seeds.
    ///
    /// Extending a path never raises its score, so paths pop in globally
    /// descending (score, then node sequence) order and the beam keeps
    /// exactly the top paths of each bucket. A seed with no surviving edge
    /// yields a single zero-length path.
    pub fn enumerate_paths(&self, seeds: &[usize], search: &PathSearch<'_>, removed: &EdgeSet) -> Vec<BreadthPath> {
        let mut heap = BinaryHeap::new();
        let mut unique = seeds.to_vec();
        unique.sort_unstable();
        unique.dedup();
        for &s in &unique {
            let drift_sum = 0.0 + search.drift[s];
            heap.push(Frontier {
                score: score_breadth_path(&[], &[search.drift[s]], search.lambda_off),
                log_sum: 0.0,
                drift_sum,
                nodes: vec![s],
                edges: vec![],
            });
        }
        let mut buckets = BeamBuckets::new(search.answer_count, search.beam);
        let mut out = Vec::new();
        while let Some(p) = heap.pop() {
            let last = *p.nodes.last().expect("paths are non-empty");
            let links = if p.edges.len() < search.max_len {
                self.links(last, removed)
            } else {
                vec![]
            };
            let emit = !p.edges.is_empty() || self.links(last, removed).is_empty();
            if emit {
                let answers = search.support[last].clone();
                if buckets.admit(&answers) {
                    out.push(BreadthPath {
                        nodes: p.nodes.clone(),
                        edges: p.edges.clone(),
                        score: p.score,
                        answers,
                    });
                    if buckets.full() {
                        break;
                    }
                }
            }
            for (u, ei, c) in links {
                if p.nodes.contains(&u) {
                    continue;
                }
                let log_sum = p.log_sum + c.ln();
                let drift_sum = p.drift_sum + search.drift[u];
                let mut nodes = p.nodes.clone();
                nodes.push(u);
                let mut edges = p.edges.clone();
                edges.push(ei);
                heap.push(Frontier {
                    score: log_sum - search.lambda_off * drift_sum,
                    log_sum,
                    drift_sum,
                    nodes,
                    edges,
                });
            }
        }
        out
    }
}
