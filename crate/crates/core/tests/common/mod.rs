//! Helpers shared by the integration and acceptance tests: fixture loading,
//! random inputs and brute-force oracles.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use dualgraph_core::breadth::{BreadthEdge, BreadthGraph, BreadthNode, BreadthNodeKind, BreadthRelation};
use dualgraph_core::depth::{DepthEdge, DepthGraph, DepthNode, DepthNodeKind, DepthRelation, OpStep, ValueType};
use dualgraph_core::query::Query;
use dualgraph_core::trace::{parse_trace_file, EventKind, EventValue, OpType, Status, Trace, TraceEvent};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn fixture_path(name: &str) -> PathBuf {
    workspace_root().join("fixtures").join(name)
}

pub fn load_fixture(name: &str) -> (Trace, Query) {
    let trace = parse_trace_file(&std::fs::read(fixture_path(&format!("{name}.jsonl"))).unwrap()).unwrap();
    let query = Query::from_json(&std::fs::read(fixture_path(&format!("{name}.query.json"))).unwrap()).unwrap();
    (trace, query)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn blank_event(id: &str, ts: u64, kind: EventKind) -> TraceEvent {
    TraceEvent {
        event_id: id.into(),
        run_id: "r".into(),
        timestamp: ts,
        kind,
        tool: matches!(kind, EventKind::Action).then(|| "tool".to_string()),
        op_type: matches!(kind, EventKind::Action | EventKind::Validator).then_some(OpType::Compute),
        params_digest: String::new(),
        text: String::new(),
        value: None,
        unit: None,
        inputs: vec![],
        status: Status::Ok,
        branch_id: "main".into(),
        answer_support: vec![],
    }
}

const WORDS: [&str; 12] = [
    "machine", "tape", "state", "halt", "grant", "acre", "colony", "count", "table", "rule", "step", "record",
];
const UNITS: [&str; 6] = ["steps", "acre", "thousand_acres", "people", "seconds", "furlong"];

/// A trace whose events have distinct, strictly increasing timestamps and
/// only reference earlier events. Inputs may still violate typing or unit
/// gates, which is the point.
pub fn random_trace(seed: u64, len: usize) -> Trace {
    let mut r = rng(seed);
    let mut events: Vec<TraceEvent> = Vec::with_capacity(len);
    for i in 0..len {
        let kind = *[
            EventKind::Action,
            EventKind::Artifact,
            EventKind::Artifact,
            EventKind::Validator,
            EventKind::Note,
        ]
        .choose(&mut r)
        .unwrap();
        let mut e = blank_event(&format!("e{i:02}"), (i as u64 + 1) * 10, kind);
        e.run_id = format!("run-{seed}");
        let words: Vec<&str> = (0..r.random_range(1..4))
            .map(|_| *WORDS.choose(&mut r).unwrap())
            .collect();
        e.text = words.join(" ");
        if kind == EventKind::Action {
            e.op_type = Some(*[OpType::Search, OpType::Parse, OpType::Compute].choose(&mut r).unwrap());
            e.params_digest = format!("p{}", r.random_range(0..3));
            if r.random_bool(0.3) {
                e.status = Status::Retry;
            }
        }
        if kind == EventKind::Validator && r.random_bool(0.3) {
            e.status = Status::Fail;
        }
        if kind == EventKind::Artifact && r.random_bool(0.6) {
            e.value = Some(EventValue::Number(r.random_range(1..100) as f64));
            if r.random_bool(0.8) {
                e.unit = Some(UNITS.choose(&mut r).unwrap().to_string());
            }
        }
        if i > 0 {
            let n_inputs = r.random_range(0..=2.min(i));
            let mut inputs = BTreeSet::new();
            for _ in 0..n_inputs {
                inputs.insert(format!("e{:02}", r.random_range(0..i)));
            }
            e.inputs = inputs.into_iter().collect();
        }
        events.push(e);
    }
    Trace::new(format!("run-{seed}"), "q", events)
}

fn breadth_node(id: String) -> BreadthNode {
    BreadthNode {
        node_id: id.clone(),
        kind: BreadthNodeKind::Entity,
        label: id.clone(),
        text: id,
        source_event: None,
        answer_support: vec![],
    }
}

/// Random undirected-ish breadth graph on `n` nodes; some pairs get two
/// parallel edges with different relations.
pub fn random_breadth_graph(seed: u64, n: usize) -> BreadthGraph {
    let mut r = rng(seed);
    let nodes: Vec<BreadthNode> = (0..n).map(|i| breadth_node(format!("n{i}"))).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && r.random_bool(0.3) {
                let relation = *[
                    BreadthRelation::Mentions,
                    BreadthRelation::Cites,
                    BreadthRelation::Aliases,
                ]
                .choose(&mut r)
                .unwrap();
                edges.push(BreadthEdge {
                    src: format!("n{i}"),
                    dst: format!("n{j}"),
                    relation,
                    confidence: r.random_range(0.05..1.0),
                });
            }
        }
    }
    BreadthGraph::from_parts(nodes, edges).unwrap()
}

/// Random typed DAG on `n` nodes with timestamps following node order.
pub fn random_depth_graph(seed: u64, n: usize) -> DepthGraph {
    let mut r = rng(seed);
    let nodes: Vec<DepthNode> = (0..n)
        .map(|i| {
            let kind = match r.random_range(0..3) {
                0 => DepthNodeKind::Action {
                    tool: "t".into(),
                    op_type: OpType::Compute,
                    params_digest: String::new(),
                    env_sig: String::new(),
                    unit: None,
                },
                1 => DepthNodeKind::Artifact {
                    value: None,
                    unit: None,
                    value_type: ValueType::Text,
                },
                _ => DepthNodeKind::Validator {
                    check_kind: OpType::Verify,
                    outcome: Status::Ok,
                    unit: None,
                },
            };
            DepthNode {
                node_id: format!("n{i}"),
                timestamp: i as u64,
                kind,
                label: String::new(),
                answer_support: vec![],
            }
        })
        .collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if let Some(relation) = DepthRelation::for_kinds(&nodes[i].kind, &nodes[j].kind) {
                if r.random_bool(0.6) {
                    edges.push(DepthEdge {
                        src: format!("n{i}"),
                        dst: format!("n{j}"),
                        relation,
                        confidence: r.random_range(0.05..1.0),
                    });
                }
            }
        }
    }
    DepthGraph::from_parts(nodes, edges).unwrap()
}

/// Every simple path over the strongest edge per node pair, starting at
/// `start`, with 1..=max_len edges. Paths are (nodes, edges).
pub fn dfs_breadth_paths(graph: &BreadthGraph, start: usize, max_len: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    let n = graph.nodes().len();
    let idx: BTreeMap<&str, usize> = graph
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, v)| (v.node_id.as_str(), i))
        .collect();
    // best[(a, b)] = (confidence, edge index), lowest index wins ties
    let mut best: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    for (ei, e) in graph.edges().iter().enumerate() {
        let (s, d) = (idx[e.src.as_str()], idx[e.dst.as_str()]);
        for key in [(s, d), (d, s)] {
            match best.get(&key) {
                Some(&(c, _)) if c >= e.confidence => {}
                _ => {
                    best.insert(key, (e.confidence, ei));
                }
            }
        }
    }
    let mut out = Vec::new();
    fn go(
        v: usize,
        n: usize,
        max_len: usize,
        best: &BTreeMap<(usize, usize), (f64, usize)>,
        nodes: &mut Vec<usize>,
        edges: &mut Vec<usize>,
        out: &mut Vec<(Vec<usize>, Vec<usize>)>,
    ) {
        if !edges.is_empty() {
            out.push((nodes.clone(), edges.clone()));
        }
        if edges.len() == max_len {
            return;
        }
        for u in 0..n {
            if let Some(&(_, ei)) = best.get(&(v, u)) {
                if nodes.contains(&u) {
                    continue;
                }
                nodes.push(u);
                edges.push(ei);
                go(u, n, max_len, best, nodes, edges, out);
                nodes.pop();
                edges.pop();
            }
        }
    }
    go(start, n, max_len, &best, &mut vec![start], &mut vec![], &mut out);
    out
}

/// Every directed path with at most `max_len` edges ending at `target`,
/// including the trivial one. Paths are (nodes, edges).
pub fn dfs_depth_paths_into(graph: &DepthGraph, target: usize, max_len: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    let idx: BTreeMap<&str, usize> = graph
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, v)| (v.node_id.as_str(), i))
        .collect();
    let out_edges: Vec<Vec<(usize, usize)>> = (0..graph.nodes().len())
        .map(|v| {
            graph
                .edges()
                .iter()
                .enumerate()
                .filter(|(_, e)| idx[e.src.as_str()] == v)
                .map(|(ei, e)| (idx[e.dst.as_str()], ei))
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    fn go(
        v: usize,
        target: usize,
        max_len: usize,
        out_edges: &[Vec<(usize, usize)>],
        nodes: &mut Vec<usize>,
        edges: &mut Vec<usize>,
        out: &mut Vec<(Vec<usize>, Vec<usize>)>,
    ) {
        if v == target {
            out.push((nodes.clone(), edges.clone()));
        }
        if edges.len() == max_len {
            return;
        }
        for &(u, ei) in &out_edges[v] {
            nodes.push(u);
            edges.push(ei);
            go(u, target, max_len, out_edges, nodes, edges, out);
            nodes.pop();
            edges.pop();
        }
    }
    for start in 0..graph.nodes().len() {
        go(
            start,
            target,
            max_len,
            &out_edges,
            &mut vec![start],
            &mut vec![],
            &mut out,
        );
    }
    out.sort();
    out.dedup();
    out
}

/// Longest common typed subsequence by trying every subsequence of the
/// shorter sequence, longest first.
pub fn brute_lcs(a: &[OpStep], b: &[OpStep]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let len = mask.count_ones() as usize;
        if len <= best {
            continue;
        }
        let sub: Vec<&OpStep> = (0..short.len())
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| &short[i])
            .collect();
        let mut it = long.iter();
        if sub.iter().all(|s| it.any(|x| x.op == s.op && x.unit == s.unit)) {
            best = len;
        }
    }
    best
}
