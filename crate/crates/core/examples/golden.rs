//! Regenerates the checked-in golden files under `fixtures/golden/`.
//!
//! Run from the workspace root: `cargo run -p dualgraph-core --example golden`.
//! Review the diff by hand before committing new goldens.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use dualgraph_core::breadth::{build_breadth_graph, seed_nodes, BreadthConfidences};
use dualgraph_core::depth::build_depth_graph;
use dualgraph_core::embedding::{Embedder, HashEmbedder};
use dualgraph_core::fusion::{Channel, HyperParams};
use dualgraph_core::pipeline::{run_query, Execution};
use dualgraph_core::query::Query;
use dualgraph_core::trace::parse_trace_file;
use serde_json::json;

pub const GOLDEN_STRINGS: [&str; 10] = [
    "",
    "a",
    "Turing machine",
    "turing MACHINE",
    "the two-state machine halts after 47 steps",
    "12,000 people; 60,000 acres",
    "$x$ := 3",
    "naïve café",
    "search parse compute verify",
    "land grant difference in thousand_acres",
];

fn main() {
    let root = Path::new("fixtures");
    let out = root.join("golden");
    fs::create_dir_all(&out).unwrap();
    let embedder = HashEmbedder::default();

    for name in ["turing", "land_grant"] {
        let trace = parse_trace_file(&fs::read(root.join(format!("{name}.jsonl"))).unwrap()).unwrap();
        let query = Query::from_json(&fs::read(root.join(format!("{name}.query.json"))).unwrap()).unwrap();
        let breadth = build_breadth_graph(&trace, &BTreeMap::new(), &BreadthConfidences::default());
        let depth = build_depth_graph(&trace);
        let mut by_kind: BTreeMap<String, usize> = BTreeMap::new();
        for n in breadth.nodes() {
            *by_kind.entry(format!("{:?}", n.kind).to_lowercase()).or_default() += 1;
        }
        let mut by_rel: BTreeMap<&str, usize> = BTreeMap::new();
        for e in breadth.edges() {
            *by_rel.entry(e.relation.as_str()).or_default() += 1;
        }
        let outcome = run_query(
            &breadth,
            &depth.graph,
            &query,
            HyperParams::default(),
            &embedder,
            Execution::Sequential,
        )
        .unwrap();
        let chain: Vec<String> = outcome
            .chain
            .iter()
            .map(|c| {
                let ch = match c.edge.channel {
                    Channel::Breadth => "breadth",
                    Channel::Depth => "depth",
                };
                format!("{ch} {} -{}-> {}", c.edge.src, c.edge.relation, c.edge.dst)
            })
            .collect();
        let golden = json!({
            "breadth": {
                "nodes": breadth.nodes().len(),
                "edges": breadth.edges().len(),
                "nodes_by_kind": by_kind,
                "edges_by_relation": by_rel,
            },
            "seeds_k3": seed_nodes(&breadth, &query, 3, &embedder).unwrap(),
            "depth": {
                "nodes": depth.graph.nodes().len(),
                "admitted": depth.graph.edges().len(),
                "dropped": depth.dropped.len(),
            },
            "map_answer": outcome.map_answer,
            "chain_delta_0_05": chain,
        });
        let mut bytes = serde_json::to_vec_pretty(&golden).unwrap();
        bytes.push(b'\n');
        fs::write(out.join(format!("{name}.json")), bytes).unwrap();
    }

    let mut lines = String::new();
    for text in GOLDEN_STRINGS {
        let v = embedder.embed(text).unwrap();
        lines.push_str(&serde_json::to_string(&json!({ "text": text, "vector": v })).unwrap());
        lines.push('\n');
    }
    fs::write(out.join("reference_embeddings.jsonl"), lines).unwrap();
}
