mod common;

use std::collections::BTreeMap;

use common::*;
use dualgraph_core::breadth::{build_breadth_graph, merge_breadth_graphs, BreadthConfidences};
use dualgraph_core::depth::{build_depth_graph, lcs_typed, OpSequence, OpStep};
use dualgraph_core::embedding::{Embedder, HashEmbedder};
use dualgraph_core::fusion::{calibrate, entropy_gate, fuse, select_answer, AnswerDistribution};
use dualgraph_core::trace::{parse_trace_file, OpType};
use proptest::prelude::*;

fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.001f64..1.0, n).prop_map(|w| {
        let z: f64 = w.iter().sum();
        w.into_iter().map(|x| x / z).collect()
    })
}

fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..=8).prop_flat_map(|n| (simplex(n), simplex(n)))
}

fn dist(p: Vec<f64>) -> AnswerDistribution {
    let answers = (0..p.len()).map(|i| format!("a{i}")).collect();
    AnswerDistribution::new(answers, p)
}

fn op_seq() -> impl Strategy<Value = Vec<OpStep>> {
    let step = (0usize..4, prop::option::of(prop::sample::select(vec!["acre", "step"]))).prop_map(|(o, u)| {
        let op = [OpType::Search, OpType::Parse, OpType::Compute, OpType::Verify][o];
        match u {
            Some(u) => OpStep::with_unit(op, u),
            None => OpStep::new(op),
        }
    });
    prop::collection::vec(step, 0..7)
}

proptest! {
    #[test]
    fn fused_is_a_distribution((p, q) in pair(), alpha in 0.0f64..=1.0) {
        let f = fuse(&dist(p), &dist(q), alpha, 1e-12);
        let total: f64 = f.probs.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(f.probs.iter().all(|x| (0.0..=1.0).contains(x)));
        prop_assert!(f.entropy >= 0.0);
    }

    #[test]
    fn gate_is_a_weight(hb in 0.0f64..3.0, hd in 0.0f64..3.0) {
        let a = entropy_gate(hb, hd);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((a + entropy_gate(hd, hb) - 1.0).abs() < 1e-12);
        // the lower-entropy channel gets the larger weight
        if hd < hb { prop_assert!(a > 0.5) }
    }

    #[test]
    fn calibration_keeps_the_argmax(p in (2usize..=8).prop_flat_map(simplex), gamma in 0.05f64..5.0, beta in 0.0f64..3.0) {
        let d = dist(p);
        let c = calibrate(&d, gamma, beta, 0.4, 1.1);
        prop_assert_eq!(select_answer(&c), select_answer(&d));
    }

    #[test]
    fn typed_lcs_matches_brute_force(a in op_seq(), b in op_seq()) {
        let (x, y) = (OpSequence(a.clone()), OpSequence(b.clone()));
        let l = lcs_typed(&x, &y);
        prop_assert_eq!(l, brute_lcs(&a, &b));
        prop_assert_eq!(l, lcs_typed(&y, &x));
        prop_assert!(l <= a.len().min(b.len()));
    }

    #[test]
    fn reference_embedding_is_unit_or_zero(text in ".{0,40}") {
        let v = HashEmbedder::default().embed(&text).unwrap();
        let norm: f64 = v.0.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-12);
        prop_assert_eq!(v, HashEmbedder::default().embed(&text).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn traces_round_trip(seed in any::<u64>(), len in 1usize..30) {
        let t = random_trace(seed, len);
        let bytes = t.to_canonical_bytes();
        let back = parse_trace_file(&bytes).unwrap();
        prop_assert_eq!(&back, &t);
        prop_assert_eq!(back.to_canonical_bytes(), bytes);
    }

    #[test]
    fn depth_edges_run_forward_in_time(seed in any::<u64>(), len in 1usize..30) {
        let build = build_depth_graph(&random_trace(seed, len));
        prop_assert!(build.graph.is_acyclic());
        for e in build.graph.edges() {
            let (s, d) = (build.graph.node(&e.src).unwrap(), build.graph.node(&e.dst).unwrap());
            prop_assert!(s.timestamp < d.timestamp);
            prop_assert!((0.05..=1.0).contains(&e.confidence));
        }
    }

    #[test]
    fn breadth_merge_ignores_input_order(a in any::<u64>(), b in any::<u64>()) {
        let conf = BreadthConfidences::default();
        let g1 = build_breadth_graph(&random_trace(a, 10), &BTreeMap::new(), &conf);
        let g2 = build_breadth_graph(&random_trace(b, 10), &BTreeMap::new(), &conf);
        let ab = merge_breadth_graphs(&[g1.clone(), g2.clone()]).map(|g| g.to_bytes());
        let ba = merge_breadth_graphs(&[g2, g1]).map(|g| g.to_bytes());
        prop_assert_eq!(ab.is_ok(), ba.is_ok());
        if let (Ok(x), Ok(y)) = (ab, ba) {
            prop_assert_eq!(x, y);
        }
    }
}
