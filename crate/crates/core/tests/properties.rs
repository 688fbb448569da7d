//! Property tests for the graph, posterior, geometry, retrieval and metrics.

use std::collections::BTreeSet;

use proptest::prelude::*;
use serde_json::Value;

use echoagent_core::anatomy::AnatomyGroup;
use echoagent_core::eval::{auroc, gmean, Confusion};
use echoagent_core::fixtures::ellipse_mask;
use echoagent_core::hub::posterior::{normalized_entropy, uniform};
use echoagent_core::hub::{update_posteriors, EdgeKind, EvidenceGraph, HypothesisSet, NodeKind};
use echoagent_core::kb::embed::l2_norm;
use echoagent_core::kb::{Encoder, HashedBowEncoder, KnowledgeBase, KnowledgePrimitive, SourceSpan};
use echoagent_core::quant::{biplane_volume, ejection_fraction, grade_ef, EfGrade};

#[derive(Debug, Clone)]
enum Op {
    Anchor,
    Concept,
    Evidence { conf: f64, sources: Vec<(usize, u8)> },
    Edge { src: usize, dst: usize, kind: u8, weight: f64 },
}

fn kind(k: u8) -> EdgeKind {
    [EdgeKind::Generates, EdgeKind::Supports, EdgeKind::Contradicts, EdgeKind::Derives][k as usize % 4]
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        1 => Just(Op::Anchor),
        1 => Just(Op::Concept),
        4 => (-0.2f64..1.2, prop::collection::vec((0usize..40, 0u8..4), 0..4))
            .prop_map(|(conf, sources)| Op::Evidence { conf, sources }),
        4 => (0usize..40, 0usize..40, 0u8..4, -0.2f64..1.2)
            .prop_map(|(src, dst, kind, weight)| Op::Edge { src, dst, kind, weight }),
    ]
}

fn apply(g: &mut EvidenceGraph, op: &Op, t: usize) -> bool {
    match op {
        Op::Anchor => g.add_anchor("a", Value::Null, t).is_ok(),
        Op::Concept => g.add_concept("c", t).is_ok(),
        Op::Evidence { conf, sources } => {
            let s: Vec<(usize, EdgeKind)> = sources.iter().map(|&(n, k)| (n, kind(k))).collect();
            g.add_evidence("e", Value::Null, *conf, t, &s).is_ok()
        }
        Op::Edge { src, dst, kind: k, weight } => g.add_edge(*src, *dst, kind(*k), *weight).is_ok(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn graph_invariants_survive_any_mutation_sequence(ops in prop::collection::vec(op(), 1..80)) {
        let mut g = EvidenceGraph::new(true);
        for (t, o) in ops.iter().enumerate() {
            let before = g.clone();
            let ok = apply(&mut g, o, t);
            prop_assert!(g.verify().is_ok(), "{:?} broke the graph", o);
            if !ok {
                prop_assert_eq!(&g.nodes, &before.nodes);
                prop_assert_eq!(&g.edges, &before.edges);
            }
        }
        for n in g.nodes.iter().filter(|n| n.kind == NodeKind::Evidence) {
            prop_assert!(g.edges.iter().any(|e| e.dst == n.node_id && e.kind.is_provenance()));
        }
    }

    #[test]
    fn posterior_is_a_distribution(
        n in 1usize..6,
        edges in prop::collection::vec((0usize..6, any::<bool>(), 0.0f64..=1.0), 0..30),
        prior_raw in prop::collection::vec(0.01f64..1.0, 6),
        beta in 0.0f64..5.0,
        gamma in 0.0f64..0.99,
    ) {
        let mut g = EvidenceGraph::default();
        let a = g.add_anchor("s", Value::Null, 0).unwrap();
        let nodes: Vec<usize> = (0..n).map(|i| g.add_concept(&format!("h{i}"), 0).unwrap()).collect();
        for (t, &(h, sup, w)) in edges.iter().enumerate() {
            let e = g.add_evidence("e", Value::Null, w, t + 1, &[(a, EdgeKind::Generates)]).unwrap();
            let k = if sup { EdgeKind::Supports } else { EdgeKind::Contradicts };
            g.add_edge(e, nodes[h % n], k, w).unwrap();
        }
        let z: f64 = prior_raw[..n].iter().sum();
        let prior: Vec<f64> = prior_raw[..n].iter().map(|p| p / z).collect();
        let hyp = HypothesisSet { labels: (0..n).map(|i| i.to_string()).collect(), prior, nodes };
        let p = update_posteriors(&g, &hyp, beta, gamma);
        prop_assert!((p.values.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.values.iter().all(|v| (0.0..=1.0).contains(v)));
        let h = normalized_entropy(&p.values);
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&h));
    }

    #[test]
    fn extra_support_never_lowers_a_hypothesis(
        n in 2usize..6,
        target in 0usize..6,
        w in 0.0f64..=1.0,
        base in prop::collection::vec((0usize..6, any::<bool>(), 0.0f64..=1.0), 0..12),
    ) {
        let build = |extra: bool| {
            let mut g = EvidenceGraph::default();
            let a = g.add_anchor("s", Value::Null, 0).unwrap();
            let nodes: Vec<usize> = (0..n).map(|i| g.add_concept(&format!("h{i}"), 0).unwrap()).collect();
            let mut all = base.clone();
            if extra {
                all.push((target, true, w));
            }
            for &(h, sup, w) in &all {
                let e = g.add_evidence("e", Value::Null, 1.0, 1, &[(a, EdgeKind::Generates)]).unwrap();
                let k = if sup { EdgeKind::Supports } else { EdgeKind::Contradicts };
                g.add_edge(e, nodes[h % n], k, w).unwrap();
            }
            let hyp = HypothesisSet { labels: vec![String::new(); n], prior: uniform(n), nodes };
            update_posteriors(&g, &hyp, 1.0, 0.8).values[target % n]
        };
        prop_assert!(build(true) >= build(false) - 1e-12);
    }

    #[test]
    fn grading_is_monotone(a in -50.0f64..150.0, b in -50.0f64..150.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        // ConsiderablyReduced < MildlyReduced < Normal in declaration order
        prop_assert!(grade_ef(lo).unwrap().grade <= grade_ef(hi).unwrap().grade);
        let g = grade_ef(a).unwrap().grade;
        let want = if a >= 50.0 { EfGrade::Normal } else if a >= 40.0 { EfGrade::MildlyReduced } else { EfGrade::ConsiderablyReduced };
        prop_assert_eq!(g, want);
    }

    #[test]
    fn ejection_fraction_bounds(edv in 1.0f64..400.0, frac in 0.0f64..1.5) {
        let esv = edv * frac;
        let ef = ejection_fraction(edv, esv).unwrap();
        prop_assert!(ef.ef_percent <= 100.0);
        prop_assert_eq!(ef.anomalous, esv > edv);
        prop_assert!((ef.ef_percent - 100.0 * (1.0 - frac)).abs() < 1e-9 || ef.ef_percent == -100.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn volume_ignores_rigid_motion_and_scales_cubically(
        a in 15.0f64..25.0,
        b in 6.0f64..14.0,
        dx in -8isize..8,
        dy in -8isize..8,
        e in -2i32..=2,
    ) {
        let m2 = ellipse_mask(128, 0.5, a, b);
        let m4 = ellipse_mask(128, 0.5, a, b * 0.9);
        let v = biplane_volume(&m2, &m4, 1, 20).unwrap();
        prop_assert!(v > 0.0);
        let shifted = biplane_volume(&m2.translate(dx, dy), &m4.translate(-dy, dx), 1, 20).unwrap();
        prop_assert!((shifted - v).abs() <= 1e-9 * v, "{} vs {}", shifted, v);
        let rotated = biplane_volume(&m2.rotate90(), &m4, 1, 20).unwrap();
        // rotation moves samples relative to the grid; only discretization error remains
        prop_assert!((rotated - v).abs() <= 0.02 * v, "{} vs {}", rotated, v);
        // power-of-two spacing keeps every sample position bit-identical
        let s = 2f64.powi(e);
        let scaled = biplane_volume(&m2.with_spacing((0.5 * s, 0.5 * s)), &m4.with_spacing((0.5 * s, 0.5 * s)), 1, 20).unwrap();
        prop_assert!((scaled - v * s.powi(3)).abs() <= 1e-9 * scaled, "{} vs {}", scaled, v * s.powi(3));
    }
}

const VOCAB: &[&str] = &[
    "valve", "chamber", "wall", "motion", "apex", "annulus", "jet", "strain", "dilated", "pressure", "gradient",
    "filling", "outflow", "orifice", "area", "volume", "mass", "apical", "probe", "border", "cavity", "leaflet",
];

fn words(min: usize, max: usize) -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(VOCAB), min..max).prop_map(|w| w.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn retrieval_is_sorted_filtered_and_bounded(
        docs in prop::collection::vec((words(1, 12), prop::collection::btree_set(0usize..14, 0..3)), 1..40),
        query in words(1, 5),
        anatomy in prop::option::of(0usize..14),
        k in 1usize..20,
    ) {
        let enc = HashedBowEncoder::default();
        let prims = docs
            .iter()
            .enumerate()
            .map(|(i, (text, tags))| KnowledgePrimitive {
                id: format!("d{i:02}"),
                text: text.clone(),
                source: SourceSpan { document: "d".into(), start: 0, end: text.len() },
                anatomy_tags: tags.iter().map(|&t| AnatomyGroup::ALL[t]).collect::<BTreeSet<_>>(),
                embedding: None,
            })
            .collect();
        let kb = KnowledgeBase::embed_and_build(&enc, prims).unwrap();
        for p in kb.primitives() {
            prop_assert!((l2_norm(p.embedding.as_ref().unwrap()) - 1.0).abs() < 1e-12);
        }
        let a = anatomy.map(|i| AnatomyGroup::ALL[i]);
        let r = kb.retrieve_topk(&enc, &query, a, k).unwrap();
        let pool = kb.primitives().iter().filter(|p| a.map_or(true, |g| p.anatomy_tags.contains(&g))).count();
        prop_assert_eq!(r.hits.len(), k.min(pool));
        prop_assert_eq!(r.no_knowledge_for_anatomy, a.is_some() && pool == 0);
        for w in r.hits.windows(2) {
            prop_assert!(w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0));
        }
        for (id, s) in &r.hits {
            prop_assert!((-1.0..=1.0).contains(s));
            let p = kb.primitive(id).unwrap();
            prop_assert!(a.map_or(true, |g| p.anatomy_tags.contains(&g)));
        }
        let q = enc.embed(&query).unwrap();
        prop_assert!((l2_norm(&q) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auroc_flips_with_scores(pairs in prop::collection::vec((0.0f64..1.0, any::<bool>()), 2..50)) {
        let (s, l): (Vec<f64>, Vec<bool>) = pairs.into_iter().unzip();
        prop_assume!(l.iter().any(|&x| x) && l.iter().any(|&x| !x));
        let a = auroc(&s, &l).unwrap();
        let neg: Vec<f64> = s.iter().map(|x| -x).collect();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((auroc(&neg, &l).unwrap() - (1.0 - a)).abs() < 1e-12);
    }

    #[test]
    fn gmean_bounded_by_sensitivity_and_specificity(
        pairs in prop::collection::vec((0u8..3, 0u8..3), 1..60),
        pos in 0u8..3,
    ) {
        let (t, p): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
        let c = Confusion::of(&t, &p, &pos).unwrap();
        let g = gmean(&t, &p, &pos).unwrap();
        prop_assert!(g <= 100.0 * c.sensitivity().max(c.specificity()) + 1e-9);
        prop_assert!(g >= 100.0 * c.sensitivity().min(c.specificity()) - 1e-9);
        prop_assert_eq!(c.tp + c.fn_ + c.tn + c.fp, t.len());
    }
}
