mod common;

use common::*;
use pbridge_core::evaluation::{
    aggregate_matrix, cosine_similarity, score_prediction, stability, MatrixLayout, RunScore,
};
use pbridge_core::extraction::{parse_relations, MAX_SPAN_WORDS};
use pbridge_core::graph::{build_graph, importance, SemanticGraph};
use pbridge_core::inference::Strategy as Method;
use pbridge_core::providers::HashingEmbedder;
use pbridge_core::schema::{default_schema, parse_hidden_prompt, render_hidden_prompt, sample_persona};
use pbridge_core::taxonomy::{parse_relation_type, RelationType};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn relation_set() -> impl Strategy<Value = Vec<pbridge_core::extraction::BridgingRelation>> {
    prop::collection::vec((0usize..12, 0usize..12, 0usize..7), 0..40).prop_map(|edges| {
        edges
            .into_iter()
            .map(|(a, b, t)| relation(&format!("c{a}"), &format!("c{b}"), ALL_TYPES[t]))
            .collect()
    })
}

fn nonzero_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, len).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

proptest! {
    #[test]
    fn importance_matches_degree_oracle(rels in relation_set()) {
        let g = build_graph(&rels);
        let oracle = oracle_importance(&rels);
        prop_assert_eq!(g.node_count(), oracle.len());
        for (label, imp) in &oracle {
            prop_assert_eq!(importance(&g, label).unwrap(), *imp);
        }
    }

    #[test]
    fn importance_is_normalized(rels in relation_set()) {
        let g = build_graph(&rels);
        let values: Vec<f64> = g.nodes().map(|(_, s)| s.importance).collect();
        prop_assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
        if g.edge_count() > 0 {
            prop_assert!(values.contains(&1.0));
        } else {
            prop_assert!(values.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn graph_ignores_relation_order(rels in relation_set(), seed in any::<u64>()) {
        let mut shuffled = rels.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(build_graph(&rels).to_canonical_json(), build_graph(&shuffled).to_canonical_json());
    }

    #[test]
    fn canonical_json_round_trips(rels in relation_set()) {
        let g = build_graph(&rels);
        let back = SemanticGraph::from_canonical_json(&g.to_canonical_json()).unwrap();
        prop_assert_eq!(back.to_canonical_json(), g.to_canonical_json());
    }

    #[test]
    fn parse_relations_never_panics(raw in ".{0,200}") {
        let _ = parse_relations(&raw);
    }

    #[test]
    fn accepted_relations_respect_contract(
        records in prop::collection::vec(
            (
                prop::sample::select(vec!["oven", "the oven", "big red oven", "the very big red oven", "it", "", "a", "Kitchen Sink"]),
                prop::sample::select(vec!["bread", "recipe book", "they", "an apple pie crust", "oven"]),
                prop::sample::select(vec!["part-of", "Part_Of", " THEME ", "synonym", "in", "temporal", "cause of", ""]),
            ),
            0..20,
        )
    ) {
        let payload: Vec<serde_json::Value> = records
            .iter()
            .map(|(a, b, t)| serde_json::json!({
                "anchor": a, "anaphor": b, "relation_type": t,
                "explanation": "x", "sentence_context": "y"
            }))
            .collect();
        let raw = serde_json::json!({ "bridging_relations": payload }).to_string();
        let report = parse_relations(&raw).unwrap();
        prop_assert_eq!(report.accepted.len() + report.rejected.len(), records.len());
        for r in &report.accepted {
            for span in [&r.anchor, &r.anaphor] {
                let words = span.split_whitespace().count();
                prop_assert!((1..=MAX_SPAN_WORDS).contains(&words), "{:?}", span);
            }
            prop_assert!(RelationType::ALL.contains(&r.relation_type));
            prop_assert_ne!(&r.anchor, &r.anaphor);
        }
    }

    #[test]
    fn relation_type_parsing_is_closed(label in "[a-zA-Z_ -]{0,16}") {
        if let Ok(t) = parse_relation_type(&label) {
            prop_assert!(RelationType::ALL.contains(&t));
            prop_assert_eq!(parse_relation_type(t.as_str()).unwrap(), t);
        }
    }

    #[test]
    fn cosine_is_symmetric_bounded_and_scale_free(
        (a, b) in (1usize..24).prop_flat_map(|n| (nonzero_vec(n), nonzero_vec(n))),
        c in 0.001f64..1000.0,
    ) {
        let ab = cosine_similarity(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert!((ab - cosine_similarity(&b, &a).unwrap()).abs() <= 1e-9);
        let scaled: Vec<f64> = a.iter().map(|x| x * c).collect();
        prop_assert!((ab - cosine_similarity(&scaled, &b).unwrap()).abs() <= 1e-9);
        prop_assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn overall_is_mean_of_dimensions(s1 in any::<u64>(), s2 in any::<u64>()) {
        let schema = default_schema();
        let (p, t) = (sample_persona(&schema, s1).unwrap(), sample_persona(&schema, s2).unwrap());
        let r = score_prediction(&p, &t, &HashingEmbedder::default()).unwrap();
        let mean = r.dimensions.iter().map(|d| d.cosine).sum::<f64>() / r.dimensions.len() as f64;
        prop_assert_eq!(r.dimensions.len(), 4);
        prop_assert_eq!(r.overall, mean);
        prop_assert!((-1.0..=1.0).contains(&r.overall));
        let swapped = score_prediction(&t, &p, &HashingEmbedder::default()).unwrap();
        for (x, y) in r.dimensions.iter().zip(&swapped.dimensions) {
            prop_assert!((x.cosine - y.cosine).abs() <= 1e-12);
        }
    }

    #[test]
    fn aggregation_is_permutation_invariant(
        scores in prop::collection::vec((0usize..3, 0usize..3, 0usize..3, 0usize..4, 0.0f64..1.0), 1..40),
        seed in any::<u64>(),
    ) {
        let mut runs: Vec<RunScore> = scores
            .iter()
            .map(|(b, t, s, r, v)| RunScore {
                backbone: format!("b{b}"),
                target: format!("t{t}"),
                strategy: Method::ALL[*s],
                run: *r,
                overall: *v,
            })
            .collect();
        let a = aggregate_matrix(&runs, &MatrixLayout::default());
        runs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let b = aggregate_matrix(&runs, &MatrixLayout::default());
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        prop_assert_eq!(a.to_markdown(), b.to_markdown());
    }

    #[test]
    fn stability_matches_two_pass(xs in prop::collection::vec(-1.0f64..1.0, 2..12)) {
        let r = stability(&xs, xs.len(), 0.03).unwrap();
        prop_assert!((r.std - two_pass_std(&xs)).abs() <= 1e-12);
        prop_assert_eq!(r.pass, r.std < 0.03);
    }

    #[test]
    fn sampled_personas_validate_and_render_injectively(s1 in any::<u64>(), s2 in any::<u64>()) {
        let schema = default_schema();
        let (a, b) = (sample_persona(&schema, s1).unwrap(), sample_persona(&schema, s2).unwrap());
        a.validate_against(&schema).unwrap();
        prop_assert_eq!(sample_persona(&schema, s1).unwrap(), a.clone());
        let (pa, pb) = (render_hidden_prompt(&a), render_hidden_prompt(&b));
        prop_assert_eq!(pa == pb, a == b);
        let values: Vec<String> = parse_hidden_prompt(&pa).into_iter().map(|(_, _, v)| v).collect();
        let expected: Vec<String> = a.assignments.iter().map(|x| x.value.clone()).collect();
        prop_assert_eq!(values, expected);
    }
}
