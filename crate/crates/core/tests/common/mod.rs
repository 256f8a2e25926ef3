#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use pbridge_core::extraction::BridgingRelation;
use pbridge_core::runner::{PipelineSettings, ProviderSpec, RoleConfig, RunConfig};
use pbridge_core::taxonomy::RelationType;
use rand::Rng;
use sha2::{Digest, Sha256};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/e2e")
}

pub fn fixture_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::load(&fixture_dir().join("config.json")).expect("fixture config loads");
    cfg.output_dir = out.to_path_buf();
    cfg
}

pub fn simulated_role(id: &str) -> RoleConfig {
    RoleConfig {
        id: id.into(),
        provider: ProviderSpec::Simulated { seed: None, pairs_per_turn: None, max_distractors: None },
        params: Default::default(),
    }
}

pub fn simulated_config(seed: u64, out: &Path) -> RunConfig {
    RunConfig {
        settings: PipelineSettings { seed, offline: true, ..Default::default() },
        output_dir: out.to_path_buf(),
        pd: simulated_role("simulated-pd"),
        target: simulated_role("simulated-target"),
        record_fixtures: None,
    }
}

/// Degree counting straight from the relation list: unique
/// (source, target, type) triples, self-loops contribute nothing.
pub fn oracle_importance(relations: &[BridgingRelation]) -> BTreeMap<String, f64> {
    let mut nodes = BTreeSet::new();
    let mut triples = BTreeSet::new();
    for r in relations {
        nodes.insert(r.anchor.clone());
        nodes.insert(r.anaphor.clone());
        if r.anchor != r.anaphor {
            triples.insert((r.anchor.clone(), r.anaphor.clone(), r.relation_type.as_str()));
        }
    }
    let degree = |n: &String| triples.iter().filter(|(a, _, _)| a == n).count() + triples.iter().filter(|(_, b, _)| b == n).count();
    let max = nodes.iter().map(degree).max().unwrap_or(0);
    nodes
        .iter()
        .map(|n| {
            let imp = if max == 0 { 0.0 } else { degree(n) as f64 / max as f64 };
            (n.clone(), imp)
        })
        .collect()
}

pub const ALL_TYPES: [RelationType; 7] = [
    RelationType::PartOf,
    RelationType::MemberOf,
    RelationType::Instrument,
    RelationType::Theme,
    RelationType::CauseOf,
    RelationType::In,
    RelationType::Temporal,
];

pub fn relation(a: &str, b: &str, t: RelationType) -> BridgingRelation {
    BridgingRelation {
        anchor: a.into(),
        anaphor: b.into(),
        relation_type: t,
        explanation: "oracle".into(),
        sentence_context: "oracle".into(),
    }
}

/// Up to `max_nodes` labels and `max_edges` relations, duplicates and
/// self-loops included.
pub fn random_relations(rng: &mut impl Rng, max_nodes: usize, max_edges: usize) -> Vec<BridgingRelation> {
    let n_nodes = rng.gen_range(1..=max_nodes);
    let n_edges = rng.gen_range(0..=max_edges);
    (0..n_edges)
        .map(|_| {
            let a = format!("concept {}", rng.gen_range(0..n_nodes));
            let b = format!("concept {}", rng.gen_range(0..n_nodes));
            relation(&a, &b, ALL_TYPES[rng.gen_range(0..7)])
        })
        .collect()
}

/// Bag-of-words hashing embedding: lowercase alphanumeric tokens, bucket =
/// first eight SHA-256 bytes (big-endian) mod `dim`, L2-normalized counts.
pub fn oracle_embed(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    let lower = text.to_lowercase();
    for tok in lower.split(|c: char| !c.is_ascii_alphanumeric()).filter(|t| !t.is_empty()) {
        let h = Sha256::digest(tok.as_bytes());
        let mut first = [0u8; 8];
        first.copy_from_slice(&h[..8]);
        v[(u64::from_be_bytes(first) % dim as u64) as usize] += 1.0;
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

pub fn oracle_cosine(a: &str, b: &str) -> f64 {
    let (x, y) = (oracle_embed(a, 256), oracle_embed(b, 256));
    x.iter().zip(&y).map(|(p, q)| p * q).sum()
}

/// Two-pass sample standard deviation.
pub fn two_pass_std(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}
