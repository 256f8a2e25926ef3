//! Directed, relation-labeled semantic graph built from accepted bridging
//! relations, with normalized degree centrality.
//!
//! `importance(v) = deg(v) / max_u deg(u)` where `deg` is in-degree plus
//! out-degree over the deduplicated edge set. A graph without edges assigns 0
//! to every node.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extraction::BridgingRelation;
use crate::taxonomy::{RelationClass, RelationType};

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("malformed graph document: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Edge {
    pub source: String,
    pub target: String,
    pub relation_type: RelationType,
    /// Index of the first relation in the input list that produced this edge.
    pub provenance: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeStats {
    pub degree: usize,
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SemanticGraph {
    nodes: BTreeMap<String, NodeStats>,
    /// Sorted by `(source, target, type)`, unique on that triple.
    edges: Vec<Edge>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphFormat {
    CanonicalJson,
    Dot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeShare {
    pub count: usize,
    pub fraction: f64,
}

impl SemanticGraph {
    /// Assembles a graph from `(source, target, type, provenance)` edges.
    /// Repeated triples collapse onto the lowest provenance; self-loops are
    /// dropped.
    pub fn from_edges(edges: impl IntoIterator<Item = (String, String, RelationType, usize)>) -> Self {
        let mut unique: BTreeMap<(String, String, RelationType), usize> = BTreeMap::new();
        let mut labels: BTreeSet<String> = BTreeSet::new();
        for (source, target, t, prov) in edges {
            labels.insert(source.clone());
            labels.insert(target.clone());
            if source == target {
                log::warn!("dropping self-loop on {source:?}");
                continue;
            }
            unique
                .entry((source, target, t))
                .and_modify(|p| *p = (*p).min(prov))
                .or_insert(prov);
        }
        let mut degree: BTreeMap<String, usize> = labels.into_iter().map(|l| (l, 0)).collect();
        for (s, t, _) in unique.keys() {
            *degree.get_mut(s).expect("endpoint registered") += 1;
            *degree.get_mut(t).expect("endpoint registered") += 1;
        }
        let max_degree = degree.values().copied().max().unwrap_or(0);
        let nodes = degree
            .into_iter()
            .map(|(label, d)| {
                let importance = if max_degree == 0 {
                    0.0
                } else {
                    d as f64 / max_degree as f64
                };
                (label, NodeStats { degree: d, importance })
            })
            .collect();
        let edges = unique
            .into_iter()
            .map(|((source, target, relation_type), provenance)| Edge {
                source,
                target,
                relation_type,
                provenance,
            })
            .collect();
        SemanticGraph { nodes, edges }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Node labels with their statistics, in label order.
    pub fn nodes(&self) -> impl Iterator<Item = (&str, NodeStats)> {
        self.nodes.iter().map(|(l, s)| (l.as_str(), *s))
    }

    pub fn contains(&self, label: &str) -> bool {
        self.nodes.contains_key(label)
    }

    pub fn degree(&self, label: &str) -> Result<usize, GraphError> {
        self.nodes
            .get(label)
            .map(|s| s.degree)
            .ok_or_else(|| GraphError::UnknownNode(label.to_string()))
    }

    pub fn to_canonical_json(&self) -> String {
        let doc = CanonicalGraph {
            nodes: self
                .nodes
                .iter()
                .map(|(label, s)| CanonicalNode {
                    label: label.clone(),
                    importance: s.importance,
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| CanonicalEdge {
                    source: e.source.clone(),
                    target: e.target.clone(),
                    relation_type: e.relation_type,
                })
                .collect(),
        };
        crate::fsutil::to_json_pretty(&doc)
    }

    /// Rebuilds a graph from its canonical JSON export. Importance is
    /// recomputed and checked against the stored values; provenance is lost and
    /// set to edge order.
    pub fn from_canonical_json(text: &str) -> Result<SemanticGraph, GraphError> {
        let doc: CanonicalGraph =
            serde_json::from_str(text).map_err(|e| GraphError::Malformed(e.to_string()))?;
        let mut g = SemanticGraph::from_edges(
            doc.edges
                .iter()
                .enumerate()
                .map(|(i, e)| (e.source.clone(), e.target.clone(), e.relation_type, i)),
        );
        for n in &doc.nodes {
            match g.nodes.get(&n.label) {
                Some(s) if (s.importance - n.importance).abs() > 1e-12 => {
                    return Err(GraphError::Malformed(format!(
                        "node {:?} stores importance {} but edges imply {}",
                        n.label, n.importance, s.importance
                    )))
                }
                Some(_) => {}
                None => {
                    // Isolated node: only possible when the graph has no edges.
                    g.nodes.insert(n.label.clone(), NodeStats { degree: 0, importance: 0.0 });
                }
            }
        }
        Ok(g)
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph semantic_graph {\n");
        if !self.nodes.is_empty() {
            out.push_str("  node [shape=ellipse];\n");
        }
        for (label, s) in &self.nodes {
            let _ = writeln!(
                out,
                "  \"{}\" [label=\"{}\\n{:.2}\", penwidth={:.2}, fontsize={:.1}];",
                dot_escape(label),
                dot_escape(label),
                s.importance,
                1.0 + 2.0 * s.importance,
                10.0 + 8.0 * s.importance
            );
        }
        for e in &self.edges {
            let _ = writeln!(
                out,
                "  \"{}\" -> \"{}\" [label=\"{}\"];",
                dot_escape(&e.source),
                dot_escape(&e.target),
                e.relation_type
            );
        }
        out.push_str("}\n");
        out
    }
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

#[derive(Serialize, Deserialize)]
struct CanonicalGraph {
    nodes: Vec<CanonicalNode>,
    edges: Vec<CanonicalEdge>,
}

#[derive(Serialize, Deserialize)]
struct CanonicalNode {
    label: String,
    importance: f64,
}

#[derive(Serialize, Deserialize)]
struct CanonicalEdge {
    source: String,
    target: String,
    #[serde(rename = "type")]
    relation_type: RelationType,
}

/// One edge per relation, anchor to anaphor.
pub fn build_graph(relations: &[BridgingRelation]) -> SemanticGraph {
    SemanticGraph::from_edges(
        relations
            .iter()
            .enumerate()
            .map(|(i, r)| (r.anchor.clone(), r.anaphor.clone(), r.relation_type, i)),
    )
}

/// Normalized degree centrality of `label`.
pub fn importance(g: &SemanticGraph, label: &str) -> Result<f64, GraphError> {
    g.nodes
        .get(label)
        .map(|s| s.importance)
        .ok_or_else(|| GraphError::UnknownNode(label.to_string()))
}

/// Edge count and share per relation type; all seven types are present.
pub fn relation_distribution(g: &SemanticGraph) -> BTreeMap<RelationType, TypeShare> {
    let mut counts: BTreeMap<RelationType, usize> = RelationType::ALL.iter().map(|t| (*t, 0)).collect();
    for e in &g.edges {
        *counts.get_mut(&e.relation_type).expect("all types present") += 1;
    }
    let total = g.edges.len();
    counts
        .into_iter()
        .map(|(t, count)| {
            let fraction = if total == 0 { 0.0 } else { count as f64 / total as f64 };
            (t, TypeShare { count, fraction })
        })
        .collect()
}

/// Share of mereological and frame-related edges, in that order.
pub fn class_balance(g: &SemanticGraph) -> (f64, f64) {
    let total = g.edges.len();
    if total == 0 {
        return (0.0, 0.0);
    }
    let mereo = g
        .edges
        .iter()
        .filter(|e| e.relation_type.class() == RelationClass::Mereological)
        .count();
    (mereo as f64 / total as f64, (total - mereo) as f64 / total as f64)
}

/// Up to `k` nodes by descending importance, ties broken by label.
pub fn top_hubs(g: &SemanticGraph, k: usize) -> Vec<(String, f64)> {
    let mut ranked: Vec<(&String, f64)> = g.nodes.iter().map(|(l, s)| (l, s.importance)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked
        .into_iter()
        .take(k)
        .map(|(l, i)| (l.clone(), i))
        .collect()
}

pub fn export_graph(g: &SemanticGraph, format: GraphFormat) -> String {
    match format {
        GraphFormat::CanonicalJson => g.to_canonical_json(),
        GraphFormat::Dot => g.to_dot(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: &str, b: &str, t: RelationType) -> BridgingRelation {
        BridgingRelation {
            anchor: a.into(),
            anaphor: b.into(),
            relation_type: t,
            explanation: "e".into(),
            sentence_context: "c".into(),
        }
    }

    fn star() -> SemanticGraph {
        build_graph(&[
            rel("center", "a", RelationType::PartOf),
            rel("b", "center", RelationType::Theme),
            rel("center", "c", RelationType::In),
        ])
    }

    #[test]
    fn cook_recipe_bake() {
        let g = build_graph(&[
            rel("cook", "recipe", RelationType::Theme),
            rel("cook", "bake", RelationType::CauseOf),
        ]);
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.edge_count(), 2);
        let labels: Vec<&str> = g.nodes().map(|(l, _)| l).collect();
        assert_eq!(labels, ["bake", "cook", "recipe"]);
        let d = relation_distribution(&g);
        assert_eq!(d[&RelationType::Theme].fraction, 0.5);
        assert_eq!(d[&RelationType::CauseOf].fraction, 0.5);
        assert_eq!(d[&RelationType::PartOf].count, 0);
    }

    #[test]
    fn empty_graph() {
        let g = build_graph(&[]);
        assert!(g.is_empty());
        assert!(relation_distribution(&g).values().all(|s| s.count == 0 && s.fraction == 0.0));
        assert_eq!(g.to_canonical_json(), "{\n  \"nodes\": [],\n  \"edges\": []\n}\n");
        assert_eq!(g.to_dot(), "digraph semantic_graph {\n}\n");
        assert_eq!(class_balance(&g), (0.0, 0.0));
        assert!(top_hubs(&g, 3).is_empty());
    }

    #[test]
    fn duplicates_collapse_but_types_do_not() {
        let g = build_graph(&[
            rel("knife", "cutting", RelationType::Instrument),
            rel("knife", "cutting", RelationType::Instrument),
            rel("knife", "cutting", RelationType::Theme),
        ]);
        assert_eq!(g.edge_count(), 2);
        assert_eq!(g.degree("knife").unwrap(), 2);
        assert_eq!(g.edges()[0].provenance, 0);
    }

    #[test]
    fn star_importance() {
        let g = star();
        assert_eq!(importance(&g, "center").unwrap(), 1.0);
        for leaf in ["a", "b", "c"] {
            assert!((importance(&g, leaf).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(importance(&g, "zzz"), Err(GraphError::UnknownNode("zzz".into())));
        assert_eq!(top_hubs(&g, 1), vec![("center".to_string(), 1.0)]);
        assert_eq!(top_hubs(&g, 10).len(), 4);
    }

    #[test]
    fn single_edge_both_full() {
        let g = build_graph(&[rel("x", "y", RelationType::Temporal)]);
        assert_eq!(importance(&g, "x").unwrap(), 1.0);
        assert_eq!(importance(&g, "y").unwrap(), 1.0);
    }

    #[test]
    fn edgeless_nodes_score_zero() {
        let g = SemanticGraph::from_edges([("solo".to_string(), "solo".to_string(), RelationType::In, 0)]);
        assert_eq!(g.edge_count(), 0);
        assert_eq!(importance(&g, "solo").unwrap(), 0.0);
    }

    #[test]
    fn tie_break_is_lexicographic() {
        let g = build_graph(&[rel("zebra", "apple", RelationType::In)]);
        let hubs = top_hubs(&g, 2);
        assert_eq!(hubs[0].0, "apple");
        assert_eq!(hubs[1].0, "zebra");
    }

    #[test]
    fn dot_has_one_arrow_per_edge() {
        let g = build_graph(&[
            rel("car", "engine", RelationType::PartOf),
            rel("class", "student", RelationType::MemberOf),
            rel("murder", "knife", RelationType::Instrument),
        ]);
        let dot = export_graph(&g, GraphFormat::Dot);
        assert_eq!(dot.matches("->").count(), 3);
        assert!(dot.contains("[label=\"member-of\"]"));
        assert_eq!(dot, export_graph(&g, GraphFormat::Dot));
    }

    #[test]
    fn canonical_json_round_trips() {
        let g = star();
        let text = export_graph(&g, GraphFormat::CanonicalJson);
        assert!(text.contains("\"type\": \"part-of\""));
        let back = SemanticGraph::from_canonical_json(&text).unwrap();
        assert_eq!(back.to_canonical_json(), text);
        let tampered = text.replacen("1.0", "0.5", 1);
        assert!(SemanticGraph::from_canonical_json(&tampered).is_err());
    }

    #[test]
    fn class_balance_splits_edges() {
        let (m, f) = class_balance(&star());
        assert!((m - 1.0 / 3.0).abs() < 1e-15);
        assert!((f - 2.0 / 3.0).abs() < 1e-15);
    }
}
