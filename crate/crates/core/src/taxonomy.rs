//! Closed seven-type bridging-relation taxonomy and its two-class partition.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown relation type {0:?}")]
pub struct UnknownRelationType(pub String);

/// Edge label alphabet of the semantic graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelationType {
    PartOf,
    MemberOf,
    Instrument,
    Theme,
    CauseOf,
    In,
    Temporal,
}

/// Association (mereological) versus characterization (frame-related) links.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RelationClass {
    Mereological,
    FrameRelated,
}

impl RelationType {
    pub const ALL: [RelationType; 7] = [
        RelationType::PartOf,
        RelationType::MemberOf,
        RelationType::Instrument,
        RelationType::Theme,
        RelationType::CauseOf,
        RelationType::In,
        RelationType::Temporal,
    ];

    /// Canonical wire spelling.
    pub fn as_str(self) -> &'static str {
        match self {
            RelationType::PartOf => "part-of",
            RelationType::MemberOf => "member-of",
            RelationType::Instrument => "instrument",
            RelationType::Theme => "theme",
            RelationType::CauseOf => "cause-of",
            RelationType::In => "in",
            RelationType::Temporal => "temporal",
        }
    }

    pub fn class(self) -> RelationClass {
        relation_class(self)
    }
}

impl fmt::Display for RelationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RelationType {
    type Err = UnknownRelationType;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_relation_type(s)
    }
}

impl fmt::Display for RelationClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RelationClass::Mereological => "Mereological",
            RelationClass::FrameRelated => "FrameRelated",
        })
    }
}

/// The seven labels as they appear in prompts: `part-of, member-of, ...`.
pub fn type_list() -> String {
    RelationType::ALL
        .iter()
        .map(|t| t.as_str())
        .collect::<Vec<_>>()
        .join(", ")
}

/// Case-insensitive match on the seven canonical labels. Space and underscore
/// separators (`"part of"`, `"cause_of"`) are normalized to hyphens first.
pub fn parse_relation_type(label: &str) -> Result<RelationType, UnknownRelationType> {
    let trimmed = label.trim().to_lowercase();
    let normalized = trimmed
        .split(|c: char| c == '-' || c == '_' || c.is_whitespace())
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join("-");
    let found = RelationType::ALL
        .into_iter()
        .find(|t| t.as_str() == normalized)
        .ok_or_else(|| UnknownRelationType(label.to_string()))?;
    if normalized != trimmed {
        log::debug!("normalized relation label {label:?} to {:?}", found.as_str());
    }
    Ok(found)
}

pub fn relation_class(t: RelationType) -> RelationClass {
    match t {
        RelationType::PartOf | RelationType::MemberOf => RelationClass::Mereological,
        RelationType::Instrument
        | RelationType::Theme
        | RelationType::CauseOf
        | RelationType::In
        | RelationType::Temporal => RelationClass::FrameRelated,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_canonical_and_cased_labels() {
        assert_eq!(parse_relation_type("part-of").unwrap(), RelationType::PartOf);
        assert_eq!(parse_relation_type("Instrument").unwrap(), RelationType::Instrument);
        assert_eq!(parse_relation_type("  TEMPORAL ").unwrap(), RelationType::Temporal);
    }

    #[test]
    fn normalizes_separator_variants() {
        assert_eq!(parse_relation_type("part of").unwrap(), RelationType::PartOf);
        assert_eq!(parse_relation_type("part_of").unwrap(), RelationType::PartOf);
        assert_eq!(parse_relation_type("Cause Of").unwrap(), RelationType::CauseOf);
    }

    #[test]
    fn rejects_labels_outside_the_closed_set() {
        let err = parse_relation_type("synonym").unwrap_err();
        assert_eq!(err.0, "synonym");
        assert!(parse_relation_type("").is_err());
        assert!(parse_relation_type("inside").is_err());
        assert!(parse_relation_type("part-of-ish").is_err());
    }

    #[test]
    fn canonical_names_round_trip() {
        for t in RelationType::ALL {
            assert_eq!(parse_relation_type(t.as_str()).unwrap(), t);
            let json = serde_json::to_string(&t).unwrap();
            assert_eq!(json, format!("\"{}\"", t.as_str()));
        }
    }

    #[test]
    fn partition_sizes() {
        assert_eq!(relation_class(RelationType::MemberOf), RelationClass::Mereological);
        assert_eq!(relation_class(RelationType::Temporal), RelationClass::FrameRelated);
        let mereo = RelationType::ALL
            .iter()
            .filter(|t| t.class() == RelationClass::Mereological)
            .count();
        assert_eq!(mereo, 2);
        assert_eq!(RelationType::ALL.len() - mereo, 5);
    }

    #[test]
    fn type_list_matches_prompt_spelling() {
        assert_eq!(
            type_list(),
            "part-of, member-of, instrument, theme, cause-of, in, temporal"
        );
    }
}
