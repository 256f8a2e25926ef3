//! Four-dimensional persona schema, persona sampling and hidden-prompt rendering.
//!
//! The default schema carries exactly the representative values of the
//! reference table (Social Role, Personality, Background, Interests). Callers
//! may load their own schema from a `.persona.json` document as long as it keeps
//! the four dimensions; [`PersonaSchema::validate`] enforces that shape.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hidden-persona system prompt template. Bump the version suffix whenever the
/// wording changes so recorded fixtures stay attributable.
pub const HIDDEN_PROMPT_TEMPLATE: &str = include_str!("../templates/hidden_persona.v1.txt");
pub const HIDDEN_PROMPT_TEMPLATE_VERSION: &str = "hidden_persona.v1";

#[derive(Debug, Error, PartialEq)]
pub enum SchemaError {
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("schema io: {0}")]
    Io(String),
}

/// The four persona dimensions, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dimension {
    SocialRole,
    Personality,
    Background,
    Interests,
}

impl Dimension {
    pub const ALL: [Dimension; 4] = [
        Dimension::SocialRole,
        Dimension::Personality,
        Dimension::Background,
        Dimension::Interests,
    ];

    /// Identifier used in JSON documents and prompts.
    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::SocialRole => "SocialRole",
            Dimension::Personality => "Personality",
            Dimension::Background => "Background",
            Dimension::Interests => "Interests",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Dimension::SocialRole => "Social Role",
            Dimension::Personality => "Personality",
            Dimension::Background => "Background",
            Dimension::Interests => "Interests",
        }
    }

    /// Lenient lookup: accepts `SocialRole`, `Social Role`, `social_role`, ...
    pub fn parse_loose(s: &str) -> Option<Dimension> {
        let key = squash(s);
        Dimension::ALL.into_iter().find(|d| squash(d.as_str()) == key)
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Lowercase and drop everything that is not alphanumeric.
pub(crate) fn squash(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subcategory {
    pub name: String,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionSpec {
    pub name: Dimension,
    pub subcategories: Vec<Subcategory>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaSchema {
    pub dimensions: Vec<DimensionSpec>,
}

/// Address of a single persona attribute.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SlotKey {
    pub dimension: Dimension,
    pub subcategory: String,
}

impl fmt::Display for SlotKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.dimension, self.subcategory)
    }
}

fn sub(name: &str, values: &[&str]) -> Subcategory {
    Subcategory {
        name: name.to_string(),
        values: values.iter().map(|v| v.to_string()).collect(),
    }
}

/// Schema with the representative values of the reference persona table.
pub fn default_schema() -> PersonaSchema {
    PersonaSchema {
        dimensions: vec![
            DimensionSpec {
                name: Dimension::SocialRole,
                subcategories: vec![
                    sub("Professional", &["Doctor", "Lawyer", "Professor", "Accountant"]),
                    sub(
                        "Technical Management",
                        &["Software Engineer", "Data Scientist", "Product Manager"],
                    ),
                    sub("Public Service", &["Civil Servant", "Police Officer", "Teacher"]),
                ],
            },
            DimensionSpec {
                name: Dimension::Personality,
                subcategories: vec![sub(
                    "Big-Five Traits",
                    &[
                        "Openness",
                        "Conscientiousness",
                        "Extroversion",
                        "Agreeableness",
                        "Neuroticism",
                    ],
                )],
            },
            DimensionSpec {
                name: Dimension::Background,
                subcategories: vec![
                    sub("Education", &["High School", "Bachelor's", "Master's", "Ph.D."]),
                    sub("Location", &["Urban", "Rural"]),
                    sub("Family Status", &["Single", "Married", "Living Alone"]),
                ],
            },
            DimensionSpec {
                name: Dimension::Interests,
                subcategories: vec![
                    sub("Hobbies", &["Reading", "Traveling", "Gaming"]),
                    sub("Core Values", &["Creativity", "Family", "Integrity"]),
                    sub("Comm. Style", &["Direct", "Emotional"]),
                ],
            },
        ],
    }
}

impl PersonaSchema {
    pub fn validate(&self) -> Result<(), SchemaError> {
        if self.dimensions.is_empty() {
            return Err(SchemaError::InvalidSchema("schema has no dimensions".into()));
        }
        let names: Vec<Dimension> = self.dimensions.iter().map(|d| d.name).collect();
        if names != Dimension::ALL {
            return Err(SchemaError::InvalidSchema(format!(
                "expected dimensions {:?} in order, found {:?}",
                Dimension::ALL,
                names
            )));
        }
        for dim in &self.dimensions {
            if dim.subcategories.is_empty() {
                return Err(SchemaError::InvalidSchema(format!(
                    "dimension {} has no subcategories",
                    dim.name
                )));
            }
            let mut seen_subs = HashSet::new();
            for sc in &dim.subcategories {
                if sc.name.trim().is_empty() {
                    return Err(SchemaError::InvalidSchema(format!(
                        "dimension {} has an unnamed subcategory",
                        dim.name
                    )));
                }
                if !seen_subs.insert(sc.name.as_str()) {
                    return Err(SchemaError::InvalidSchema(format!(
                        "duplicate subcategory {}/{}",
                        dim.name, sc.name
                    )));
                }
                if sc.values.is_empty() {
                    return Err(SchemaError::InvalidSchema(format!(
                        "{}/{} has no allowed values",
                        dim.name, sc.name
                    )));
                }
                let mut seen = HashSet::new();
                for v in &sc.values {
                    if v.trim().is_empty() {
                        return Err(SchemaError::InvalidSchema(format!(
                            "{}/{} contains an empty value",
                            dim.name, sc.name
                        )));
                    }
                    if !seen.insert(v.as_str()) {
                        return Err(SchemaError::InvalidSchema(format!(
                            "{}/{} lists {:?} twice",
                            dim.name, sc.name, v
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// All slots in schema order.
    pub fn slots(&self) -> impl Iterator<Item = (SlotKey, &[String])> + '_ {
        self.dimensions.iter().flat_map(|d| {
            d.subcategories.iter().map(move |sc| {
                (
                    SlotKey {
                        dimension: d.name,
                        subcategory: sc.name.clone(),
                    },
                    sc.values.as_slice(),
                )
            })
        })
    }

    pub fn slot_count(&self) -> usize {
        self.dimensions.iter().map(|d| d.subcategories.len()).sum()
    }

    pub fn allowed_values(&self, key: &SlotKey) -> Option<&[String]> {
        self.dimensions
            .iter()
            .find(|d| d.name == key.dimension)?
            .subcategories
            .iter()
            .find(|sc| sc.name == key.subcategory)
            .map(|sc| sc.values.as_slice())
    }

    pub fn load(path: &Path) -> Result<PersonaSchema, SchemaError> {
        let text = fs::read_to_string(path)
            .map_err(|e| SchemaError::Io(format!("{}: {e}", path.display())))?;
        let schema: PersonaSchema = serde_json::from_str(&text)
            .map_err(|e| SchemaError::InvalidSchema(format!("{}: {e}", path.display())))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("schema serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub dimension: Dimension,
    pub subcategory: String,
    pub value: String,
}

impl Assignment {
    pub fn key(&self) -> SlotKey {
        SlotKey {
            dimension: self.dimension,
            subcategory: self.subcategory.clone(),
        }
    }
}

/// One concrete value per schema slot, kept in schema order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaProfile {
    pub assignments: Vec<Assignment>,
}

impl PersonaProfile {
    pub fn get(&self, key: &SlotKey) -> Option<&str> {
        self.assignments
            .iter()
            .find(|a| a.dimension == key.dimension && a.subcategory == key.subcategory)
            .map(|a| a.value.as_str())
    }

    pub fn values_for(&self, dimension: Dimension) -> impl Iterator<Item = &Assignment> {
        self.assignments
            .iter()
            .filter(move |a| a.dimension == dimension)
    }

    /// Checks one-value-per-slot and vocabulary membership against `schema`.
    pub fn validate_against(&self, schema: &PersonaSchema) -> Result<(), SchemaError> {
        if self.assignments.len() != schema.slot_count() {
            return Err(SchemaError::InvalidProfile(format!(
                "profile has {} assignments, schema has {} slots",
                self.assignments.len(),
                schema.slot_count()
            )));
        }
        for ((key, allowed), a) in schema.slots().zip(&self.assignments) {
            if a.key() != key {
                return Err(SchemaError::InvalidProfile(format!(
                    "expected slot {key}, found {}",
                    a.key()
                )));
            }
            if !allowed.contains(&a.value) {
                return Err(SchemaError::InvalidProfile(format!(
                    "{key}: {:?} is not an allowed value",
                    a.value
                )));
            }
        }
        Ok(())
    }

    pub fn to_canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("profile serializes");
        s.push('\n');
        s
    }
}

/// Uniformly samples one value per slot. Identical `(schema, seed)` pairs give
/// identical profiles.
pub fn sample_persona(schema: &PersonaSchema, seed: u64) -> Result<PersonaProfile, SchemaError> {
    schema.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let assignments = schema
        .slots()
        .map(|(key, values)| Assignment {
            dimension: key.dimension,
            subcategory: key.subcategory,
            value: values[rng.gen_range(0..values.len())].clone(),
        })
        .collect();
    Ok(PersonaProfile { assignments })
}

/// Renders the hidden system prompt that conditions the target model.
pub fn render_hidden_prompt(profile: &PersonaProfile) -> String {
    let attributes = profile
        .assignments
        .iter()
        .map(|a| {
            format!(
                "- {} / {}: {}",
                a.dimension.display_name(),
                a.subcategory,
                a.value
            )
        })
        .collect::<Vec<_>>()
        .join("\n");
    HIDDEN_PROMPT_TEMPLATE.replace("{{attributes}}", &attributes)
}

/// Recovers `(dimension display name, subcategory, value)` triples from a
/// prompt produced by [`render_hidden_prompt`].
pub fn parse_hidden_prompt(prompt: &str) -> Vec<(String, String, String)> {
    prompt
        .lines()
        .filter_map(|line| {
            let rest = line.strip_prefix("- ")?;
            let (path, value) = rest.split_once(": ")?;
            let (dim, sub) = path.split_once(" / ")?;
            Some((dim.to_string(), sub.to_string(), value.trim().to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn values(schema: &PersonaSchema, dim: Dimension, sub: &str) -> Vec<String> {
        schema
            .allowed_values(&SlotKey {
                dimension: dim,
                subcategory: sub.into(),
            })
            .unwrap()
            .to_vec()
    }

    #[test]
    fn default_schema_matches_reference_table() {
        let s = default_schema();
        s.validate().unwrap();
        assert_eq!(
            values(&s, Dimension::SocialRole, "Professional"),
            ["Doctor", "Lawyer", "Professor", "Accountant"]
        );
        assert_eq!(values(&s, Dimension::Background, "Location"), ["Urban", "Rural"]);
        assert_eq!(s.dimensions.len(), 4);
        // 3 + 1 + 3 + 3 rows in the reference table.
        assert_eq!(s.slot_count(), 10);
    }

    #[test]
    fn singleton_schema_forces_profile() {
        let mut s = default_schema();
        for d in &mut s.dimensions {
            for sc in &mut d.subcategories {
                sc.values.truncate(1);
            }
        }
        let a = sample_persona(&s, 1).unwrap();
        for seed in [0, 2, 99, u64::MAX] {
            assert_eq!(sample_persona(&s, seed).unwrap(), a);
        }
        assert_eq!(a.get(&SlotKey { dimension: Dimension::SocialRole, subcategory: "Professional".into() }), Some("Doctor"));
    }

    #[test]
    fn sampling_is_deterministic_and_valid() {
        let s = default_schema();
        for seed in 0..50 {
            let p = sample_persona(&s, seed).unwrap();
            assert_eq!(p, sample_persona(&s, seed).unwrap());
            p.validate_against(&s).unwrap();
        }
    }

    #[test]
    fn urban_frequency_is_near_half() {
        let s = default_schema();
        let key = SlotKey {
            dimension: Dimension::Background,
            subcategory: "Location".into(),
        };
        let urban = (0..10_000u64)
            .filter(|&seed| sample_persona(&s, seed).unwrap().get(&key) == Some("Urban"))
            .count();
        let freq = urban as f64 / 10_000.0;
        assert!((0.47..=0.53).contains(&freq), "freq = {freq}");
    }

    #[test]
    fn empty_schema_is_rejected() {
        let s = PersonaSchema { dimensions: vec![] };
        assert!(matches!(sample_persona(&s, 0), Err(SchemaError::InvalidSchema(_))));
    }

    #[test]
    fn duplicate_values_are_rejected() {
        let mut s = default_schema();
        s.dimensions[1].subcategories[0].values.push("Openness".into());
        assert!(s.validate().is_err());
        let mut s = default_schema();
        s.dimensions[2].subcategories[1].values.clear();
        assert!(s.validate().is_err());
    }

    #[test]
    fn hidden_prompt_contains_every_value() {
        let p = sample_persona(&default_schema(), 3).unwrap();
        let prompt = render_hidden_prompt(&p);
        for a in &p.assignments {
            assert!(prompt.contains(&a.value));
        }
        assert_eq!(prompt, render_hidden_prompt(&p));
        let parsed = parse_hidden_prompt(&prompt);
        assert_eq!(parsed.len(), p.assignments.len());
    }

    #[test]
    fn hidden_prompt_distinguishes_profiles() {
        let s = default_schema();
        let a = sample_persona(&s, 1).unwrap();
        let mut b = a.clone();
        b.assignments[0].value = if a.assignments[0].value == "Doctor" { "Lawyer".into() } else { "Doctor".into() };
        assert_ne!(render_hidden_prompt(&a), render_hidden_prompt(&b));
        assert!(render_hidden_prompt(&b).contains("Doctor") || render_hidden_prompt(&a).contains("Doctor"));
    }

    #[test]
    fn profile_round_trips_through_json() {
        let p = sample_persona(&default_schema(), 11).unwrap();
        let back: PersonaProfile = serde_json::from_str(&p.to_canonical_json()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn profile_outside_vocabulary_fails_validation() {
        let s = default_schema();
        let mut p = sample_persona(&s, 5).unwrap();
        p.assignments[3].value = "Pirate".into();
        assert!(p.validate_against(&s).is_err());
    }
}
