//! Bridging-relation extraction: prompt construction, reply parsing and
//! record-level validation.
//!
//! A reply is rejected as a whole only when it is not a JSON document with a
//! `bridging_relations` array. Individual records that break a constraint land
//! in [`ExtractionReport::rejected`] with a reason; everything else is
//! canonicalized and accepted.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::fsutil;
use crate::interview::DialogueTranscript;
use crate::llm_json;
use crate::providers::{ChatMessage, ChatParams, ChatProvider, ProviderError};
use crate::taxonomy::{parse_relation_type, RelationClass, RelationType};

pub const EXTRACTION_TEMPLATE: &str = include_str!("../templates/extraction.v1.txt");

pub const MAX_SPAN_WORDS: usize = 3;

const DETERMINERS: [&str; 3] = ["the", "a", "an"];

/// Spans that only point back at something already mentioned.
const PRONOUNS: [&str; 14] = [
    "it", "its", "he", "him", "his", "she", "her", "they", "them", "their", "this", "that",
    "these", "those",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgingRelation {
    pub anchor: String,
    pub anaphor: String,
    pub relation_type: RelationType,
    pub explanation: String,
    pub sentence_context: String,
}

impl BridgingRelation {
    pub fn class(&self) -> RelationClass {
        self.relation_type.class()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "kebab-case")]
pub enum RejectionReason {
    NotAnObject,
    MissingField(String),
    WrongType(String),
    UnknownRelationType(String),
    SpanTooLong { field: String, words: usize },
    EmptyConcept(String),
    Coreference(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub record: Value,
    pub reason: RejectionReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub accepted: Vec<BridgingRelation>,
    pub rejected: Vec<Rejection>,
    pub raw_response: String,
}

impl ExtractionReport {
    pub fn save(&self, report_path: &Path, relations_path: &Path) -> std::io::Result<()> {
        fsutil::write_json(relations_path, &self.accepted)?;
        fsutil::write_json(report_path, self)
    }

    pub fn load(path: &Path) -> Result<Self, ExtractionError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExtractionError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ExtractionError::Malformed(e.to_string()))
    }
}

/// Reads a `relations.json` file.
pub fn load_relations(path: &Path) -> Result<Vec<BridgingRelation>, ExtractionError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ExtractionError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| ExtractionError::Malformed(e.to_string()))
}

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("malformed extraction: {0}")]
    Malformed(String),
    #[error("empty concept: {0:?}")]
    EmptyConcept(String),
    #[error("transcript has no turns")]
    EmptyTranscript,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("io: {0}")]
    Io(String),
}

/// A worked example shown to the extractor before the real dialogue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExemplar {
    pub dialogue: String,
    pub relations: Vec<BridgingRelation>,
}

fn exemplar(dialogue: &str, anchor: &str, anaphor: &str, t: RelationType, why: &str, ctx: &str) -> FewShotExemplar {
    FewShotExemplar {
        dialogue: dialogue.into(),
        relations: vec![BridgingRelation {
            anchor: anchor.into(),
            anaphor: anaphor.into(),
            relation_type: t,
            explanation: why.into(),
            sentence_context: ctx.into(),
        }],
    }
}

/// Mereological and frame-related exemplars built from the taxonomy examples.
pub fn default_few_shots() -> Vec<FewShotExemplar> {
    vec![
        exemplar(
            "A: My car would not start this morning.\nB: Was the engine flooded again?",
            "car",
            "engine",
            RelationType::PartOf,
            "An engine is a component of the car that was just mentioned.",
            "My car would not start ... the engine flooded",
        ),
        exemplar(
            "A: Our class went on a field trip.\nB: One student got lost at the museum.",
            "class",
            "student",
            RelationType::MemberOf,
            "The student is understood as a member of the class.",
            "Our class went on a field trip ... One student got lost",
        ),
        exemplar(
            "A: John was murdered last night.\nB: The knife lay nearby.",
            "murder",
            "knife",
            RelationType::Instrument,
            "The knife fills the instrument role of the murder event.",
            "John was murdered ... The knife lay nearby",
        ),
        exemplar(
            "A: The morning was hectic.\nB: Breakfast was cold by the time I sat down.",
            "morning",
            "breakfast",
            RelationType::Temporal,
            "Breakfast is situated within the morning time frame.",
            "The morning was hectic ... Breakfast was cold",
        ),
    ]
}

fn render_exemplars(few_shots: &[FewShotExemplar]) -> String {
    let mut out = String::new();
    for (i, ex) in few_shots.iter().enumerate() {
        let payload = serde_json::json!({ "bridging_relations": ex.relations });
        let _ = write!(
            out,
            "Example {}\nDialogue:\n{}\nOutput:\n{}\n\n",
            i + 1,
            ex.dialogue.trim_end(),
            serde_json::to_string(&payload).expect("exemplar serializes")
        );
    }
    out.trim_end().to_string()
}

pub fn build_extraction_prompt(transcript: &DialogueTranscript, few_shots: &[FewShotExemplar]) -> String {
    format!(
        "{}\nEXAMPLES\n{}\n\nCONVERSATION\n{}",
        EXTRACTION_TEMPLATE,
        render_exemplars(few_shots),
        transcript.render()
    )
}

/// Lowercase, trim, collapse whitespace, drop leading English articles.
pub fn canonicalize_concept(phrase: &str) -> Result<String, ExtractionError> {
    let lowered = phrase.to_lowercase();
    let words: Vec<&str> = lowered.split_whitespace().collect();
    let skip = words.iter().take_while(|w| DETERMINERS.contains(w)).count();
    if skip == words.len() {
        return Err(ExtractionError::EmptyConcept(phrase.to_string()));
    }
    Ok(words[skip..].join(" "))
}

fn string_field(obj: &serde_json::Map<String, Value>, name: &str) -> Result<String, RejectionReason> {
    match obj.get(name) {
        None | Some(Value::Null) => Err(RejectionReason::MissingField(name.into())),
        Some(Value::String(s)) if s.trim().is_empty() => Err(RejectionReason::MissingField(name.into())),
        Some(Value::String(s)) => Ok(s.trim().to_string()),
        Some(_) => Err(RejectionReason::WrongType(name.into())),
    }
}

fn concept_field(obj: &serde_json::Map<String, Value>, name: &str) -> Result<String, RejectionReason> {
    let raw = string_field(obj, name)?;
    let canon = canonicalize_concept(&raw).map_err(|_| RejectionReason::EmptyConcept(name.into()))?;
    let words = canon.split(' ').count();
    if words > MAX_SPAN_WORDS {
        return Err(RejectionReason::SpanTooLong {
            field: name.into(),
            words,
        });
    }
    Ok(canon)
}

/// Validates one raw record against the relation contract.
pub fn validate_record(record: &Value) -> Result<BridgingRelation, RejectionReason> {
    let obj = record.as_object().ok_or(RejectionReason::NotAnObject)?;
    let anchor = concept_field(obj, "anchor")?;
    let anaphor = concept_field(obj, "anaphor")?;
    let label = string_field(obj, "relation_type")?;
    let relation_type =
        parse_relation_type(&label).map_err(|e| RejectionReason::UnknownRelationType(e.0))?;
    let explanation = string_field(obj, "explanation")?;
    let sentence_context = match obj.get("sentence_context") {
        Some(Value::Array(spans)) => {
            let parts: Option<Vec<&str>> = spans.iter().map(Value::as_str).collect();
            let parts = parts.ok_or_else(|| RejectionReason::WrongType("sentence_context".into()))?;
            let joined = parts
                .iter()
                .map(|s| s.trim())
                .filter(|s| !s.is_empty())
                .collect::<Vec<_>>()
                .join(" ... ");
            if joined.is_empty() {
                return Err(RejectionReason::MissingField("sentence_context".into()));
            }
            joined
        }
        _ => string_field(obj, "sentence_context")?,
    };
    if anchor == anaphor {
        return Err(RejectionReason::Coreference(anchor));
    }
    for span in [&anchor, &anaphor] {
        if PRONOUNS.contains(&span.as_str()) {
            return Err(RejectionReason::Coreference(span.clone()));
        }
    }
    Ok(BridgingRelation {
        anchor,
        anaphor,
        relation_type,
        explanation,
        sentence_context,
    })
}

/// Parses a model reply into accepted and rejected records.
pub fn parse_relations(raw: &str) -> Result<ExtractionReport, ExtractionError> {
    let doc = llm_json::parse_lenient(raw).map_err(ExtractionError::Malformed)?;
    let records = doc
        .get("bridging_relations")
        .ok_or_else(|| ExtractionError::Malformed("missing \"bridging_relations\" key".into()))?
        .as_array()
        .ok_or_else(|| ExtractionError::Malformed("\"bridging_relations\" is not an array".into()))?;
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    for record in records {
        match validate_record(record) {
            Ok(rel) => accepted.push(rel),
            Err(reason) => rejected.push(Rejection {
                record: record.clone(),
                reason,
            }),
        }
    }
    Ok(ExtractionReport {
        accepted,
        rejected,
        raw_response: raw.to_string(),
    })
}

/// One extraction call over the whole transcript.
pub fn extract_bridging_relations(
    transcript: &DialogueTranscript,
    few_shots: &[FewShotExemplar],
    pd: &dyn ChatProvider,
    params: &ChatParams,
) -> Result<ExtractionReport, ExtractionError> {
    if transcript.turns.is_empty() {
        return Err(ExtractionError::EmptyTranscript);
    }
    let messages = [ChatMessage::user(build_extraction_prompt(transcript, few_shots))];
    let raw = pd.complete(&messages, params)?;
    parse_relations(&raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interview::DialogueTurn;
    use crate::providers::ScriptedProvider;
    use serde_json::json;

    fn transcript() -> DialogueTranscript {
        let mut t = DialogueTranscript::new("daily routine", "hidden");
        t.turns.push(DialogueTurn {
            index: 1,
            question: "How do you unwind?".into(),
            response: "I cook most evenings; the recipe matters less than the mood.".into(),
        });
        t
    }

    fn record(anchor: &str, anaphor: &str, t: &str) -> Value {
        json!({"anchor": anchor, "anaphor": anaphor, "relation_type": t,
               "explanation": "because", "sentence_context": "ctx"})
    }

    #[test]
    fn prompt_embeds_template_examples_and_dialogue() {
        let p = build_extraction_prompt(&transcript(), &default_few_shots());
        assert!(p.starts_with(EXTRACTION_TEMPLATE));
        assert!(p.contains("part-of, member-of, instrument, theme, cause-of, in, temporal"));
        assert!(p.contains("bridging_relations"));
        for block in ["TASK", "RETURN", "CONSTRAINTS", "FORMAT"] {
            assert!(p.contains(block));
        }
        assert!(p.contains("the recipe matters less"));
        assert!(p.contains("\"anchor\":\"murder\""));
    }

    #[test]
    fn default_few_shots_cover_both_classes() {
        let shots = default_few_shots();
        let classes: Vec<RelationClass> = shots.iter().flat_map(|s| s.relations.iter().map(|r| r.class())).collect();
        assert!(classes.contains(&RelationClass::Mereological));
        assert!(classes.contains(&RelationClass::FrameRelated));
    }

    #[test]
    fn canonicalization_rules() {
        assert_eq!(canonicalize_concept("The Knife ").unwrap(), "knife");
        assert_eq!(canonicalize_concept("oven").unwrap(), "oven");
        assert_eq!(canonicalize_concept("a Big  Oven").unwrap(), "big oven");
        assert_eq!(canonicalize_concept("an the apple").unwrap(), "apple");
        assert!(matches!(canonicalize_concept(" the "), Err(ExtractionError::EmptyConcept(_))));
        assert!(canonicalize_concept("").is_err());
    }

    #[test]
    fn knife_murder_record_is_accepted() {
        let raw = r#"{"bridging_relations":[{"anchor":"knife","anaphor":"murder","relation_type":"instrument","explanation":"...","sentence_context":"..."}]}"#;
        let r = parse_relations(raw).unwrap();
        assert_eq!(r.accepted.len(), 1);
        assert!(r.rejected.is_empty());
        assert_eq!(r.accepted[0].relation_type, RelationType::Instrument);
    }

    #[test]
    fn record_level_rejections() {
        let raw = json!({"bridging_relations": [
            record("cook", "recipe", "synonym"),
            record("the big oven in my kitchen", "bread", "instrument"),
            record("Car", "the car", "part-of"),
            record("car", "it", "part-of"),
            {"anchor": "x"},
            7,
            {"anchor": "fork", "anaphor": "b", "relation_type": 3, "explanation": "e", "sentence_context": "c"},
        ]})
        .to_string();
        let r = parse_relations(&raw).unwrap();
        assert!(r.accepted.is_empty());
        let reasons: Vec<_> = r.rejected.iter().map(|x| x.reason.clone()).collect();
        assert_eq!(
            reasons,
            vec![
                RejectionReason::UnknownRelationType("synonym".into()),
                RejectionReason::SpanTooLong { field: "anchor".into(), words: 5 },
                RejectionReason::Coreference("car".into()),
                RejectionReason::Coreference("it".into()),
                RejectionReason::MissingField("anaphor".into()),
                RejectionReason::NotAnObject,
                RejectionReason::WrongType("relation_type".into()),
            ]
        );
    }

    #[test]
    fn fenced_reply_and_span_arrays() {
        let raw = "```json\n{\"bridging_relations\":[{\"anchor\":\"The Morning\",\"anaphor\":\"breakfast\",\"relation_type\":\"Temporal\",\"explanation\":\"e\",\"sentence_context\":[\"a\",\"b\"]}]}\n```";
        let r = parse_relations(raw).unwrap();
        assert_eq!(r.accepted[0].anchor, "morning");
        assert_eq!(r.accepted[0].sentence_context, "a ... b");
        assert_eq!(r.accepted[0].relation_type, RelationType::Temporal);
    }

    #[test]
    fn document_level_failures() {
        assert!(matches!(parse_relations("nope"), Err(ExtractionError::Malformed(_))));
        assert!(matches!(parse_relations("{\"relations\": []}"), Err(ExtractionError::Malformed(_))));
        assert!(matches!(parse_relations("{\"bridging_relations\": {}}"), Err(ExtractionError::Malformed(_))));
        assert!(parse_relations("{\"bridging_relations\": []}").unwrap().accepted.is_empty());
    }

    #[test]
    fn five_records_two_invalid() {
        let payload = json!({"bridging_relations": [
            record("kitchen", "oven", "part-of"),
            record("team", "player", "member-of"),
            record("cook", "cook", "theme"),
            record("rain", "flood", "cause-of"),
            record("cook", "recipe", "similar-to"),
        ]})
        .to_string();
        let t = transcript();
        let prompt = build_extraction_prompt(&t, &default_few_shots());
        let msgs = [ChatMessage::user(prompt)];
        let pd = ScriptedProvider::from_pairs([(&msgs[..], payload.as_str())]);
        let r = extract_bridging_relations(&t, &default_few_shots(), &pd, &ChatParams::default()).unwrap();
        assert_eq!(r.accepted.len(), 3);
        assert_eq!(r.rejected.len(), 2);
        let again = extract_bridging_relations(&t, &default_few_shots(), &pd, &ChatParams::default()).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn report_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let raw = json!({"bridging_relations": [record("kitchen", "oven", "in"), record("a", "a", "in")]}).to_string();
        let r = parse_relations(&raw).unwrap();
        let rp = dir.path().join("extraction_report.json");
        let rel = dir.path().join("relations.json");
        r.save(&rp, &rel).unwrap();
        assert_eq!(ExtractionReport::load(&rp).unwrap(), r);
        assert_eq!(load_relations(&rel).unwrap(), r.accepted);
        let shape: Value = serde_json::from_str(&std::fs::read_to_string(&rel).unwrap()).unwrap();
        let keys: Vec<&String> = shape[0].as_object().unwrap().keys().collect();
        assert_eq!(keys.len(), 5);
    }
}
