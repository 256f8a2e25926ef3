//! Persona prediction under three reasoning strategies.
//!
//! * Vanilla: the reasoning model reads the raw transcript.
//! * Frequency-aware: the raw transcript plus a top-token frequency table.
//! * PD-Agent: only a [`GraphSummary`] of the bridging graph, never the
//!   transcript.
//!
//! All three share one reply parser that snaps answers onto the schema
//! vocabulary and flags slots it could not resolve.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::graph::{class_balance, relation_distribution, top_hubs, SemanticGraph, TypeShare};
use crate::interview::DialogueTranscript;
use crate::llm_json;
use crate::providers::{tokenize, ChatMessage, ChatParams, ChatProvider, ProviderError};
use crate::schema::{squash, Assignment, Dimension, PersonaProfile, PersonaSchema, SchemaError, SlotKey};
use crate::taxonomy::RelationType;

pub const INFERENCE_TEMPLATE: &str = include_str!("../templates/inference.v1.txt");

/// Ranked concepts included in a graph summary.
pub const TOP_HUBS: usize = 25;
/// Rows of the token frequency table given to the frequency-aware strategy.
pub const TOP_TOKENS: usize = 30;

pub const EMPTY_GRAPH_WARNING: &str = "degraded input: bridging graph has no nodes";

/// Fixed English stop-word list applied before counting tokens.
pub const STOP_WORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "also", "am", "an", "and", "any",
    "are", "as", "at", "be", "because", "been", "before", "being", "below", "between", "both",
    "but", "by", "can", "could", "d", "did", "do", "does", "doing", "don", "down", "during",
    "each", "even", "ever", "every", "few", "for", "from", "further", "get", "got", "had", "has",
    "have", "having", "he", "her", "here", "hers", "herself", "him", "himself", "his", "how",
    "i", "if", "in", "into", "is", "it", "its", "itself", "just", "ll", "m", "me", "more",
    "most", "much", "my", "myself", "no", "nor", "not", "now", "of", "off", "on", "once",
    "one", "only", "or", "other", "our", "ours", "ourselves", "out", "over", "own", "re",
    "really", "s", "same", "she", "should", "so", "some", "such", "t", "than", "that", "the",
    "their", "theirs", "them", "themselves", "then", "there", "these", "they", "thing",
    "things", "this", "those", "through", "to", "too", "under", "until", "up", "us", "ve",
    "very", "was", "we", "well", "were", "what", "when", "where", "which", "while", "who",
    "whom", "why", "will", "with", "would", "you", "your", "yours", "yourself", "yourselves",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Vanilla,
    FrequencyAware,
    PdAgent,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Vanilla, Strategy::FrequencyAware, Strategy::PdAgent];

    /// Used in file names (`prediction.<strategy>.json`) and reports.
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Vanilla => "vanilla",
            Strategy::FrequencyAware => "frequency-aware",
            Strategy::PdAgent => "pd-agent",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Strategy::Vanilla => "Vanilla",
            Strategy::FrequencyAware => "+ Freq-Aware",
            Strategy::PdAgent => "+ PD-Agent",
        }
    }

    fn instructions(self) -> &'static str {
        match self {
            Strategy::Vanilla => {
                "You are given the transcript of an interview. Predict the speaker's hidden persona directly from what they said."
            }
            Strategy::FrequencyAware => {
                "You are given the transcript of an interview followed by the most frequent content words in the speaker's answers. Use the frequency distribution to identify the speaker's traits."
            }
            Strategy::PdAgent => {
                "You are given a summary of a bridging-inference graph built from an interview: its central concepts ranked by normalized degree centrality and the distribution of relation types. Treat high-centrality concepts as the speaker's conceptual hubs and use the relation profile (mereological versus frame-related links) to infer the speaker's hidden persona."
            }
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = squash(s);
        Strategy::ALL
            .into_iter()
            .find(|st| squash(st.as_str()) == key || (key == "frequency" && *st == Strategy::FrequencyAware) || (key == "pd" && *st == Strategy::PdAgent))
            .ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("could not parse persona reply: {0}")]
    Parse(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

/// A strategy's persona prediction. Serializes as the profile document plus
/// bookkeeping fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub strategy: Strategy,
    #[serde(flatten)]
    pub profile: PersonaProfile,
    /// Slots the reply did not resolve; they hold the schema's first value.
    #[serde(default)]
    pub unresolved: Vec<SlotKey>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// A prediction together with the exact prompt that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceRun {
    pub prediction: Prediction,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub hubs: Vec<(String, f64)>,
    pub distribution: BTreeMap<RelationType, TypeShare>,
    pub mereological_fraction: f64,
    pub frame_related_fraction: f64,
    pub node_count: usize,
    pub edge_count: usize,
}

impl GraphSummary {
    pub fn from_graph(g: &SemanticGraph, hubs: usize) -> Self {
        let (mereological_fraction, frame_related_fraction) = class_balance(g);
        GraphSummary {
            hubs: top_hubs(g, hubs),
            distribution: relation_distribution(g),
            mereological_fraction,
            frame_related_fraction,
            node_count: g.node_count(),
            edge_count: g.edge_count(),
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Graph size: {} concepts, {} relations", self.node_count, self.edge_count);
        out.push_str("Conceptual hubs (normalized degree centrality, descending):\n");
        if self.hubs.is_empty() {
            out.push_str("- (none)\n");
        }
        for (label, imp) in &self.hubs {
            let _ = writeln!(out, "- {label} (importance {imp:.4})");
        }
        out.push_str("Relation type distribution:\n");
        for (t, share) in &self.distribution {
            let _ = writeln!(out, "- {t}: {} ({:.4})", share.count, share.fraction);
        }
        let _ = writeln!(
            out,
            "Relation classes: Mereological {:.4}, FrameRelated {:.4}",
            self.mereological_fraction, self.frame_related_fraction
        );
        out.trim_end().to_string()
    }
}

/// Content-word counts over the target's responses only.
pub fn token_frequency_table(transcript: &DialogueTranscript, top_n: usize) -> Vec<(String, usize)> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for response in transcript.responses() {
        for tok in tokenize(response) {
            if !STOP_WORDS.contains(&tok.as_str()) {
                *counts.entry(tok).or_default() += 1;
            }
        }
    }
    let mut table: Vec<(String, usize)> = counts.into_iter().collect();
    table.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    table.truncate(top_n);
    table
}

pub fn render_frequency_table(table: &[(String, usize)]) -> String {
    if table.is_empty() {
        return "- (no content words)".into();
    }
    table
        .iter()
        .map(|(tok, n)| format!("- {tok}: {n}"))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_schema_block(schema: &PersonaSchema) -> String {
    schema
        .slots()
        .map(|(key, values)| format!("- {} / {}: {}", key.dimension, key.subcategory, values.join(" | ")))
        .collect::<Vec<_>>()
        .join("\n")
}

fn build_prompt(strategy: Strategy, schema: &PersonaSchema, evidence: &str) -> String {
    INFERENCE_TEMPLATE
        .replace("{{strategy}}", strategy.as_str())
        .replace("{{instructions}}", strategy.instructions())
        .replace("{{schema}}", &render_schema_block(schema))
        .replace("{{evidence}}", evidence.trim_end())
}

pub fn build_vanilla_prompt(transcript: &DialogueTranscript, schema: &PersonaSchema) -> String {
    let evidence = format!("Interview transcript:\n{}", transcript.render());
    build_prompt(Strategy::Vanilla, schema, &evidence)
}

pub fn build_frequency_prompt(transcript: &DialogueTranscript, schema: &PersonaSchema, top_n: usize) -> String {
    let table = token_frequency_table(transcript, top_n);
    let evidence = format!(
        "Interview transcript:\n{}\nTop {} content words in the speaker's answers (count):\n{}",
        transcript.render(),
        top_n,
        render_frequency_table(&table)
    );
    build_prompt(Strategy::FrequencyAware, schema, &evidence)
}

pub fn build_pd_prompt(summary: &GraphSummary, schema: &PersonaSchema) -> String {
    let evidence = format!("Bridging-inference graph summary:\n{}", summary.render());
    build_prompt(Strategy::PdAgent, schema, &evidence)
}

fn lookup<'a>(obj: &'a serde_json::Map<String, Value>, wanted: &str) -> Option<&'a Value> {
    let key = squash(wanted);
    obj.get(wanted)
        .or_else(|| obj.iter().find(|(k, _)| squash(k) == key).map(|(_, v)| v))
}

/// Exact match first, then case-insensitive.
pub fn snap_value<'a>(answer: &str, allowed: &'a [String]) -> Option<&'a String> {
    let answer = answer.trim();
    allowed
        .iter()
        .find(|v| v.as_str() == answer)
        .or_else(|| allowed.iter().find(|v| v.to_lowercase() == answer.to_lowercase()))
}

/// Maps a reply onto the schema. Missing or out-of-vocabulary slots fall back
/// to the schema's first value and are listed as unresolved.
pub fn parse_profile_reply(raw: &str, schema: &PersonaSchema) -> Result<(PersonaProfile, Vec<SlotKey>), InferenceError> {
    let doc = llm_json::parse_lenient(raw).map_err(InferenceError::Parse)?;
    let root = doc
        .as_object()
        .ok_or_else(|| InferenceError::Parse("reply is not a JSON object".into()))?;
    let persona = match lookup(root, "persona") {
        Some(Value::Object(p)) => p,
        Some(_) => return Err(InferenceError::Parse("\"persona\" is not an object".into())),
        None => root,
    };
    let recognized = Dimension::ALL
        .iter()
        .filter(|d| matches!(lookup(persona, d.as_str()), Some(Value::Object(_))))
        .count();
    if recognized == 0 {
        return Err(InferenceError::Parse("no schema dimension found in reply".into()));
    }
    let mut assignments = Vec::with_capacity(schema.slot_count());
    let mut unresolved = Vec::new();
    for (key, allowed) in schema.slots() {
        let answer = match lookup(persona, key.dimension.as_str()) {
            Some(Value::Object(dim)) => lookup(dim, &key.subcategory).and_then(Value::as_str),
            _ => None,
        };
        let value = match answer.and_then(|a| snap_value(a, allowed)) {
            Some(v) => v.clone(),
            None => {
                unresolved.push(key.clone());
                allowed[0].clone()
            }
        };
        assignments.push(Assignment {
            dimension: key.dimension,
            subcategory: key.subcategory,
            value,
        });
    }
    Ok((PersonaProfile { assignments }, unresolved))
}

/// Sends `prompt` to the reasoning provider and parses the reply.
pub fn infer_with_prompt(
    strategy: Strategy,
    prompt: String,
    schema: &PersonaSchema,
    pd: &dyn ChatProvider,
    params: &ChatParams,
) -> Result<InferenceRun, InferenceError> {
    schema.validate()?;
    let raw = pd.complete(&[ChatMessage::user(prompt.clone())], params)?;
    let (profile, unresolved) = parse_profile_reply(&raw, schema)?;
    Ok(InferenceRun {
        prediction: Prediction {
            strategy,
            profile,
            unresolved,
            warnings: Vec::new(),
        },
        prompt,
    })
}

pub fn infer_vanilla(
    transcript: &DialogueTranscript,
    schema: &PersonaSchema,
    pd: &dyn ChatProvider,
    params: &ChatParams,
) -> Result<InferenceRun, InferenceError> {
    infer_with_prompt(Strategy::Vanilla, build_vanilla_prompt(transcript, schema), schema, pd, params)
}

pub fn infer_frequency_aware(
    transcript: &DialogueTranscript,
    schema: &PersonaSchema,
    top_tokens: usize,
    pd: &dyn ChatProvider,
    params: &ChatParams,
) -> Result<InferenceRun, InferenceError> {
    let prompt = build_frequency_prompt(transcript, schema, top_tokens);
    infer_with_prompt(Strategy::FrequencyAware, prompt, schema, pd, params)
}

pub fn infer_persona_pd(
    graph: &SemanticGraph,
    schema: &PersonaSchema,
    top_hubs: usize,
    pd: &dyn ChatProvider,
    params: &ChatParams,
) -> Result<InferenceRun, InferenceError> {
    let summary = GraphSummary::from_graph(graph, top_hubs);
    let mut run = infer_with_prompt(Strategy::PdAgent, build_pd_prompt(&summary, schema), schema, pd, params)?;
    if graph.is_empty() {
        log::warn!("{EMPTY_GRAPH_WARNING}");
        run.prediction.warnings.push(EMPTY_GRAPH_WARNING.into());
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::BridgingRelation;
    use crate::graph::build_graph;
    use crate::interview::DialogueTurn;
    use crate::providers::{fixture_key, CallLog, FnProvider, Recorded, ScriptedProvider};
    use crate::schema::{default_schema, sample_persona};

    fn transcript(responses: &[&str]) -> DialogueTranscript {
        let mut t = DialogueTranscript::new("free time", "hidden");
        for (i, r) in responses.iter().enumerate() {
            t.turns.push(DialogueTurn {
                index: i + 1,
                question: "What do you bake on weekends?".into(),
                response: r.to_string(),
            });
        }
        t
    }

    fn reply_for(profile: &PersonaProfile) -> String {
        let mut persona = serde_json::Map::new();
        for a in &profile.assignments {
            persona
                .entry(a.dimension.as_str())
                .or_insert_with(|| Value::Object(Default::default()))
                .as_object_mut()
                .unwrap()
                .insert(a.subcategory.clone(), Value::String(a.value.clone()));
        }
        serde_json::json!({ "persona": persona }).to_string()
    }

    fn rel(a: &str, b: &str, t: RelationType) -> BridgingRelation {
        BridgingRelation { anchor: a.into(), anaphor: b.into(), relation_type: t, explanation: "e".into(), sentence_context: "c".into() }
    }

    #[test]
    fn frequency_table_counts_responses_only() {
        let t = transcript(&["I bake. I bake bread."]);
        assert_eq!(
            token_frequency_table(&t, 10),
            vec![("bake".to_string(), 2), ("bread".to_string(), 1)]
        );
        assert!(token_frequency_table(&transcript(&[]), 5).is_empty());
        let ties = transcript(&["zebra apple mango"]);
        let names: Vec<String> = token_frequency_table(&ties, 2).into_iter().map(|(t, _)| t).collect();
        assert_eq!(names, ["apple", "mango"]);
    }

    #[test]
    fn complete_reply_replays_to_profile() {
        let schema = default_schema();
        let truth = sample_persona(&schema, 4).unwrap();
        let t = transcript(&["Something about my day."]);
        let prompt = build_vanilla_prompt(&t, &schema);
        let msgs = [ChatMessage::user(prompt)];
        let reply = reply_for(&truth);
        let pd = ScriptedProvider::from_pairs([(&msgs[..], reply.as_str())]);
        let run = infer_vanilla(&t, &schema, &pd, &ChatParams::default()).unwrap();
        assert_eq!(run.prediction.profile, truth);
        assert!(run.prediction.unresolved.is_empty());
    }

    #[test]
    fn case_folded_answers_snap_and_missing_slots_default() {
        let schema = default_schema();
        let reply = r#"```json
{"persona": {"Social Role": {"professional": "doctor"}, "Background": {"Education": "Ph.D."}}}
```"#;
        let (profile, unresolved) = parse_profile_reply(reply, &schema).unwrap();
        let pro = SlotKey { dimension: Dimension::SocialRole, subcategory: "Professional".into() };
        let loc = SlotKey { dimension: Dimension::Background, subcategory: "Location".into() };
        assert_eq!(profile.get(&pro), Some("Doctor"));
        assert_eq!(profile.get(&loc), Some("Urban"));
        assert!(unresolved.contains(&loc));
        assert!(!unresolved.contains(&pro));
        assert_eq!(unresolved.len(), 8);
        profile.validate_against(&schema).unwrap();
    }

    #[test]
    fn out_of_vocabulary_answer_is_unresolved() {
        let schema = default_schema();
        let (profile, unresolved) =
            parse_profile_reply(r#"{"persona":{"SocialRole":{"Professional":"Astronaut"}}}"#, &schema).unwrap();
        assert_eq!(profile.assignments[0].value, "Doctor");
        assert_eq!(unresolved[0].subcategory, "Professional");
    }

    #[test]
    fn unparseable_replies_fail() {
        let schema = default_schema();
        assert!(matches!(parse_profile_reply("I think a doctor", &schema), Err(InferenceError::Parse(_))));
        assert!(matches!(parse_profile_reply("{\"persona\": 3}", &schema), Err(InferenceError::Parse(_))));
        assert!(matches!(parse_profile_reply("{\"guess\": {}}", &schema), Err(InferenceError::Parse(_))));
    }

    #[test]
    fn frequency_prompt_embeds_table_and_differs_from_vanilla() {
        let schema = default_schema();
        let t = transcript(&["I bake. I bake bread."]);
        let vanilla = build_vanilla_prompt(&t, &schema);
        let freq = build_frequency_prompt(&t, &schema, TOP_TOKENS);
        assert!(freq.contains("- bake: 2\n- bread: 1"));
        assert_ne!(
            fixture_key(&[ChatMessage::user(vanilla)]),
            fixture_key(&[ChatMessage::user(freq)])
        );
    }

    #[test]
    fn pd_prompt_lists_hubs_in_order_and_hides_transcript() {
        let schema = default_schema();
        let g = build_graph(&[
            rel("kitchen", "oven", RelationType::PartOf),
            rel("kitchen", "recipe", RelationType::Theme),
            rel("recipe", "bake", RelationType::CauseOf),
        ]);
        let log = CallLog::new();
        let truth = sample_persona(&schema, 1).unwrap();
        let reply = reply_for(&truth);
        let pd = Recorded::new(FnProvider(move |_: &[ChatMessage], _: &ChatParams| Ok(reply.clone())), "pd", log.clone());
        let run = infer_persona_pd(&g, &schema, TOP_HUBS, &pd, &ChatParams::default()).unwrap();
        assert_eq!(run.prediction.profile, truth);
        let sent = &log.records()[0].messages[0].content;
        assert_eq!(sent, &run.prompt);
        let k = sent.find("- kitchen (importance 1.0000)").unwrap();
        let r = sent.find("- recipe (importance 1.0000)").unwrap();
        let b = sent.find("- bake (importance 0.5000)").unwrap();
        assert!(k < r && r < b);
        assert!(sent.contains("Mereological 0.3333, FrameRelated 0.6667"));
        assert!(sent.contains("- cause-of: 1 (0.3333)"));
    }

    #[test]
    fn identical_graphs_give_identical_pd_prompts() {
        let schema = default_schema();
        let a = build_graph(&[rel("x", "y", RelationType::In), rel("y", "z", RelationType::Temporal)]);
        let b = build_graph(&[rel("y", "z", RelationType::Temporal), rel("x", "y", RelationType::In)]);
        let pa = build_pd_prompt(&GraphSummary::from_graph(&a, TOP_HUBS), &schema);
        let pb = build_pd_prompt(&GraphSummary::from_graph(&b, TOP_HUBS), &schema);
        assert_eq!(pa, pb);
    }

    #[test]
    fn empty_graph_still_infers_with_warning() {
        let schema = default_schema();
        let pd = FnProvider(|_: &[ChatMessage], _: &ChatParams| Ok("{\"persona\":{\"Interests\":{\"Hobbies\":\"Gaming\"}}}".to_string()));
        let run = infer_persona_pd(&build_graph(&[]), &schema, TOP_HUBS, &pd, &ChatParams::default()).unwrap();
        assert_eq!(run.prediction.warnings, vec![EMPTY_GRAPH_WARNING.to_string()]);
        assert_eq!(run.prediction.unresolved.len(), 9);
        assert!(run.prompt.contains("- (none)"));
    }

    #[test]
    fn prediction_serializes_as_profile_superset() {
        let schema = default_schema();
        let p = Prediction {
            strategy: Strategy::PdAgent,
            profile: sample_persona(&schema, 2).unwrap(),
            unresolved: vec![],
            warnings: vec![],
        };
        let text = serde_json::to_string(&p).unwrap();
        let as_profile: PersonaProfile = serde_json::from_str(&text).unwrap();
        assert_eq!(as_profile, p.profile);
        assert_eq!(serde_json::from_str::<Prediction>(&text).unwrap(), p);
        assert!(text.contains("\"strategy\":\"pd-agent\""));
    }

    #[test]
    fn strategy_names_parse() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
        }
        assert_eq!("pd".parse::<Strategy>().unwrap(), Strategy::PdAgent);
        assert!("magic".parse::<Strategy>().is_err());
    }
}
