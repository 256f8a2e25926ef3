//! Deterministic offline agents for demos, fixture recording and oracle
//! suites.
//!
//! Every default schema value owns a small cluster of cue words: a center
//! cue and two linked cues with a relation type. [`SimulatedTarget`] plants
//! the hidden persona as co-occurring center/link pairs and mixes in isolated
//! single mentions of other values' cues. [`SimulatedInterviewer`] answers
//! question, extraction and inference prompts with lexicon heuristics, so a
//! graph built from its extractions contains only the planted pairs while raw
//! word counts also see the distractors.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use crate::providers::{tokenize, ChatMessage, ChatParams, ChatProvider, ProviderError, Role};
use crate::schema::{parse_hidden_prompt, Dimension};
use crate::taxonomy::RelationType;

pub struct CueCluster {
    pub dimension: Dimension,
    pub subcategory: &'static str,
    pub value: &'static str,
    pub center: &'static str,
    pub links: [(&'static str, RelationType); 2],
}

impl CueCluster {
    pub fn cues(&self) -> [&'static str; 3] {
        [self.center, self.links[0].0, self.links[1].0]
    }
}

macro_rules! cluster {
    ($dim:ident, $sub:expr, $value:expr, $center:expr, ($l1:expr, $t1:ident), ($l2:expr, $t2:ident)) => {
        CueCluster {
            dimension: Dimension::$dim,
            subcategory: $sub,
            value: $value,
            center: $center,
            links: [($l1, RelationType::$t1), ($l2, RelationType::$t2)],
        }
    };
}

/// Cue clusters for every value of the default schema, in schema order.
pub const LEXICON: &[CueCluster] = &[
    cluster!(SocialRole, "Professional", "Doctor", "hospital", ("patient", MemberOf), ("stethoscope", Instrument)),
    cluster!(SocialRole, "Professional", "Lawyer", "lawsuit", ("contract", Theme), ("courtroom", In)),
    cluster!(SocialRole, "Professional", "Professor", "lecture", ("syllabus", PartOf), ("campus", In)),
    cluster!(SocialRole, "Professional", "Accountant", "ledger", ("invoice", Theme), ("audit", CauseOf)),
    cluster!(SocialRole, "Technical Management", "Software Engineer", "codebase", ("compiler", Instrument), ("bug", PartOf)),
    cluster!(SocialRole, "Technical Management", "Data Scientist", "dataset", ("regression", Theme), ("jupyter", Instrument)),
    cluster!(SocialRole, "Technical Management", "Product Manager", "roadmap", ("milestone", PartOf), ("stakeholder", MemberOf)),
    cluster!(SocialRole, "Public Service", "Civil Servant", "ministry", ("permit", Theme), ("clerk", MemberOf)),
    cluster!(SocialRole, "Public Service", "Police Officer", "patrol", ("handcuffs", Instrument), ("precinct", In)),
    cluster!(SocialRole, "Public Service", "Teacher", "classroom", ("pupil", MemberOf), ("chalkboard", PartOf)),
    cluster!(Personality, "Big-Five Traits", "Openness", "museum", ("sculpture", PartOf), ("curiosity", CauseOf)),
    cluster!(Personality, "Big-Five Traits", "Conscientiousness", "planner", ("checklist", PartOf), ("deadline", Temporal)),
    cluster!(Personality, "Big-Five Traits", "Extroversion", "party", ("crowd", MemberOf), ("karaoke", Theme)),
    cluster!(Personality, "Big-Five Traits", "Agreeableness", "volunteering", ("neighbor", Theme), ("kindness", CauseOf)),
    cluster!(Personality, "Big-Five Traits", "Neuroticism", "insomnia", ("anxiety", CauseOf), ("midnight", Temporal)),
    cluster!(Background, "Education", "High School", "diploma", ("graduation", Temporal), ("yearbook", PartOf)),
    cluster!(Background, "Education", "Bachelor's", "undergrad", ("dormitory", In), ("freshman", MemberOf)),
    cluster!(Background, "Education", "Master's", "thesis", ("advisor", Theme), ("seminar", PartOf)),
    cluster!(Background, "Education", "Ph.D.", "dissertation", ("postdoc", Temporal), ("laboratory", In)),
    cluster!(Background, "Location", "Urban", "subway", ("skyscraper", In), ("traffic", PartOf)),
    cluster!(Background, "Location", "Rural", "farm", ("tractor", Instrument), ("barn", PartOf)),
    cluster!(Background, "Family Status", "Single", "dating", ("swipe", Instrument), ("brunch", Temporal)),
    cluster!(Background, "Family Status", "Married", "spouse", ("wedding", Temporal), ("anniversary", Temporal)),
    cluster!(Background, "Family Status", "Living Alone", "apartment", ("solitude", Theme), ("microwave", PartOf)),
    cluster!(Interests, "Hobbies", "Reading", "novel", ("chapter", PartOf), ("library", In)),
    cluster!(Interests, "Hobbies", "Traveling", "passport", ("airport", In), ("itinerary", Theme)),
    cluster!(Interests, "Hobbies", "Gaming", "console", ("controller", PartOf), ("multiplayer", Theme)),
    cluster!(Interests, "Core Values", "Creativity", "sketchbook", ("canvas", Instrument), ("inspiration", CauseOf)),
    cluster!(Interests, "Core Values", "Family", "children", ("grandparents", MemberOf), ("reunion", Temporal)),
    cluster!(Interests, "Core Values", "Integrity", "honesty", ("promise", Theme), ("principle", PartOf)),
    cluster!(Interests, "Comm. Style", "Direct", "feedback", ("bluntness", Theme), ("agenda", PartOf)),
    cluster!(Interests, "Comm. Style", "Emotional", "tears", ("hug", Theme), ("diary", Instrument)),
];

fn cluster_for_value(value: &str) -> Option<&'static CueCluster> {
    LEXICON.iter().find(|c| c.value == value)
}

fn cluster_of_cue(cue: &str) -> Option<(usize, &'static CueCluster)> {
    LEXICON.iter().enumerate().find(|(_, c)| c.cues().contains(&cue))
}

const PAIR_TEMPLATES: &[&str] = &[
    "Lately the {a} has taken up most of my week, especially the {b}.",
    "When I think about the {a}, the {b} always comes to mind.",
    "I spent the afternoon dealing with the {a} and the {b}.",
    "My {a} keeps me busy, and the {b} is a big part of it.",
];

const DISTRACTOR_TEMPLATES: &[&str] = &[
    "A friend once told me about the {c}.",
    "I saw something about the {c} on the news.",
    "Someone at the cafe mentioned the {c}.",
];

const FILLER: &str = "It has been a fairly ordinary stretch.";

const QUESTIONS: &[&str] = &[
    "What comes to mind when you think about {topic}?",
    "What part of that stays with you the most?",
    "How did you end up spending your time that way?",
    "What would an ideal weekend look like for you?",
    "What is something you are looking forward to?",
];

/// Plays a target model conditioned by a hidden persona prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimulatedTarget {
    pub seed: u64,
    pub pairs_per_turn: usize,
    pub max_distractors: usize,
}

impl SimulatedTarget {
    pub fn new(seed: u64) -> Self {
        SimulatedTarget { seed, pairs_per_turn: 3, max_distractors: 6 }
    }

    /// Composes the answer for 1-based `turn` given the hidden prompt.
    pub fn respond(&self, hidden_prompt: &str, turn: usize) -> String {
        let planted: Vec<&CueCluster> = parse_hidden_prompt(hidden_prompt)
            .iter()
            .filter_map(|(_, _, value)| cluster_for_value(value))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (turn as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut sentences = Vec::new();
        if !planted.is_empty() {
            for j in 0..self.pairs_per_turn {
                let k = (turn.saturating_sub(1)) * self.pairs_per_turn + j;
                let c = planted[k % planted.len()];
                let (link, _) = c.links[rng.gen_range(0..2)];
                let template = PAIR_TEMPLATES[rng.gen_range(0..PAIR_TEMPLATES.len())];
                sentences.push(template.replace("{a}", c.center).replace("{b}", link));
            }
            let n_distractors = rng.gen_range(0..=self.max_distractors);
            for _ in 0..n_distractors {
                let truth = planted[rng.gen_range(0..planted.len())];
                let rivals: Vec<&CueCluster> = LEXICON
                    .iter()
                    .filter(|c| c.dimension == truth.dimension && c.subcategory == truth.subcategory && c.value != truth.value)
                    .collect();
                let Some(rival) = rivals.choose(&mut rng) else { continue };
                let cue = rival.cues()[rng.gen_range(0..3)];
                let template = DISTRACTOR_TEMPLATES[rng.gen_range(0..DISTRACTOR_TEMPLATES.len())];
                sentences.push(template.replace("{c}", cue));
            }
            sentences.shuffle(&mut rng);
        }
        if sentences.is_empty() {
            sentences.push(FILLER.to_string());
        }
        sentences.join(" ")
    }
}

impl ChatProvider for SimulatedTarget {
    fn complete(&self, messages: &[ChatMessage], _params: &ChatParams) -> Result<String, ProviderError> {
        let hidden = messages
            .iter()
            .find(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
            .unwrap_or("");
        let turn = messages.iter().filter(|m| m.role == Role::User).count();
        Ok(self.respond(hidden, turn))
    }
}

/// Plays the reasoning backbone: interviewer, extractor and persona reasoner.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimulatedInterviewer;

fn section<'a>(prompt: &'a str, heading: &str, next: Option<&str>) -> &'a str {
    let marker = format!("\n{heading}\n");
    let Some(start) = prompt.rfind(&marker) else { return "" };
    let body = &prompt[start + marker.len()..];
    match next.and_then(|n| body.find(&format!("\n{n}\n"))) {
        Some(end) => &body[..end],
        None => body,
    }
}

fn ask(prompt: &str) -> String {
    let topic = section(prompt, "OPENING TOPIC", Some("HISTORY")).trim();
    let history = section(prompt, "HISTORY", None);
    let asked = history
        .lines()
        .filter(|l| l.starts_with('Q') && l[1..].starts_with(|c: char| c.is_ascii_digit()))
        .count();
    QUESTIONS[asked % QUESTIONS.len()].replace("{topic}", topic)
}

/// Links same-cluster cues that co-occur in one answer sentence.
pub fn heuristic_extract(conversation: &str) -> Value {
    let mut relations = Vec::new();
    for line in conversation.lines() {
        let Some(answer) = line
            .strip_prefix('A')
            .and_then(|rest| rest.split_once(": "))
            .filter(|(n, _)| n.chars().all(|c| c.is_ascii_digit()))
            .map(|(_, text)| text)
        else {
            continue;
        };
        for sentence in answer.split_inclusive(['.', '!', '?']) {
            let sentence = sentence.trim();
            let found: Vec<(String, usize, &CueCluster)> = tokenize(sentence)
                .into_iter()
                .filter_map(|tok| cluster_of_cue(&tok).map(|(i, c)| (tok, i, c)))
                .collect();
            for (i, (anchor, ci, cluster)) in found.iter().enumerate() {
                for (anaphor, cj, _) in &found[i + 1..] {
                    if ci != cj || anchor == anaphor {
                        continue;
                    }
                    let relation_type = cluster
                        .links
                        .iter()
                        .find(|(l, _)| l == anaphor || l == anchor)
                        .map(|(_, t)| *t)
                        .unwrap_or(RelationType::Theme);
                    relations.push(json!({
                        "anchor": anchor,
                        "anaphor": anaphor,
                        "relation_type": relation_type.as_str(),
                        "explanation": format!("The {anaphor} is evoked by the {anchor} frame."),
                        "sentence_context": sentence,
                    }));
                }
            }
        }
    }
    json!({ "bridging_relations": relations })
}

/// Scores every lexicon value from an evidence block and returns a persona
/// reply. Hub lines are weighted by importance, frequency rows by count and
/// any other text by occurrence. Slots without evidence are left out.
pub fn lexicon_reason(evidence: &str) -> Value {
    let mut scores: HashMap<usize, f64> = HashMap::new();
    let mut credit = |cue: &str, w: f64| {
        if let Some((i, _)) = cluster_of_cue(cue) {
            *scores.entry(i).or_default() += w;
        }
    };
    for line in evidence.lines() {
        let item = line.trim().strip_prefix("- ");
        if let Some((label, imp)) = item.and_then(|s| s.split_once(" (importance ")) {
            if let Ok(w) = imp.trim_end_matches(')').parse::<f64>() {
                credit(label.trim(), w);
                continue;
            }
        }
        if let Some((tok, n)) = item.and_then(|s| s.rsplit_once(": ")) {
            if let Ok(n) = n.trim().parse::<u64>() {
                credit(tok.trim(), n as f64);
                continue;
            }
        }
        for tok in tokenize(line) {
            credit(&tok, 1.0);
        }
    }
    let mut persona = Map::new();
    for d in Dimension::ALL {
        persona.insert(d.as_str().to_string(), Value::Object(Map::new()));
    }
    for (i, c) in LEXICON.iter().enumerate() {
        let s = scores.get(&i).copied().unwrap_or(0.0);
        if s <= 0.0 {
            continue;
        }
        let best = LEXICON
            .iter()
            .enumerate()
            .filter(|(_, o)| o.dimension == c.dimension && o.subcategory == c.subcategory)
            .map(|(j, o)| (scores.get(&j).copied().unwrap_or(0.0), j, o))
            .fold(None::<(f64, usize, &CueCluster)>, |acc, x| match acc {
                Some(a) if a.0 >= x.0 => Some(a),
                _ => Some(x),
            });
        if best.map(|b| b.1) == Some(i) {
            persona[c.dimension.as_str()]
                .as_object_mut()
                .expect("dimension object")
                .insert(c.subcategory.to_string(), Value::String(c.value.to_string()));
        }
    }
    json!({ "persona": persona })
}

impl ChatProvider for SimulatedInterviewer {
    fn complete(&self, messages: &[ChatMessage], _params: &ChatParams) -> Result<String, ProviderError> {
        let prompt = messages.last().map(|m| m.content.as_str()).unwrap_or("");
        if prompt.starts_with("INTERVIEW") {
            Ok(ask(prompt))
        } else if prompt.starts_with("TASK") && prompt.contains("bridging_relations") {
            Ok(heuristic_extract(section(prompt, "CONVERSATION", None)).to_string())
        } else if prompt.starts_with("PERSONA INFERENCE") {
            Ok(lexicon_reason(section(prompt, "EVIDENCE", Some("FORMAT"))).to_string())
        } else {
            Err(ProviderError::Malformed("simulated interviewer does not recognise the prompt".into()))
        }
    }
}
