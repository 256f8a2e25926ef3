//! Adaptive interview loop: the discovering agent asks, the persona-conditioned
//! target answers, and the dialogue accumulates turn by turn.
//!
//! The interviewer only ever sees the `(question, response)` history. The
//! hidden prompt is sent exclusively to the target as its system message.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsutil;
use crate::providers::{ChatMessage, ChatParams, ChatProvider, ProviderError};

pub const QUESTION_TEMPLATE: &str = include_str!("../templates/question.v1.txt");

pub const DEFAULT_TOPICS: [&str; 4] = [
    "daily routine",
    "recent decisions",
    "free time",
    "work challenges",
];

pub const DEFAULT_TURNS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub index: usize,
    pub question: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTranscript {
    pub topic_seed: String,
    /// SHA-256 of the hidden prompt the target was conditioned with.
    #[serde(default)]
    pub prompt_fingerprint: String,
    pub turns: Vec<DialogueTurn>,
    /// Set when the interview aborted; `turns` then holds what completed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl DialogueTranscript {
    pub fn new(topic_seed: impl Into<String>, hidden_prompt: &str) -> Self {
        DialogueTranscript {
            topic_seed: topic_seed.into(),
            prompt_fingerprint: fsutil::sha256_hex(hidden_prompt.as_bytes()),
            turns: Vec::new(),
            failure: None,
        }
    }

    /// Structural checks: contiguous 1-based indices, no empty text.
    pub fn validate(&self) -> Result<(), InterviewError> {
        for (i, t) in self.turns.iter().enumerate() {
            if t.index != i + 1 {
                return Err(InterviewError::Invalid(format!(
                    "turn {} has index {}",
                    i + 1,
                    t.index
                )));
            }
            if t.question.trim().is_empty() || t.response.trim().is_empty() {
                return Err(InterviewError::Invalid(format!("turn {} has empty text", t.index)));
            }
        }
        Ok(())
    }

    /// `Q1: ...` / `A1: ...` lines, one pair per turn.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for t in &self.turns {
            let _ = writeln!(out, "Q{}: {}", t.index, t.question);
            let _ = writeln!(out, "A{}: {}", t.index, t.response);
        }
        out
    }

    pub fn responses(&self) -> impl Iterator<Item = &str> {
        self.turns.iter().map(|t| t.response.as_str())
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        fsutil::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self, InterviewError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| InterviewError::Io(format!("{}: {e}", path.display())))?;
        let t: DialogueTranscript = serde_json::from_str(&text)
            .map_err(|e| InterviewError::Invalid(format!("{}: {e}", path.display())))?;
        t.validate()?;
        Ok(t)
    }
}

/// Allowed interview lengths. The strict protocol is 3 to 5 turns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnBounds {
    pub min: usize,
    pub max: usize,
}

impl TurnBounds {
    pub const STRICT: TurnBounds = TurnBounds { min: 3, max: 5 };

    pub fn check(&self, n_turns: usize) -> Result<(), InterviewError> {
        if n_turns < self.min || n_turns > self.max || n_turns == 0 {
            return Err(InterviewError::Protocol(format!(
                "{n_turns} turns requested, protocol allows {}..={}",
                self.min, self.max
            )));
        }
        Ok(())
    }
}

impl Default for TurnBounds {
    fn default() -> Self {
        TurnBounds::STRICT
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterviewConfig {
    pub n_turns: usize,
    pub bounds: TurnBounds,
    pub pd_params: ChatParams,
    pub target_params: ChatParams,
}

impl Default for InterviewConfig {
    fn default() -> Self {
        InterviewConfig {
            n_turns: DEFAULT_TURNS,
            bounds: TurnBounds::STRICT,
            pd_params: ChatParams::default(),
            target_params: ChatParams::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum InterviewError {
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("provider failed during turn {turn}: {source}")]
    Provider {
        turn: usize,
        #[source]
        source: ProviderError,
        partial: Box<DialogueTranscript>,
    },
    #[error("invalid transcript: {0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(String),
}

pub fn choose_topic(topics: &[String], seed: u64) -> &str {
    if topics.is_empty() {
        return DEFAULT_TOPICS[(seed % DEFAULT_TOPICS.len() as u64) as usize];
    }
    &topics[(seed % topics.len() as u64) as usize]
}

pub fn build_question_prompt(history: &DialogueTranscript) -> String {
    let rendered = history.render();
    let history_block = if rendered.is_empty() {
        "(no turns yet; open with the topic above)".to_string()
    } else {
        rendered.trim_end().to_string()
    };
    QUESTION_TEMPLATE
        .replace("{{topic}}", &history.topic_seed)
        .replace("{{history}}", &history_block)
}

/// Forces a reply into a single interrogative line.
pub fn normalize_question(raw: &str) -> Option<String> {
    let line = raw.lines().map(str::trim).find(|l| !l.is_empty())?;
    let line = line
        .strip_prefix("Question:")
        .or_else(|| line.strip_prefix("question:"))
        .unwrap_or(line)
        .trim()
        .trim_matches(|c| c == '"' || c == '\'' || c == '“' || c == '”')
        .trim();
    if !line.chars().any(char::is_alphanumeric) {
        return None;
    }
    if line.ends_with('?') {
        return Some(line.to_string());
    }
    let stem = line.trim_end_matches(|c: char| matches!(c, '.' | '!' | ':' | ';' | ',') || c.is_whitespace());
    Some(format!("{stem}?"))
}

pub fn generate_question(
    history: &DialogueTranscript,
    pd: &dyn ChatProvider,
    params: &ChatParams,
) -> Result<String, ProviderError> {
    let messages = [ChatMessage::user(build_question_prompt(history))];
    let raw = pd.complete(&messages, params)?;
    normalize_question(&raw)
        .ok_or_else(|| ProviderError::Malformed(format!("not a question: {raw:?}")))
}

/// Messages the target sees when answering `question` after `history`.
pub fn target_messages(hidden_prompt: &str, history: &DialogueTranscript, question: &str) -> Vec<ChatMessage> {
    let mut messages = Vec::with_capacity(history.turns.len() * 2 + 2);
    messages.push(ChatMessage::system(hidden_prompt));
    for t in &history.turns {
        messages.push(ChatMessage::user(t.question.clone()));
        messages.push(ChatMessage::assistant(t.response.clone()));
    }
    messages.push(ChatMessage::user(question));
    messages
}

/// Runs `config.n_turns` question/response rounds. When `persist_to` is given
/// the transcript is written there before returning, including the partial
/// transcript (with a failure marker) if a provider call fails.
pub fn run_interview(
    pd: &dyn ChatProvider,
    target: &dyn ChatProvider,
    hidden_prompt: &str,
    topic_seed: &str,
    config: &InterviewConfig,
    persist_to: Option<&Path>,
) -> Result<DialogueTranscript, InterviewError> {
    config.bounds.check(config.n_turns)?;
    let mut transcript = DialogueTranscript::new(topic_seed, hidden_prompt);
    for index in 1..=config.n_turns {
        let step = generate_question(&transcript, pd, &config.pd_params).and_then(|question| {
            let messages = target_messages(hidden_prompt, &transcript, &question);
            let response = target.complete(&messages, &config.target_params)?;
            Ok((question, response.trim().to_string()))
        });
        match step {
            Ok((question, response)) => transcript.turns.push(DialogueTurn {
                index,
                question,
                response,
            }),
            Err(source) => {
                transcript.failure = Some(format!("turn {index}: {source}"));
                if let Some(path) = persist_to {
                    transcript
                        .save(path)
                        .map_err(|e| InterviewError::Io(format!("{}: {e}", path.display())))?;
                }
                return Err(InterviewError::Provider {
                    turn: index,
                    source,
                    partial: Box::new(transcript),
                });
            }
        }
    }
    if let Some(path) = persist_to {
        transcript
            .save(path)
            .map_err(|e| InterviewError::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(transcript)
}
