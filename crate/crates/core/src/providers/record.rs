use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{fixture_key, validate_messages, ChatMessage, ChatParams, ChatProvider, ProviderError};

/// One provider call, as written to `provider_log.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderRecord {
    /// Which pipeline role issued the call (`pd`, `target`, ...).
    pub role: String,
    pub key_hash: String,
    pub messages: Vec<ChatMessage>,
    pub params: ChatParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub latency_ms: u64,
    pub timestamp: String,
}

impl ProviderRecord {
    /// Copy with wall-clock fields zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> ProviderRecord {
        ProviderRecord {
            latency_ms: 0,
            timestamp: String::new(),
            ..self.clone()
        }
    }
}

/// Append-only call log shared by all recorded providers of a run.
#[derive(Debug, Default)]
pub struct CallLog {
    inner: Mutex<LogState>,
}

#[derive(Debug, Default)]
struct LogState {
    records: Vec<ProviderRecord>,
    sink: Option<File>,
}

impl CallLog {
    pub fn new() -> Arc<CallLog> {
        Arc::new(CallLog::default())
    }

    /// Log that additionally appends each record as a JSON line to `path`.
    pub fn with_file(path: &Path) -> std::io::Result<Arc<CallLog>> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Arc::new(CallLog {
            inner: Mutex::new(LogState {
                records: Vec::new(),
                sink: Some(file),
            }),
        }))
    }

    pub fn push(&self, record: ProviderRecord) {
        let mut state = self.inner.lock().expect("call log poisoned");
        if let Some(file) = state.sink.as_mut() {
            let line = serde_json::to_string(&record).expect("record serializes");
            if let Err(e) = writeln!(file, "{line}").and_then(|_| file.flush()) {
                log::warn!("failed to append provider record: {e}");
            }
        }
        state.records.push(record);
    }

    pub fn records(&self) -> Vec<ProviderRecord> {
        self.inner.lock().expect("call log poisoned").records.clone()
    }

    pub fn records_for(&self, role: &str) -> Vec<ProviderRecord> {
        self.records().into_iter().filter(|r| r.role == role).collect()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("call log poisoned").records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Decorator that validates each request and records it in a [`CallLog`].
pub struct Recorded<P> {
    inner: P,
    role: String,
    log: Arc<CallLog>,
}

impl<P: ChatProvider> Recorded<P> {
    pub fn new(inner: P, role: impl Into<String>, log: Arc<CallLog>) -> Self {
        Recorded {
            inner,
            role: role.into(),
            log,
        }
    }
}

impl<P: ChatProvider> ChatProvider for Recorded<P> {
    fn complete(&self, messages: &[ChatMessage], params: &ChatParams) -> Result<String, ProviderError> {
        validate_messages(messages)?;
        params.validate()?;
        let started = Instant::now();
        let result = self.inner.complete(messages, params).and_then(|text| {
            if text.trim().is_empty() {
                Err(ProviderError::EmptyResponse)
            } else {
                Ok(text)
            }
        });
        let (response, error) = match &result {
            Ok(text) => (Some(text.clone()), None),
            Err(e) => (None, Some(e.to_string())),
        };
        self.log.push(ProviderRecord {
            role: self.role.clone(),
            key_hash: fixture_key(messages),
            messages: messages.to_vec(),
            params: params.clone(),
            response,
            error,
            latency_ms: started.elapsed().as_millis() as u64,
            timestamp: chrono::Utc::now().to_rfc3339(),
        });
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::FnProvider;

    #[test]
    fn records_successes_and_failures() {
        let log = CallLog::new();
        let echo = Recorded::new(
            FnProvider(|m: &[ChatMessage], _: &ChatParams| Ok(m.last().unwrap().content.to_uppercase())),
            "pd",
            log.clone(),
        );
        let out = echo.complete(&[ChatMessage::user("hi")], &ChatParams::default()).unwrap();
        assert_eq!(out, "HI");
        let empty = Recorded::new(
            FnProvider(|_: &[ChatMessage], _: &ChatParams| Ok("   ".to_string())),
            "target",
            log.clone(),
        );
        assert_eq!(
            empty.complete(&[ChatMessage::user("x")], &ChatParams::default()),
            Err(ProviderError::EmptyResponse)
        );
        let recs = log.records();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].response.as_deref(), Some("HI"));
        assert!(recs[1].error.is_some());
        assert_eq!(log.records_for("target").len(), 1);
    }

    #[test]
    fn writes_json_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("provider_log.jsonl");
        let log = CallLog::with_file(&path).unwrap();
        let p = Recorded::new(FnProvider(|_: &[ChatMessage], _: &ChatParams| Ok("ok".to_string())), "pd", log);
        p.complete(&[ChatMessage::user("a")], &ChatParams::default()).unwrap();
        p.complete(&[ChatMessage::user("b")], &ChatParams::default()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<ProviderRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1].messages[0].content, "b");
    }

    #[test]
    fn rejects_bad_requests_before_calling_inner() {
        let log = CallLog::new();
        let p = Recorded::new(
            FnProvider(|_: &[ChatMessage], _: &ChatParams| -> Result<String, ProviderError> { panic!("must not be called") }),
            "pd",
            log.clone(),
        );
        assert!(p.complete(&[], &ChatParams::default()).is_err());
        assert!(log.is_empty());
    }
}
