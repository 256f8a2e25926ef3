use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{fixture_key, ChatMessage, ChatParams, ChatProvider, ProviderError};

/// One element of a fixture file: `[{"key_hash": ..., "response": ...}]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub key_hash: String,
    pub response: String,
}

/// Strict replay provider: answers only requests whose message-list hash is in
/// its fixture table. Read-only after construction.
#[derive(Debug, Clone, Default)]
pub struct ScriptedProvider {
    responses: HashMap<String, String>,
}

impl ScriptedProvider {
    pub fn from_entries(entries: impl IntoIterator<Item = FixtureEntry>) -> Self {
        ScriptedProvider {
            responses: entries.into_iter().map(|e| (e.key_hash, e.response)).collect(),
        }
    }

    /// Builds a fixture table directly from `(messages, reply)` pairs.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a [ChatMessage], &'a str)>) -> Self {
        Self::from_entries(pairs.into_iter().map(|(m, r)| FixtureEntry {
            key_hash: fixture_key(m),
            response: r.to_string(),
        }))
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ProviderError::Fixture(format!("{}: {e}", path.display())))?;
        let entries: Vec<FixtureEntry> = serde_json::from_str(&text)
            .map_err(|e| ProviderError::Fixture(format!("{}: {e}", path.display())))?;
        Ok(Self::from_entries(entries))
    }

    /// Union of several fixture files; later files win on key collisions.
    pub fn load_many(paths: &[impl AsRef<Path>]) -> Result<Self, ProviderError> {
        let mut responses = HashMap::new();
        for p in paths {
            responses.extend(Self::load(p.as_ref())?.responses);
        }
        Ok(ScriptedProvider { responses })
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl ChatProvider for ScriptedProvider {
    fn complete(&self, messages: &[ChatMessage], _params: &ChatParams) -> Result<String, ProviderError> {
        let key_hash = fixture_key(messages);
        self.responses
            .get(&key_hash)
            .cloned()
            .ok_or(ProviderError::MissingFixture { key_hash })
    }
}

/// Pass-through provider that remembers every successful reply so the exchange
/// can later be replayed with [`ScriptedProvider`].
pub struct FixtureRecorder<P> {
    inner: P,
    entries: Mutex<BTreeMap<String, String>>,
}

impl<P: ChatProvider> FixtureRecorder<P> {
    pub fn new(inner: P) -> Self {
        FixtureRecorder {
            inner,
            entries: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn entries(&self) -> Vec<FixtureEntry> {
        self.entries
            .lock()
            .expect("fixture recorder poisoned")
            .iter()
            .map(|(k, v)| FixtureEntry {
                key_hash: k.clone(),
                response: v.clone(),
            })
            .collect()
    }

    /// Writes entries sorted by key, merged with whatever `path` already holds.
    pub fn save(&self, path: &Path) -> Result<(), ProviderError> {
        save_fixture(path, self.entries())
    }
}

pub(crate) fn save_fixture(path: &Path, entries: Vec<FixtureEntry>) -> Result<(), ProviderError> {
    let mut merged: BTreeMap<String, String> = BTreeMap::new();
    if path.exists() {
        let text = fs::read_to_string(path)
            .map_err(|e| ProviderError::Fixture(format!("{}: {e}", path.display())))?;
        let old: Vec<FixtureEntry> = serde_json::from_str(&text)
            .map_err(|e| ProviderError::Fixture(format!("{}: {e}", path.display())))?;
        merged.extend(old.into_iter().map(|e| (e.key_hash, e.response)));
    }
    merged.extend(entries.into_iter().map(|e| (e.key_hash, e.response)));
    let out: Vec<FixtureEntry> = merged
        .into_iter()
        .map(|(key_hash, response)| FixtureEntry { key_hash, response })
        .collect();
    let mut text = serde_json::to_string_pretty(&out).expect("fixtures serialize");
    text.push('\n');
    crate::fsutil::write_atomic(path, text.as_bytes())
        .map_err(|e| ProviderError::Fixture(format!("{}: {e}", path.display())))
}

impl<P: ChatProvider> ChatProvider for FixtureRecorder<P> {
    fn complete(&self, messages: &[ChatMessage], params: &ChatParams) -> Result<String, ProviderError> {
        let reply = self.inner.complete(messages, params)?;
        self.entries
            .lock()
            .expect("fixture recorder poisoned")
            .insert(fixture_key(messages), reply.clone());
        Ok(reply)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::FnProvider;

    #[test]
    fn replays_known_requests() {
        let msgs = [ChatMessage::user("greet me")];
        let p = ScriptedProvider::from_pairs([(&msgs[..], "Hello")]);
        assert_eq!(p.complete(&msgs, &ChatParams::default()).unwrap(), "Hello");
    }

    #[test]
    fn unknown_requests_are_missing_fixtures() {
        let p = ScriptedProvider::default();
        let err = p.complete(&[ChatMessage::user("?")], &ChatParams::default()).unwrap_err();
        assert!(matches!(err, ProviderError::MissingFixture { .. }));
    }

    #[test]
    fn recorder_output_replays() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.json");
        let rec = FixtureRecorder::new(FnProvider(|m: &[ChatMessage], _: &ChatParams| {
            Ok(format!("reply to {}", m[0].content))
        }));
        let a = [ChatMessage::user("a")];
        let b = [ChatMessage::user("b")];
        rec.complete(&a, &ChatParams::default()).unwrap();
        rec.complete(&b, &ChatParams::default()).unwrap();
        rec.save(&path).unwrap();
        let replay = ScriptedProvider::load(&path).unwrap();
        assert_eq!(replay.len(), 2);
        assert_eq!(replay.complete(&b, &ChatParams::default()).unwrap(), "reply to b");
    }

    #[test]
    fn bad_fixture_file_is_a_fixture_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        fs::write(&path, "{not json").unwrap();
        assert!(matches!(ScriptedProvider::load(&path), Err(ProviderError::Fixture(_))));
        assert!(matches!(
            ScriptedProvider::load(&dir.path().join("missing.json")),
            Err(ProviderError::Fixture(_))
        ));
    }
}
