use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use super::{request_digest, BackendError, Completion, CompletionBackend, CompletionParams, Fixture, FixtureEntry};

/// Serves a fixture's entries in order, checking each request digest.
///
/// One cursor per session: share a single instance between the player and
/// NPC sides of one dialogue, never across dialogues.
#[derive(Debug)]
pub struct ReplayBackend {
    entries: Vec<FixtureEntry>,
    cursor: Mutex<usize>,
}

impl ReplayBackend {
    pub fn new(fixture: Fixture) -> Self {
        Self { entries: fixture.entries, cursor: Mutex::new(0) }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        Fixture::load(path).map(Self::new)
    }

    pub fn consumed(&self) -> usize {
        *self.cursor.lock().expect("cursor lock")
    }

    pub fn remaining(&self) -> usize {
        self.entries.len() - self.consumed()
    }
}

impl CompletionBackend for ReplayBackend {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<Completion, BackendError> {
        let mut cursor = self.cursor.lock().expect("cursor lock");
        let entry = self
            .entries
            .get(*cursor)
            .ok_or(BackendError::FixtureExhausted { consumed: *cursor })?;
        let actual = request_digest(prompt, params);
        if entry.digest != actual {
            return Err(BackendError::DigestMismatch {
                index: *cursor,
                expected: entry.digest.clone(),
                actual,
            });
        }
        *cursor += 1;
        Ok(entry.completion())
    }
}

/// Serves recorded completions by request digest, in any order, from every
/// fixture in a directory. Repeated requests get the recorded answers in
/// order; the last one is repeated once they run out.
#[derive(Debug, Default)]
pub struct DigestReplayBackend {
    by_digest: Mutex<HashMap<String, VecDeque<FixtureEntry>>>,
}

impl DigestReplayBackend {
    pub fn new(fixtures: impl IntoIterator<Item = Fixture>) -> Self {
        let mut by_digest: HashMap<String, VecDeque<FixtureEntry>> = HashMap::new();
        for entry in fixtures.into_iter().flat_map(|f| f.entries) {
            by_digest.entry(entry.digest.clone()).or_default().push_back(entry);
        }
        Self { by_digest: Mutex::new(by_digest) }
    }

    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, BackendError> {
        let dir = dir.as_ref();
        let read = std::fs::read_dir(dir).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => BackendError::FixtureNotFound(dir.to_path_buf()),
            _ => BackendError::Io(format!("{}: {e}", dir.display())),
        })?;
        let mut paths: Vec<_> = read
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        let fixtures = paths.iter().map(Fixture::load).collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(fixtures))
    }

    pub fn len(&self) -> usize {
        self.by_digest.lock().expect("replay lock").values().map(VecDeque::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl CompletionBackend for DigestReplayBackend {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<Completion, BackendError> {
        let digest = request_digest(prompt, params);
        let mut map = self.by_digest.lock().expect("replay lock");
        let queue = map.get_mut(&digest).ok_or_else(|| BackendError::UnrecordedRequest(digest.clone()))?;
        let entry = if queue.len() > 1 { queue.pop_front() } else { queue.front().cloned() };
        Ok(entry.expect("queues are never empty").completion())
    }
}
