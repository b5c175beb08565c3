use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde_json::Value;

use super::{meta_line, request_digest, BackendError, Completion, CompletionBackend, CompletionParams, FixtureEntry};

/// Append-only fixture file shared by every recorder of one session, so
/// player and NPC calls interleave in call order.
#[derive(Debug, Clone)]
pub struct FixtureWriter {
    file: Arc<Mutex<File>>,
    keep_prompts: bool,
}

impl FixtureWriter {
    /// Creates (truncating) `path` and writes the meta line if `meta` is non-empty.
    pub fn create(path: impl AsRef<Path>, meta: &BTreeMap<String, Value>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let mut file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)
            .map_err(|e| BackendError::Io(format!("{}: {e}", path.display())))?;
        if !meta.is_empty() {
            writeln!(file, "{}", meta_line(meta)).map_err(|e| BackendError::Io(e.to_string()))?;
        }
        Ok(Self { file: Arc::new(Mutex::new(file)), keep_prompts: false })
    }

    pub fn keep_prompts(mut self, keep: bool) -> Self {
        self.keep_prompts = keep;
        self
    }

    fn append(&self, mut entry: FixtureEntry, prompt: &str) -> Result<(), BackendError> {
        if self.keep_prompts {
            entry.prompt = Some(prompt.to_string());
        }
        let line = serde_json::to_string(&entry).expect("fixture entries serialize");
        let mut file = self.file.lock().expect("fixture lock");
        writeln!(file, "{line}").map_err(|e| BackendError::Io(e.to_string()))
    }
}

/// Passes calls through to `inner` and appends each result to a fixture.
pub struct RecordingBackend<B> {
    inner: B,
    sink: FixtureWriter,
}

impl<B: CompletionBackend> RecordingBackend<B> {
    pub fn new(inner: B, sink: FixtureWriter) -> Self {
        Self { inner, sink }
    }
}

impl<B: CompletionBackend> CompletionBackend for RecordingBackend<B> {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<Completion, BackendError> {
        let completion = self.inner.complete(prompt, params)?;
        self.sink
            .append(FixtureEntry::new(request_digest(prompt, params), &completion), prompt)?;
        Ok(completion)
    }
}
