//! Record/replay fixture store.
//!
//! Each request/response pair lives in its own JSON file named by the
//! SHA-256 of the canonical request (prompt, parameters, sample index).
//! Replay never touches the network: a missing fixture is an error.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ClientError, Completion, CompletionBackend, CompletionRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub key: String,
    pub request: CompletionRequest,
    pub completion: Completion,
}

#[derive(Debug)]
pub struct FixtureStore {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl FixtureStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            write_lock: Mutex::new(()),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Content hash of a request.
    pub fn key(request: &CompletionRequest) -> String {
        let canonical = serde_json::to_vec(request).expect("request serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    fn err(&self, path: &Path, message: impl ToString) -> ClientError {
        ClientError::Fixture {
            path: path.display().to_string(),
            message: message.to_string(),
        }
    }

    pub fn load(&self, request: &CompletionRequest) -> Result<Option<Completion>, ClientError> {
        let key = Self::key(request);
        let path = self.path_for(&key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(self.err(&path, e)),
        };
        let record: FixtureRecord = serde_json::from_slice(&bytes).map_err(|e| self.err(&path, e))?;
        if record.request != *request {
            return Err(self.err(&path, "stored request does not match its key"));
        }
        Ok(Some(record.completion))
    }

    pub fn save(&self, request: &CompletionRequest, completion: &Completion) -> Result<PathBuf, ClientError> {
        let key = Self::key(request);
        let path = self.path_for(&key);
        let record = FixtureRecord {
            key,
            request: request.clone(),
            completion: completion.clone(),
        };
        let json = serde_json::to_vec_pretty(&record).expect("fixture serializes");
        let _guard = self.write_lock.lock().unwrap_or_else(|e| e.into_inner());
        fs::create_dir_all(&self.dir).map_err(|e| self.err(&self.dir, e))?;
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, json).map_err(|e| self.err(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| self.err(&path, e))?;
        Ok(path)
    }
}

/// Serves completions from the fixture store only.
pub struct ReplayBackend {
    store: FixtureStore,
}

impl ReplayBackend {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            store: FixtureStore::new(dir),
        }
    }
}

impl CompletionBackend for ReplayBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ClientError> {
        self.store.load(request)?.ok_or_else(|| ClientError::ReplayMiss {
            key: FixtureStore::key(request),
        })
    }

    fn kind(&self) -> &'static str {
        "replay"
    }
}

/// Passes requests through to an inner backend and persists every reply.
pub struct RecordingBackend<B> {
    inner: B,
    store: FixtureStore,
}

impl<B: CompletionBackend> RecordingBackend<B> {
    pub fn new(inner: B, dir: impl Into<PathBuf>) -> Self {
        Self {
            inner,
            store: FixtureStore::new(dir),
        }
    }
}

impl<B: CompletionBackend> CompletionBackend for RecordingBackend<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ClientError> {
        let completion = self.inner.complete(request)?;
        self.store.save(request, &completion)?;
        Ok(completion)
    }

    fn kind(&self) -> &'static str {
        self.inner.kind()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FixtureMode {
    Record,
    Replay,
}

/// Build a fixture-backed backend. Record mode needs the live (or
/// simulated) backend to pass through to; replay mode ignores it.
pub fn record_and_replay(
    mode: FixtureMode,
    store: impl Into<PathBuf>,
    inner: Option<Arc<dyn CompletionBackend>>,
) -> Result<Arc<dyn CompletionBackend>, ClientError> {
    match mode {
        FixtureMode::Replay => Ok(Arc::new(ReplayBackend::new(store))),
        FixtureMode::Record => {
            let inner = inner.ok_or_else(|| {
                ClientError::InvalidParams("record mode needs a backend to record from".into())
            })?;
            Ok(Arc::new(RecordingBackend::new(inner, store)))
        }
    }
}
