use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::provider::{RequestKind, VlmProvider, VlmReply, VlmRequest};
use super::VlmError;

/// One line of a replay log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub key: String,
    pub provider_id: String,
    pub kind: RequestKind,
    pub prompt: String,
    pub candidate_ids: Vec<String>,
    pub response: String,
    pub timestamp_ms: u64,
}

/// Wraps a provider and appends every exchange to a JSON-lines log.
pub struct Recorder<P> {
    inner: P,
    out: Mutex<File>,
}

impl<P: VlmProvider> Recorder<P> {
    /// Appends to `path`, creating it if needed.
    pub fn append(inner: P, path: impl AsRef<Path>) -> Result<Self, VlmError> {
        let path = path.as_ref();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| VlmError::Replay(format!("cannot open {}: {e}", path.display())))?;
        Ok(Self {
            inner,
            out: Mutex::new(file),
        })
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: VlmProvider> VlmProvider for Recorder<P> {
    fn provider_id(&self) -> &str {
        self.inner.provider_id()
    }

    fn ask(&self, request: &VlmRequest<'_>) -> Result<VlmReply, VlmError> {
        let reply = self.inner.ask(request)?;
        let entry = ReplayEntry {
            key: request.key(self.inner.provider_id()),
            provider_id: self.inner.provider_id().to_string(),
            kind: request.kind.clone(),
            prompt: request.prompt.clone(),
            candidate_ids: request
                .candidate_ids()
                .iter()
                .map(|s| s.to_string())
                .collect(),
            response: reply.text.clone(),
            timestamp_ms: reply.timestamp_ms,
        };
        let mut line = serde_json::to_string(&entry).expect("entry serializes");
        line.push('\n');
        let mut out = self.out.lock().expect("replay log lock");
        out.write_all(line.as_bytes())
            .and_then(|_| out.flush())
            .map_err(|e| VlmError::Replay(format!("cannot write replay log: {e}")))?;
        Ok(reply)
    }

    fn max_in_flight(&self) -> usize {
        self.inner.max_in_flight()
    }
}

/// A parsed replay log, possibly covering several providers.
#[derive(Debug, Default)]
pub struct ReplayLog {
    entries: HashMap<String, ReplayEntry>,
    providers: Vec<String>,
}

impl ReplayLog {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, VlmError> {
        let path = path.as_ref();
        let file = File::open(path)
            .map_err(|e| VlmError::Replay(format!("cannot open {}: {e}", path.display())))?;
        let mut log = ReplayLog::default();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| VlmError::Replay(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ReplayEntry = serde_json::from_str(&line)
                .map_err(|e| VlmError::Replay(format!("line {}: {e}", n + 1)))?;
            log.insert(entry);
        }
        Ok(log)
    }

    fn insert(&mut self, entry: ReplayEntry) {
        if !self.providers.contains(&entry.provider_id) {
            self.providers.push(entry.provider_id.clone());
        }
        // The first recording of a request wins.
        self.entries.entry(entry.key.clone()).or_insert(entry);
    }

    /// Provider ids in order of first appearance.
    pub fn providers(&self) -> &[String] {
        &self.providers
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// A provider answering as `provider_id` from this log.
    pub fn provider(self: &Arc<Self>, provider_id: &str) -> Result<ReplayProvider, VlmError> {
        if !self.providers.iter().any(|p| p == provider_id) {
            return Err(VlmError::Replay(format!(
                "log has no entries for provider {provider_id:?}"
            )));
        }
        Ok(ReplayProvider {
            log: self.clone(),
            id: provider_id.to_string(),
        })
    }
}

/// Answers requests from a recorded log; a request that was never recorded
/// is an error, so replays cannot silently diverge.
pub struct ReplayProvider {
    log: Arc<ReplayLog>,
    id: String,
}

impl ReplayProvider {
    /// Loads `path` and replays its only (or first) provider.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, VlmError> {
        let log = Arc::new(ReplayLog::load(path)?);
        let id = log
            .providers()
            .first()
            .cloned()
            .ok_or_else(|| VlmError::Replay("replay log is empty".into()))?;
        log.provider(&id)
    }
}

impl VlmProvider for ReplayProvider {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn ask(&self, request: &VlmRequest<'_>) -> Result<VlmReply, VlmError> {
        let key = request.key(&self.id);
        let entry = self.log.entries.get(&key).ok_or_else(|| {
            VlmError::Replay(format!(
                "no recorded response for {:?} request {key}",
                request.kind
            ))
        })?;
        Ok(VlmReply {
            text: entry.response.clone(),
            timestamp_ms: entry.timestamp_ms,
        })
    }

    fn max_in_flight(&self) -> usize {
        // Replays are local lookups.
        16
    }
}
