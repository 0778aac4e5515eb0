//! Annotation task store: lease-based task serving, validated submissions,
//! and a crash-safe judgment log.
//!
//! Accepted submissions are appended to `judgments.log` (one JSON object per
//! line, fsynced) and a full `snapshot.json` is rewritten every
//! `snapshot_every` submissions. Opening a store loads the snapshot and
//! replays the log lines written after it.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Conversation, Document, EvidenceSpan, FieldError, Grade, Judgment};
use crate::pooling::{self, ExportReport, PoolEntry};

const LOG_FILE: &str = "judgments.log";
const SNAPSHOT_FILE: &str = "snapshot.json";
const SNAPSHOT_VERSION: u32 = 1;

/// Seconds since the Unix epoch.
pub trait Clock: Send + Sync {
    fn now(&self) -> u64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs())
    }
}

/// Clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start: u64) -> Self {
        ManualClock(AtomicU64::new(start))
    }

    pub fn advance(&self, by: Duration) {
        self.0.fetch_add(by.as_secs(), Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreConfig {
    /// Workers required per conversation.
    pub replication: usize,
    pub lease: Duration,
    pub snapshot_every: usize,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            replication: 3,
            lease: Duration::from_secs(30 * 60),
            snapshot_every: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocSummary {
    pub doc_id: String,
    pub title: String,
    pub first_sentence: String,
}

/// One conversation's pool as served to a worker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitTask {
    pub worker_id: String,
    pub conversation: Conversation,
    pub documents: Vec<DocSummary>,
    pub required_judgments: usize,
    pub lease_expires_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocJudgment {
    pub doc_id: String,
    pub label: Grade,
    #[serde(default)]
    pub evidence: Vec<EvidenceSpan>,
}

/// A worker's complete answer for one conversation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitSubmission {
    pub worker_id: String,
    pub conversation_id: String,
    pub summary: String,
    pub judgments: Vec<DocJudgment>,
}

impl HitSubmission {
    pub fn to_judgments(&self) -> impl Iterator<Item = Judgment> + '_ {
        self.judgments.iter().map(|j| Judgment {
            worker_id: self.worker_id.clone(),
            conversation_id: self.conversation_id.clone(),
            doc_id: j.doc_id.clone(),
            label: j.label,
            evidence: j.evidence.clone(),
            summary: self.summary.clone(),
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SubmitError {
    #[error("submission rejected: {}", .0.iter().map(|e| format!("{}: {}", e.field, e.reason)).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<FieldError>),
    #[error("worker {worker_id} already submitted conversation {conversation_id}")]
    Duplicate {
        worker_id: String,
        conversation_id: String,
    },
    #[error(transparent)]
    Store(#[from] Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationProgress {
    pub conversation_id: String,
    pub submitted: usize,
    pub leased: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub conversations: usize,
    pub completed: usize,
    pub submissions: usize,
    pub active_leases: usize,
    pub replication: usize,
    pub per_conversation: Vec<ConversationProgress>,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    format_version: u32,
    log_lines: usize,
    submissions: Vec<HitSubmission>,
}

struct Lease {
    worker_id: String,
    expires_at: u64,
}

#[derive(Default)]
struct State {
    /// Accepted submissions in acceptance order.
    submissions: Vec<HitSubmission>,
    by_conversation: HashMap<String, HashSet<String>>,
    leases: HashMap<String, Vec<Lease>>,
    log: Option<File>,
    log_lines: usize,
    since_snapshot: usize,
}

impl State {
    fn record(&mut self, s: HitSubmission) {
        self.by_conversation
            .entry(s.conversation_id.clone())
            .or_default()
            .insert(s.worker_id.clone());
        if let Some(leases) = self.leases.get_mut(&s.conversation_id) {
            leases.retain(|l| l.worker_id != s.worker_id);
        }
        self.submissions.push(s);
    }

    fn has_submitted(&self, conversation: &str, worker: &str) -> bool {
        self.by_conversation
            .get(conversation)
            .is_some_and(|w| w.contains(worker))
    }

    fn submitted(&self, conversation: &str) -> usize {
        self.by_conversation.get(conversation).map_or(0, HashSet::len)
    }
}

pub struct AnnotationStore {
    pools: Vec<PoolEntry>,
    conversations: HashMap<String, Conversation>,
    documents: HashMap<String, DocSummary>,
    config: StoreConfig,
    clock: Box<dyn Clock>,
    dir: Option<PathBuf>,
    state: Mutex<State>,
}

impl AnnotationStore {
    /// Creates a store. Every pooled conversation must be present in
    /// `conversations`; `documents` supplies titles and first sentences
    /// where available. With `dir`, judgments are persisted there and any
    /// existing log is replayed.
    pub fn open(
        pools: Vec<PoolEntry>,
        conversations: Vec<Conversation>,
        documents: &[Document],
        config: StoreConfig,
        clock: Box<dyn Clock>,
        dir: Option<&Path>,
    ) -> Result<Self> {
        if config.replication == 0 {
            return Err(Error::InvalidArgument("replication must be >= 1".into()));
        }
        let conversations: HashMap<String, Conversation> =
            conversations.into_iter().map(|c| (c.id.clone(), c)).collect();
        let mut seen = HashSet::new();
        for p in &pools {
            p.validate()?;
            if !seen.insert(&p.conversation_id) {
                return Err(Error::validation(format!("conversation {} pooled twice", p.conversation_id)));
            }
            if !conversations.contains_key(&p.conversation_id) {
                return Err(Error::validation(format!(
                    "pooled conversation {} missing from conversations",
                    p.conversation_id
                )));
            }
        }
        let pooled: HashSet<&str> = pools.iter().flat_map(|p| p.doc_ids.iter().map(String::as_str)).collect();
        let documents = documents
            .iter()
            .filter(|d| pooled.contains(d.doc_id.as_str()))
            .map(|d| {
                (
                    d.doc_id.clone(),
                    DocSummary {
                        doc_id: d.doc_id.clone(),
                        title: d.title.clone(),
                        first_sentence: d.first_sentence.clone(),
                    },
                )
            })
            .collect();
        let mut state = State::default();
        if let Some(dir) = dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            load(dir, &mut state)?;
            let path = dir.join(LOG_FILE);
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            state.log = Some(file);
        }
        Ok(AnnotationStore {
            pools,
            conversations,
            documents,
            config,
            clock,
            dir: dir.map(Path::to_path_buf),
            state: Mutex::new(state),
        })
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn task(&self, pool: &PoolEntry, worker: &str, expires_at: u64) -> HitTask {
        HitTask {
            worker_id: worker.to_string(),
            conversation: self.conversations[&pool.conversation_id].clone(),
            documents: pool
                .doc_ids
                .iter()
                .map(|d| {
                    self.documents.get(d).cloned().unwrap_or_else(|| DocSummary {
                        doc_id: d.clone(),
                        title: d.clone(),
                        first_sentence: String::new(),
                    })
                })
                .collect(),
            required_judgments: self.config.replication,
            lease_expires_at: expires_at,
        }
    }

    /// Claims the next conversation for `worker`, or returns the one it
    /// already holds. Conversations the worker has submitted are never
    /// served to it again.
    pub fn next_task(&self, worker: &str) -> Result<Option<HitTask>> {
        if worker.trim().is_empty() {
            return Err(Error::InvalidArgument("worker id is required".into()));
        }
        let now = self.clock.now();
        let mut state = self.lock();
        for leases in state.leases.values_mut() {
            leases.retain(|l| l.expires_at > now);
        }
        for pool in &self.pools {
            let conv = &pool.conversation_id;
            if let Some(l) = state
                .leases
                .get(conv)
                .and_then(|ls| ls.iter().find(|l| l.worker_id == worker))
            {
                return Ok(Some(self.task(pool, worker, l.expires_at)));
            }
        }
        for pool in &self.pools {
            let conv = &pool.conversation_id;
            if state.has_submitted(conv, worker) {
                continue;
            }
            let leased = state.leases.get(conv).map_or(0, Vec::len);
            if state.submitted(conv) + leased >= self.config.replication {
                continue;
            }
            let expires_at = now + self.config.lease.as_secs();
            state.leases.entry(conv.clone()).or_default().push(Lease {
                worker_id: worker.to_string(),
                expires_at,
            });
            return Ok(Some(self.task(pool, worker, expires_at)));
        }
        Ok(None)
    }

    fn validate(&self, s: &HitSubmission) -> std::result::Result<HitSubmission, Vec<FieldError>> {
        let mut errors = Vec::new();
        if s.worker_id.trim().is_empty() {
            errors.push(FieldError::new("worker_id", "worker id is required"));
        }
        let Some(pool) = self.pools.iter().find(|p| p.conversation_id == s.conversation_id) else {
            errors.push(FieldError::new("conversation_id", "unknown conversation"));
            return Err(errors);
        };
        let conversation = &self.conversations[&s.conversation_id];
        let mut seen = HashSet::new();
        for j in &s.judgments {
            if !pool.doc_ids.contains(&j.doc_id) {
                errors.push(FieldError::new(format!("judgments[{}]", j.doc_id), "document is not in the pool"));
            } else if !seen.insert(j.doc_id.as_str()) {
                errors.push(FieldError::new(format!("judgments[{}]", j.doc_id), "document judged twice"));
            }
        }
        for d in &pool.doc_ids {
            if !seen.contains(d.as_str()) {
                errors.push(FieldError::new(format!("judgments[{d}]"), "missing judgment"));
            }
        }
        let mut summary_checked = false;
        for j in s.to_judgments() {
            if let Err(mut e) = j.validate(conversation) {
                if summary_checked {
                    e.retain(|f| f.field != "summary");
                }
                errors.extend(e);
            }
            summary_checked = true;
        }
        if s.judgments.is_empty() && s.summary.split_whitespace().count() < crate::model::MIN_SUMMARY_WORDS {
            errors.push(FieldError::new("summary", "summary too short"));
        }
        if !errors.is_empty() {
            return Err(errors);
        }
        let mut accepted = s.clone();
        for j in &mut accepted.judgments {
            j.evidence = pooling::snap_evidence(conversation, &j.evidence);
        }
        Ok(accepted)
    }

    /// Validates and records a submission. Evidence spans are widened to
    /// whole sentences before being stored.
    pub fn submit(&self, submission: &HitSubmission) -> std::result::Result<(), SubmitError> {
        let accepted = self.validate(submission).map_err(SubmitError::Invalid)?;
        let mut state = self.lock();
        if state.has_submitted(&accepted.conversation_id, &accepted.worker_id) {
            return Err(SubmitError::Duplicate {
                worker_id: accepted.worker_id,
                conversation_id: accepted.conversation_id,
            });
        }
        if let Some(file) = state.log.as_mut() {
            let mut line = serde_json::to_vec(&accepted).expect("submission serializes");
            line.push(b'\n');
            let path = self.dir.as_ref().expect("log implies dir").join(LOG_FILE);
            file.write_all(&line).map_err(|e| Error::io(&path, e))?;
            file.sync_data().map_err(|e| Error::io(&path, e))?;
            state.log_lines += 1;
        }
        state.record(accepted);
        state.since_snapshot += 1;
        if state.since_snapshot >= self.config.snapshot_every {
            if let Some(dir) = &self.dir {
                write_snapshot(dir, &state)?;
                state.since_snapshot = 0;
            }
        }
        Ok(())
    }

    /// Writes a snapshot now (no-op for in-memory stores).
    pub fn snapshot(&self) -> Result<()> {
        let mut state = self.lock();
        if let Some(dir) = &self.dir {
            write_snapshot(dir, &state)?;
            state.since_snapshot = 0;
        }
        Ok(())
    }

    pub fn progress(&self) -> Progress {
        let now = self.clock.now();
        let state = self.lock();
        let per_conversation: Vec<ConversationProgress> = self
            .pools
            .iter()
            .map(|p| ConversationProgress {
                conversation_id: p.conversation_id.clone(),
                submitted: state.submitted(&p.conversation_id),
                leased: state
                    .leases
                    .get(&p.conversation_id)
                    .map_or(0, |ls| ls.iter().filter(|l| l.expires_at > now).count()),
            })
            .collect();
        Progress {
            conversations: self.pools.len(),
            completed: per_conversation
                .iter()
                .filter(|c| c.submitted >= self.config.replication)
                .count(),
            submissions: state.submissions.len(),
            active_leases: per_conversation.iter().map(|c| c.leased).sum(),
            replication: self.config.replication,
            per_conversation,
        }
    }

    /// All judgments in submission order.
    pub fn judgments(&self) -> Vec<Judgment> {
        let state = self.lock();
        state.submissions.iter().flat_map(|s| s.to_judgments()).collect()
    }

    pub fn export(&self) -> Result<ExportReport> {
        pooling::export_qrels(&self.judgments(), self.config.replication)
    }
}

fn write_snapshot(dir: &Path, state: &State) -> Result<()> {
    let snap = Snapshot {
        format_version: SNAPSHOT_VERSION,
        log_lines: state.log_lines,
        submissions: state.submissions.clone(),
    };
    let path = dir.join(SNAPSHOT_FILE);
    let tmp = dir.join(format!("{SNAPSHOT_FILE}.tmp"));
    let json = serde_json::to_vec(&snap).expect("snapshot serializes");
    std::fs::write(&tmp, json).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
}

fn load(dir: &Path, state: &mut State) -> Result<()> {
    let snap_path = dir.join(SNAPSHOT_FILE);
    let mut skip = 0;
    if snap_path.exists() {
        let text = std::fs::read_to_string(&snap_path).map_err(|e| Error::io(&snap_path, e))?;
        let snap: Snapshot = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: snap_path.display().to_string(),
            line: e.line(),
            reason: e.to_string(),
        })?;
        if snap.format_version != SNAPSHOT_VERSION {
            return Err(Error::validation(format!(
                "unsupported snapshot version {}",
                snap.format_version
            )));
        }
        skip = snap.log_lines;
        for s in snap.submissions {
            state.record(s);
        }
    }
    let log_path = dir.join(LOG_FILE);
    let mut bytes = match std::fs::read(&log_path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            state.log_lines = skip;
            return Ok(());
        }
        Err(e) => return Err(Error::io(&log_path, e)),
    };
    if bytes.last().is_some_and(|&b| b != b'\n') {
        let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        log::warn!("dropping {} bytes of an unterminated final log line", bytes.len() - keep);
        bytes.truncate(keep);
        let file = OpenOptions::new()
            .write(true)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?;
        file.set_len(keep as u64).map_err(|e| Error::io(&log_path, e))?;
    }
    let mut count = 0;
    for (i, line) in bytes.split(|&b| b == b'\n').enumerate() {
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        count += 1;
        if count <= skip {
            continue;
        }
        let s: HitSubmission = serde_json::from_slice(line).map_err(|e| Error::Parse {
            path: log_path.display().to_string(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        if !state.has_submitted(&s.conversation_id, &s.worker_id) {
            state.record(s);
        }
    }
    state.log_lines = count;
    Ok(())
}
