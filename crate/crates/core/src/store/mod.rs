//! Lemma records and run artifacts: an append-only log with an in-memory
//! index rebuilt on open, plus the JSONL dataset format.

mod dataset;
mod record;

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use thiserror::Error;

pub use dataset::{manifest_path, DatasetManifest, DATASET_FORMAT, DATASET_KEYS};
pub(crate) use record::timestamp;
pub use record::{
    InvariantViolation, LemmaRecord, LemmaStatus, Verification, VerificationEvent, ORACLE_STUB,
};

use crate::statement::Digest;

const LOG_FILE: &str = "records.log";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error(transparent)]
    Invariant(#[from] InvariantViolation),
    #[error("status downgrade rejected; stored record is {}", existing.status)]
    StatusDowngrade { existing: Box<LemmaRecord> },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Schema { line: usize, reason: String },
    #[error("checksum mismatch: manifest says {expected}, file hashes to {actual}")]
    ChecksumMismatch { expected: String, actual: String },
    #[error("manifest does not match dataset: {0}")]
    Manifest(String),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

type Key = (String, Digest);

#[derive(Default)]
struct Inner {
    records: BTreeMap<Key, LemmaRecord>,
    log: Option<File>,
    artifacts: BTreeMap<String, Vec<u8>>,
}

/// Thread-safe lemma store. Disk-backed stores keep every accepted write in
/// `records.log`; in-memory stores keep artifacts in memory too.
pub struct LemmaStore {
    root: Option<PathBuf>,
    inner: Mutex<Inner>,
}

impl std::fmt::Debug for LemmaStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LemmaStore")
            .field("root", &self.root)
            .finish()
    }
}

/// What `put_record` did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PutOutcome {
    Inserted,
    Replaced,
    /// Same rank as the stored record: it is kept and the new
    /// verification joins its history.
    Merged,
    Unchanged,
}

/// Result of merging `new` into `existing` under the status rules.
pub(crate) fn merge(
    existing: &LemmaRecord,
    new: &LemmaRecord,
) -> Result<(PutOutcome, LemmaRecord), ()> {
    if existing == new {
        return Ok((PutOutcome::Unchanged, existing.clone()));
    }
    let carry = |mut rec: LemmaRecord| {
        let mut history = existing.verification.history.clone();
        history.push(existing.event());
        history.append(&mut rec.verification.history);
        rec.verification.history = history;
        rec
    };
    match (existing.status.rank(), new.status.rank()) {
        (Some(old), Some(new_rank)) if new_rank < old => Err(()),
        (Some(old), Some(new_rank)) if new_rank == old => {
            let mut kept = existing.clone();
            kept.verification.history.push(new.event());
            Ok((PutOutcome::Merged, kept))
        }
        (Some(2), None) => Err(()),
        _ => Ok((PutOutcome::Replaced, carry(new.clone()))),
    }
}

impl LemmaStore {
    pub fn in_memory() -> Self {
        LemmaStore {
            root: None,
            inner: Mutex::default(),
        }
    }

    /// Opens (creating if needed) the store at `root` and replays its log.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        let log_path = root.join(LOG_FILE);
        let mut records = BTreeMap::new();
        if log_path.exists() {
            let file = File::open(&log_path).map_err(io_err(&log_path))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(io_err(&log_path))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: LemmaRecord =
                    serde_json::from_str(&line).map_err(|e| StoreError::Schema {
                        line: i + 1,
                        reason: e.to_string(),
                    })?;
                records.insert((rec.problem_id.clone(), rec.digest), rec);
            }
        }
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(io_err(&log_path))?;
        Ok(LemmaStore {
            root: Some(root),
            inner: Mutex::new(Inner {
                records,
                log: Some(log),
                artifacts: BTreeMap::new(),
            }),
        })
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Upserts by `(problem_id, digest)` under the monotone status rules.
    pub fn put_record(&self, record: LemmaRecord) -> Result<Digest, StoreError> {
        self.put(record).map(|(digest, _)| digest)
    }

    pub fn put(&self, record: LemmaRecord) -> Result<(Digest, PutOutcome), StoreError> {
        record.validate()?;
        let key = (record.problem_id.clone(), record.digest);
        let mut inner = self.lock();
        let (outcome, stored) = match inner.records.get(&key) {
            None => (PutOutcome::Inserted, record),
            Some(existing) => {
                merge(existing, &record).map_err(|()| StoreError::StatusDowngrade {
                    existing: Box::new(existing.clone()),
                })?
            }
        };
        if outcome == PutOutcome::Unchanged {
            return Ok((key.1, outcome));
        }
        if let Some(log) = inner.log.as_mut() {
            let line = serde_json::to_string(&stored).expect("record serializes");
            let path = self
                .root
                .as_deref()
                .unwrap_or(Path::new(LOG_FILE))
                .join(LOG_FILE);
            writeln!(log, "{line}").map_err(io_err(&path))?;
        }
        inner.records.insert(key.clone(), stored);
        Ok((key.1, outcome))
    }

    pub fn get(&self, problem_id: &str, digest: &Digest) -> Option<LemmaRecord> {
        self.lock()
            .records
            .get(&(problem_id.to_string(), *digest))
            .cloned()
    }

    /// Records matching the filters, ordered by (problem_id, created_at, digest).
    pub fn query(&self, problem_id: Option<&str>, status: Option<LemmaStatus>) -> Vec<LemmaRecord> {
        let mut out: Vec<LemmaRecord> = self
            .lock()
            .records
            .values()
            .filter(|r| problem_id.is_none_or(|p| r.problem_id == p))
            .filter(|r| status.is_none_or(|s| r.status == s))
            .cloned()
            .collect();
        sort_records(&mut out);
        out
    }

    pub fn len(&self) -> usize {
        self.lock().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes a run artifact (raw response, report, source) at `rel` under
    /// the store root, atomically. In-memory stores keep it in memory.
    pub fn write_artifact(&self, rel: &str, bytes: &[u8]) -> Result<(), StoreError> {
        match &self.root {
            None => {
                self.lock()
                    .artifacts
                    .insert(rel.to_string(), bytes.to_vec());
                Ok(())
            }
            Some(root) => {
                let path = root.join(rel);
                if let Some(dir) = path.parent() {
                    fs::create_dir_all(dir).map_err(io_err(dir))?;
                }
                let tmp = path.with_extension("tmp");
                fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
                fs::rename(&tmp, &path).map_err(io_err(&path))
            }
        }
    }

    pub fn read_artifact(&self, rel: &str) -> Option<Vec<u8>> {
        match &self.root {
            None => self.lock().artifacts.get(rel).cloned(),
            Some(root) => fs::read(root.join(rel)).ok(),
        }
    }

    /// Exports every record as JSONL plus a manifest sidecar.
    pub fn export_dataset(&self, path: &Path) -> Result<DatasetManifest, StoreError> {
        let records = self.query(None, None);
        dataset::write(path, &records)
    }

    /// Validates and imports a dataset; returns the number of rows read.
    /// Rows that would downgrade a stored record are skipped.
    pub fn import_dataset(&self, path: &Path) -> Result<usize, StoreError> {
        let records = dataset::read(path)?;
        let count = records.len();
        for rec in records {
            match self.put(rec) {
                Err(StoreError::StatusDowngrade { existing }) => tracing::warn!(
                    problem_id = %existing.problem_id,
                    name = %existing.name,
                    "import skipped a row that would downgrade the stored record"
                ),
                other => {
                    other?;
                }
            }
        }
        Ok(count)
    }
}

pub(crate) fn sort_records(records: &mut [LemmaRecord]) {
    records.sort_by(|a, b| {
        (&a.problem_id, a.created_at, a.digest).cmp(&(&b.problem_id, b.created_at, b.digest))
    });
}
