use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use super::{io_err, sort_records, LemmaRecord, LemmaStatus, StoreError};

pub const DATASET_FORMAT: &str = "drp-lemmas/1";

/// Keys of one dataset line, in serialization order.
pub const DATASET_KEYS: [&str; 9] = [
    "problem_id",
    "name",
    "statement",
    "digest",
    "status",
    "proof",
    "provenance",
    "verification",
    "created_at",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: String,
    pub problem_count: usize,
    pub record_count: usize,
    pub status_counts: BTreeMap<LemmaStatus, usize>,
    /// SHA-256 of the record file, hex.
    pub sha256: String,
}

impl DatasetManifest {
    fn describe(records: &[LemmaRecord], bytes: &[u8]) -> Self {
        let mut status_counts: BTreeMap<LemmaStatus, usize> =
            LemmaStatus::ALL.iter().map(|s| (*s, 0)).collect();
        for r in records {
            *status_counts.entry(r.status).or_default() += 1;
        }
        DatasetManifest {
            format_version: DATASET_FORMAT.to_string(),
            problem_count: records
                .iter()
                .map(|r| r.problem_id.as_str())
                .collect::<BTreeSet<_>>()
                .len(),
            record_count: records.len(),
            status_counts,
            sha256: hex::encode(Sha256::digest(bytes)),
        }
    }
}

/// `lemmas.jsonl` → `lemmas.manifest.json`.
pub fn manifest_path(dataset: &Path) -> PathBuf {
    dataset.with_extension("manifest.json")
}

fn encode(records: &[LemmaRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("record serializes");
        out.push(b'\n');
    }
    out
}

pub(super) fn write(path: &Path, records: &[LemmaRecord]) -> Result<DatasetManifest, StoreError> {
    let mut records = records.to_vec();
    sort_records(&mut records);
    let bytes = encode(&records);
    let manifest = DatasetManifest::describe(&records, &bytes);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, &bytes).map_err(io_err(path))?;
    let mpath = manifest_path(path);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&mpath, text).map_err(io_err(&mpath))?;
    Ok(manifest)
}

fn parse_line(line: &str, number: usize) -> Result<LemmaRecord, StoreError> {
    let schema = |reason: String| StoreError::Schema {
        line: number,
        reason,
    };
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| schema(format!("not JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| schema("not a JSON object".into()))?;
    let keys: BTreeSet<&str> = obj.keys().map(String::as_str).collect();
    let expected: BTreeSet<&str> = DATASET_KEYS.into_iter().collect();
    if keys != expected {
        return Err(schema(format!(
            "keys {:?} differ from {:?}",
            keys, DATASET_KEYS
        )));
    }
    let record: LemmaRecord = serde_json::from_value(value).map_err(|e| schema(e.to_string()))?;
    record.validate().map_err(|e| schema(e.to_string()))?;
    Ok(record)
}

pub(super) fn read(path: &Path) -> Result<Vec<LemmaRecord>, StoreError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mpath = manifest_path(path);
    let mtext = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&mtext).map_err(|e| StoreError::Manifest(e.to_string()))?;
    if manifest.format_version != DATASET_FORMAT {
        return Err(StoreError::Manifest(format!(
            "unsupported format `{}`",
            manifest.format_version
        )));
    }
    let actual = hex::encode(Sha256::digest(&bytes));
    if actual != manifest.sha256 {
        return Err(StoreError::ChecksumMismatch {
            expected: manifest.sha256,
            actual,
        });
    }
    let text = std::str::from_utf8(&bytes).map_err(|e| StoreError::Schema {
        line: 1 + bytes[..e.valid_up_to()]
            .iter()
            .filter(|b| **b == b'\n')
            .count(),
        reason: "invalid UTF-8".into(),
    })?;
    let records = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_line(l, i + 1))
        .collect::<Result<Vec<_>, _>>()?;
    let recount = DatasetManifest::describe(&records, &bytes);
    if recount != manifest {
        return Err(StoreError::Manifest(format!(
            "counts {:?} / {} records do not match manifest",
            recount.status_counts, recount.record_count
        )));
    }
    Ok(records)
}
