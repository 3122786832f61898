//! JSON-lines dataset manifests and the evaluation-only sidecar.
//!
//! Loading splits every record into a training view ([`TrainRecord`]), which
//! never carries origin or an unlabeled ground-truth label, and a [`Sidecar`]
//! that keeps those fields. Sidecar reads require an [`EvalAccess`] token
//! and are counted.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SIDECAR_FILE: &str = "sidecar.jsonl";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Labeled,
    Unlabeled,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Real,
    Synthetic,
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub path: String,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<Origin>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
}

/// Training-time view of a record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TrainRecord {
    pub id: String,
    pub path: String,
    pub split: Split,
    /// Present for labeled and test records only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

/// One sidecar line: the hidden fields of a record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SidecarRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<Origin>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
}

/// Capability required to read the sidecar. Only evaluation code mints it.
pub struct EvalAccess(());

impl EvalAccess {
    pub(crate) fn grant() -> Self {
        EvalAccess(())
    }
}

/// Evaluation-only store of origins and hidden labels, keyed by record id.
#[derive(Debug, Default)]
pub struct Sidecar {
    entries: BTreeMap<String, SidecarRecord>,
    reads: AtomicUsize,
}

impl Clone for Sidecar {
    fn clone(&self) -> Self {
        Self {
            entries: self.entries.clone(),
            reads: AtomicUsize::new(self.reads()),
        }
    }
}

impl Sidecar {
    pub fn from_records(records: impl IntoIterator<Item = SidecarRecord>) -> Self {
        Self {
            entries: records.into_iter().map(|r| (r.id.clone(), r)).collect(),
            reads: AtomicUsize::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    /// Number of audited reads so far.
    pub fn reads(&self) -> usize {
        self.reads.load(Ordering::Relaxed)
    }

    pub fn get(&self, id: &str, _access: &EvalAccess) -> Option<&SidecarRecord> {
        self.reads.fetch_add(1, Ordering::Relaxed);
        self.entries.get(id)
    }

    pub fn origin(&self, id: &str, access: &EvalAccess) -> Result<Origin> {
        self.get(id, access)
            .and_then(|r| r.origin)
            .ok_or_else(|| Error::MissingSidecar(id.to_string()))
    }

    fn merge(&mut self, rec: SidecarRecord) {
        let slot = self
            .entries
            .entry(rec.id.clone())
            .or_insert_with(|| SidecarRecord {
                id: rec.id.clone(),
                origin: None,
                label: None,
                generator: None,
            });
        slot.origin = rec.origin.or(slot.origin);
        slot.label = rec.label.or(slot.label);
        if rec.generator.is_some() {
            slot.generator = rec.generator;
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_jsonl(path, self.entries.values())
    }
}

/// A loaded manifest: training views, sidecar, and the directory that
/// record paths are relative to.
#[derive(Clone, Debug)]
pub struct LoadedManifest {
    pub root: PathBuf,
    pub records: Vec<TrainRecord>,
    pub sidecar: Sidecar,
}

impl LoadedManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &TrainRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn resolve(&self, rec: &TrainRecord) -> PathBuf {
        self.root.join(&rec.path)
    }
}

fn validate_record(rec: &ManifestRecord) -> std::result::Result<(), String> {
    if rec.id.is_empty() {
        return Err("empty id".into());
    }
    match rec.split {
        Split::Labeled => {
            if rec.label.is_none() {
                return Err(format!("labeled record `{}` has no label", rec.id));
            }
            if rec.origin == Some(Origin::Synthetic) {
                return Err(format!("labeled record `{}` must be real", rec.id));
            }
        }
        Split::Test => {
            if rec.label.is_none() {
                return Err(format!("test record `{}` has no label", rec.id));
            }
        }
        Split::Unlabeled => {}
    }
    Ok(())
}

/// Split a full record into its training view and sidecar entry.
pub fn split_record(rec: &ManifestRecord) -> (TrainRecord, SidecarRecord) {
    let visible_label = match rec.split {
        Split::Unlabeled => None,
        _ => rec.label,
    };
    let origin = match rec.split {
        Split::Labeled => Some(rec.origin.unwrap_or(Origin::Real)),
        _ => rec.origin,
    };
    (
        TrainRecord {
            id: rec.id.clone(),
            path: rec.path.clone(),
            split: rec.split,
            label: visible_label,
        },
        SidecarRecord {
            id: rec.id.clone(),
            origin,
            label: rec.label,
            generator: rec.generator.clone(),
        },
    )
}

/// Parse full records from a JSON-lines file without splitting them.
pub fn read_records(path: &Path) -> Result<Vec<ManifestRecord>> {
    let file = fs::File::open(path).at(path)?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.at(path)?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        validate_record(&rec).map_err(err)?;
        if !seen.insert(rec.id.clone()) {
            return Err(Error::DuplicateId(rec.id));
        }
        out.push(rec);
    }
    Ok(out)
}

/// Load and validate a JSON-lines manifest.
pub fn load_manifest(path: &Path) -> Result<LoadedManifest> {
    let records = read_records(path)?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let (records, sidecar): (Vec<_>, Vec<_>) = records.iter().map(split_record).unzip();
    Ok(LoadedManifest {
        root,
        records,
        sidecar: Sidecar::from_records(sidecar),
    })
}

/// Load a benchmark directory: `manifest.jsonl` plus `sidecar.jsonl` if present.
pub fn load_benchmark(dir: &Path) -> Result<LoadedManifest> {
    let mut loaded = load_manifest(&dir.join(MANIFEST_FILE))?;
    let sidecar_path = dir.join(SIDECAR_FILE);
    if sidecar_path.exists() {
        let file = fs::File::open(&sidecar_path).at(&sidecar_path)?;
        let ids: HashSet<String> = loaded.records.iter().map(|r| r.id.clone()).collect();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.at(&sidecar_path)?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: SidecarRecord = serde_json::from_str(&line).map_err(|e| Error::Manifest {
                path: sidecar_path.clone(),
                line: i + 1,
                message: e.to_string(),
            })?;
            if !ids.contains(&rec.id) {
                return Err(Error::Manifest {
                    path: sidecar_path.clone(),
                    line: i + 1,
                    message: format!("sidecar id `{}` not in manifest", rec.id),
                });
            }
            loaded.sidecar.merge(rec);
        }
    }
    Ok(loaded)
}

/// Write serializable rows as JSON lines.
pub fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    rows: impl IntoIterator<Item = &'a T>,
) -> Result<()> {
    let mut buf = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut buf, row)?;
        buf.push(b'\n');
    }
    crate::fileio::write_atomic(path, &buf)
}
