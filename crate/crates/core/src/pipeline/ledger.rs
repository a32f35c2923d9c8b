use std::fs::{File, OpenOptions};
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imaging::{DatasetManifest, TriageStatus};
use crate::jsonl;

/// Image accounting for one manifest. `accepted` counts every image not
/// rejected; `unreviewed` is the part of it nobody has triaged yet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ImageCounts {
    pub generated: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub unreviewed: usize,
}

impl ImageCounts {
    pub fn of(manifest: &DatasetManifest) -> Self {
        let rejected = manifest.count(TriageStatus::Rejected);
        Self {
            generated: manifest.entries.len(),
            accepted: manifest.entries.len() - rejected,
            rejected,
            unreviewed: manifest.count(TriageStatus::Pending),
        }
    }

    pub fn reconciles(&self) -> bool {
        self.generated == self.accepted + self.rejected && self.unreviewed <= self.accepted
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub inputs_digest: String,
    pub outputs_digest: String,
    pub seed: u64,
    pub started: String,
    pub finished: String,
    #[serde(default)]
    pub counts: Option<ImageCounts>,
}

/// Append-only JSON Lines log of pipeline stages.
#[derive(Debug, Clone)]
pub struct RunLedger {
    path: PathBuf,
}

impl RunLedger {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, record: &StageRecord) -> Result<()> {
        if let Some(c) = record.counts {
            if !c.reconciles() {
                return Err(Error::Numerical(format!(
                    "stage {}: counts do not reconcile ({c:?})",
                    record.stage
                )));
            }
        }
        if let Some(dir) = self.path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        jsonl::append(&self.path, record)
    }

    pub fn records(&self) -> Result<Vec<StageRecord>> {
        if !self.path.exists() {
            return Ok(Vec::new());
        }
        jsonl::read(&self.path)
    }
}

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        let mut children: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(path, err)))
            .collect::<Result<_>>()?;
        children.sort();
        for c in children {
            collect_files(&c, out)?;
        }
    } else {
        out.push(path.to_path_buf());
    }
    Ok(())
}

/// SHA-256 over the relative names and bytes of every file under `paths`,
/// in sorted order. Missing paths hash as their name only.
pub fn digest_paths(paths: &[&Path]) -> Result<String> {
    let mut h = Sha256::new();
    for root in paths {
        let mut files = Vec::new();
        if root.exists() {
            collect_files(root, &mut files)?;
        }
        h.update(root.to_string_lossy().as_bytes());
        h.update([0]);
        for f in files {
            h.update(f.strip_prefix(root).unwrap_or(&f).to_string_lossy().as_bytes());
            h.update([0]);
            let mut buf = Vec::new();
            File::open(&f)
                .and_then(|mut file| file.read_to_end(&mut buf))
                .map_err(|e| Error::io(&f, e))?;
            h.update((buf.len() as u64).to_le_bytes());
            h.update(&buf);
        }
    }
    Ok(hex::encode(h.finalize()))
}

pub const LOCK_FILE: &str = ".synthrad.lock";

/// Exclusive per-directory stage lock, released on drop.
#[derive(Debug)]
pub struct StageLock {
    path: PathBuf,
}

impl StageLock {
    pub fn acquire(dir: &Path, stage: &str) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write;
                let _ = writeln!(f, "{stage} {}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                let holder = std::fs::read_to_string(&path).unwrap_or_default();
                Err(Error::Conflict(format!(
                    "{} is locked by another stage ({}); remove {} if that run died",
                    dir.display(),
                    holder.trim(),
                    path.display()
                )))
            }
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for StageLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(counts: Option<ImageCounts>) -> StageRecord {
        StageRecord {
            stage: "s".into(),
            inputs_digest: String::new(),
            outputs_digest: String::new(),
            seed: 1,
            started: "a".into(),
            finished: "b".into(),
            counts,
        }
    }

    #[test]
    fn ledger_round_trip_and_reconciliation() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = RunLedger::new(dir.path().join("l/ledger.jsonl"));
        assert!(ledger.records().unwrap().is_empty());
        let ok = ImageCounts { generated: 10, accepted: 6, rejected: 4, unreviewed: 0 };
        ledger.append(&record(Some(ok))).unwrap();
        let bad = ImageCounts { generated: 10, accepted: 6, rejected: 3, unreviewed: 0 };
        assert!(ledger.append(&record(Some(bad))).is_err());
        assert_eq!(ledger.records().unwrap(), vec![record(Some(ok))]);
    }

    #[test]
    fn digest_tracks_content() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a"), b"1").unwrap();
        let d1 = digest_paths(&[dir.path()]).unwrap();
        assert_eq!(d1, digest_paths(&[dir.path()]).unwrap());
        std::fs::write(dir.path().join("a"), b"2").unwrap();
        assert_ne!(d1, digest_paths(&[dir.path()]).unwrap());
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let held = StageLock::acquire(dir.path(), "train").unwrap();
        assert!(matches!(StageLock::acquire(dir.path(), "sample"), Err(Error::Conflict(_))));
        drop(held);
        StageLock::acquire(dir.path(), "sample").unwrap();
    }
}
