use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Facing, GrayImage, ImageMeta, Origin};
use crate::error::{Error, Result};
use crate::jsonl;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TriageStatus {
    #[default]
    Pending,
    Accepted,
    Rejected,
}

/// One manifest line. `path` is relative to the manifest's directory unless absolute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub source_id: String,
    pub path: PathBuf,
    pub origin: Origin,
    #[serde(default)]
    pub checkpoint: Option<u32>,
    #[serde(default)]
    pub facing: Facing,
    #[serde(default)]
    pub inverted_flag: Option<bool>,
    #[serde(default)]
    pub triage_status: TriageStatus,
    #[serde(default)]
    pub reject_reason: Option<String>,
    #[serde(default)]
    pub seed: u64,
}

impl ManifestEntry {
    pub fn meta(&self) -> ImageMeta {
        ImageMeta {
            source_id: self.source_id.clone(),
            origin: self.origin,
            checkpoint: self.checkpoint,
            facing: self.facing,
            inverted_flag: self.inverted_flag,
            needs_triage: false,
        }
    }

    pub fn from_image(img: &GrayImage, path: impl Into<PathBuf>, seed: u64) -> Self {
        Self {
            source_id: img.meta.source_id.clone(),
            path: path.into(),
            origin: img.meta.origin,
            checkpoint: img.meta.checkpoint,
            facing: img.meta.facing,
            inverted_flag: img.meta.inverted_flag,
            triage_status: TriageStatus::Pending,
            reject_reason: None,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub seed: u64,
    /// Directory that relative entry paths resolve against.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>, seed: u64, root: impl Into<PathBuf>) -> Result<Self> {
        let m = Self {
            entries,
            seed,
            root: root.into(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.source_id.as_str()) {
                return Err(Error::invalid(format!("duplicate source_id {}", e.source_id)));
            }
            if e.triage_status == TriageStatus::Rejected
                && e.reject_reason.as_deref().is_none_or(|r| r.trim().is_empty())
            {
                return Err(Error::invalid(format!(
                    "rejected entry {} has no reject_reason",
                    e.source_id
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let entries: Vec<ManifestEntry> = jsonl::read(path)?;
        let seed = entries.first().map(|e| e.seed).unwrap_or(0);
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(entries, seed, root)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        jsonl::write(path, &self.entries)
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.root.join(&entry.path)
        }
    }

    /// Entries still eligible for downstream use (everything not rejected).
    pub fn usable(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries
            .iter()
            .filter(|e| e.triage_status != TriageStatus::Rejected)
    }

    pub fn load_image(&self, entry: &ManifestEntry) -> Result<GrayImage> {
        super::load(self.resolve(entry), entry.meta())
    }

    pub fn load_usable_images(&self) -> Result<Vec<GrayImage>> {
        self.usable().map(|e| self.load_image(e)).collect()
    }

    pub fn count(&self, status: TriageStatus) -> usize {
        self.entries.iter().filter(|e| e.triage_status == status).count()
    }
}
