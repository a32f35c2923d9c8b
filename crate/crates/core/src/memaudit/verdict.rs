use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;

/// Independent reviewers required per pair.
pub const REVIEWERS_PER_PAIR: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    ExplicitMemorization,
    NotMemorized,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditVerdict {
    pub rank: usize,
    pub reviewer_id: String,
    pub verdict: Verdict,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AuditSummary {
    pub pairs: usize,
    pub fully_reviewed: usize,
    /// Ranks where at least one reviewer saw explicit memorization.
    pub flagged: Vec<usize>,
    /// Ranks where the two reviewers disagree.
    pub disagreements: Vec<usize>,
}

/// Append-only verdict log for a fixed set of pair ranks.
#[derive(Debug)]
pub struct VerdictLog {
    path: PathBuf,
    ranks: BTreeSet<usize>,
    verdicts: Vec<AuditVerdict>,
}

impl VerdictLog {
    /// Opens `path`, replaying any verdicts already recorded.
    pub fn open(path: impl Into<PathBuf>, ranks: impl IntoIterator<Item = usize>) -> Result<Self> {
        let path = path.into();
        let mut log = Self {
            path: path.clone(),
            ranks: ranks.into_iter().collect(),
            verdicts: Vec::new(),
        };
        if path.exists() {
            for v in jsonl::read::<AuditVerdict>(&path)? {
                log.check(&v)?;
                log.verdicts.push(v);
            }
        }
        Ok(log)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn verdicts(&self) -> &[AuditVerdict] {
        &self.verdicts
    }

    fn check(&self, v: &AuditVerdict) -> Result<()> {
        let mut bad = Vec::new();
        if !self.ranks.contains(&v.rank) {
            bad.push("rank".to_string());
        }
        if v.reviewer_id.trim().is_empty() {
            bad.push("reviewer_id".to_string());
        }
        if !bad.is_empty() {
            return Err(Error::Validation(bad));
        }
        let existing: Vec<&AuditVerdict> = self.verdicts.iter().filter(|x| x.rank == v.rank).collect();
        if existing.iter().any(|x| x.reviewer_id == v.reviewer_id) {
            return Err(Error::Conflict(format!("{} already reviewed pair {}", v.reviewer_id, v.rank)));
        }
        if existing.len() >= REVIEWERS_PER_PAIR {
            return Err(Error::Conflict(format!("pair {} already has {REVIEWERS_PER_PAIR} verdicts", v.rank)));
        }
        Ok(())
    }

    pub fn record(&mut self, v: AuditVerdict) -> Result<()> {
        self.check(&v)?;
        jsonl::append(&self.path, &v)?;
        self.verdicts.push(v);
        Ok(())
    }

    pub fn summary(&self) -> AuditSummary {
        let mut by_rank: BTreeMap<usize, Vec<Verdict>> = self.ranks.iter().map(|&r| (r, Vec::new())).collect();
        for v in &self.verdicts {
            by_rank.entry(v.rank).or_default().push(v.verdict);
        }
        let mut s = AuditSummary {
            pairs: self.ranks.len(),
            ..Default::default()
        };
        for (rank, vs) in by_rank {
            if vs.len() == REVIEWERS_PER_PAIR {
                s.fully_reviewed += 1;
                if vs[0] != vs[1] {
                    s.disagreements.push(rank);
                }
            }
            if vs.contains(&Verdict::ExplicitMemorization) {
                s.flagged.push(rank);
            }
        }
        s
    }
}
