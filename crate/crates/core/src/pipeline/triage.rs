use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{DatasetManifest, TriageStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriageVerdict {
    pub source_id: String,
    pub decision: Decision,
    #[serde(default)]
    pub reason: Option<String>,
}

/// Applies review verdicts to a copy of `manifest`. Nothing changes unless
/// every verdict is valid.
pub fn triage_apply(manifest: &DatasetManifest, verdicts: &[TriageVerdict]) -> Result<DatasetManifest> {
    let index: HashMap<&str, usize> = manifest
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| (e.source_id.as_str(), i))
        .collect();
    let mut seen = HashSet::new();
    for v in verdicts {
        if !index.contains_key(v.source_id.as_str()) {
            return Err(Error::NotFound(format!("verdict for unknown image {}", v.source_id)));
        }
        if !seen.insert(v.source_id.as_str()) {
            return Err(Error::Conflict(format!("two verdicts for {}", v.source_id)));
        }
        if v.decision == Decision::Reject && v.reason.as_deref().is_none_or(|r| r.trim().is_empty()) {
            return Err(Error::Validation(vec![format!("reason ({})", v.source_id)]));
        }
    }
    let mut out = manifest.clone();
    for v in verdicts {
        let e = &mut out.entries[index[v.source_id.as_str()]];
        match v.decision {
            Decision::Accept => {
                e.triage_status = TriageStatus::Accepted;
                e.reject_reason = None;
            }
            Decision::Reject => {
                e.triage_status = TriageStatus::Rejected;
                e.reject_reason = v.reason.clone();
            }
        }
    }
    out.validate()?;
    Ok(out)
}
