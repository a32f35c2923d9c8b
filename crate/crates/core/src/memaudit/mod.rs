//! Memorization screen: nearest real/synthetic pairs by cosine similarity,
//! side-by-side review composites, and the dual-review verdict log.

mod bundle;
mod search;
mod verdict;

pub use bundle::{build_review_bundle, compose_pair, BundleRecord, INDEX_FILE};
pub use search::{cosine_sim, top_k_pairs, SimilarPair};
pub use verdict::{AuditSummary, AuditVerdict, Verdict, VerdictLog, REVIEWERS_PER_PAIR};
