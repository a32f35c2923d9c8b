//! Blinded study service: per-rater sessions over the quartet set (or the
//! memorization review pairs) with append-only response logs, and its HTTP API.

mod http;
mod service;

pub use http::{router, serve, ApiError, SharedService};
pub use service::{Ack, Mode, NextItem, PairPayload, Progress, Session, StudyFiles, StudyService, StudySetup};
