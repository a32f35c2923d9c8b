//! Configuration, run ledger, triage, and the command-line front end.

mod cli;
mod config;
mod ledger;
mod triage;

pub use cli::{cli_dispatch, Cli, Command, SampleCursor, CURSOR_FILE, LEDGER_FILE, MANIFEST_FILE, QUARTETS_KEY, QUARTETS_PUBLIC};
pub use config::{env_name, parse_kv, PipelineConfig, ENV_PREFIX, KEYS};
pub use ledger::{digest_paths, ImageCounts, RunLedger, StageLock, StageRecord, LOCK_FILE};
pub use triage::{triage_apply, Decision, TriageVerdict};
