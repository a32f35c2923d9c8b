//! Synthetic radiograph generation and evaluation.

pub mod diffusion;
pub mod error;
pub mod imaging;
pub mod jsonl;
pub mod memaudit;
pub mod metrics;
pub mod neural;
pub mod pipeline;
pub mod study;
pub mod turing;

pub use error::{Error, Result};
