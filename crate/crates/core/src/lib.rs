//! Cleansing and validation toolkit for conditioned semantic textual similarity
//! (C-STS) datasets.
//!
//! The crate is organised as a batch pipeline:
//!
//! - [`corpus`]: instance/dataset model, JSONL and CSV I/O, seeded splits.
//! - [`condition_audit`]: deterministic condition analysis (categories,
//!   imbalance, stopword stripping, phrasing checks).
//! - [`overlap`]: exact train/test overlap detection.
//! - [`annotator`]: prompt rendering and LLM-driven condition rewriting and
//!   rating, with caching, retries and transcript replay.
//! - [`aggregate`]: mean-and-round fusion of human and machine ratings.
//! - [`agreement`]: Spearman, Cohen's kappa, Krippendorff's alpha, confusion
//!   matrices and paired bootstrap significance.
//! - [`snpro`]: the supervised projection head used to score datasets.
//! - [`cli`]: command-line orchestration and run manifests.

pub mod aggregate;
pub mod agreement;
pub mod annotator;
pub mod cli;
pub mod condition_audit;
pub mod corpus;
mod error;
pub mod hashing;
pub mod overlap;
pub mod snpro;

pub use error::{Error, Result};
