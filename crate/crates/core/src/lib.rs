//! Data-to-text toolkit: structured-input ingestion, linearization, BPE
//! tokenization, a miniature seq2seq transformer, training and evaluation.

pub mod error;
pub mod experiment;
pub mod ingest;
pub mod linearize;
pub mod metrics;
pub mod report;
pub mod seq2seq;
pub mod tokenizer;
pub mod train;
pub mod types;

pub use error::{Error, Result};
pub use types::*;
