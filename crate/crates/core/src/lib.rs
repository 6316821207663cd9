//! Library behind the `latte` pipeline: event-sequence datasets, behavioral
//! summaries, description/embedding clients (live or mocked), a GRU sequence
//! encoder pretrained with a subsequence-contrastive objective, cross-modal
//! contrastive alignment against frozen text embeddings, and a downstream
//! evaluation harness with a throughput figure-of-merit report.

pub mod alignment;
pub mod cli;
pub mod clients;
pub mod data_model;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod math;
pub mod summarizer;

pub use error::{Error, Result};
