//! Locate-then-summarize toolkit for query-based meeting summarization.
//!
//! The pipeline ingests QMSum meetings, locates the transcript span relevant
//! to each query with a small convolutional regressor, summarizes the span,
//! and scores the summary with ROUGE-1/2/L.

pub mod embedding;
pub mod ingest;
pub mod locator;
pub mod matrix;
pub mod numfmt;
pub mod pipeline;
pub mod rouge;
pub mod sidecar;
pub mod span;
pub mod summarizer;
pub mod synthetic;
