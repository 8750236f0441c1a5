//! Paragraph-vector embeddings of time-stamped categorical event records.
//!
//! The pipeline: [`synthgen`] produces event logs, [`corpus`] orders and
//! filters them, [`trainer`] fits an [`embedding::EmbeddingModel`],
//! [`inference`] projects new or truncated records, [`evalkit`] compares the
//! embedded representation against grouped bag-of-words counts under an
//! elastic-net classifier, and [`projector`] draws records onto the first
//! two principal components.

pub mod config;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod evalkit;
pub mod inference;
pub mod projector;
pub mod synthgen;
pub mod trainer;
pub mod util;

pub use error::{Error, Result};
