//! Cross-document coreference workbench: corpus model, ingestion, candidate
//! generation, the annotation protocol engine, agreement statistics,
//! baselines, evaluation metrics and the durable event store.

pub mod agreement;
pub mod baselines;
pub mod engine;
pub mod evaluation;
pub mod exec;
pub mod hashing;
pub mod ingestion;
pub mod model;
pub mod pairgen;
pub mod store;
