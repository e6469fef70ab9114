//! Feed reranking field-experiment platform.
//!
//! Scores posts for eight antidemocratic-attitude and partisan-animosity
//! factors, applies the Reduced/Increased Exposure reranking interventions,
//! schedules in-feed surveys, simulates participants, and estimates
//! treatment effects.

pub mod model;
pub mod scoring;
pub mod seed;
pub mod rerank;
pub mod survey;
pub mod experiment;
pub mod stats;
pub mod pipeline;
pub mod sim;
pub mod store;
pub mod analysis;
pub mod service;
