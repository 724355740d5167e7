//! Multimodal product retrieval benchmark engine.
//!
//! * [`store`]: versioned binary embedding files with JSON sidecars
//! * [`similarity`]: deterministic cosine scoring, ranking, InfoNCE
//! * [`metrics`]: Recall@K, CMC and the discriminative gap
//! * [`efficiency`]: accuracy-per-parameter densities and tiers
//! * [`analysis`]: deltas, resolution pairs, leaderboards
//! * [`reproduce`]: rebuilds the published comparison tables
//! * [`fixtures`]: seeded synthetic embedding pairs
//! * [`caption`]: LLM caption generation and auditing

pub mod analysis;
pub mod caption;
pub mod efficiency;
pub mod fixtures;
pub mod metrics;
pub mod report;
pub mod reproduce;
pub mod similarity;
pub mod store;
