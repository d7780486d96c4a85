//! Next-episode television viewership forecasting from prior ratings and
//! act-level script scores.
//!
//! The crate covers ingestion ([`corpus`]), feature engineering
//! ([`preprocess`]), a boosted regression-tree learner ([`boosted_trees`]),
//! exact tree Shapley attributions ([`shap_explain`]), rolling and nested
//! selection forecasting protocols ([`forecast_protocols`]), show similarity
//! ([`similarity`]) and a seeded synthetic corpus generator ([`synthgen`]).

pub mod boosted_trees;
pub mod corpus;
pub mod preprocess;
pub mod forecast_protocols;
pub mod shap_explain;
pub mod similarity;
pub mod synthgen;
