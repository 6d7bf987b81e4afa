//! Estimators for the perception effect of substituting one word for
//! another in a specific sentence.
//!
//! The crate covers the full pipeline: corpus ingestion and feature
//! construction, candidate substitution pruning, four observational
//! effect estimators (KNN matching, virtual-twin random forest,
//! counterfactual random forest, causal forest), a cross-domain
//! perception classifier, RCT sampling/aggregation and the evaluation
//! metrics, plus a synthetic generator with planted effects for
//! verification.
//!
//! With the default `parallel` feature, per-tree fitting and per-pair
//! estimation run on rayon; results are identical to the sequential
//! build at any thread count.

pub mod candidates;
pub mod causal;
pub mod corpus;
pub mod error;
mod exec;
pub mod eval;
pub mod features;
pub mod forest;
pub mod io;
pub mod linear;
pub mod perception;
pub mod rct;
pub mod synth;

pub mod estimators;

pub use error::{Error, Result};
