//! Factorized AI/ML inference over multi-way relational joins.
//!
//! The crate is organized around the lifecycle of an inference query:
//!
//! - [`relational`]: columnar tables, equi-joins, histogram statistics.
//! - [`plan`]: binary join trees, push-down decision vectors, availability
//!   sets, plan validation and enumeration.
//! - [`infer`]: the inference kernels (dense layers, bitvector tree scoring,
//!   product quantization, feature scaling) in monolithic and partial form.
//! - [`expr`]: the factorizable expression IR, lineage analysis, unit
//!   extraction and plan rewriting.
//! - [`cost`]: the plan cost function, per-node benefit features, variance
//!   based sensitivity analysis and the logistic benefit predictor.
//! - [`optim`]: exhaustive, greedy and genetic plan search plus the
//!   literature baselines.
//! - [`engine`]: end-to-end execution of rewritten plans, result
//!   verification, synthetic workload generation and benchmarking.

pub mod cost;
pub mod engine;
pub mod error;
pub mod expr;
pub mod infer;
pub mod optim;
pub mod plan;
pub mod relational;

pub use error::{Error, Result};
