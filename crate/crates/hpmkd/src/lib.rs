//! Knowledge-distillation engine with adaptive configuration, progressive
//! chains, attention-weighted multi-teacher ensembles, loss-driven
//! temperature scheduling, a parallel training pipeline, and a
//! content-addressed cross-experiment cache.

pub mod cache;
pub mod chain;
pub mod data;
pub mod distill;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod forest;
pub mod matrix;
pub mod meta;
pub mod nn;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod stats;
pub mod suite;
pub mod trainer;

pub use error::{Error, Result};
