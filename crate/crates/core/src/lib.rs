//! Learning low-rank Mahalanobis distances between items from their feature
//! vectors and a graph of related pairs, and using the learned style space
//! for link prediction, clustering, navigation and outfit recommendation.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod catalog;
pub mod cli;
pub mod error;
pub mod eval;
pub mod metric;
pub mod model;
mod rng;
mod reduce;
pub mod recsys;
pub mod sampler;
pub mod stylespace;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
