//! Zero-trust federated learning for wind power imputation.
//!
//! This crate holds the allocation-only core: parameter containers and their
//! canonical hashing, differential-privacy perturbation with Schnorr proofs of
//! seed knowledge, compressed authenticated transport, trust-aware robust
//! aggregation, the attention seq2seq imputation model, hybrid missing-data
//! masking, the in-memory protocol simulator and its evaluation metrics.
//!
//! Nothing here touches the filesystem; the `ztfed` crate layers IO, file
//! formats and the command line on top.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod channel;
pub mod data;
pub mod dp;
pub mod error;
pub mod eval;
mod math;
pub mod model;
pub mod nizk;
pub mod orchestrator;
pub mod params;
pub mod rng;
pub mod trust;

pub use error::{Error, Result};
pub use params::{LayerSpec, ModelParams, ParamDigest};
