//! File formats, experiment runner and command line for the zero-trust
//! federated imputation simulator in `ztfed-core`.

pub mod checkpoint;
pub mod cli;
pub mod csvio;
pub mod error;
pub mod experiment;
pub mod report;
pub mod spec;
pub mod sweep;

pub use error::{AppError, AppResult};
