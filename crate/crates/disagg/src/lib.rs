//! Disaggregation of coarse hourly urban count data into fine-level counts
//! over a nested geographic hierarchy.
//!
//! The crate covers the whole desk-scale workflow:
//!
//! - [`geo`]: grid-cell geographies, strict nesting, exact aggregation
//!   operators between any pair of levels.
//! - [`data`]: point-record ingestion into hourly [`data::CountFrame`]s,
//!   chronological splits, and a seeded synthetic-city generator.
//! - [`baselines`]: Constant Weighting, Areal Weighting, and Historical
//!   Ratios.
//! - [`autodiff`]: a small reverse-mode tape sufficient for the neural
//!   models, plus an adaptive-moment optimizer and a finite-difference
//!   gradient checker.
//! - [`models`]: feedforward and LSTM disaggregators, plain or chained
//!   through intermediate geographic dimensions.
//! - [`train`]: multi-level objectives with optional reconstruction terms,
//!   mini-batch training with early stopping, and MAE evaluation.
//!
//! The `disagg` command-line tool in this workspace drives these pieces from
//! config files; the book under `book/` walks through the concepts with
//! runnable examples.

pub mod autodiff;
pub mod baselines;
pub mod data;
mod error;
pub mod geo;

pub use error::{Error, Result};
