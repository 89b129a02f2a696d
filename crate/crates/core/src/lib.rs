//! Time-series N-1 contingency power flow with machine-learning surrogates.
//!
//! The pipeline runs in stages: [`contingency`] sweeps every (case, step)
//! pair through the AC solver in [`powerflow`], [`dataset`] turns the
//! results into supervised learning problems, [`models`] trains surrogates
//! and [`eval`] scores how well they flag critical states.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod contingency;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod grid;
pub mod models;
pub mod pipeline;
pub mod powerflow;

pub use error::{Error, Result};
