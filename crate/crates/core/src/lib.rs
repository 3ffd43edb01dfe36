//! Multi-object scene decomposition with pluggable loss terms.
//!
//! The crate covers the whole experimental loop: a synthetic sprite dataset
//! with exact ground truth ([`synthgen`]), the attention + component-VAE
//! model ([`model`]), every loss term as a differentiable function
//! ([`losses`]), segmentation metrics ([`metrics`]), a training loop with
//! convergence-based termination ([`trainer`]) and the multi-seed ablation
//! runner with its statistics and mask-competition probe ([`labrunner`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod labrunner;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod seed;
pub mod synthgen;
pub mod trainer;

pub use error::{LabError, Result};
