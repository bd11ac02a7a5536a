//! Quality-diversity experience selection for return-conditioned sequence policies.
//!
//! The pipeline, end to end:
//!
//! 1. [`window_store`] keeps whole episodes and cuts them into fixed-length
//!    trajectory windows carrying discounted return-to-go.
//! 2. [`scoring`] turns a candidate pool of windows into per-window quality
//!    scores (return quantile, MC-dropout uncertainty, stage rarity).
//! 3. [`geometry`] embeds windows with the policy encoder and builds an RBF
//!    similarity matrix with the median-distance bandwidth.
//! 4. [`kernel`] fuses both into `L = Q^{1/2} S Q^{1/2} + λI` and selects a
//!    subset by greedy log-determinant maximisation (with exhaustive and
//!    exact-sampling oracles for verification).
//! 5. [`replay`] mixes the selected subset with the full buffer and attaches
//!    importance weights so the training gradient stays unbiased.
//! 6. [`policy`] is the sequence-model interface with a small linear-softmax
//!    implementation, and [`bench`] runs the full loop and its ablations on a
//!    synthetic multi-stage task.
//!
//! [`cli`] wires all of it to configuration files for the `dpp-replay` binary.

// `!(x > t)` is used deliberately so NaN lands in the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod kernel;
pub mod policy;
pub mod replay;
pub mod rng;
pub mod scoring;
pub mod window_store;

pub use error::{Error, Result};
