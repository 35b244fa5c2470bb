//! Multilinear Dirichlet process mixtures.
//!
//! A Bayesian nonparametric toolkit for data cross-classified by several
//! factor groups. Each combination of factors gets its own random measure,
//! built as a softmax-weighted combination of shared Dirichlet-process basis
//! measures; the weights come from multiplicative interactions of per-factor
//! latent vectors, so the model shares statistical strength across the
//! factor grid while letting every cell mix the bases differently.
//!
//! The crate provides:
//! - the prior itself with a truncated stick-breaking simulator ([`prior`]),
//! - a mixture-of-regressions observation model ([`components`]),
//! - an auxiliary-cluster Gibbs sampler ([`gibbs`]),
//! - posterior-predictive point prediction ([`predict`]),
//! - CSV ingestion, one-hot coding, PCA, and split utilities ([`data`]),
//! - RMSE/AUC evaluation ([`eval`]),
//! - and independent oracles for testing ([`testkit`]).

// Validation guards use `!(x > 0.0)` so NaN fails alongside non-positives.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod components;
pub mod data;
pub mod error;
pub mod eval;
pub mod gibbs;
pub mod multiindex;
pub mod predict;
pub mod prior;
pub mod stats;
pub mod testkit;

pub use error::{Error, Result};
