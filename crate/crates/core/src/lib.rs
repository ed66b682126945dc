//! Bayesian reconciliation of hierarchical forecasts.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod covmodel;
pub mod dists;
pub mod error;
pub mod evaluate;
pub mod hierarchy;
mod linalg;
pub mod par;
pub mod priorfit;
pub mod reconcile;
pub mod rng;
pub mod scoring;
pub mod simgen;
pub mod smoothing;
pub mod stats;

pub use error::{Error, Result};
pub use covmodel::{iw_map, iw_posterior, shrinkage_covariance, IwParams, ResidualMatrix};
pub use dists::{JointDistribution, MultivariateGaussian, MultivariateT, UnivariateForecast};
pub use hierarchy::Hierarchy;
pub use par::Execution;
pub use reconcile::{gaussian_conditioning, mint, reconcile_variant, trec, Method, ReconcileInputs, Reconciled};
