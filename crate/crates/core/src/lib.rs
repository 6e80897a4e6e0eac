//! Self-supervised losses for inverse problems with Bayesian oracles.
//!
//! Modules build on each other bottom-up: [`linalg`] and [`rng`], then
//! [`operators`], [`noise`], [`priors`], [`estimators`], [`losses`] and
//! [`harness`]. [`config`] and [`suites`] drive experiments from JSON.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod linalg;
pub mod losses;
pub mod noise;
pub mod operators;
pub mod priors;
pub mod rng;
pub mod suites;

pub use error::{Error, Result};
pub use estimators::{Constraint, Estimator, TraceBackend};
pub use linalg::{RealMatrix, RealVector};
pub use losses::{evaluate, Batch, Item, Loss, LossEval};
pub use noise::NoiseModel;
pub use operators::{GroupAction, LinearOperator, OperatorDistribution, Transform};
pub use priors::{AtomPrior, GmmPrior, Prior};
pub use rng::{Dist, RngStream};
