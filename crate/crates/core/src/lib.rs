//! Rectified-flow imitation policies sampled with a variance-adaptive Euler
//! solver: networks, training, solver, analytic oracles, a point-mass maze
//! and the evaluation metrics used on it.
//!
//! Everything numeric is generic over [`Scalar`]; the aliases below fix it
//! to `f64`, which is what the training and evaluation paths use.

pub mod baselines;
pub mod data;
pub mod envs;
pub mod error;
pub mod flow;
pub mod metrics;
pub mod nn;
pub mod oracle;
pub mod rng;
mod scalar;
pub mod solver;
pub mod stats;
pub mod train;
pub mod variance;
pub mod wasserstein;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Mlp = nn::MlpModel<f64>;
pub type Policy = flow::FlowPolicy<f64>;
pub type Sigma = variance::VarianceNet<f64>;
pub type Bc = baselines::BcPolicy<f64>;
pub type Trace = solver::SolveTrace<f64>;
