//! Tabular MDPs, exact dynamic programming, policy-change metrics and small
//! value learners built on a from-scratch multilayer perceptron.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix it to `f64`.

pub mod dp;
pub mod error;
pub mod learners;
pub mod mdp;
pub mod metrics;
pub mod nn;
pub mod policy;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Mdp = mdp::TabularMdp<f64>;
pub type Q = policy::QTable<f64>;
pub type Pi = policy::Policy<f64>;
pub type Weighting = metrics::StateWeighting<f64>;
pub type Trace = metrics::ChurnTrace<f64>;
