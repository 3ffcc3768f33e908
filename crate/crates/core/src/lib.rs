//! Bayesian learning with misspecified parametric models.
//!
//! The crate simulates an agent who updates a posterior over a grid of
//! subjective models while choosing actions, computes Kullback-Leibler
//! closest models for a given action frequency, integrates the limiting
//! differential inclusion over action frequencies, and classifies its
//! equilibria.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! [`f64`] module re-exports the common types at double precision.

pub mod bayes;
pub mod config;
pub mod env;
pub mod equilibrium;
pub mod error;
pub mod experiment;
pub mod inclusion;
pub mod kld;
pub mod policy;
pub mod presets;
pub mod rng;
pub mod scalar;
pub mod simplex;
pub mod simulate;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use simplex::{ActionDist, ActionSet};

/// Double-precision aliases.
pub mod f64 {
    pub type Environment = crate::env::Environment<f64>;
    pub type Policy = crate::policy::Policy<f64>;
    pub type PolicySpec = crate::policy::PolicySpec<f64>;
    pub type Belief = crate::bayes::Belief<f64>;
    pub type ActionDist = crate::simplex::ActionDist<f64>;
    pub type DIPath = crate::inclusion::DIPath<f64>;
    pub type Trajectory = crate::simulate::Trajectory<f64>;
    pub type Equilibrium = crate::equilibrium::Equilibrium<f64>;
    pub type StabilityCertificate = crate::equilibrium::StabilityCertificate<f64>;
    pub type Staircase = crate::equilibrium::Staircase<f64>;
}

/// Single-precision aliases.
pub mod f32 {
    pub type Environment = crate::env::Environment<f32>;
    pub type Policy = crate::policy::Policy<f32>;
    pub type Belief = crate::bayes::Belief<f32>;
    pub type ActionDist = crate::simplex::ActionDist<f32>;
    pub type DIPath = crate::inclusion::DIPath<f32>;
}
