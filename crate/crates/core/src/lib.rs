//! Boosting variational inference with small-bandwidth isotropic Gaussian
//! mixtures.
//!
//! The crate is organised bottom-up: [`gaussian`] holds the variational
//! family and closed-form divergences, [`targets`] the synthetic posteriors,
//! [`divergence`] the numerical divergence and curvature estimators, [`lmo`]
//! the greedy component search, [`boosting`] the Frank–Wolfe loop and
//! [`validation`] the replicated frequentist experiments.

pub mod boosting;
pub mod divergence;
pub mod error;
pub mod gaussian;
pub mod lmo;
pub mod mvn;
pub mod quadrature;
pub mod seed;
pub mod targets;
pub mod validation;

pub use error::{Error, Result};
pub use gaussian::{FamilyConstraints, GaussianMixture, IsotropicGaussian};
pub use targets::PosteriorTarget;
