//! Posterior targets and the synthetic models that produce them.

mod conjugate;
mod dataset;
mod expfam;

use std::fmt;
use std::sync::Arc;

pub(crate) use conjugate::log_likelihood_and_prior;
pub use conjugate::{make_conjugate_target, q0_reference, ConjugateGaussianModel, PosteriorUpdate};
pub use dataset::Dataset;
pub use expfam::{
    audit_regularity, AuditBudget, AuditReport, Bernoulli, ExponentialFamily,
    ExponentialFamilyModel, GaussianMean, LipschitzConstants, PointAudit, Poisson,
};

use crate::error::{check_dim, Result};

pub type LogDensityFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// An unnormalized log-posterior `θ ↦ log Π f(X_i; θ) + log π(θ)` (natural
/// log, up to an additive constant), optionally with its exact normalizer.
/// Gradients are not part of the contract.
#[derive(Clone)]
pub struct PosteriorTarget {
    dim: usize,
    log_unnorm: Arc<LogDensityFn>,
    log_normalizer: Option<f64>,
}

impl fmt::Debug for PosteriorTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PosteriorTarget")
            .field("dim", &self.dim)
            .field("log_normalizer", &self.log_normalizer)
            .finish_non_exhaustive()
    }
}

impl PosteriorTarget {
    pub fn new<F>(dim: usize, log_unnorm: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        PosteriorTarget {
            dim,
            log_unnorm: Arc::new(log_unnorm),
            log_normalizer: None,
        }
    }

    pub fn with_normalizer(mut self, log_normalizer: f64) -> Self {
        self.log_normalizer = Some(log_normalizer);
        self
    }

    /// Adds `c` to the log-density; a known normalizer moves with it.
    pub fn shifted(&self, c: f64) -> Self {
        let inner = Arc::clone(&self.log_unnorm);
        PosteriorTarget {
            dim: self.dim,
            log_unnorm: Arc::new(move |t| inner(t) + c),
            log_normalizer: self.log_normalizer.map(|z| z + c),
        }
    }

    /// Drops the normalizer, leaving an up-to-constant target.
    pub fn unnormalized(&self) -> Self {
        PosteriorTarget {
            log_normalizer: None,
            ..self.clone()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn log_normalizer(&self) -> Option<f64> {
        self.log_normalizer
    }

    pub fn log_unnorm(&self, theta: &[f64]) -> Result<f64> {
        check_dim(self.dim, theta.len())?;
        Ok((self.log_unnorm)(theta))
    }

    #[inline]
    pub(crate) fn log_unnorm_unchecked(&self, theta: &[f64]) -> f64 {
        (self.log_unnorm)(theta)
    }

    /// Normalized log-density, when the normalizer is known.
    pub fn log_density(&self, theta: &[f64]) -> Result<Option<f64>> {
        let v = self.log_unnorm(theta)?;
        Ok(self.log_normalizer.map(|z| v - z))
    }
}
