//! Full-covariance Gaussians for the conjugate-model statistics, where the
//! posterior covariance is a general SPD matrix.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone)]
pub struct Mvn {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl Mvn {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        check_dim(mean.len(), cov.nrows())?;
        check_dim(cov.nrows(), cov.ncols())?;
        let chol = Cholesky::new(cov.clone()).ok_or(Error::NotPositiveDefinite("covariance"))?;
        Ok(Mvn { mean, cov, chol })
    }

    pub fn isotropic(mean: &[f64], sigma: f64) -> Result<Self> {
        let d = mean.len();
        Mvn::new(
            DVector::from_column_slice(mean),
            DMatrix::identity(d, d) * (sigma * sigma),
        )
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn ln_det(&self) -> f64 {
        2.0 * self.chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// `x^T cov^{-1} x`.
    pub fn quad_form(&self, x: &DVector<f64>) -> f64 {
        let y = self.chol.l().solve_lower_triangular(x).expect("cholesky factor is invertible");
        y.norm_squared()
    }

    pub fn log_density(&self, theta: &[f64]) -> Result<f64> {
        check_dim(self.dim(), theta.len())?;
        let diff = DVector::from_column_slice(theta) - &self.mean;
        Ok(-0.5 * (self.dim() as f64 * (2.0 * PI).ln() + self.ln_det() + self.quad_form(&diff)))
    }

    /// `KL(self || other)`.
    pub fn kl(&self, other: &Mvn) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        let d = self.dim() as f64;
        let solved = other.chol.solve(&self.cov);
        let trace = solved.trace();
        let diff = &other.mean - &self.mean;
        let v = 0.5 * (trace + other.quad_form(&diff) - d + other.ln_det() - self.ln_det());
        Ok(v.max(0.0))
    }

    pub fn hellinger(&self, other: &Mvn) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        let avg = Mvn::new(self.mean.clone(), (&self.cov + &other.cov) * 0.5)?;
        let diff = &other.mean - &self.mean;
        let log_bc = 0.25 * (self.ln_det() + other.ln_det()) - 0.5 * avg.ln_det() - 0.125 * avg.quad_form(&diff);
        Ok((-log_bc.exp_m1()).max(0.0).sqrt().min(1.0))
    }
}
