//! Canonical exponential families `f(x; θ) = h(x) exp(θ·T(x) − A(θ))` and an
//! empirical audit of the regularity conditions that make them valid
//! targets: strong convexity of `A`, α-Lipschitz behaviour of its
//! derivatives over a grid, the KL/Bregman identity and the second moment of
//! the log-likelihood ratio.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng as _;
use rand_distr::{Distribution, Poisson as PoissonDist, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, PosteriorTarget};
use crate::error::{check_dim, Error, Result};
use crate::gaussian::IsotropicGaussian;
use crate::quadrature::trapezoid;
use crate::seed::{rng_from_seed, Rng};

pub trait ExponentialFamily: Send + Sync {
    fn name(&self) -> &'static str;
    /// Dimension of the canonical parameter.
    fn dim(&self) -> usize;
    /// Dimension of one observation.
    fn data_dim(&self) -> usize;
    fn sufficient_stats(&self, x: &[f64]) -> Vec<f64>;
    fn log_partition(&self, theta: &[f64]) -> f64;
    fn gradient(&self, theta: &[f64]) -> DVector<f64>;
    fn hessian(&self, theta: &[f64]) -> DMatrix<f64>;
    fn sample(&self, theta: &[f64], rng: &mut Rng) -> Vec<f64>;
    /// `E_θ[T(X)]` computed directly from the density (enumeration or
    /// quadrature), independently of [`ExponentialFamily::gradient`].
    fn expected_stats(&self, theta: &[f64]) -> Vec<f64>;
}

/// `N(θ, I_d)`: `T(x) = x`, `A(θ) = ‖θ‖²/2`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianMean {
    pub d: usize,
}

impl ExponentialFamily for GaussianMean {
    fn name(&self) -> &'static str {
        "gaussian_mean"
    }
    fn dim(&self) -> usize {
        self.d
    }
    fn data_dim(&self) -> usize {
        self.d
    }
    fn sufficient_stats(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
    fn log_partition(&self, theta: &[f64]) -> f64 {
        0.5 * theta.iter().map(|t| t * t).sum::<f64>()
    }
    fn gradient(&self, theta: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(theta)
    }
    fn hessian(&self, _theta: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(self.d, self.d)
    }
    fn sample(&self, theta: &[f64], rng: &mut Rng) -> Vec<f64> {
        theta
            .iter()
            .map(|t| {
                let z: f64 = StandardNormal.sample(rng);
                t + z
            })
            .collect()
    }
    fn expected_stats(&self, theta: &[f64]) -> Vec<f64> {
        // coordinates are independent; integrate each marginal
        theta
            .iter()
            .map(|&t| {
                trapezoid(
                    |x| x * (-0.5 * (x - t) * (x - t)).exp() / (2.0 * PI).sqrt(),
                    t - 12.0,
                    t + 12.0,
                    4096,
                )
            })
            .collect()
    }
}

/// Bernoulli with natural parameter `θ`: `A(θ) = ln(1 + e^θ)`.
#[derive(Debug, Clone, Copy)]
pub struct Bernoulli;

impl ExponentialFamily for Bernoulli {
    fn name(&self) -> &'static str {
        "bernoulli"
    }
    fn dim(&self) -> usize {
        1
    }
    fn data_dim(&self) -> usize {
        1
    }
    fn sufficient_stats(&self, x: &[f64]) -> Vec<f64> {
        vec![x[0]]
    }
    fn log_partition(&self, theta: &[f64]) -> f64 {
        let t = theta[0];
        t.max(0.0) + (-t.abs()).exp().ln_1p()
    }
    fn gradient(&self, theta: &[f64]) -> DVector<f64> {
        DVector::from_element(1, sigmoid(theta[0]))
    }
    fn hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        let p = sigmoid(theta[0]);
        DMatrix::from_element(1, 1, p * (1.0 - p))
    }
    fn sample(&self, theta: &[f64], rng: &mut Rng) -> Vec<f64> {
        let p = sigmoid(theta[0]);
        vec![if rng.random::<f64>() < p { 1.0 } else { 0.0 }]
    }
    fn expected_stats(&self, theta: &[f64]) -> Vec<f64> {
        // support {0, 1}: E[X] = 0 * f(0) + 1 * f(1), f(x) = exp(θx − A(θ))
        let a = self.log_partition(theta);
        let f1 = (theta[0] - a).exp();
        vec![f1]
    }
}

/// Poisson with natural parameter `θ = ln λ`: `A(θ) = e^θ`.
#[derive(Debug, Clone, Copy)]
pub struct Poisson;

impl ExponentialFamily for Poisson {
    fn name(&self) -> &'static str {
        "poisson"
    }
    fn dim(&self) -> usize {
        1
    }
    fn data_dim(&self) -> usize {
        1
    }
    fn sufficient_stats(&self, x: &[f64]) -> Vec<f64> {
        vec![x[0]]
    }
    fn log_partition(&self, theta: &[f64]) -> f64 {
        theta[0].exp()
    }
    fn gradient(&self, theta: &[f64]) -> DVector<f64> {
        DVector::from_element(1, theta[0].exp())
    }
    fn hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, theta[0].exp())
    }
    fn sample(&self, theta: &[f64], rng: &mut Rng) -> Vec<f64> {
        let dist = PoissonDist::new(theta[0].exp()).expect("positive rate");
        vec![dist.sample(rng)]
    }
    fn expected_stats(&self, theta: &[f64]) -> Vec<f64> {
        // truncated sum of k f(k) with f(k) = exp(θk − A(θ)) / k!
        let a = self.log_partition(theta);
        let limit = (a + 40.0 * a.sqrt() + 50.0) as usize;
        let mut log_fact = 0.0;
        let mut total = 0.0;
        for k in 0..=limit {
            if k > 0 {
                log_fact += (k as f64).ln();
            }
            total += k as f64 * (theta[0] * k as f64 - a - log_fact).exp();
        }
        vec![total]
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// An exponential-family likelihood with a Gaussian prior on the canonical
/// parameter and a true value `theta0`.
#[derive(Clone)]
pub struct ExponentialFamilyModel {
    family: Arc<dyn ExponentialFamily>,
    prior: IsotropicGaussian,
    theta0: Vec<f64>,
}

impl std::fmt::Debug for ExponentialFamilyModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExponentialFamilyModel")
            .field("family", &self.family.name())
            .field("prior", &self.prior)
            .field("theta0", &self.theta0)
            .finish()
    }
}

impl ExponentialFamilyModel {
    pub fn new<F: ExponentialFamily + 'static>(family: F, prior: IsotropicGaussian, theta0: Vec<f64>) -> Result<Self> {
        check_dim(family.dim(), prior.dim())?;
        check_dim(family.dim(), theta0.len())?;
        Ok(ExponentialFamilyModel {
            family: Arc::new(family),
            prior,
            theta0,
        })
    }

    pub fn family(&self) -> &dyn ExponentialFamily {
        self.family.as_ref()
    }

    pub fn theta0(&self) -> &[f64] {
        &self.theta0
    }

    pub fn simulate_data(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::invalid("n", "sample size must be at least 1"));
        }
        let mut rng = rng_from_seed(seed);
        let points: Vec<f64> = (0..n).flat_map(|_| self.family.sample(&self.theta0, &mut rng)).collect();
        Dataset::new(points, self.family.data_dim(), seed)
    }

    /// Unnormalized posterior `Σ_i [θ·T(x_i) − A(θ)] + log π(θ)`; the base
    /// measure `h` is dropped as a constant. No normalizer is attached.
    pub fn make_target(&self, data: &Dataset) -> Result<PosteriorTarget> {
        check_dim(self.family.data_dim(), data.p())?;
        let k = self.family.dim();
        let mut stat_sum = vec![0.0; k];
        for row in data.rows() {
            for (s, t) in stat_sum.iter_mut().zip(self.family.sufficient_stats(row)) {
                *s += t;
            }
        }
        let n = data.n() as f64;
        let family = Arc::clone(&self.family);
        let prior = self.prior.clone();
        Ok(PosteriorTarget::new(k, move |theta| {
            let lin: f64 = theta.iter().zip(&stat_sum).map(|(a, b)| a * b).sum();
            lin - n * family.log_partition(theta) + prior.log_density_unchecked(theta)
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditBudget {
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for AuditBudget {
    fn default() -> Self {
        AuditBudget {
            mc_samples: 100_000,
            seed: 0,
        }
    }
}

/// Largest observed `‖f(x) − f(y)‖ / ‖x − y‖^α` over grid pairs, for the four
/// maps named in the regularity conditions. Matrix differences use the
/// largest singular value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzConstants {
    pub gradient: f64,
    pub hessian_times_theta: f64,
    pub gradient_outer: f64,
    pub hessian: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointAudit {
    pub theta: Vec<f64>,
    /// `A(θ) − A(θ0) − (θ − θ0)·E_θ0[T]`
    pub kl: f64,
    /// `A(θ) − A(θ0) − (θ − θ0)·∇A(θ0)`
    pub bregman: f64,
    pub identity_error: f64,
    /// `(θ−θ0)ᵀ ∇²A(θ0) (θ−θ0) + D_A(θ0‖θ)²`
    pub mu2_closed_form: f64,
    pub mu2_monte_carlo: f64,
    pub mu2_std_error: f64,
    pub mu2_agrees: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub family: String,
    pub alpha: f64,
    pub theta0: Vec<f64>,
    pub min_hessian_eigenvalue: f64,
    pub strongly_convex: bool,
    pub lipschitz: LipschitzConstants,
    pub points: Vec<PointAudit>,
    pub identity_holds: bool,
    pub moments_agree: bool,
    pub failures: Vec<String>,
    pub mc_samples: usize,
    pub seed: u64,
}

pub const IDENTITY_TOL: f64 = 1e-8;

fn max_singular_value(m: &DMatrix<f64>) -> f64 {
    m.clone().singular_values().max()
}

/// Empirical check of the exponential-family regularity conditions over a
/// user-supplied grid. Failures are reported, never raised.
pub fn audit_regularity(
    model: &ExponentialFamilyModel,
    grid: &[Vec<f64>],
    alpha: f64,
    budget: &AuditBudget,
) -> Result<AuditReport> {
    let fam = model.family();
    let d = fam.dim();
    if grid.is_empty() {
        return Err(Error::invalid("grid", "audit grid must be non-empty"));
    }
    for theta in grid {
        check_dim(d, theta.len())?;
    }
    if budget.mc_samples < 2 {
        return Err(Error::invalid("mc_samples", "need at least two draws"));
    }
    let mut failures = Vec::new();

    let min_eig = grid
        .iter()
        .map(|t| SymmetricEigen::new(fam.hessian(t)).eigenvalues.min())
        .fold(f64::INFINITY, f64::min);
    let strongly_convex = min_eig > 0.0;
    if !strongly_convex {
        failures.push(format!("log-partition Hessian is not positive definite on the grid (min eigenvalue {min_eig})"));
    }

    let grads: Vec<DVector<f64>> = grid.iter().map(|t| fam.gradient(t)).collect();
    let hess: Vec<DMatrix<f64>> = grid.iter().map(|t| fam.hessian(t)).collect();
    let hess_theta: Vec<DVector<f64>> = grid
        .iter()
        .zip(&hess)
        .map(|(t, h)| h * DVector::from_column_slice(t))
        .collect();
    let outer: Vec<DMatrix<f64>> = grads.iter().map(|g| g * g.transpose()).collect();
    let mut lip = LipschitzConstants {
        gradient: 0.0,
        hessian_times_theta: 0.0,
        gradient_outer: 0.0,
        hessian: 0.0,
    };
    for i in 0..grid.len() {
        for j in i + 1..grid.len() {
            let dist = DVector::from_column_slice(&grid[i]).metric_distance(&DVector::from_column_slice(&grid[j]));
            if dist == 0.0 {
                continue;
            }
            let scale = dist.powf(alpha);
            lip.gradient = lip.gradient.max((&grads[i] - &grads[j]).norm() / scale);
            lip.hessian_times_theta = lip.hessian_times_theta.max((&hess_theta[i] - &hess_theta[j]).norm() / scale);
            lip.gradient_outer = lip.gradient_outer.max(max_singular_value(&(&outer[i] - &outer[j])) / scale);
            lip.hessian = lip.hessian.max(max_singular_value(&(&hess[i] - &hess[j])) / scale);
        }
    }

    let theta0 = model.theta0();
    let a0 = fam.log_partition(theta0);
    let nu0 = fam.expected_stats(theta0);
    let grad0 = fam.gradient(theta0);
    let hess0 = fam.hessian(theta0);

    // common draws X ~ f(·; θ0) for every grid point
    let mut rng = rng_from_seed(budget.seed);
    let stats: Vec<Vec<f64>> = (0..budget.mc_samples)
        .map(|_| fam.sufficient_stats(&fam.sample(theta0, &mut rng)))
        .collect();

    let mut points = Vec::with_capacity(grid.len());
    for theta in grid {
        let delta: Vec<f64> = theta.iter().zip(theta0).map(|(a, b)| a - b).collect();
        let a = fam.log_partition(theta);
        let kl = a - a0 - dot(&delta, &nu0);
        let bregman = a - a0 - dot(&delta, grad0.as_slice());
        let identity_error = (kl - bregman).abs();
        let dv = DVector::from_column_slice(&delta);
        let mu2_closed_form = (dv.transpose() * &hess0 * &dv)[(0, 0)] + bregman * bregman;

        let n = stats.len() as f64;
        let (mut s1, mut s2) = (0.0, 0.0);
        for t in &stats {
            let ell = dot(&delta, t) - a + a0;
            let sq = ell * ell;
            s1 += sq;
            s2 += sq * sq;
        }
        let mean = s1 / n;
        let var = ((s2 / n - mean * mean) * n / (n - 1.0)).max(0.0);
        let se = (var / n).sqrt();
        let mu2_agrees = (mean - mu2_closed_form).abs() <= 3.0 * se + 1e-12 * mu2_closed_form.abs();
        if identity_error > IDENTITY_TOL {
            failures.push(format!("KL/Bregman identity off by {identity_error:e} at theta = {theta:?}"));
        }
        if !mu2_agrees {
            failures.push(format!(
                "second moment mismatch at theta = {theta:?}: closed form {mu2_closed_form}, Monte Carlo {mean} ± {se}"
            ));
        }
        points.push(PointAudit {
            theta: theta.clone(),
            kl,
            bregman,
            identity_error,
            mu2_closed_form,
            mu2_monte_carlo: mean,
            mu2_std_error: se,
            mu2_agrees,
        });
    }
    let identity_holds = points.iter().all(|p| p.identity_error <= IDENTITY_TOL);
    let moments_agree = points.iter().all(|p| p.mu2_agrees);
    Ok(AuditReport {
        family: fam.name().to_string(),
        alpha,
        theta0: theta0.to_vec(),
        min_hessian_eigenvalue: min_eig,
        strongly_convex,
        lipschitz: lip,
        points,
        identity_holds,
        moments_agree,
        failures,
        mc_samples: budget.mc_samples,
        seed: budget.seed,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid_1d(lo: f64, hi: f64, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| vec![lo + (hi - lo) * i as f64 / (n - 1) as f64]).collect()
    }

    fn prior() -> IsotropicGaussian {
        IsotropicGaussian::scalar(0.0, 3.0).unwrap()
    }

    #[test]
    fn gaussian_mean_family_audit() {
        let model = ExponentialFamilyModel::new(GaussianMean { d: 1 }, prior(), vec![0.5]).unwrap();
        let grid = grid_1d(-2.0, 2.0, 9);
        let report = audit_regularity(&model, &grid, 1.0, &AuditBudget { mc_samples: 50_000, seed: 1 }).unwrap();
        assert_relative_eq!(report.min_hessian_eigenvalue, 1.0);
        assert!(report.identity_holds && report.moments_agree, "{:?}", report.failures);
        for p in &report.points {
            let diff = p.theta[0] - 0.5;
            assert_relative_eq!(p.kl, diff * diff / 2.0, epsilon = 1e-10);
            assert_relative_eq!(p.bregman, diff * diff / 2.0, epsilon = 1e-14);
        }
        let at_truth = report.points.iter().find(|p| p.theta[0] == 0.5).unwrap();
        assert!(at_truth.kl.abs() < 1e-10);
        assert_eq!(at_truth.mu2_closed_form, 0.0);
        assert_eq!(at_truth.mu2_monte_carlo, 0.0);
        // gradient is the identity map: Lipschitz constant 1 at alpha = 1
        assert_relative_eq!(report.lipschitz.gradient, 1.0, epsilon = 1e-12);
        assert_eq!(report.lipschitz.hessian, 0.0);
    }

    #[test]
    fn bernoulli_margin_matches_direct_hessian() {
        let model = ExponentialFamilyModel::new(Bernoulli, prior(), vec![0.3]).unwrap();
        let grid = grid_1d(-4.0, 4.0, 33);
        let report = audit_regularity(&model, &grid, 1.0, &AuditBudget { mc_samples: 50_000, seed: 2 }).unwrap();
        let s = 1.0 / (1.0 + (-4.0f64).exp());
        assert_relative_eq!(report.min_hessian_eigenvalue, s * (1.0 - s), epsilon = 1e-12);
        assert_relative_eq!(report.min_hessian_eigenvalue, 0.0177, epsilon = 1e-4);
        assert!(report.identity_holds && report.moments_agree, "{:?}", report.failures);
    }

    #[test]
    fn poisson_identity_and_moments() {
        let model = ExponentialFamilyModel::new(Poisson, prior(), vec![0.7]).unwrap();
        let report =
            audit_regularity(&model, &grid_1d(-1.0, 2.0, 7), 1.0, &AuditBudget { mc_samples: 50_000, seed: 3 }).unwrap();
        assert!(report.identity_holds, "{:?}", report.failures);
        assert!(report.moments_agree, "{:?}", report.failures);
    }

    #[test]
    fn two_dimensional_gaussian_grid() {
        let model = ExponentialFamilyModel::new(
            GaussianMean { d: 2 },
            IsotropicGaussian::new(vec![0.0, 0.0], 2.0).unwrap(),
            vec![0.2, -0.1],
        )
        .unwrap();
        let grid: Vec<Vec<f64>> = (0..4).flat_map(|i| (0..4).map(move |j| vec![i as f64 * 0.5 - 1.0, j as f64 * 0.5 - 1.0])).collect();
        let report = audit_regularity(&model, &grid, 1.0, &AuditBudget { mc_samples: 20_000, seed: 4 }).unwrap();
        assert!(report.identity_holds && report.moments_agree, "{:?}", report.failures);
        assert!(report.strongly_convex);
    }

    #[test]
    fn empty_grid_rejected() {
        let model = ExponentialFamilyModel::new(Bernoulli, prior(), vec![0.0]).unwrap();
        assert!(audit_regularity(&model, &[], 1.0, &AuditBudget::default()).is_err());
    }

    #[test]
    fn expfam_target_is_unnormalized_and_peaks_near_mle() {
        let model = ExponentialFamilyModel::new(Bernoulli, prior(), vec![1.0]).unwrap();
        let data = model.simulate_data(2000, 5).unwrap();
        let t = model.make_target(&data).unwrap();
        assert!(t.log_normalizer().is_none());
        let p_hat = data.column_means()[0];
        let mle = (p_hat / (1.0 - p_hat)).ln();
        let at = t.log_unnorm(&[mle]).unwrap();
        assert!(t.log_unnorm(&[mle + 0.2]).unwrap() < at);
        assert!(t.log_unnorm(&[mle - 0.2]).unwrap() < at);
    }
}
