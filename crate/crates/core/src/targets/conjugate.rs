use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, PosteriorTarget};
use crate::error::{check_dim, Error, Result};
use crate::gaussian::{FamilyConstraints, IsotropicGaussian, MEMBERSHIP_SLACK};
use crate::mvn::Mvn;
use crate::seed::rng_from_seed;

/// `X_i ~ N(θ, Σ)` i.i.d. with prior `θ ~ N(μ0, Σ0)`; data are simulated at
/// the true parameter `θ0`.
#[derive(Debug, Clone)]
pub struct ConjugateGaussianModel {
    likelihood: Mvn,
    prior: Mvn,
    theta0: DVector<f64>,
}

/// How the posterior mean is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosteriorUpdate {
    /// `μ_n = Σ_n (n Σ^{-1} X̄ + Σ0^{-1} μ0)`; correct for any `Σ0`.
    General,
    /// `μ_n = (n X̄ + μ0) / (n + 1)`, which equals the general update only
    /// when `Σ0 = Σ`.
    EqualCovariance,
}

/// Sums needed to evaluate the Gaussian log-likelihood without revisiting
/// the data.
#[derive(Debug, Clone)]
struct SufficientStats {
    n: usize,
    sum: DVector<f64>,
    /// `Σ_i x_i^T Σ^{-1} x_i`
    quad: f64,
}

impl ConjugateGaussianModel {
    pub fn new(sigma: DMatrix<f64>, mu0: DVector<f64>, sigma0: DMatrix<f64>, theta0: DVector<f64>) -> Result<Self> {
        let d = mu0.len();
        check_dim(d, theta0.len())?;
        check_dim(d, sigma.nrows())?;
        if !symmetric(&sigma) || !symmetric(&sigma0) {
            return Err(Error::invalid("covariance", "must be symmetric"));
        }
        let likelihood = Mvn::new(theta0.clone(), sigma).map_err(|_| Error::NotPositiveDefinite("Sigma"))?;
        let prior = Mvn::new(mu0, sigma0).map_err(|_| Error::NotPositiveDefinite("Sigma0"))?;
        check_dim(d, prior.dim())?;
        Ok(ConjugateGaussianModel {
            likelihood,
            prior,
            theta0,
        })
    }

    /// `Σ = lik_var I`, `Σ0 = prior_var I`.
    pub fn isotropic(mu0: &[f64], theta0: &[f64], lik_var: f64, prior_var: f64) -> Result<Self> {
        let d = mu0.len();
        ConjugateGaussianModel::new(
            DMatrix::identity(d, d) * lik_var,
            DVector::from_column_slice(mu0),
            DMatrix::identity(d, d) * prior_var,
            DVector::from_column_slice(theta0),
        )
    }

    pub fn dim(&self) -> usize {
        self.theta0.len()
    }
    pub fn sigma(&self) -> &DMatrix<f64> {
        self.likelihood.cov()
    }
    pub fn sigma0(&self) -> &DMatrix<f64> {
        self.prior.cov()
    }
    pub fn mu0(&self) -> &DVector<f64> {
        self.prior.mean()
    }
    pub fn theta0(&self) -> &DVector<f64> {
        &self.theta0
    }

    pub fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": "conjugate_gaussian",
            "d": self.dim(),
            "sigma": self.sigma().iter().collect::<Vec<_>>(),
            "sigma0": self.sigma0().iter().collect::<Vec<_>>(),
            "mu0": self.mu0().iter().collect::<Vec<_>>(),
            "theta0": self.theta0.iter().collect::<Vec<_>>(),
        })
    }

    /// Same model with the truth moved to `theta0`.
    pub fn with_truth(&self, theta0: &[f64]) -> Result<Self> {
        ConjugateGaussianModel::new(
            self.sigma().clone(),
            self.mu0().clone(),
            self.sigma0().clone(),
            DVector::from_column_slice(theta0),
        )
    }

    pub fn simulate_data(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::invalid("n", "sample size must be at least 1"));
        }
        let d = self.dim();
        let chol = nalgebra::Cholesky::new(self.sigma().clone()).ok_or(Error::NotPositiveDefinite("Sigma"))?;
        let l = chol.l();
        let mut rng = rng_from_seed(seed);
        let mut points = Vec::with_capacity(n * d);
        let mut z = DVector::zeros(d);
        for _ in 0..n {
            for zj in z.iter_mut() {
                *zj = StandardNormal.sample(&mut rng);
            }
            let x = &self.theta0 + &l * &z;
            points.extend(x.iter());
        }
        Dataset::new(points, d, seed)
    }

    fn stats(&self, data: &Dataset) -> Result<SufficientStats> {
        check_dim(self.dim(), data.p())?;
        let mut sum = DVector::zeros(self.dim());
        let mut quad = 0.0;
        for row in data.rows() {
            let x = DVector::from_column_slice(row);
            quad += self.likelihood.quad_form(&x);
            sum += x;
        }
        Ok(SufficientStats {
            n: data.n(),
            sum,
            quad,
        })
    }

    pub fn posterior_params(&self, data: &Dataset) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.posterior_params_with(data, PosteriorUpdate::General)
    }

    pub fn posterior_params_with(
        &self,
        data: &Dataset,
        update: PosteriorUpdate,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let stats = self.stats(data)?;
        let prec = self.precision();
        let prec0 = self.prior_precision();
        let post_prec = &prec * stats.n as f64 + &prec0;
        let cov = post_prec
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("posterior precision"))?
            .inverse();
        let cov = (&cov + cov.transpose()) * 0.5;
        let mean = match update {
            PosteriorUpdate::General => &cov * (&prec * &stats.sum + &prec0 * self.mu0()),
            PosteriorUpdate::EqualCovariance => (&stats.sum + self.mu0()) / (stats.n as f64 + 1.0),
        };
        Ok((mean, cov))
    }

    pub fn posterior(&self, data: &Dataset) -> Result<Mvn> {
        let (mean, cov) = self.posterior_params(data)?;
        Mvn::new(mean, cov)
    }

    fn precision(&self) -> DMatrix<f64> {
        invert_spd(self.sigma())
    }

    fn prior_precision(&self) -> DMatrix<f64> {
        invert_spd(self.sigma0())
    }

    /// `Σ_i log f(X_i; θ)`.
    pub fn log_likelihood(&self, data: &Dataset, theta: &[f64]) -> Result<f64> {
        let stats = self.stats(data)?;
        check_dim(self.dim(), theta.len())?;
        let lik = LikelihoodEval::new(self, &stats);
        Ok(lik.eval(theta))
    }

    pub fn log_prior(&self, theta: &[f64]) -> Result<f64> {
        self.prior.log_density(theta)
    }

    /// `log p(X_1..X_n)`, from Bayes' rule evaluated at the posterior mean.
    pub fn log_marginal_likelihood(&self, data: &Dataset) -> Result<f64> {
        let post = self.posterior(data)?;
        let at: Vec<f64> = post.mean().iter().cloned().collect();
        Ok(self.log_likelihood(data, &at)? + self.log_prior(&at)? - post.log_density(&at)?)
    }
}

fn symmetric(m: &DMatrix<f64>) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= 1e-12 * m.amax().max(1.0)
}

fn invert_spd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let inv = m.clone().cholesky().expect("validated SPD").inverse();
    (&inv + inv.transpose()) * 0.5
}

/// Flat-array evaluator for `Σ_i log N(x_i; θ, Σ)`, cheap enough to sit in
/// the inner loop of the LMO.
#[derive(Debug, Clone)]
struct LikelihoodEval {
    d: usize,
    n: f64,
    precision: Vec<f64>,
    /// `Σ^{-1} Σ_i x_i`
    prec_sum: Vec<f64>,
    constant: f64,
}

impl LikelihoodEval {
    fn new(model: &ConjugateGaussianModel, stats: &SufficientStats) -> Self {
        let d = model.dim();
        let prec = model.precision();
        let n = stats.n as f64;
        let prec_sum = &prec * &stats.sum;
        let constant = -0.5 * (n * d as f64 * (2.0 * PI).ln() + n * model.likelihood.ln_det() + stats.quad);
        LikelihoodEval {
            d,
            n,
            precision: prec.transpose().iter().cloned().collect(),
            prec_sum: prec_sum.iter().cloned().collect(),
            constant,
        }
    }

    #[inline]
    fn eval(&self, theta: &[f64]) -> f64 {
        let lin: f64 = theta.iter().zip(&self.prec_sum).map(|(t, s)| t * s).sum();
        let quad = quad_form(&self.precision, self.d, theta);
        self.constant + lin - 0.5 * self.n * quad
    }
}

#[derive(Debug, Clone)]
struct PriorEval {
    d: usize,
    mean: Vec<f64>,
    precision: Vec<f64>,
    constant: f64,
}

impl PriorEval {
    fn new(model: &ConjugateGaussianModel) -> Self {
        let d = model.dim();
        PriorEval {
            d,
            mean: model.mu0().iter().cloned().collect(),
            precision: model.prior_precision().transpose().iter().cloned().collect(),
            constant: -0.5 * (d as f64 * (2.0 * PI).ln() + model.prior.ln_det()),
        }
    }

    #[inline]
    fn eval(&self, theta: &[f64]) -> f64 {
        let mut diff = [0.0f64; 8];
        let mut heap;
        let buf: &mut [f64] = if self.d <= diff.len() {
            &mut diff[..self.d]
        } else {
            heap = vec![0.0; self.d];
            &mut heap
        };
        for ((b, t), m) in buf.iter_mut().zip(theta).zip(&self.mean) {
            *b = t - m;
        }
        self.constant - 0.5 * quad_form(&self.precision, self.d, buf)
    }
}

#[inline]
fn quad_form(row_major: &[f64], d: usize, x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..d {
        let row = &row_major[i * d..(i + 1) * d];
        let r: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
        acc += x[i] * r;
    }
    acc
}

/// `(θ ↦ Σ_i log f(X_i; θ), θ ↦ log π(θ))` without re-reading the data on
/// every call.
pub(crate) fn log_likelihood_and_prior(
    model: &ConjugateGaussianModel,
    data: &Dataset,
) -> Result<(impl Fn(&[f64]) -> f64 + Sync, impl Fn(&[f64]) -> f64 + Sync)> {
    let stats = model.stats(data)?;
    let lik = LikelihoodEval::new(model, &stats);
    let prior = PriorEval::new(model);
    Ok((move |theta: &[f64]| lik.eval(theta), move |theta: &[f64]| prior.eval(theta)))
}

/// The exact posterior as a [`PosteriorTarget`]: Gaussian log-likelihood sum
/// plus prior log-density, with the closed-form log marginal likelihood as
/// normalizer.
pub fn make_conjugate_target(model: &ConjugateGaussianModel, data: &Dataset) -> Result<PosteriorTarget> {
    let stats = model.stats(data)?;
    let lik = LikelihoodEval::new(model, &stats);
    let prior = PriorEval::new(model);
    let log_z = model.log_marginal_likelihood(data)?;
    Ok(PosteriorTarget::new(model.dim(), move |theta| lik.eval(theta) + prior.eval(theta)).with_normalizer(log_z))
}

/// `q0 = N(θ0, σ_n^2 I)`, the feasible reference density centred at the
/// truth. Requires `‖θ0‖ ≤ M`.
pub fn q0_reference(c: &FamilyConstraints, theta0: &[f64]) -> Result<IsotropicGaussian> {
    check_dim(c.dim(), theta0.len())?;
    let norm = theta0.iter().map(|t| t * t).sum::<f64>().sqrt();
    if norm > c.radius() * (1.0 + MEMBERSHIP_SLACK) {
        return Err(Error::Constraint(format!(
            "truth lies outside the mean ball: ||theta0|| = {norm} > M = {}",
            c.radius()
        )));
    }
    IsotropicGaussian::new(theta0.to_vec(), c.sigma_n())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::in_family;
    use crate::quadrature::trapezoid;
    use approx::assert_relative_eq;

    fn unit_model() -> ConjugateGaussianModel {
        ConjugateGaussianModel::isotropic(&[0.0], &[0.0], 1.0, 1.0).unwrap()
    }

    #[test]
    fn simulate_is_deterministic() {
        let m = unit_model();
        assert_eq!(m.simulate_data(3, 9).unwrap(), m.simulate_data(3, 9).unwrap());
        assert_eq!(m.simulate_data(1, 9).unwrap().n(), 1);
        assert!(m.simulate_data(0, 9).is_err());
    }

    #[test]
    fn simulated_mean_within_clt_band() {
        let n = 100_000;
        let data = unit_model().simulate_data(n, 1).unwrap();
        assert!(data.column_means()[0].abs() < 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn single_observation_posterior_matches_grid_oracle() {
        let m = unit_model();
        let data = Dataset::new(vec![2.0], 1, 0).unwrap();
        let (mu, cov) = m.posterior_params(&data).unwrap();
        assert_relative_eq!(mu[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(cov[(0, 0)], 0.5, epsilon = 1e-14);

        // Unnormalized posterior exp(-(θ-2)^2/2 - θ^2/2) on [-10, 10].
        let un = |t: f64| (-(t - 2.0) * (t - 2.0) / 2.0 - t * t / 2.0).exp();
        let z = trapezoid(un, -10.0, 10.0, 4096);
        let mean = trapezoid(|t| t * un(t), -10.0, 10.0, 4096) / z;
        let var = trapezoid(|t| (t - mean) * (t - mean) * un(t), -10.0, 10.0, 4096) / z;
        assert_relative_eq!(mean, 1.0, epsilon = 1e-10);
        assert_relative_eq!(var, 0.5, epsilon = 1e-10);
    }

    #[test]
    fn fixed_point_and_flat_prior_limit() {
        let m = ConjugateGaussianModel::isotropic(&[0.7], &[0.0], 2.0, 0.5).unwrap();
        for n in [1, 5, 50] {
            let data = Dataset::new(vec![0.7; n], 1, 0).unwrap();
            assert_relative_eq!(m.posterior_params(&data).unwrap().0[0], 0.7, epsilon = 1e-13);
        }
        let flat = ConjugateGaussianModel::isotropic(&[3.0], &[0.0], 1.0, 1e8).unwrap();
        let data = flat.simulate_data(20, 4).unwrap();
        let xbar = data.column_means()[0];
        assert!((flat.posterior_params(&data).unwrap().0[0] - xbar).abs() < 1e-6);
    }

    #[test]
    fn equal_covariance_shortcut() {
        let same = ConjugateGaussianModel::isotropic(&[0.3, -0.1], &[0.0, 0.0], 1.7, 1.7).unwrap();
        let data = same.simulate_data(12, 2).unwrap();
        let (g, _) = same.posterior_params_with(&data, PosteriorUpdate::General).unwrap();
        let (e, _) = same.posterior_params_with(&data, PosteriorUpdate::EqualCovariance).unwrap();
        assert!((g - e).amax() < 1e-12);

        let diff = ConjugateGaussianModel::isotropic(&[3.0], &[0.0], 1.0, 0.1).unwrap();
        let data = diff.simulate_data(5, 2).unwrap();
        let (g, _) = diff.posterior_params_with(&data, PosteriorUpdate::General).unwrap();
        let (e, _) = diff.posterior_params_with(&data, PosteriorUpdate::EqualCovariance).unwrap();
        assert!((g[0] - e[0]).abs() > 0.1);
    }

    #[test]
    fn posterior_is_shift_equivariant() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
        let sigma0 = DMatrix::from_row_slice(2, 2, &[2.0, -0.4, -0.4, 1.0]);
        let m = ConjugateGaussianModel::new(sigma.clone(), DVector::from_vec(vec![0.1, 0.2]), sigma0.clone(), DVector::from_vec(vec![0.5, -0.5])).unwrap();
        let data = m.simulate_data(7, 3).unwrap();
        let (mu, cov) = m.posterior_params(&data).unwrap();
        let v = [1.5, -2.5];
        let shifted_model = ConjugateGaussianModel::new(sigma, DVector::from_vec(vec![1.6, -2.3]), sigma0, DVector::from_vec(vec![2.0, -3.0])).unwrap();
        let shifted: Vec<f64> = data.rows().flat_map(|r| vec![r[0] + v[0], r[1] + v[1]]).collect();
        let sdata = Dataset::new(shifted, 2, 3).unwrap();
        let (smu, scov) = shifted_model.posterior_params(&sdata).unwrap();
        assert_relative_eq!(smu[0], mu[0] + v[0], epsilon = 1e-12);
        assert_relative_eq!(smu[1], mu[1] + v[1], epsilon = 1e-12);
        assert!((scov - cov).amax() < 1e-14);
    }

    #[test]
    fn target_matches_posterior_density() {
        let m = ConjugateGaussianModel::isotropic(&[0.5], &[0.2], 1.3, 0.8).unwrap();
        let data = m.simulate_data(25, 17).unwrap();
        let t = make_conjugate_target(&m, &data).unwrap();
        let post = m.posterior(&data).unwrap();
        let mu = post.mean()[0];
        let sd = post.cov()[(0, 0)].sqrt();
        for i in 0..20 {
            let theta = mu - 3.0 * sd + i as f64 * 0.3 * sd;
            let lhs = t.log_density(&[theta]).unwrap().unwrap().exp();
            let rhs = post.log_density(&[theta]).unwrap().exp();
            assert_relative_eq!(lhs, rhs, max_relative = 1e-8);
        }
        // mode at the posterior mean
        let at_mode = t.log_unnorm(&[mu]).unwrap();
        for eps in [1e-3, -1e-3, 0.1, -0.1] {
            assert!(t.log_unnorm(&[mu + eps]).unwrap() < at_mode);
        }
        // normalizer by quadrature
        let z = t.log_normalizer().unwrap();
        let mass = trapezoid(|x| (t.log_unnorm(&[x]).unwrap() - z).exp(), mu - 10.0 * sd, mu + 10.0 * sd, 4096);
        assert_relative_eq!(mass, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn normalizer_matches_two_d_quadrature() {
        let m = ConjugateGaussianModel::isotropic(&[0.0, 0.0], &[0.3, -0.3], 1.0, 2.0).unwrap();
        let data = m.simulate_data(6, 8).unwrap();
        let t = make_conjugate_target(&m, &data).unwrap();
        let post = m.posterior(&data).unwrap();
        let sd = post.cov()[(0, 0)].sqrt();
        let (a, b) = (post.mean()[0], post.mean()[1]);
        let spec = crate::quadrature::QuadratureSpec::default();
        let shift = t.log_unnorm(&[a, b]).unwrap();
        let mass = crate::quadrature::integrate(
            &spec,
            &[(a - 10.0 * sd, a + 10.0 * sd), (b - 10.0 * sd, b + 10.0 * sd)],
            |p| (t.log_unnorm(p).unwrap() - shift).exp(),
        )
        .unwrap();
        assert_relative_eq!(mass.ln() + shift, t.log_normalizer().unwrap(), epsilon = 1e-6);
    }

    #[test]
    fn q0_examples() {
        let c = FamilyConstraints::new(1.0, 0.1, 1.5, 2).unwrap();
        let q = q0_reference(&c, &[0.0, 0.0]).unwrap();
        assert_eq!(q.sigma(), 0.1);
        let edge = [0.6, 0.8];
        assert!(in_family(&q0_reference(&c, &edge).unwrap(), &c));
        assert!(matches!(q0_reference(&c, &[0.9, 0.9]), Err(Error::Constraint(_))));
    }
}
