//! Approximate linear minimization oracle: find the family member `φ`
//! minimizing `∫ φ (log ψ_prev − log π̃)` over the ball/bandwidth box.
//!
//! The objective is estimated with common random numbers, `θ_i = μ + σ z_i`
//! for a fixed set of antithetic standard-normal draws, so the surface is a
//! deterministic smooth function of `(μ, σ)` at a fixed seed.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::gaussian::{in_family, FamilyConstraints, GaussianMixture, IsotropicGaussian};
use crate::quadrature::{gaussian_box, integrate, QuadratureSpec};
use crate::seed::{derive_seed, rng_from_seed};
use crate::targets::PosteriorTarget;

/// Central finite-difference step in the scaled coordinates.
const FD_STEP: f64 = 1e-4;
/// Relative tolerance under which two restart objectives count as tied.
const TIE_TOL: f64 = 1e-9;
const MAX_SHRINKS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmoConfig {
    pub mc_samples: usize,
    pub restarts: usize,
    pub max_steps: usize,
    /// Initial step length, in units of `σ_n` for the mean and nats for
    /// `ln σ`.
    pub init_step: f64,
    pub shrink: f64,
    /// An accepted step improving the objective by less than this ends the
    /// restart.
    pub tol: f64,
    pub seed: u64,
}

impl Default for LmoConfig {
    fn default() -> Self {
        LmoConfig {
            mc_samples: 128,
            restarts: 4,
            max_steps: 100,
            init_step: 0.5,
            shrink: 0.5,
            tol: 1e-10,
            seed: 0,
        }
    }
}

impl LmoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mc_samples == 0 {
            return Err(Error::invalid("mc_samples", "must be at least 1"));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("restarts", "must be at least 1"));
        }
        if !(self.init_step > 0.0 && self.init_step.is_finite()) {
            return Err(Error::invalid("init_step", "must be positive"));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::invalid("shrink", "must lie in (0, 1)"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmoResult {
    pub component: IsotropicGaussian,
    /// Objective at `component`, up to the target's additive log-normalizer.
    pub objective: f64,
    /// `γ_k C / 2`, recorded but not used as a stopping rule.
    pub oracle_gap_bound: f64,
    pub restarts_used: usize,
    pub feasible: bool,
    /// Accepted objective values of each restart, in order.
    #[serde(skip)]
    pub descent_paths: Vec<Vec<f64>>,
}

/// Fixed standard-normal draws shared by every objective evaluation of one
/// oracle call. Draws come in antithetic pairs `(z, −z)`.
#[derive(Debug, Clone)]
pub struct CrnDraws {
    dim: usize,
    z: Vec<f64>,
}

impl CrnDraws {
    pub fn new(samples: usize, dim: usize, seed: u64) -> Result<Self> {
        if samples == 0 {
            return Err(Error::invalid("mc_samples", "must be at least 1"));
        }
        let mut rng = rng_from_seed(seed);
        let mut z = Vec::with_capacity(samples * dim);
        while z.len() < samples * dim {
            let base: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            z.extend_from_slice(&base);
            z.extend(base.iter().map(|v| -v));
        }
        z.truncate(samples * dim);
        Ok(CrnDraws { dim, z })
    }

    pub fn len(&self) -> usize {
        self.z.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// CRN estimate of `∫ φ (log ψ_prev − log π̃)`.
pub fn lmo_objective(g: &IsotropicGaussian, psi_prev: &GaussianMixture, t: &PosteriorTarget, draws: &CrnDraws) -> Result<f64> {
    check_dim(psi_prev.dim(), g.dim())?;
    check_dim(t.dim(), g.dim())?;
    check_dim(draws.dim(), g.dim())?;
    Ok(objective_unchecked(g.mean(), g.sigma(), psi_prev, t, draws))
}

fn objective_unchecked(mean: &[f64], sigma: f64, psi: &GaussianMixture, t: &PosteriorTarget, draws: &CrnDraws) -> f64 {
    let d = mean.len();
    let mut theta = vec![0.0; d];
    let mut total = 0.0;
    for z in draws.z.chunks_exact(d) {
        for j in 0..d {
            theta[j] = mean[j] + sigma * z[j];
        }
        total += psi.log_density_unchecked(&theta) - t.log_unnorm_unchecked(&theta);
    }
    total / draws.len() as f64
}

/// The same objective by quadrature over the box of `g` (d ≤ 2).
pub fn lmo_objective_quadrature(
    g: &IsotropicGaussian,
    psi_prev: &GaussianMixture,
    t: &PosteriorTarget,
    spec: &QuadratureSpec,
) -> Result<f64> {
    check_dim(psi_prev.dim(), g.dim())?;
    check_dim(t.dim(), g.dim())?;
    let bounds = gaussian_box(std::iter::once(g));
    integrate(spec, &bounds, |x| {
        let w = g.log_density_unchecked(x).exp();
        if w == 0.0 {
            0.0
        } else {
            w * (psi_prev.log_density_unchecked(x) - t.log_unnorm_unchecked(x))
        }
    })
}

/// Scaled coordinates `(μ/σ_n, ln(σ/σ_n))`.
struct Domain<'a> {
    c: &'a FamilyConstraints,
}

impl Domain<'_> {
    fn component(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let d = self.c.dim();
        let mut mean: Vec<f64> = x[..d].iter().map(|u| u * self.c.sigma_n()).collect();
        let mut sigma = self.c.sigma_n() * x[d].exp();
        self.c.project(&mut mean, &mut sigma);
        (mean, sigma)
    }

    /// Raw (unprojected) parameters, used for finite-difference probes.
    fn raw(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let d = self.c.dim();
        (x[..d].iter().map(|u| u * self.c.sigma_n()).collect(), self.c.sigma_n() * x[d].exp())
    }

    fn project(&self, x: &mut [f64]) {
        let d = self.c.dim();
        let r = self.c.radius() / self.c.sigma_n();
        let norm = x[..d].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > r {
            for v in x[..d].iter_mut() {
                *v *= r / norm;
            }
        }
        x[d] = x[d].clamp(0.0, 0.5 * self.c.c0().ln());
    }

    fn max_step(&self) -> f64 {
        2.0 * self.c.radius() / self.c.sigma_n() + self.c.c0().ln() + 1.0
    }
}

struct Restart {
    mean: Vec<f64>,
    sigma: f64,
    objective: f64,
    path: Vec<f64>,
}

fn descend<F>(domain: &Domain, start: Vec<f64>, config: &LmoConfig, f: F) -> Restart
where
    F: Fn(&[f64], f64) -> f64,
{
    let eval = |x: &[f64]| {
        let (m, s) = domain.component(x);
        f(&m, s)
    };
    let mut x = start;
    domain.project(&mut x);
    let mut fx = eval(&x);
    let mut path = vec![fx];
    let mut step = config.init_step;
    let max_step = domain.max_step();
    let mut grad = vec![0.0; x.len()];
    for _ in 0..config.max_steps {
        for i in 0..x.len() {
            let mut probe = x.clone();
            probe[i] = x[i] + FD_STEP;
            let (m, s) = domain.raw(&probe);
            let up = f(&m, s);
            probe[i] = x[i] - FD_STEP;
            let (m, s) = domain.raw(&probe);
            let down = f(&m, s);
            grad[i] = (up - down) / (2.0 * FD_STEP);
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            break;
        }
        let floor = 1e-12 * (1.0 + fx.abs());
        let mut accepted = None;
        for _ in 0..MAX_SHRINKS {
            let mut cand: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| xi - step * gi / norm).collect();
            domain.project(&mut cand);
            let fc = eval(&cand);
            if fc < fx - floor {
                accepted = Some((cand, fc));
                break;
            }
            step *= config.shrink;
        }
        let Some((cand, fc)) = accepted else { break };
        let improvement = fx - fc;
        x = cand;
        fx = fc;
        path.push(fx);
        step = (2.0 * step).min(max_step);
        if improvement < config.tol {
            break;
        }
    }
    let (mean, sigma) = domain.component(&x);
    Restart {
        mean,
        sigma,
        objective: fx,
        path,
    }
}

/// Strict preference of `a` over `b`: lower objective, then smaller `‖μ‖`,
/// then smaller `σ`, then lexicographically smaller `μ`.
fn preferred(a: (&[f64], f64, f64), b: (&[f64], f64, f64)) -> bool {
    let (ma, sa, fa) = a;
    let (mb, sb, fb) = b;
    let tol = TIE_TOL * (1.0 + fa.abs().max(fb.abs()));
    if fa < fb - tol {
        return true;
    }
    if fa > fb + tol {
        return false;
    }
    let na: f64 = ma.iter().map(|v| v * v).sum();
    let nb: f64 = mb.iter().map(|v| v * v).sum();
    if na != nb {
        return na < nb;
    }
    if sa != sb {
        return sa < sb;
    }
    ma.iter().zip(mb).find(|(x, y)| x != y).is_some_and(|(x, y)| x < y)
}

/// Multistart projected descent on the CRN surface.
///
/// Restart 0 starts at `μ = 0, σ = σ_n`; the others start at uniform random
/// feasible points seeded from `config.seed`. All restarts share one set of
/// draws. The best restart wins under the tie-break of [`preferred`].
pub fn solve_lmo(
    psi_prev: &GaussianMixture,
    t: &PosteriorTarget,
    c: &FamilyConstraints,
    config: &LmoConfig,
    gap_bound: f64,
) -> Result<LmoResult> {
    check_dim(c.dim(), psi_prev.dim())?;
    check_dim(c.dim(), t.dim())?;
    config.validate()?;
    if !(gap_bound > 0.0) {
        return Err(Error::invalid("gap_bound", "must be positive"));
    }
    let d = c.dim();
    let draws = CrnDraws::new(config.mc_samples, d, derive_seed(config.seed, 0, 0))?;
    let domain = Domain { c };
    let starts: Vec<Vec<f64>> = (0..config.restarts)
        .map(|r| {
            if r == 0 {
                return vec![0.0; d + 1];
            }
            let mut rng = rng_from_seed(derive_seed(config.seed, r as u64, 1));
            let member = crate::divergence::random_member(c, &mut rng);
            let mut x: Vec<f64> = member.mean().iter().map(|m| m / c.sigma_n()).collect();
            x.push((member.sigma() / c.sigma_n()).ln());
            x
        })
        .collect();
    let runs: Vec<Restart> = starts
        .into_par_iter()
        .map(|x0| {
            descend(&domain, x0, config, |m, s| objective_unchecked(m, s, psi_prev, t, &draws))
        })
        .collect();
    let mut best = 0;
    for i in 1..runs.len() {
        let a = &runs[i];
        let b = &runs[best];
        if preferred((&a.mean, a.sigma, a.objective), (&b.mean, b.sigma, b.objective)) {
            best = i;
        }
    }
    let component = IsotropicGaussian::new(runs[best].mean.clone(), runs[best].sigma)?;
    let feasible = in_family(&component, c);
    Ok(LmoResult {
        feasible,
        objective: runs[best].objective,
        component,
        oracle_gap_bound: gap_bound,
        restarts_used: runs.len(),
        descent_paths: runs.into_iter().map(|r| r.path).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridResolution {
    pub mu_points: usize,
    pub sigma_points: usize,
}

impl Default for GridResolution {
    fn default() -> Self {
        GridResolution {
            mu_points: 201,
            sigma_points: 21,
        }
    }
}

impl GridResolution {
    /// Halves the spacing; every original node remains a node.
    pub fn refined(&self) -> Self {
        GridResolution {
            mu_points: 2 * self.mu_points - 1,
            sigma_points: 2 * self.sigma_points - 1,
        }
    }
}

/// Exhaustive minimization of the quadrature objective over an equally
/// spaced `(μ, σ)` grid on `[−M, M] × [σ_n, √c0 σ_n]` (d = 1 only). The grid
/// is scanned with μ in the outer loop and σ in the inner loop, both
/// ascending; the first point reaching the minimum wins.
pub fn lmo_grid_oracle(
    psi_prev: &GaussianMixture,
    t: &PosteriorTarget,
    c: &FamilyConstraints,
    grid: GridResolution,
) -> Result<LmoResult> {
    if c.dim() != 1 || psi_prev.dim() != 1 || t.dim() != 1 {
        return Err(Error::Unsupported("the grid oracle is defined for d = 1 only".into()));
    }
    if grid.mu_points < 2 || grid.sigma_points < 2 {
        return Err(Error::invalid("grid_resolution", "needs at least 2 points per axis"));
    }
    let spec = QuadratureSpec::default();
    let m = c.radius();
    let (slo, shi) = (c.sigma_n(), c.sigma_max());
    let points: Vec<(f64, f64)> = (0..grid.mu_points)
        .flat_map(|i| {
            let mu = -m + 2.0 * m * i as f64 / (grid.mu_points - 1) as f64;
            (0..grid.sigma_points).map(move |j| (mu, slo + (shi - slo) * j as f64 / (grid.sigma_points - 1) as f64))
        })
        .collect();
    let values: Vec<f64> = points
        .par_iter()
        .map(|&(mu, s)| {
            let g = IsotropicGaussian::scalar(mu, s)?;
            lmo_objective_quadrature(&g, psi_prev, t, &spec)
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    let component = IsotropicGaussian::scalar(points[best].0, points[best].1)?;
    Ok(LmoResult {
        feasible: in_family(&component, c),
        component,
        objective: values[best],
        oracle_gap_bound: f64::INFINITY,
        restarts_used: 0,
        descent_paths: Vec::new(),
    })
}
