//! Isotropic Gaussians, finite mixtures of them, and the restricted
//! small-bandwidth family they are drawn from.
//!
//! All densities are evaluated in the log domain. With bandwidths of order
//! `n^{-1/2}` linear-domain values leave the `f64` range quickly, so only
//! [`GaussianMixture::log_density`] style entry points are exposed.

use std::f64::consts::PI;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::seed::rng_from_seed;

/// Relative slack applied by the membership tests.
pub const MEMBERSHIP_SLACK: f64 = 1e-12;
/// Tolerance on `|sum(weights) - 1|`.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// `N(mean, sigma^2 I_d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GaussianRepr")]
pub struct IsotropicGaussian {
    mean: Vec<f64>,
    sigma: f64,
    /// `−(d/2) ln(2πσ²)`, derived from the fields above.
    #[serde(skip)]
    log_norm: f64,
}

#[derive(Deserialize)]
struct GaussianRepr {
    mean: Vec<f64>,
    sigma: f64,
}

impl TryFrom<GaussianRepr> for IsotropicGaussian {
    type Error = Error;
    fn try_from(r: GaussianRepr) -> Result<Self> {
        IsotropicGaussian::new(r.mean, r.sigma)
    }
}

impl IsotropicGaussian {
    pub fn new(mean: Vec<f64>, sigma: f64) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::invalid("mean", "dimension must be at least 1"));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("mean", "all coordinates must be finite"));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid("sigma", format!("must be positive and finite, got {sigma}")));
        }
        let log_norm = -0.5 * mean.len() as f64 * (2.0 * PI * sigma * sigma).ln();
        Ok(IsotropicGaussian { mean, sigma, log_norm })
    }

    /// One-dimensional shorthand.
    pub fn scalar(mean: f64, sigma: f64) -> Result<Self> {
        Self::new(vec![mean], sigma)
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_density(&self, theta: &[f64]) -> Result<f64> {
        check_dim(self.dim(), theta.len())?;
        Ok(self.log_density_unchecked(theta))
    }

    #[inline]
    pub(crate) fn log_density_unchecked(&self, theta: &[f64]) -> f64 {
        let s2 = self.sigma * self.sigma;
        let sq: f64 = self
            .mean
            .iter()
            .zip(theta)
            .map(|(m, t)| (t - m) * (t - m))
            .sum();
        self.log_norm - 0.5 * sq / s2
    }

    pub fn sample(&self, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        if count == 0 {
            return Err(Error::invalid("count", "must be at least 1"));
        }
        let mut rng = rng_from_seed(seed);
        Ok((0..count)
            .map(|_| {
                self.mean
                    .iter()
                    .map(|m| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        m + self.sigma * z
                    })
                    .collect()
            })
            .collect())
    }
}

/// A finite mixture `sum_j w_j N(mu_j, sigma_j^2 I)`. Components are never
/// merged, even when identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureRepr")]
pub struct GaussianMixture {
    components: Vec<IsotropicGaussian>,
    weights: Vec<f64>,
    #[serde(skip)]
    log_weights: Vec<f64>,
}

#[derive(Deserialize)]
struct MixtureRepr {
    components: Vec<IsotropicGaussian>,
    weights: Vec<f64>,
}

impl TryFrom<MixtureRepr> for GaussianMixture {
    type Error = Error;
    fn try_from(r: MixtureRepr) -> Result<Self> {
        GaussianMixture::new(r.components, r.weights)
    }
}

impl From<IsotropicGaussian> for GaussianMixture {
    fn from(g: IsotropicGaussian) -> Self {
        GaussianMixture {
            components: vec![g],
            weights: vec![1.0],
            log_weights: vec![0.0],
        }
    }
}

impl GaussianMixture {
    pub fn new(components: Vec<IsotropicGaussian>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("components", "mixture needs at least one component"));
        }
        if components.len() != weights.len() {
            return Err(Error::invalid(
                "weights",
                format!("{} weights for {} components", weights.len(), components.len()),
            ));
        }
        let d = components[0].dim();
        for g in &components {
            check_dim(d, g.dim())?;
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("weights", "must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::invalid("weights", format!("must sum to 1 (sum = {total})")));
        }
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(GaussianMixture {
            components,
            weights,
            log_weights,
        })
    }

    pub fn components(&self) -> &[IsotropicGaussian] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    /// `log sum_j w_j phi_j(theta)` via log-sum-exp.
    pub fn log_density(&self, theta: &[f64]) -> Result<f64> {
        check_dim(self.dim(), theta.len())?;
        Ok(self.log_density_unchecked(theta))
    }

    pub(crate) fn log_density_unchecked(&self, theta: &[f64]) -> f64 {
        if self.components.len() == 1 {
            return self.components[0].log_density_unchecked(theta);
        }
        // single-pass log-sum-exp with a running maximum
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for (g, lw) in self.components.iter().zip(&self.log_weights) {
            if *lw == f64::NEG_INFINITY {
                continue;
            }
            let v = lw + g.log_density_unchecked(theta);
            if v == f64::NEG_INFINITY {
                continue;
            }
            if v <= max {
                sum += (v - max).exp();
            } else {
                sum = sum * (max - v).exp() + 1.0;
                max = v;
            }
        }
        if max == f64::NEG_INFINITY {
            return max;
        }
        max + sum.ln()
    }

    /// Draws a component index from the weights, then a Gaussian draw.
    pub fn sample(&self, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        if count == 0 {
            return Err(Error::invalid("count", "must be at least 1"));
        }
        let mut rng = rng_from_seed(seed);
        let index = WeightedIndex::new(&self.weights)
            .map_err(|e| Error::invalid("weights", e.to_string()))?;
        Ok((0..count)
            .map(|_| {
                let g = &self.components[index.sample(&mut rng)];
                g.mean
                    .iter()
                    .map(|m| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        m + g.sigma * z
                    })
                    .collect()
            })
            .collect())
    }
}

/// `ψ' = (1 - γ) ψ + γ g`. With `γ = 1` the result is the single component `g`.
pub fn convex_update(m: &GaussianMixture, g: &IsotropicGaussian, gamma: f64) -> Result<GaussianMixture> {
    check_dim(m.dim(), g.dim())?;
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid("gamma", format!("must lie in [0, 1], got {gamma}")));
    }
    if gamma == 0.0 {
        return Ok(m.clone());
    }
    if gamma == 1.0 {
        return Ok(GaussianMixture::from(g.clone()));
    }
    let mut components = m.components.clone();
    components.push(g.clone());
    let mut weights: Vec<f64> = m.weights.iter().map(|w| (1.0 - gamma) * w).collect();
    weights.push(gamma);
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 0.0 {
        weights.iter_mut().for_each(|w| *w /= total);
    }
    GaussianMixture::new(components, weights)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `KL(g2 || g1)` for isotropic Gaussians.
pub fn kl_gaussian_gaussian(g2: &IsotropicGaussian, g1: &IsotropicGaussian) -> Result<f64> {
    check_dim(g1.dim(), g2.dim())?;
    let d = g1.dim() as f64;
    let (s1, s2) = (g1.sigma * g1.sigma, g2.sigma * g2.sigma);
    let kl = 0.5 * (d * s2 / s1 - d + d * (s1 / s2).ln() + sq_dist(&g1.mean, &g2.mean) / s1);
    Ok(kl.max(0.0))
}

/// `chi^2(g2 || g1) = ∫ g2^2 / g1 - 1`, finite only when `2 sigma1^2 > sigma2^2`.
pub fn chi2_gaussian_gaussian(g2: &IsotropicGaussian, g1: &IsotropicGaussian) -> Result<f64> {
    Ok(log1p_chi2(g2, g1)?.exp_m1().max(0.0))
}

/// `ln(1 + chi^2(g2 || g1))`, which stays finite long after the divergence
/// itself overflows.
pub fn log1p_chi2(g2: &IsotropicGaussian, g1: &IsotropicGaussian) -> Result<f64> {
    check_dim(g1.dim(), g2.dim())?;
    let d = g1.dim() as f64;
    let (s1, s2) = (g1.sigma * g1.sigma, g2.sigma * g2.sigma);
    let gap = 2.0 * s1 - s2;
    if !(gap > 0.0) {
        return Err(Error::ValidityRegion {
            sigma1: g1.sigma,
            sigma2: g2.sigma,
        });
    }
    Ok(d * (s1.ln() - g2.sigma.ln() - 0.5 * gap.ln()) + sq_dist(&g1.mean, &g2.mean) / gap)
}

/// Hellinger distance `sqrt(1 - BC)` between two isotropic Gaussians.
pub fn hellinger_gaussian(g2: &IsotropicGaussian, g1: &IsotropicGaussian) -> Result<f64> {
    check_dim(g1.dim(), g2.dim())?;
    let d = g1.dim() as f64;
    let (s1, s2) = (g1.sigma * g1.sigma, g2.sigma * g2.sigma);
    let log_bc = 0.5 * d * (g1.sigma * g2.sigma / (0.5 * (s1 + s2))).ln()
        - sq_dist(&g1.mean, &g2.mean) / (4.0 * (s1 + s2));
    Ok((-log_bc.exp_m1()).max(0.0).sqrt().min(1.0))
}

/// The parameters `(M, sigma_n, c0, d)` of the restricted family: means in
/// the closed `M`-ball, `sigma` in `[sigma_n, sqrt(c0) sigma_n]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConstraintsRepr")]
pub struct FamilyConstraints {
    #[serde(rename = "M")]
    radius: f64,
    sigma_n: f64,
    c0: f64,
    d: usize,
}

#[derive(Deserialize)]
struct ConstraintsRepr {
    #[serde(rename = "M")]
    radius: f64,
    sigma_n: f64,
    c0: f64,
    d: usize,
}

impl TryFrom<ConstraintsRepr> for FamilyConstraints {
    type Error = Error;
    fn try_from(r: ConstraintsRepr) -> Result<Self> {
        FamilyConstraints::new(r.radius, r.sigma_n, r.c0, r.d)
    }
}

impl FamilyConstraints {
    pub fn new(radius: f64, sigma_n: f64, c0: f64, d: usize) -> Result<Self> {
        if !(c0 > 1.0 && c0 < 2.0) {
            return Err(Error::invalid("c0", format!("c0 must lie in (1, 2), got {c0}")));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid("M", format!("must be positive, got {radius}")));
        }
        if !(sigma_n > 0.0 && sigma_n.is_finite()) {
            return Err(Error::invalid("sigma_n", format!("must be positive, got {sigma_n}")));
        }
        if d == 0 {
            return Err(Error::invalid("d", "dimension must be at least 1"));
        }
        Ok(FamilyConstraints {
            radius,
            sigma_n,
            c0,
            d,
        })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
    pub fn sigma_n(&self) -> f64 {
        self.sigma_n
    }
    pub fn c0(&self) -> f64 {
        self.c0
    }
    pub fn dim(&self) -> usize {
        self.d
    }
    pub fn sigma_max(&self) -> f64 {
        self.c0.sqrt() * self.sigma_n
    }

    /// Radial projection onto the mean ball and clamping of `sigma`.
    pub fn project(&self, mean: &mut [f64], sigma: &mut f64) {
        let norm = mean.iter().map(|m| m * m).sum::<f64>().sqrt();
        if norm > self.radius {
            let scale = self.radius / norm;
            mean.iter_mut().for_each(|m| *m *= scale);
        }
        *sigma = sigma.clamp(self.sigma_n, self.sigma_max());
    }
}

pub fn in_family(g: &IsotropicGaussian, c: &FamilyConstraints) -> bool {
    if g.dim() != c.d {
        return false;
    }
    let norm = g.mean.iter().map(|m| m * m).sum::<f64>().sqrt();
    norm <= c.radius * (1.0 + MEMBERSHIP_SLACK)
        && g.sigma >= c.sigma_n * (1.0 - MEMBERSHIP_SLACK)
        && g.sigma <= c.sigma_max() * (1.0 + MEMBERSHIP_SLACK)
}

pub fn mixture_in_family(m: &GaussianMixture, c: &FamilyConstraints) -> bool {
    let total: f64 = m.weights.iter().sum();
    (total - 1.0).abs() <= SIMPLEX_TOL && m.components.iter().all(|g| in_family(g, c))
}
