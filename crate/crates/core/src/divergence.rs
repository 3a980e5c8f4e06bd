//! Numerical divergences between mixtures and posterior targets, the Bregman
//! form of the KL objective, and curvature of the KL over the constrained
//! family.
//!
//! Two evaluation paths are available through [`Budget`]: Monte Carlo with
//! a fixed seed (any dimension) and tensor-grid quadrature (one or two
//! dimensions).

use rand::Rng as _;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::gaussian::{log1p_chi2, FamilyConstraints, GaussianMixture, IsotropicGaussian};
use crate::quadrature::{gaussian_box, integrate, log_sum_exp, QuadratureSpec};
use crate::seed::{derive_seed, rng_from_seed, Rng};
use crate::targets::PosteriorTarget;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    MonteCarlo { samples: usize, seed: u64 },
    Quadrature(QuadratureSpec),
}

impl Default for Budget {
    fn default() -> Self {
        Budget::Quadrature(QuadratureSpec::default())
    }
}

impl Budget {
    fn validate(&self) -> Result<()> {
        if let Budget::MonteCarlo { samples, .. } = self {
            if *samples < 2 {
                return Err(Error::invalid("samples", "Monte Carlo budget needs at least 2 draws"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    MonteCarlo,
    Quadrature,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceEstimate {
    pub value: f64,
    /// Zero for quadrature.
    pub std_error: f64,
    pub method: Method,
    /// Draws for Monte Carlo, grid nodes for quadrature.
    pub samples: usize,
    /// Whether `value` is the divergence itself rather than the divergence
    /// shifted by the (unknown) log-normalizer of the target.
    pub normalized: bool,
}

fn quadrature_nodes(spec: &QuadratureSpec, d: usize) -> usize {
    match d {
        1 => spec.nodes_1d,
        _ => spec.nodes_2d * spec.nodes_2d,
    }
}

fn mean_and_se(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `x ↦ exp(lp) * h` with the convention `0 * anything = 0`.
#[inline]
fn weighted(lp: f64, h: f64) -> f64 {
    let w = lp.exp();
    if w == 0.0 {
        0.0
    } else {
        w * h
    }
}

/// `KL(q ‖ π)` for a mixture `q` and a posterior target.
///
/// Without a known normalizer the returned value is `KL − log Z`, flagged by
/// `normalized = false`; it still ranks candidates correctly.
pub fn kl_to_target(q: &GaussianMixture, target: &PosteriorTarget, budget: &Budget) -> Result<DivergenceEstimate> {
    check_dim(target.dim(), q.dim())?;
    budget.validate()?;
    let offset = target.log_normalizer().unwrap_or(0.0);
    let normalized = target.log_normalizer().is_some();
    match *budget {
        Budget::Quadrature(spec) => {
            let bounds = gaussian_box(q.components());
            let v = integrate(&spec, &bounds, |x| {
                let lq = q.log_density_unchecked(x);
                weighted(lq, lq - target.log_unnorm_unchecked(x))
            })?;
            Ok(DivergenceEstimate {
                value: v + offset,
                std_error: 0.0,
                method: Method::Quadrature,
                samples: quadrature_nodes(&spec, q.dim()),
                normalized,
            })
        }
        Budget::MonteCarlo { samples, seed } => {
            let draws = q.sample(samples, seed)?;
            let vals: Vec<f64> = draws
                .par_iter()
                .map(|x| q.log_density_unchecked(x) - target.log_unnorm_unchecked(x))
                .collect();
            let (mean, se) = mean_and_se(&vals);
            Ok(DivergenceEstimate {
                value: mean + offset,
                std_error: se,
                method: Method::MonteCarlo,
                samples,
                normalized,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BregmanEstimate {
    /// `J(ψ₂) − J(ψ₁) − ∫(ψ₂ − ψ₁)(log ψ₁ − log π̃)` with `J(ψ) = ∫ψ log(ψ/π̃)`.
    pub bregman: DivergenceEstimate,
    /// `KL(ψ₂ ‖ ψ₁)` evaluated directly.
    pub direct_kl: DivergenceEstimate,
}

/// Bregman divergence of the KL objective between two mixtures, alongside
/// the direct `KL(ψ₂ ‖ ψ₁)` it must equal. The target normalizer cancels, so
/// both estimates are always `normalized`.
pub fn bregman(
    psi2: &GaussianMixture,
    psi1: &GaussianMixture,
    target: &PosteriorTarget,
    budget: &Budget,
) -> Result<BregmanEstimate> {
    check_dim(psi1.dim(), psi2.dim())?;
    check_dim(target.dim(), psi1.dim())?;
    budget.validate()?;
    match *budget {
        Budget::Quadrature(spec) => {
            let bounds = gaussian_box(psi1.components().iter().chain(psi2.components()));
            let nodes = quadrature_nodes(&spec, psi1.dim());
            let j2 = integrate(&spec, &bounds, |x| {
                let l2 = psi2.log_density_unchecked(x);
                weighted(l2, l2 - target.log_unnorm_unchecked(x))
            })?;
            let j1 = integrate(&spec, &bounds, |x| {
                let l1 = psi1.log_density_unchecked(x);
                weighted(l1, l1 - target.log_unnorm_unchecked(x))
            })?;
            let lin = integrate(&spec, &bounds, |x| {
                let l1 = psi1.log_density_unchecked(x);
                let l2 = psi2.log_density_unchecked(x);
                let s = l1 - target.log_unnorm_unchecked(x);
                weighted(l2, s) - weighted(l1, s)
            })?;
            let direct = integrate(&spec, &bounds, |x| {
                let l1 = psi1.log_density_unchecked(x);
                let l2 = psi2.log_density_unchecked(x);
                weighted(l2, l2 - l1)
            })?;
            let est = |value| DivergenceEstimate {
                value,
                std_error: 0.0,
                method: Method::Quadrature,
                samples: nodes,
                normalized: true,
            };
            Ok(BregmanEstimate {
                bregman: est(j2 - j1 - lin),
                direct_kl: est(direct),
            })
        }
        Budget::MonteCarlo { samples, seed } => {
            let from2 = psi2.sample(samples, derive_seed(seed, 2, 0))?;
            let from1 = psi1.sample(samples, derive_seed(seed, 1, 0))?;
            // per-draw terms under ψ₂: (log ψ₂ − log π̃, log ψ₁ − log π̃, log ψ₂ − log ψ₁)
            let terms2: Vec<(f64, f64, f64)> = from2
                .par_iter()
                .map(|x| {
                    let l1 = psi1.log_density_unchecked(x);
                    let l2 = psi2.log_density_unchecked(x);
                    let lt = target.log_unnorm_unchecked(x);
                    (l2 - lt, l1 - lt, l2 - l1)
                })
                .collect();
            let terms1: Vec<f64> = from1
                .par_iter()
                .map(|x| psi1.log_density_unchecked(x) - target.log_unnorm_unchecked(x))
                .collect();
            let n = samples as f64;
            let j2 = terms2.iter().map(|t| t.0).sum::<f64>() / n;
            let s2 = terms2.iter().map(|t| t.1).sum::<f64>() / n;
            let j1 = terms1.iter().sum::<f64>() / n;
            // the ψ₁ draws enter J(ψ₁) and the linear term with opposite signs
            let value = j2 - j1 - (s2 - j1);
            let combined: Vec<f64> = terms2.iter().map(|t| t.0 - t.1).collect();
            let (_, se) = mean_and_se(&combined);
            let direct: Vec<f64> = terms2.iter().map(|t| t.2).collect();
            let (direct_mean, direct_se) = mean_and_se(&direct);
            Ok(BregmanEstimate {
                bregman: DivergenceEstimate {
                    value,
                    std_error: se,
                    method: Method::MonteCarlo,
                    samples,
                    normalized: true,
                },
                direct_kl: DivergenceEstimate {
                    value: direct_mean,
                    std_error: direct_se,
                    method: Method::MonteCarlo,
                    samples,
                    normalized: true,
                },
            })
        }
    }
}

/// `ln Σ_j β_j (χ²(φ‖φ_j) + χ²(φ_j‖φ))`, finite even when the bound itself
/// overflows.
pub fn ln_chi2_mixture_bound(phi: &IsotropicGaussian, m: &GaussianMixture) -> Result<f64> {
    check_dim(m.dim(), phi.dim())?;
    let mut terms = Vec::with_capacity(2 * m.len());
    for (g, &w) in m.components().iter().zip(m.weights()) {
        if w == 0.0 {
            continue;
        }
        for l in [log1p_chi2(phi, g)?, log1p_chi2(g, phi)?] {
            // ln(e^l − 1) = l + ln(1 − e^{−l})
            if l > 0.0 {
                terms.push(w.ln() + l + (-(-l).exp_m1()).ln());
            }
        }
    }
    Ok(log_sum_exp(&terms))
}

/// `Σ_j β_j (χ²(φ‖φ_j) + χ²(φ_j‖φ))`, the pointwise upper bound on the
/// second-order term of the KL along the segment from `m` towards `φ`.
pub fn chi2_mixture_bound(phi: &IsotropicGaussian, m: &GaussianMixture) -> Result<f64> {
    Ok(ln_chi2_mixture_bound(phi, m)?.exp())
}

/// Logarithm of the closed-form curvature constant
/// `2 (2 − c0)^{−d/2} exp(2M² / ((2 − c0) σ_n))`.
pub fn ln_curvature_bound_nominal(c: &FamilyConstraints) -> f64 {
    let d = c.dim() as f64;
    let gap = 2.0 - c.c0();
    2f64.ln() - 0.5 * d * gap.ln() + 2.0 * c.radius() * c.radius() / (gap * c.sigma_n())
}

pub fn curvature_bound_nominal(c: &FamilyConstraints) -> f64 {
    ln_curvature_bound_nominal(c).exp()
}

/// Logarithm of `2 c0^d (2 − c0)^{−d/2} exp(4M² / ((2 − c0) σ_n²))`, the
/// supremum of `χ²(g₂‖g₁) + χ²(g₁‖g₂) + 2` over pairs of family members.
pub fn ln_curvature_bound_worst_case(c: &FamilyConstraints) -> f64 {
    let d = c.dim() as f64;
    let gap = 2.0 - c.c0();
    2f64.ln() + d * c.c0().ln() - 0.5 * d * gap.ln()
        + 4.0 * c.radius() * c.radius() / (gap * c.sigma_n() * c.sigma_n())
}

pub fn curvature_bound_worst_case(c: &FamilyConstraints) -> f64 {
    ln_curvature_bound_worst_case(c).exp()
}

/// `KL(ψ₁ + α(φ − ψ₁) ‖ ψ₁)` by quadrature, written as
/// `∫ ψ₁ (1 + αx) ln(1 + αx)` with `x = φ/ψ₁ − 1` so that small `α` keeps
/// full relative precision. `α` may be any value for which the perturbed
/// density stays non-negative on the grid.
pub fn perturbation_kl(psi1: &GaussianMixture, phi: &IsotropicGaussian, alpha: f64, spec: &QuadratureSpec) -> Result<f64> {
    check_dim(psi1.dim(), phi.dim())?;
    if alpha == 0.0 {
        return Ok(0.0);
    }
    let bounds = gaussian_box(psi1.components().iter().chain(std::iter::once(phi)));
    integrate(spec, &bounds, |x| {
        let l1 = psi1.log_density_unchecked(x);
        let lphi = phi.log_density_unchecked(x);
        let u = lphi - l1;
        if u < 30.0 {
            let ax = alpha * u.exp_m1();
            weighted(l1, (1.0 + ax) * ax.ln_1p())
        } else {
            // φ dominates: ψ₂/ψ₁ = 1 − α + α e^u, taken in log form
            let log_ratio = u + (alpha + (1.0 - alpha) * (-u).exp()).ln();
            weighted(l1 + log_ratio, log_ratio)
        }
    })
}

/// `(2/α²) KL(ψ₁ + α(φ − ψ₁) ‖ ψ₁)`, one draw of the curvature supremum.
pub fn scaled_bregman(psi1: &GaussianMixture, phi: &IsotropicGaussian, alpha: f64, spec: &QuadratureSpec) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid("alpha", format!("must lie in (0, 1], got {alpha}")));
    }
    Ok(2.0 / (alpha * alpha) * perturbation_kl(psi1, phi, alpha, spec)?)
}

/// A member of the family drawn uniformly: mean uniform in the ball, σ
/// uniform on the bandwidth interval.
pub fn random_member(c: &FamilyConstraints, rng: &mut Rng) -> IsotropicGaussian {
    let d = c.dim();
    let mut dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let r = c.radius() * rng.random::<f64>().powf(1.0 / d as f64);
    for v in dir.iter_mut() {
        *v *= if norm > 0.0 { r / norm } else { 0.0 };
    }
    let sigma = c.sigma_n() + (c.sigma_max() - c.sigma_n()) * rng.random::<f64>();
    IsotropicGaussian::new(dir, sigma).expect("family members are valid")
}

/// A mixture of 1 to 5 random members with Dirichlet(1) weights.
pub fn random_mixture(c: &FamilyConstraints, rng: &mut Rng) -> GaussianMixture {
    let k = rng.random_range(1..=5usize);
    let comps: Vec<IsotropicGaussian> = (0..k).map(|_| random_member(c, rng)).collect();
    let raw: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = raw.iter().sum();
    let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let drift = 1.0 - weights.iter().sum::<f64>();
    weights[0] += drift;
    GaussianMixture::new(comps, weights).expect("random mixture is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureTrial {
    pub index: usize,
    pub psi1: GaussianMixture,
    pub phi: IsotropicGaussian,
    pub alpha: f64,
    pub scaled_bregman: f64,
    pub ln_chi2_bound: f64,
}

/// Random triples `(ψ₁, φ, α)` from the family with their scaled Bregman
/// values. Trial `t` uses the seed `derive_seed(seed, t, 0)`, so the result
/// does not depend on the thread count.
pub fn curvature_trials(
    c: &FamilyConstraints,
    trials: usize,
    seed: u64,
    spec: &QuadratureSpec,
) -> Result<Vec<CurvatureTrial>> {
    if c.dim() > 2 {
        return Err(Error::Unsupported(format!(
            "curvature sampling needs quadrature, available for d <= 2 (got d = {})",
            c.dim()
        )));
    }
    if trials == 0 {
        return Err(Error::invalid("trials", "must be at least 1"));
    }
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_from_seed(derive_seed(seed, t as u64, 0));
            let psi1 = random_mixture(c, &mut rng);
            let phi = random_member(c, &mut rng);
            let alpha = 1.0 - rng.random::<f64>();
            let value = scaled_bregman(&psi1, &phi, alpha, spec)?;
            let ln_chi2_bound = ln_chi2_mixture_bound(&phi, &psi1)?;
            Ok(CurvatureTrial {
                index: t,
                psi1,
                phi,
                alpha,
                scaled_bregman: value,
                ln_chi2_bound,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureWitness {
    pub psi1: GaussianMixture,
    pub phi: IsotropicGaussian,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureReport {
    pub constraints: FamilyConstraints,
    pub trials: usize,
    pub seed: u64,
    pub empirical_sup: f64,
    pub sup_witness: CurvatureWitness,
    pub nominal_bound: f64,
    pub worst_case_bound: f64,
    pub ln_nominal_bound: f64,
    pub ln_worst_case_bound: f64,
    /// Trials where the scaled Bregman value exceeded its own χ² bound (with
    /// 1e-6 relative slack for quadrature error).
    pub chi2_violations: usize,
    /// Trials where the χ² bound exceeded the worst-case constant.
    pub worst_case_violations: usize,
    /// Whether the empirical supremum exceeds the nominal closed form.
    pub nominal_exceeded: bool,
}

/// Monte Carlo lower estimate of the curvature constant together with both
/// closed-form upper bounds.
pub fn curvature_sample(c: &FamilyConstraints, trials: usize, seed: u64) -> Result<CurvatureReport> {
    let spec = QuadratureSpec::default();
    let records = curvature_trials(c, trials, seed, &spec)?;
    let mut best = 0usize;
    for (i, r) in records.iter().enumerate() {
        if r.scaled_bregman > records[best].scaled_bregman {
            best = i;
        }
    }
    let ln_nominal = ln_curvature_bound_nominal(c);
    let ln_worst = ln_curvature_bound_worst_case(c);
    let chi2_violations = records
        .iter()
        .filter(|r| r.scaled_bregman.max(f64::MIN_POSITIVE).ln() > r.ln_chi2_bound + 1e-6)
        .count();
    let worst_case_violations = records.iter().filter(|r| r.ln_chi2_bound > ln_worst + 1e-9).count();
    let sup = records[best].scaled_bregman;
    let nominal_exceeded = sup.ln() > ln_nominal;
    if nominal_exceeded {
        log::warn!(
            "empirical curvature {sup:.6e} exceeds the nominal bound {:.6e}",
            ln_nominal.exp()
        );
    }
    Ok(CurvatureReport {
        constraints: *c,
        trials,
        seed,
        empirical_sup: sup,
        sup_witness: CurvatureWitness {
            psi1: records[best].psi1.clone(),
            phi: records[best].phi.clone(),
            alpha: records[best].alpha,
        },
        nominal_bound: ln_nominal.exp(),
        worst_case_bound: ln_worst.exp(),
        ln_nominal_bound: ln_nominal,
        ln_worst_case_bound: ln_worst,
        chi2_violations,
        worst_case_violations,
        nominal_exceeded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{chi2_gaussian_gaussian, kl_gaussian_gaussian};
    use crate::quadrature::{log_trapezoid, significant_support};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn g(m: f64, s: f64) -> IsotropicGaussian {
        IsotropicGaussian::scalar(m, s).unwrap()
    }

    fn gaussian_target(m: f64, s: f64, shift: f64) -> PosteriorTarget {
        let comp = g(m, s);
        PosteriorTarget::new(1, move |x| comp.log_density(x).unwrap() + shift).with_normalizer(shift)
    }

    #[test]
    fn kl_to_target_matches_closed_form() {
        let q = GaussianMixture::from(g(0.3, 0.8));
        let t = gaussian_target(-0.1, 1.1, 2.5);
        let exact = kl_gaussian_gaussian(&g(0.3, 0.8), &g(-0.1, 1.1)).unwrap();
        let quad = kl_to_target(&q, &t, &Budget::default()).unwrap();
        assert!(quad.normalized);
        assert_relative_eq!(quad.value, exact, epsilon = 1e-9);
        let mc = kl_to_target(&q, &t, &Budget::MonteCarlo { samples: 200_000, seed: 4 }).unwrap();
        assert!((mc.value - exact).abs() < 4.0 * mc.std_error + 1e-12, "{mc:?} vs {exact}");
    }

    #[test]
    fn kl_to_unnormalized_target_is_offset() {
        let q = GaussianMixture::from(g(0.0, 1.0));
        let comp = g(0.5, 1.0);
        let t = PosteriorTarget::new(1, move |x| comp.log_density(x).unwrap() + 3.0);
        let est = kl_to_target(&q, &t, &Budget::default()).unwrap();
        assert!(!est.normalized);
        assert_relative_eq!(est.value, 0.125 - 3.0, epsilon = 1e-9);
    }

    #[test]
    fn mc_budget_needs_two_draws() {
        let q = GaussianMixture::from(g(0.0, 1.0));
        let t = gaussian_target(0.0, 1.0, 0.0);
        assert!(kl_to_target(&q, &t, &Budget::MonteCarlo { samples: 1, seed: 0 }).is_err());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let q = GaussianMixture::from(IsotropicGaussian::new(vec![0.0, 0.0], 1.0).unwrap());
        let t = gaussian_target(0.0, 1.0, 0.0);
        assert!(matches!(
            kl_to_target(&q, &t, &Budget::default()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn bregman_matches_direct_kl_for_gaussians() {
        let p2 = GaussianMixture::from(g(0.4, 0.9));
        let p1 = GaussianMixture::from(g(0.0, 1.0));
        let t = gaussian_target(1.0, 0.7, -4.0);
        let b = bregman(&p2, &p1, &t, &Budget::default()).unwrap();
        let exact = kl_gaussian_gaussian(&g(0.4, 0.9), &g(0.0, 1.0)).unwrap();
        assert_relative_eq!(b.bregman.value, exact, epsilon = 1e-8);
        assert_relative_eq!(b.direct_kl.value, exact, epsilon = 1e-8);
        let mc = bregman(&p2, &p1, &t, &Budget::MonteCarlo { samples: 100_000, seed: 9 }).unwrap();
        assert!((mc.bregman.value - exact).abs() < 4.0 * mc.bregman.std_error);
        assert!((mc.direct_kl.value - exact).abs() < 4.0 * mc.direct_kl.std_error);
    }

    #[test]
    fn chi2_bound_example() {
        // φ = N(0.5, 1) against a single N(0, 1): 2 (e^{0.25} − 1)
        let b = chi2_mixture_bound(&g(0.5, 1.0), &GaussianMixture::from(g(0.0, 1.0))).unwrap();
        assert_relative_eq!(b, 2.0 * (0.25f64.exp() - 1.0), epsilon = 1e-12);
        assert_relative_eq!(b, 0.568_050_833_375_483, epsilon = 1e-12);
    }

    #[test]
    fn chi2_bound_of_identical_component_is_zero() {
        let b = chi2_mixture_bound(&g(0.2, 0.5), &GaussianMixture::from(g(0.2, 0.5))).unwrap();
        assert_eq!(b, 0.0);
    }

    #[test]
    fn curvature_bounds_meet_at_the_degenerate_corner() {
        // the radius must be positive; 1e-9 makes the exponential factor 1 to
        // double precision
        for d in 1..4 {
            let c = FamilyConstraints::new(1e-9, 0.3, 1.0 + 1e-12, d).unwrap();
            assert_relative_eq!(curvature_bound_nominal(&c), 2.0, epsilon = 1e-9);
            assert_relative_eq!(curvature_bound_worst_case(&c), 2.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn vanishing_radius_leaves_the_dimension_factor() {
        let c = FamilyConstraints::new(1e-9, 0.3, 1.5, 2).unwrap();
        assert_relative_eq!(curvature_bound_nominal(&c), 2.0 / 0.5, max_relative = 1e-12);
        assert_relative_eq!(curvature_bound_worst_case(&c), 2.0 * 2.25 / 0.5, max_relative = 1e-12);
    }

    #[test]
    fn worst_case_bound_is_attained_by_the_extreme_pair() {
        // χ²(a‖b) + χ²(b‖a) + 2 at ‖Δμ‖ = 2M, σ_a = σ_max, σ_b = σ_n is bounded
        // by the worst-case constant
        let c = FamilyConstraints::new(0.4, 0.5, 1.5, 1).unwrap();
        let a = g(0.4, c.sigma_max());
        let b = g(-0.4, c.sigma_n());
        let pair = chi2_gaussian_gaussian(&a, &b).unwrap() + chi2_gaussian_gaussian(&b, &a).unwrap() + 2.0;
        assert!(pair <= curvature_bound_worst_case(&c));
        assert!(pair > 0.1 * curvature_bound_worst_case(&c));
    }

    #[test]
    fn identical_perturbation_has_zero_curvature() {
        let psi1 = GaussianMixture::from(g(0.1, 0.2));
        let v = scaled_bregman(&psi1, &g(0.1, 0.2), 0.7, &QuadratureSpec::default()).unwrap();
        assert!(v.abs() < 1e-14);
    }

    #[test]
    fn scaled_bregman_rejects_alpha_outside_unit_interval() {
        let psi1 = GaussianMixture::from(g(0.0, 1.0));
        assert!(scaled_bregman(&psi1, &g(0.0, 1.0), 0.0, &QuadratureSpec::default()).is_err());
        assert!(scaled_bregman(&psi1, &g(0.0, 1.0), 1.5, &QuadratureSpec::default()).is_err());
    }

    #[test]
    fn full_step_equals_closed_form_kl() {
        // α = 1 replaces ψ₁ by φ
        let psi1 = GaussianMixture::from(g(0.0, 1.0));
        let phi = g(0.3, 1.2);
        let kl = perturbation_kl(&psi1, &phi, 1.0, &QuadratureSpec::default()).unwrap();
        assert_relative_eq!(kl, kl_gaussian_gaussian(&phi, &g(0.0, 1.0)).unwrap(), epsilon = 1e-9);
    }

    #[test]
    fn curvature_sampling_respects_dimension_limit() {
        let c = FamilyConstraints::new(0.5, 0.1, 1.5, 3).unwrap();
        assert!(matches!(curvature_sample(&c, 10, 0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn curvature_sampling_is_deterministic() {
        let c = FamilyConstraints::new(0.5, 0.3, 1.5, 1).unwrap();
        let a = curvature_sample(&c, 40, 11).unwrap();
        let b = curvature_sample(&c, 40, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.empirical_sup <= a.worst_case_bound);
        assert_eq!(a.chi2_violations, 0);
    }

    #[test]
    fn random_members_stay_in_the_family() {
        let c = FamilyConstraints::new(0.7, 0.2, 1.8, 2).unwrap();
        let mut rng = rng_from_seed(5);
        for _ in 0..500 {
            let m = random_mixture(&c, &mut rng);
            assert!(crate::gaussian::mixture_in_family(&m, &c));
        }
    }

    /// χ²(φ‖ψ) by direct log-domain quadrature on the significant support.
    fn chi2_quadrature(phi: &IsotropicGaussian, psi: &IsotropicGaussian) -> f64 {
        let log_f = |x: f64| 2.0 * phi.log_density(&[x]).unwrap() - psi.log_density(&[x]).unwrap();
        let (lo, hi) = significant_support(log_f, -5.0, 5.0, 50.0);
        log_trapezoid(log_f, lo, hi, 4096).exp_m1()
    }

    #[test]
    fn chi2_bound_terms_match_quadrature() {
        let phi = g(0.2, 0.5);
        let comp = g(-0.3, 0.55);
        let m = GaussianMixture::from(comp.clone());
        let direct = chi2_quadrature(&phi, &comp) + chi2_quadrature(&comp, &phi);
        assert_relative_eq!(chi2_mixture_bound(&phi, &m).unwrap(), direct, max_relative = 1e-8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn scaled_bregman_lies_under_its_chi2_bound(seed in any::<u64>()) {
            let c = FamilyConstraints::new(0.5, 0.3, 1.5, 1).unwrap();
            let t = curvature_trials(&c, 1, seed, &QuadratureSpec::default()).unwrap().remove(0);
            prop_assert!(t.scaled_bregman >= -1e-12);
            prop_assert!(t.scaled_bregman.max(f64::MIN_POSITIVE).ln() <= t.ln_chi2_bound + 1e-6);
            prop_assert!(t.ln_chi2_bound <= ln_curvature_bound_worst_case(&c) + 1e-9);
        }
    }
}
