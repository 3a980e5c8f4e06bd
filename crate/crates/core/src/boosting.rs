//! The functional Frank–Wolfe loop: at step `k` the oracle picks a family
//! member `φ` against the current mixture `ψ`, and the mixture moves to
//! `(1 − γ_k) ψ + γ_k φ` with `γ_k = 2/(k + 2)`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::divergence::{
    curvature_bound_nominal, curvature_bound_worst_case, curvature_sample, kl_to_target, Budget, DivergenceEstimate,
};
use crate::error::{check_dim, Error, Result};
use crate::gaussian::{convex_update, in_family, FamilyConstraints, GaussianMixture, IsotropicGaussian};
use crate::lmo::{solve_lmo, LmoConfig};
use crate::seed::derive_seed;
use crate::targets::PosteriorTarget;

/// `γ_k = 2/(k + 2)`.
pub fn step_size(k: i64) -> Result<f64> {
    if k < 0 {
        return Err(Error::invalid("k", format!("step index must be non-negative, got {k}")));
    }
    Ok(2.0 / (k as f64 + 2.0))
}

/// The generic Frank–Wolfe guarantee `4C/(k + 2)`.
pub fn frank_wolfe_rate_bound(k: u64, curvature: f64) -> f64 {
    4.0 * curvature / (k as f64 + 2.0)
}

/// `8 (2 − c0)^{−d/2} exp(2M²/((2 − c0) σ_n)) / (k + 2)`, the closed-form
/// rate with the nominal curvature constant.
pub fn nominal_rate_bound(k: u64, c: &FamilyConstraints) -> f64 {
    frank_wolfe_rate_bound(k, curvature_bound_nominal(c))
}

/// `⌈exp(√n)⌉`, the iteration schedule that keeps the optimization error
/// below the statistical error.
pub fn required_iterations(n: i64) -> Result<u64> {
    if n < 0 {
        return Err(Error::invalid("n", format!("sample size must be non-negative, got {n}")));
    }
    let k = (n as f64).sqrt().exp().ceil();
    if k >= u64::MAX as f64 {
        return Err(Error::invalid("n", format!("schedule for n = {n} overflows")));
    }
    Ok(k as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureSource {
    /// Empirical supremum from this many random perturbations (d ≤ 2; higher
    /// dimensions fall back to the worst-case constant).
    Sampled { trials: usize },
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostConfig {
    pub iterations: usize,
    pub lmo: LmoConfig,
    pub eval_budget: Budget,
    pub seed: u64,
    pub curvature: CurvatureSource,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            iterations: 10,
            lmo: LmoConfig::default(),
            eval_budget: Budget::default(),
            seed: 0,
            curvature: CurvatureSource::Sampled { trials: 2000 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureOrigin {
    Sampled,
    WorstCase,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvatureSummary {
    /// The constant used for the per-step bound.
    pub used: f64,
    pub origin: CurvatureOrigin,
    pub nominal: f64,
    pub worst_case: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostStep {
    pub k: usize,
    pub gamma: f64,
    pub component: IsotropicGaussian,
    /// KL of the mixture after this step; up to the log-normalizer when
    /// `objective.normalized` is false.
    pub objective: DivergenceEstimate,
    pub lmo_objective: f64,
    pub lmo_restarts: usize,
    pub oracle_gap_bound: f64,
    /// `4C/(k + 3)` with the curvature in use: the guarantee after `k + 1`
    /// completed steps.
    pub rate_bound: f64,
    /// The same with the nominal curvature constant.
    pub rate_bound_nominal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostTrace {
    pub init: IsotropicGaussian,
    pub constraints: FamilyConstraints,
    pub seed: u64,
    pub curvature: CurvatureSummary,
    pub steps: Vec<BoostStep>,
}

impl BoostTrace {
    /// One JSON object per step.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for s in &self.steps {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn csv_header(d: usize) -> Vec<String> {
        let mut h = vec!["k".to_string(), "gamma".to_string()];
        h.extend((1..=d).map(|j| format!("mu{j}")));
        h.extend(
            ["sigma", "objective", "stderr", "bound_empirical", "bound_nominal"]
                .iter()
                .map(|s| s.to_string()),
        );
        h
    }

    /// Flat table with columns
    /// `k, gamma, mu1..mud, sigma, objective, stderr, bound_empirical, bound_nominal`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(Self::csv_header(self.constraints.dim()))?;
        for s in &self.steps {
            let mut row = vec![s.k.to_string(), s.gamma.to_string()];
            row.extend(s.component.mean().iter().map(|m| m.to_string()));
            row.push(s.component.sigma().to_string());
            row.push(s.objective.value.to_string());
            row.push(s.objective.std_error.to_string());
            row.push(s.rate_bound.to_string());
            row.push(s.rate_bound_nominal.to_string());
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn resolve_curvature(c: &FamilyConstraints, config: &BoostConfig) -> Result<CurvatureSummary> {
    let nominal = curvature_bound_nominal(c);
    let worst_case = curvature_bound_worst_case(c);
    let (used, origin) = match config.curvature {
        CurvatureSource::Fixed(v) => {
            if !(v >= 0.0) {
                return Err(Error::invalid("curvature", "must be non-negative"));
            }
            (v, CurvatureOrigin::Fixed)
        }
        CurvatureSource::Sampled { .. } if c.dim() > 2 => (worst_case, CurvatureOrigin::WorstCase),
        CurvatureSource::Sampled { trials } => {
            let report = curvature_sample(c, trials, derive_seed(config.seed, 0, 2))?;
            (report.empirical_sup, CurvatureOrigin::Sampled)
        }
    };
    Ok(CurvatureSummary {
        used,
        origin,
        nominal,
        worst_case,
    })
}

/// Runs `config.iterations` Frank–Wolfe steps from `init`.
///
/// Since `γ_0 = 1` the initializer is replaced by the first oracle
/// component, so the returned mixture has exactly `iterations` components;
/// `init` is kept in the trace. Step `k` seeds its oracle with
/// `derive_seed(seed, k, 0)` and Monte Carlo objective tracking with
/// `derive_seed(seed, k, 1)`.
pub fn run_boost(
    t: &PosteriorTarget,
    c: &FamilyConstraints,
    init: &IsotropicGaussian,
    config: &BoostConfig,
) -> Result<(GaussianMixture, BoostTrace)> {
    check_dim(c.dim(), t.dim())?;
    check_dim(c.dim(), init.dim())?;
    if config.iterations == 0 {
        return Err(Error::invalid("iterations", "must be at least 1"));
    }
    if !in_family(init, c) {
        return Err(Error::Constraint("initial component lies outside the constrained family".into()));
    }
    config.lmo.validate()?;
    let curvature = resolve_curvature(c, config)?;
    let mut psi = GaussianMixture::from(init.clone());
    let mut steps = Vec::with_capacity(config.iterations);
    for k in 0..config.iterations {
        let gamma = step_size(k as i64)?;
        let lmo_config = LmoConfig {
            seed: derive_seed(config.seed, k as u64, 0),
            ..config.lmo
        };
        let gap = (gamma * curvature.used / 2.0).max(f64::MIN_POSITIVE);
        let oracle = solve_lmo(&psi, t, c, &lmo_config, gap)?;
        psi = convex_update(&psi, &oracle.component, gamma)?;
        let budget = match config.eval_budget {
            Budget::MonteCarlo { samples, seed } => Budget::MonteCarlo {
                samples,
                seed: derive_seed(seed, k as u64, 1),
            },
            b => b,
        };
        let objective = kl_to_target(&psi, t, &budget)?;
        steps.push(BoostStep {
            k,
            gamma,
            component: oracle.component,
            objective,
            lmo_objective: oracle.objective,
            lmo_restarts: oracle.restarts_used,
            oracle_gap_bound: oracle.oracle_gap_bound,
            rate_bound: frank_wolfe_rate_bound(k as u64 + 1, curvature.used),
            rate_bound_nominal: nominal_rate_bound(k as u64 + 1, c),
        });
    }
    let trace = BoostTrace {
        init: init.clone(),
        constraints: *c,
        seed: config.seed,
        curvature,
        steps,
    };
    Ok((psi, trace))
}

/// Weight of component `j` (0-based) after `iterations` steps, computed from
/// the step sizes alone: `γ_j Π_{l>j} (1 − γ_l)`.
pub fn product_form_weights(iterations: usize) -> Vec<f64> {
    (0..iterations)
        .map(|j| {
            let mut w = 2.0 / (j as f64 + 2.0);
            for l in j + 1..iterations {
                w *= 1.0 - 2.0 / (l as f64 + 2.0);
            }
            w
        })
        .collect()
}
