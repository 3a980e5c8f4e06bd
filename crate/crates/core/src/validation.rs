//! Replicated frequentist experiments on the conjugate Gaussian model.
//!
//! Every replicate `(n, r)` draws its data from `derive_seed(base_seed, n, r)`
//! and results are reduced in `(n, r)` order, so reports do not depend on how
//! the work was scheduled.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_lr;

use crate::boosting::{required_iterations, run_boost, BoostConfig};
use crate::divergence::kl_to_target;
use crate::error::{Error, Result};
use crate::gaussian::{FamilyConstraints, MEMBERSHIP_SLACK};
use crate::mvn::Mvn;
use crate::seed::derive_seed;
use crate::targets::{log_likelihood_and_prior, make_conjugate_target, q0_reference, ConjugateGaussianModel, Dataset};

/// `σ_n = scale · n^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthRule {
    pub scale: f64,
    pub exponent: f64,
}

impl Default for BandwidthRule {
    fn default() -> Self {
        BandwidthRule {
            scale: 1.0,
            exponent: -0.5,
        }
    }
}

impl BandwidthRule {
    pub fn sigma(&self, n: usize) -> f64 {
        self.scale * (n as f64).powf(self.exponent)
    }

    /// `σ_n ≤ n^{−1/2} ≤ √c0 σ_n`, with the usual relative slack.
    pub fn in_band(&self, n: usize, c0: f64) -> bool {
        let s = self.sigma(n);
        let root = (n as f64).powf(-0.5);
        s <= root * (1.0 + MEMBERSHIP_SLACK) && root <= c0.sqrt() * s * (1.0 + MEMBERSHIP_SLACK)
    }
}

#[derive(Debug, Clone)]
pub struct ReplicationPlan {
    pub model: ConjugateGaussianModel,
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    pub base_seed: u64,
    pub bandwidth: BandwidthRule,
    pub radius: f64,
    pub c0: f64,
}

impl ReplicationPlan {
    pub fn new(
        model: ConjugateGaussianModel,
        n_grid: Vec<usize>,
        replicates: usize,
        base_seed: u64,
        bandwidth: BandwidthRule,
        radius: f64,
        c0: f64,
    ) -> Result<Self> {
        if replicates == 0 {
            return Err(Error::invalid("replicates", "must be at least 1"));
        }
        if n_grid.is_empty() {
            return Err(Error::invalid("n_grid", "must not be empty"));
        }
        if n_grid[0] == 0 || n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("n_grid", "must be positive and strictly increasing"));
        }
        // validates M and c0
        FamilyConstraints::new(radius, bandwidth.sigma(n_grid[0]), c0, model.dim())?;
        for &n in &n_grid {
            if !bandwidth.in_band(n, c0) {
                return Err(Error::invalid(
                    "bandwidth",
                    format!(
                        "sigma_n = {} at n = {n} violates sigma_n <= n^(-1/2) <= sqrt(c0) sigma_n",
                        bandwidth.sigma(n)
                    ),
                ));
            }
        }
        Ok(ReplicationPlan {
            model,
            n_grid,
            replicates,
            base_seed,
            bandwidth,
            radius,
            c0,
        })
    }

    pub fn constraints(&self, n: usize) -> Result<FamilyConstraints> {
        FamilyConstraints::new(self.radius, self.bandwidth.sigma(n), self.c0, self.model.dim())
    }

    pub fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "model": self.model.describe(),
            "n_grid": self.n_grid,
            "replicates": self.replicates,
            "base_seed": self.base_seed,
            "bandwidth": self.bandwidth,
            "M": self.radius,
            "c0": self.c0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub q50: f64,
    pub q95: f64,
    pub q99: f64,
}

/// Linear-interpolation quantile of sorted data (`p` in `[0, 1]`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl Quantiles {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Quantiles {
            q50: quantile_sorted(&v, 0.50),
            q95: quantile_sorted(&v, 0.95),
            q99: quantile_sorted(&v, 0.99),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticSummary {
    pub statistic: String,
    pub quantiles: Quantiles,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NSummary {
    pub n: usize,
    pub statistics: Vec<StatisticSummary>,
    pub tests: BTreeMap<String, f64>,
}

impl NSummary {
    pub fn statistic(&self, name: &str) -> Option<&StatisticSummary> {
        self.statistics.iter().find(|s| s.statistic == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub n: usize,
    /// Replicate index; the iteration index for convergence runs.
    pub replicate: usize,
    pub statistic: String,
    pub value: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub base_seed: u64,
    pub replicates: usize,
    pub summaries: Vec<NSummary>,
    pub tests: BTreeMap<String, f64>,
    #[serde(skip)]
    pub raw: Vec<RawRecord>,
}

pub const RAW_CSV_HEADER: [&str; 5] = ["n", "replicate", "statistic", "value", "seed"];

impl ExperimentReport {
    pub fn summary(&self, n: usize) -> Option<&NSummary> {
        self.summaries.iter().find(|s| s.n == n)
    }

    /// Per-replicate values with columns `n, replicate, statistic, value, seed`.
    pub fn write_raw_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(RAW_CSV_HEADER)?;
        for r in &self.raw {
            out.write_record([
                r.n.to_string(),
                r.replicate.to_string(),
                r.statistic.clone(),
                r.value.to_string(),
                r.seed.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Concatenates reports of the same experiment over different `n`.
    pub fn merge(reports: Vec<ExperimentReport>) -> Result<ExperimentReport> {
        let mut iter = reports.into_iter();
        let mut out = iter.next().ok_or_else(|| Error::invalid("reports", "nothing to merge"))?;
        for r in iter {
            if r.experiment != out.experiment {
                return Err(Error::invalid("reports", "cannot merge different experiments"));
            }
            out.summaries.extend(r.summaries);
            out.raw.extend(r.raw);
            out.tests.extend(r.tests);
        }
        Ok(out)
    }
}

/// Statistic values of one replicate, in a fixed order.
struct Replicate {
    n: usize,
    r: usize,
    seed: u64,
    values: Vec<f64>,
}

fn summarize(
    experiment: &str,
    names: &[&str],
    n_grid: &[usize],
    replicates: usize,
    base_seed: u64,
    runs: Vec<Replicate>,
) -> ExperimentReport {
    let mut summaries = Vec::new();
    for &n in n_grid {
        let rows: Vec<&Replicate> = runs.iter().filter(|x| x.n == n).collect();
        let statistics = names
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let vals: Vec<f64> = rows.iter().map(|x| x.values[i]).collect();
                StatisticSummary {
                    statistic: name.to_string(),
                    quantiles: Quantiles::of(&vals),
                    mean: vals.iter().sum::<f64>() / vals.len() as f64,
                }
            })
            .collect();
        summaries.push(NSummary {
            n,
            statistics,
            tests: BTreeMap::new(),
        });
    }
    let raw = runs
        .iter()
        .flat_map(|x| {
            names.iter().zip(&x.values).map(move |(name, v)| RawRecord {
                n: x.n,
                replicate: x.r,
                statistic: name.to_string(),
                value: *v,
                seed: x.seed,
            })
        })
        .collect();
    ExperimentReport {
        experiment: experiment.to_string(),
        base_seed,
        replicates,
        summaries,
        tests: BTreeMap::new(),
        raw,
    }
}

fn replicate_grid(n_grid: &[usize], replicates: usize) -> Vec<(usize, usize)> {
    n_grid.iter().flat_map(|&n| (0..replicates).map(move |r| (n, r))).collect()
}

fn isotropic_mvn(mean: &DVector<f64>, cov: DMatrix<f64>) -> Result<Mvn> {
    Mvn::new(mean.clone(), cov)
}

/// `KL(q0 ‖ π_n)` for every `(n, r)`, with `q0 = N(θ0, σ_n² I)`: the feasible
/// witness that upper-bounds the best achievable KL over the family.
///
/// The test `q95_ratio` is the largest 95% quantile across `n` divided by the
/// smallest.
pub fn boundedness_experiment(plan: &ReplicationPlan) -> Result<ExperimentReport> {
    let theta0: Vec<f64> = plan.model.theta0().iter().cloned().collect();
    for &n in &plan.n_grid {
        q0_reference(&plan.constraints(n)?, &theta0)?;
    }
    let runs: Vec<Replicate> = replicate_grid(&plan.n_grid, plan.replicates)
        .into_par_iter()
        .map(|(n, r)| {
            let seed = derive_seed(plan.base_seed, n as u64, r as u64);
            let data = plan.model.simulate_data(n, seed)?;
            let post = plan.model.posterior(&data)?;
            let q0 = q0_reference(&plan.constraints(n)?, &theta0)?;
            let kl = Mvn::isotropic(q0.mean(), q0.sigma())?.kl(&post)?;
            Ok(Replicate {
                n,
                r,
                seed,
                values: vec![kl],
            })
        })
        .collect::<Result<_>>()?;
    let mut report = summarize(
        "boundedness",
        &["kl_q0_posterior"],
        &plan.n_grid,
        plan.replicates,
        plan.base_seed,
        runs,
    );
    let q95: Vec<f64> = report.summaries.iter().map(|s| s.statistics[0].quantiles.q95).collect();
    let hi = q95.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = q95.iter().cloned().fold(f64::INFINITY, f64::min);
    report.tests.insert("q95_ratio".into(), hi / lo);
    Ok(report)
}

/// Terms of `KL(q0 ‖ π_n)` written through the log-likelihood ratio
/// `L_n(θ) = Σ_i log f(X_i; θ)/f(X_i; θ0)` and the prior potential
/// `U = −log π`:
///
/// `KL = constant + bandwidth_entropy + log m(X_n) − ∫ L_n q0 + ∫ U q0`
///
/// with `constant = −d(ln √(2π) + ½)`, `bandwidth_entropy = −d ln σ_n` and
/// `m(X_n) = ∫ exp(L_n) π`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlDecomposition {
    pub constant: f64,
    pub bandwidth_entropy: f64,
    pub log_marginal: f64,
    pub expected_log_lik_ratio: f64,
    pub expected_neg_log_prior: f64,
    /// Standard error of the Monte Carlo part `−∫ L_n q0 + ∫ U q0`.
    pub std_error: f64,
    pub direct_kl: f64,
    pub samples: usize,
}

impl KlDecomposition {
    pub fn total(&self) -> f64 {
        self.without_bandwidth_entropy() + self.bandwidth_entropy
    }

    /// The sum of the remaining four terms; differs from `direct_kl` by
    /// `d ln σ_n`.
    pub fn without_bandwidth_entropy(&self) -> f64 {
        self.constant + self.log_marginal - self.expected_log_lik_ratio + self.expected_neg_log_prior
    }
}

pub fn decompose_kl_q0(
    model: &ConjugateGaussianModel,
    data: &Dataset,
    c: &FamilyConstraints,
    samples: usize,
    seed: u64,
) -> Result<KlDecomposition> {
    if samples < 2 {
        return Err(Error::invalid("samples", "need at least 2 draws"));
    }
    let d = model.dim() as f64;
    let theta0: Vec<f64> = model.theta0().iter().cloned().collect();
    let q0 = q0_reference(c, &theta0)?;
    let (loglik, logprior) = log_likelihood_and_prior(model, data)?;
    let base = loglik(&theta0);
    let log_marginal = model.log_marginal_likelihood(data)? - base;
    let draws = q0.sample(samples, seed)?;
    let terms: Vec<(f64, f64)> = draws.par_iter().map(|x| (loglik(x) - base, -logprior(x))).collect();
    let m = samples as f64;
    let el = terms.iter().map(|t| t.0).sum::<f64>() / m;
    let eu = terms.iter().map(|t| t.1).sum::<f64>() / m;
    let mc_mean = eu - el;
    let var = terms
        .iter()
        .map(|t| {
            let v = t.1 - t.0 - mc_mean;
            v * v
        })
        .sum::<f64>()
        / (m - 1.0);
    let post = model.posterior(data)?;
    let direct_kl = Mvn::isotropic(q0.mean(), q0.sigma())?.kl(&post)?;
    Ok(KlDecomposition {
        constant: -d * (0.5 * (2.0 * std::f64::consts::PI).ln() + 0.5),
        bandwidth_entropy: -d * c.sigma_n().ln(),
        log_marginal,
        expected_log_lik_ratio: el,
        expected_neg_log_prior: eu,
        std_error: (var / m).sqrt(),
        direct_kl,
        samples,
    })
}

/// CDF of `½ χ²_d` at `s`.
pub fn half_chi2_cdf(d: usize, s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else {
        gamma_lr(0.5 * d as f64, s)
    }
}

/// Kolmogorov–Smirnov distance `sup_x |F_n(x) − F(x)|` between the empirical
/// CDF of `samples` and a continuous CDF.
pub fn ks_distance<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in v.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

pub const LIMIT_STATISTICS: [&str; 6] = [
    "kl_truth_centred",
    "kl_mean_centred",
    "hellinger_truth_centred",
    "hellinger_mean_centred",
    "tv_lower",
    "tv_upper",
];

/// Distance between the posterior `N(μ_n, Σ_n)` and its Gaussian limits for
/// `R` replicates at sample size `n`:
///
/// - `kl_truth_centred`: `KL(N(θ0, Σ/n) ‖ N(μ_n, Σ_n))`, whose law tends to
///   `½ χ²_d`; its KS distance to that law is the test `ks_distance`;
/// - `kl_mean_centred`: `KL(N(X̄, Σ/n) ‖ N(μ_n, Σ_n))`;
/// - Hellinger distances from the posterior to both limits;
/// - `tv_lower`/`tv_upper`: `H² ≤ TV ≤ √2 H` for the truth-centred pair.
pub fn limit_experiment(model: &ConjugateGaussianModel, n: usize, replicates: usize, base_seed: u64) -> Result<ExperimentReport> {
    if replicates == 0 {
        return Err(Error::invalid("replicates", "must be at least 1"));
    }
    if n == 0 {
        return Err(Error::invalid("n", "must be at least 1"));
    }
    let scaled = model.sigma() / n as f64;
    let runs: Vec<Replicate> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(base_seed, n as u64, r as u64);
            let data = model.simulate_data(n, seed)?;
            let post = model.posterior(&data)?;
            let truth = isotropic_mvn(model.theta0(), scaled.clone())?;
            let xbar = isotropic_mvn(&DVector::from_vec(data.column_means()), scaled.clone())?;
            let h_truth = post.hellinger(&truth)?;
            Ok(Replicate {
                n,
                r,
                seed,
                values: vec![
                    truth.kl(&post)?,
                    xbar.kl(&post)?,
                    h_truth,
                    post.hellinger(&xbar)?,
                    h_truth * h_truth,
                    std::f64::consts::SQRT_2 * h_truth,
                ],
            })
        })
        .collect::<Result<_>>()?;
    let s: Vec<f64> = runs.iter().map(|x| x.values[0]).collect();
    let d = model.dim();
    let ks = ks_distance(&s, |x| half_chi2_cdf(d, x));
    let mut report = summarize("limit", &LIMIT_STATISTICS, &[n], replicates, base_seed, runs);
    report.summaries[0].tests.insert("ks_distance".into(), ks);
    report.tests.insert("ks_distance".into(), ks);
    Ok(report)
}

/// Setup of the boosting convergence runs on a one-dimensional conjugate
/// model.
#[derive(Debug, Clone)]
pub struct ConvergenceSetup {
    pub model: ConjugateGaussianModel,
    pub n_values: Vec<usize>,
    pub radius: f64,
    pub c0: f64,
    pub bandwidth: BandwidthRule,
    pub boost: BoostConfig,
    pub base_seed: u64,
}

impl ConvergenceSetup {
    /// Truth and prior mean at 0, unit likelihood variance, prior variance
    /// 100, `σ_n = c0^{−1/4} n^{−1/2}` so that the posterior scale sits
    /// inside `[σ_n, √c0 σ_n]`.
    pub fn standard(n_values: Vec<usize>, radius: f64, c0: f64, boost: BoostConfig, base_seed: u64) -> Result<Self> {
        Ok(ConvergenceSetup {
            model: ConjugateGaussianModel::isotropic(&[0.0], &[0.0], 1.0, 100.0)?,
            n_values,
            radius,
            c0,
            bandwidth: BandwidthRule {
                scale: c0.powf(-0.25),
                exponent: -0.5,
            },
            boost,
            base_seed,
        })
    }

    pub fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "model": self.model.describe(),
            "n_values": self.n_values,
            "M": self.radius,
            "c0": self.c0,
            "bandwidth": self.bandwidth,
            "boost": self.boost,
            "base_seed": self.base_seed,
        })
    }
}

/// Boosting on the exact posterior for each `n`, with `k_n = ⌈exp(√n)⌉`
/// iterations.
///
/// Per `n` the summary tests hold `k_n`, `sigma_n`, `kl_q0`, `final_kl`,
/// `curvature` (the empirical constant) and `bound_violations`, the number of
/// iterations where `KL(ψ_k ‖ π_n) − KL(q0 ‖ π_n)` exceeds `4C/(k + 2)`. Raw
/// records hold the objective and bound per iteration, with the iteration
/// index in the `replicate` column.
pub fn convergence_experiment(setup: &ConvergenceSetup) -> Result<ExperimentReport> {
    if setup.model.dim() != 1 {
        return Err(Error::Unsupported("convergence runs use a one-dimensional model".into()));
    }
    if setup.n_values.is_empty() {
        return Err(Error::invalid("n_values", "must not be empty"));
    }
    let theta0: Vec<f64> = setup.model.theta0().iter().cloned().collect();
    let mut summaries = Vec::new();
    let mut raw = Vec::new();
    for &n in &setup.n_values {
        if n == 0 {
            return Err(Error::invalid("n_values", "sample sizes must be positive"));
        }
        let c = FamilyConstraints::new(setup.radius, setup.bandwidth.sigma(n), setup.c0, 1)?;
        let data_seed = derive_seed(setup.base_seed, n as u64, 0);
        let data = setup.model.simulate_data(n, data_seed)?;
        let post = setup.model.posterior(&data)?;
        let post_sd = post.cov()[(0, 0)].sqrt();
        if post_sd < c.sigma_n() * (1.0 - MEMBERSHIP_SLACK) || post_sd > c.sigma_max() * (1.0 + MEMBERSHIP_SLACK) {
            return Err(Error::Constraint(format!(
                "infeasible configuration: posterior sd {post_sd} at n = {n} lies outside [{}, {}]",
                c.sigma_n(),
                c.sigma_max()
            )));
        }
        let q0 = q0_reference(&c, &theta0)?;
        let target = make_conjugate_target(&setup.model, &data)?;
        let kl_q0 = Mvn::isotropic(q0.mean(), q0.sigma())?.kl(&post)?;
        let k_n = required_iterations(n as i64)? as usize;
        let config = BoostConfig {
            iterations: k_n,
            seed: derive_seed(setup.base_seed, n as u64, 1),
            ..setup.boost
        };
        let (mixture, trace) = run_boost(&target, &c, &q0, &config)?;
        let final_kl = kl_to_target(&mixture, &target, &config.eval_budget)?.value;
        let mut violations = 0usize;
        for s in &trace.steps {
            if s.objective.value - kl_q0 > s.rate_bound {
                violations += 1;
            }
            for (name, value) in [("objective", s.objective.value), ("bound", s.rate_bound)] {
                raw.push(RawRecord {
                    n,
                    replicate: s.k,
                    statistic: name.to_string(),
                    value,
                    seed: config.seed,
                });
            }
        }
        let objectives: Vec<f64> = trace.steps.iter().map(|s| s.objective.value).collect();
        let mut tests = BTreeMap::new();
        tests.insert("k_n".to_string(), k_n as f64);
        tests.insert("sigma_n".to_string(), c.sigma_n());
        tests.insert("kl_q0".to_string(), kl_q0);
        tests.insert("final_kl".to_string(), final_kl);
        tests.insert("curvature".to_string(), trace.curvature.used);
        tests.insert("bound_violations".to_string(), violations as f64);
        summaries.push(NSummary {
            n,
            statistics: vec![StatisticSummary {
                statistic: "objective".into(),
                quantiles: Quantiles::of(&objectives),
                mean: objectives.iter().sum::<f64>() / objectives.len() as f64,
            }],
            tests,
        });
    }
    let finals: Vec<f64> = summaries.iter().map(|s| s.tests["final_kl"]).collect();
    let mut tests = BTreeMap::new();
    tests.insert("max_final_kl".to_string(), finals.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    tests.insert(
        "total_bound_violations".to_string(),
        summaries.iter().map(|s| s.tests["bound_violations"]).sum(),
    );
    Ok(ExperimentReport {
        experiment: "convergence".into(),
        base_seed: setup.base_seed,
        replicates: 1,
        summaries,
        tests,
        raw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit_model() -> ConjugateGaussianModel {
        ConjugateGaussianModel::isotropic(&[0.0], &[0.0], 1.0, 1.0).unwrap()
    }

    fn plan(n_grid: Vec<usize>, replicates: usize) -> ReplicationPlan {
        ReplicationPlan::new(unit_model(), n_grid, replicates, 0, BandwidthRule::default(), 2.0, 1.5).unwrap()
    }

    #[test]
    fn plan_rejects_bandwidth_outside_band() {
        let narrow = BandwidthRule {
            scale: 1.0,
            exponent: -1.0,
        };
        let err = ReplicationPlan::new(unit_model(), vec![100, 1000], 10, 0, narrow, 2.0, 1.5);
        assert!(matches!(err, Err(Error::InvalidParameter { name: "bandwidth", .. })));
        assert!(ReplicationPlan::new(unit_model(), vec![], 10, 0, BandwidthRule::default(), 2.0, 1.5).is_err());
        assert!(ReplicationPlan::new(unit_model(), vec![10, 5], 10, 0, BandwidthRule::default(), 2.0, 1.5).is_err());
        assert!(ReplicationPlan::new(unit_model(), vec![10], 0, 0, BandwidthRule::default(), 2.0, 1.5).is_err());
    }

    #[test]
    fn band_edges() {
        let c0: f64 = 1.5;
        let low = BandwidthRule {
            scale: c0.powf(-0.5),
            exponent: -0.5,
        };
        assert!(low.in_band(7, c0));
        assert!(BandwidthRule::default().in_band(7, c0));
        let too_low = BandwidthRule {
            scale: 0.99 * c0.powf(-0.5),
            exponent: -0.5,
        };
        assert!(!too_low.in_band(7, c0));
    }

    #[test]
    fn quantiles_interpolate() {
        let v: Vec<f64> = (0..=100).map(|i| i as f64).collect();
        let q = Quantiles::of(&v);
        assert_eq!((q.q50, q.q95, q.q99), (50.0, 95.0, 99.0));
        assert_eq!(quantile_sorted(&[1.0, 2.0], 0.5), 1.5);
    }

    fn brute_force_ks(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
        // compare the ECDF, and its left limit, against F at every sample
        let n = samples.len() as f64;
        let mut d = 0.0f64;
        for &x in samples {
            let at = samples.iter().filter(|&&y| y <= x).count() as f64 / n;
            let below = samples.iter().filter(|&&y| y < x).count() as f64 / n;
            d = d.max((at - cdf(x)).abs()).max((below - cdf(x)).abs());
        }
        d
    }

    #[test]
    fn ks_matches_brute_force() {
        let model = unit_model();
        let data = model.simulate_data(100, 42).unwrap();
        let xs: Vec<f64> = data.rows().map(|r| r[0] * r[0] / 2.0).collect();
        let fast = ks_distance(&xs, |x| half_chi2_cdf(1, x));
        let slow = brute_force_ks(&xs, |x| half_chi2_cdf(1, x));
        assert!((fast - slow).abs() <= 1e-12);
    }

    #[test]
    fn half_chi2_cdf_values() {
        // P(Z²/2 ≤ k²/2) = P(|Z| ≤ k)
        for (s, p) in [(0.5, 0.682_689_492_137_085_9), (2.0, 0.954_499_736_103_641_6), (4.5, 0.997_300_203_936_739_8)] {
            assert_relative_eq!(half_chi2_cdf(1, s), p, epsilon = 1e-13);
        }
        // d = 2: exponential(1)
        assert_relative_eq!(half_chi2_cdf(2, 1.3), 1.0 - (-1.3f64).exp(), epsilon = 1e-12);
        assert_eq!(half_chi2_cdf(3, -1.0), 0.0);
    }

    #[test]
    fn boundedness_single_replicate_is_reproducible() {
        let a = boundedness_experiment(&plan(vec![50], 1)).unwrap();
        let b = boundedness_experiment(&plan(vec![50], 1)).unwrap();
        assert_eq!(a.raw.len(), 1);
        assert_eq!(a.raw[0].value.to_bits(), b.raw[0].value.to_bits());
        assert_eq!(a.raw[0].seed, derive_seed(0, 50, 0));
    }

    #[test]
    fn boundedness_requires_truth_in_ball() {
        let model = ConjugateGaussianModel::isotropic(&[0.0], &[3.0], 1.0, 1.0).unwrap();
        let p = ReplicationPlan::new(model, vec![10], 2, 0, BandwidthRule::default(), 2.0, 1.5).unwrap();
        assert!(matches!(boundedness_experiment(&p), Err(Error::Constraint(_))));
    }

    #[test]
    fn decomposition_constant_and_identity() {
        let model = unit_model();
        let data = model.simulate_data(200, 3).unwrap();
        let c = FamilyConstraints::new(2.0, 200f64.powf(-0.5), 1.5, 1).unwrap();
        let dec = decompose_kl_q0(&model, &data, &c, 20_000, 1).unwrap();
        assert_relative_eq!(dec.constant, -1.418_938_533_204_672_7, epsilon = 1e-12);
        assert!((dec.total() - dec.direct_kl).abs() <= 4.0 * dec.std_error);
        assert_relative_eq!(
            dec.total() - dec.without_bandwidth_entropy(),
            0.5 * 200f64.ln(),
            epsilon = 1e-12
        );
        // ∫U q0 ≥ min U = −log of the prior density at its mode
        let min_u = 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!(dec.expected_neg_log_prior >= min_u);
    }

    #[test]
    fn limit_report_shape() {
        let rep = limit_experiment(&unit_model(), 100, 20, 5).unwrap();
        assert!(rep.tests.contains_key("ks_distance"));
        assert_eq!(rep.raw.len(), 20 * LIMIT_STATISTICS.len());
        let s = rep.summary(100).unwrap();
        for name in LIMIT_STATISTICS {
            assert!(s.statistic(name).is_some());
        }
        for r in rep.raw.iter().filter(|r| r.statistic == "tv_lower") {
            let upper = rep
                .raw
                .iter()
                .find(|u| u.statistic == "tv_upper" && u.replicate == r.replicate)
                .unwrap();
            assert!(r.value <= upper.value);
        }
    }

    #[test]
    fn raw_csv_layout() {
        let rep = boundedness_experiment(&plan(vec![10], 2)).unwrap();
        let mut buf = Vec::new();
        rep.write_raw_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("n,replicate,statistic,value,seed"));
        assert!(lines.next().unwrap().starts_with("10,0,kl_q0_posterior,"));
    }

    #[test]
    fn convergence_rejects_posterior_outside_band() {
        let mut setup = ConvergenceSetup::standard(vec![4], 2.0, 1.5, BoostConfig::default(), 0).unwrap();
        setup.bandwidth = BandwidthRule {
            scale: 0.3,
            exponent: -0.5,
        };
        assert!(matches!(convergence_experiment(&setup), Err(Error::Constraint(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn quantiles_are_monotone(values in prop::collection::vec(-1e6f64..1e6, 1..200)) {
            let q = Quantiles::of(&values);
            prop_assert!(q.q50 <= q.q95 && q.q95 <= q.q99);
        }

        #[test]
        fn ks_agrees_with_brute_force(values in prop::collection::vec(0.0f64..5.0, 1..100)) {
            let fast = ks_distance(&values, |x| half_chi2_cdf(1, x));
            let slow = brute_force_ks(&values, |x| half_chi2_cdf(1, x));
            prop_assert!((fast - slow).abs() <= 1e-12);
        }
    }
}
