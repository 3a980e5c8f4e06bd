use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use vbboost::boosting::{run_boost, BoostConfig, CurvatureSource};
use vbboost::divergence::{curvature_bound_worst_case, curvature_sample, curvature_trials, Budget};
use vbboost::lmo::{lmo_grid_oracle, lmo_objective_quadrature, solve_lmo, GridResolution, LmoConfig};
use vbboost::quadrature::QuadratureSpec;
use vbboost::seed::derive_seed;
use vbboost::targets::{
    audit_regularity, make_conjugate_target, q0_reference, AuditBudget, Bernoulli, ConjugateGaussianModel,
    Dataset, ExponentialFamilyModel, GaussianMean, Poisson,
};
use vbboost::validation::{
    boundedness_experiment, convergence_experiment, limit_experiment, BandwidthRule, ConvergenceSetup,
    ExperimentReport, ReplicationPlan,
};
use vbboost::{FamilyConstraints, GaussianMixture, IsotropicGaussian};

use crate::config::{CommandKind, FamilyKind, RunConfig};

/// Everything a command produces: the JSON report, CSV tables by file name,
/// and the seeds it derived from the base seed.
pub struct Artifacts {
    pub report: Value,
    pub csv: Vec<(&'static str, Vec<u8>)>,
    pub seeds: Value,
}

pub fn dispatch(cfg: &RunConfig, command: CommandKind) -> Result<Artifacts> {
    match command {
        CommandKind::Boost => boost(cfg),
        CommandKind::ValidateBoundedness => boundedness(cfg),
        CommandKind::ValidateLimits => limits(cfg),
        CommandKind::ValidateConvergence => convergence(cfg),
        CommandKind::Curvature => curvature(cfg),
        CommandKind::LmoDebug => lmo_debug(cfg),
        CommandKind::AuditExpfam => audit(cfg),
    }
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).context("serializing report")
}

fn model(cfg: &RunConfig) -> Result<ConjugateGaussianModel> {
    let d = cfg.dim;
    Ok(ConjugateGaussianModel::isotropic(
        &vec![cfg.prior_mean; d],
        &vec![cfg.truth; d],
        cfg.likelihood_variance,
        cfg.prior_variance,
    )?)
}

fn constraints(cfg: &RunConfig) -> Result<FamilyConstraints> {
    Ok(FamilyConstraints::new(cfg.radius, cfg.sigma_for(cfg.n), cfg.c0, cfg.dim)?)
}

fn bandwidth(cfg: &RunConfig) -> BandwidthRule {
    BandwidthRule {
        scale: cfg.bandwidth_scale,
        exponent: cfg.bandwidth_exponent,
    }
}

fn boost_config(cfg: &RunConfig, seed: u64) -> BoostConfig {
    BoostConfig {
        iterations: cfg.iterations,
        lmo: LmoConfig {
            mc_samples: cfg.lmo_samples,
            restarts: cfg.lmo_restarts,
            ..Default::default()
        },
        eval_budget: match cfg.eval_samples {
            Some(samples) => Budget::MonteCarlo { samples, seed },
            None => Budget::default(),
        },
        seed,
        curvature: CurvatureSource::Sampled {
            trials: cfg.curvature_trials,
        },
    }
}

struct ConjugateRun {
    model: ConjugateGaussianModel,
    data: Dataset,
    c: FamilyConstraints,
    data_seed: u64,
}

fn conjugate_run(cfg: &RunConfig) -> Result<ConjugateRun> {
    let model = model(cfg)?;
    let data_seed = derive_seed(cfg.seed(), cfg.n as u64, 0);
    let data = model.simulate_data(cfg.n, data_seed)?;
    Ok(ConjugateRun {
        model,
        data,
        c: constraints(cfg)?,
        data_seed,
    })
}

fn posterior_summary(run: &ConjugateRun) -> Result<Value> {
    let post = run.model.posterior(&run.data)?;
    Ok(json!({
        "mean": post.mean().iter().collect::<Vec<_>>(),
        "sd": (0..post.dim()).map(|i| post.cov()[(i, i)].sqrt()).collect::<Vec<_>>(),
    }))
}

fn boost(cfg: &RunConfig) -> Result<Artifacts> {
    let run = conjugate_run(cfg)?;
    let target = make_conjugate_target(&run.model, &run.data)?;
    let init = q0_reference(&run.c, &vec![cfg.truth; cfg.dim]).context("building the initial component")?;
    let config = boost_config(cfg, cfg.seed());
    log::info!("boosting for {} iterations at n = {}", config.iterations, cfg.n);
    let (mixture, trace) = run_boost(&target, &run.c, &init, &config)?;
    let mut csv = Vec::new();
    trace.write_csv(&mut csv)?;
    Ok(Artifacts {
        report: json!({
            "posterior": posterior_summary(&run)?,
            "mixture": to_value(&mixture)?,
            "trace": to_value(&trace)?,
        }),
        csv: vec![("trace.csv", csv)],
        seeds: json!({"base": cfg.seed(), "data": run.data_seed, "boost": config.seed}),
    })
}

fn experiment_artifacts(report: &ExperimentReport, describe: Value, cfg: &RunConfig) -> Result<Artifacts> {
    let mut csv = Vec::new();
    report.write_raw_csv(&mut csv)?;
    Ok(Artifacts {
        report: json!({"setup": describe, "result": to_value(report)?}),
        csv: vec![("raw.csv", csv)],
        seeds: json!({
            "base": cfg.seed(),
            "replicate_rule": "derive_seed(base, n, replicate)",
        }),
    })
}

fn boundedness(cfg: &RunConfig) -> Result<Artifacts> {
    let plan = ReplicationPlan::new(
        model(cfg)?,
        cfg.n_grid.clone(),
        cfg.replicates,
        cfg.seed(),
        bandwidth(cfg),
        cfg.radius,
        cfg.c0,
    )?;
    log::info!("boundedness experiment over n = {:?}", plan.n_grid);
    let report = boundedness_experiment(&plan)?;
    experiment_artifacts(&report, plan.describe(), cfg)
}

fn limits(cfg: &RunConfig) -> Result<Artifacts> {
    let m = model(cfg)?;
    let reports = cfg
        .n_grid
        .iter()
        .map(|&n| {
            log::info!("limit experiment at n = {n}");
            limit_experiment(&m, n, cfg.replicates, cfg.seed())
        })
        .collect::<vbboost::Result<Vec<_>>>()?;
    let report = ExperimentReport::merge(reports)?;
    let describe = json!({"model": m.describe(), "n_grid": cfg.n_grid, "replicates": cfg.replicates});
    experiment_artifacts(&report, describe, cfg)
}

fn convergence(cfg: &RunConfig) -> Result<Artifacts> {
    let mut setup = ConvergenceSetup::standard(
        cfg.n_values.clone(),
        cfg.radius,
        cfg.c0,
        boost_config(cfg, cfg.seed()),
        cfg.seed(),
    )?;
    if cfg.dim != 1 {
        anyhow::bail!("d must be 1 for validate-convergence");
    }
    setup.model = setup.model.with_truth(&[cfg.truth])?;
    let report = convergence_experiment(&setup)?;
    let mut art = experiment_artifacts(&report, setup.describe(), cfg)?;
    art.seeds = json!({
        "base": cfg.seed(),
        "data_rule": "derive_seed(base, n, 0)",
        "boost_rule": "derive_seed(base, n, 1)",
    });
    Ok(art)
}

fn curvature(cfg: &RunConfig) -> Result<Artifacts> {
    let c = constraints(cfg)?;
    let report = curvature_sample(&c, cfg.curvature_trials, cfg.seed())?;
    let trials = curvature_trials(&c, cfg.curvature_trials, cfg.seed(), &QuadratureSpec::default())?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["trial", "components", "alpha", "scaled_bregman", "ln_chi2_bound"])?;
    for t in &trials {
        w.write_record([
            t.index.to_string(),
            t.psi1.len().to_string(),
            t.alpha.to_string(),
            t.scaled_bregman.to_string(),
            t.ln_chi2_bound.to_string(),
        ])?;
    }
    Ok(Artifacts {
        report: to_value(&report)?,
        csv: vec![("trials.csv", w.into_inner()?)],
        seeds: json!({"base": cfg.seed(), "trial_rule": "derive_seed(base, trial, 0)"}),
    })
}

fn lmo_debug(cfg: &RunConfig) -> Result<Artifacts> {
    let run = conjugate_run(cfg)?;
    let target = make_conjugate_target(&run.model, &run.data)?;
    let init = q0_reference(&run.c, &vec![cfg.truth; cfg.dim])?;
    let psi = GaussianMixture::from(init);
    let lmo = LmoConfig {
        mc_samples: cfg.lmo_samples,
        restarts: cfg.lmo_restarts,
        seed: cfg.seed(),
        ..Default::default()
    };
    // first-step tolerance, γ_0 = 1
    let gap = (curvature_bound_worst_case(&run.c) / 2.0).min(f64::MAX);
    let solved = solve_lmo(&psi, &target, &run.c, &lmo, gap)?;
    let (grid, exact) = if cfg.dim == 1 {
        let spec = QuadratureSpec::default();
        let exact = lmo_objective_quadrature(&solved.component, &psi, &target, &spec)?;
        (Some(lmo_grid_oracle(&psi, &target, &run.c, GridResolution::default())?), Some(exact))
    } else {
        (None, None)
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["restart", "step", "objective"])?;
    for (r, path) in solved.descent_paths.iter().enumerate() {
        for (s, v) in path.iter().enumerate() {
            w.write_record([r.to_string(), s.to_string(), v.to_string()])?;
        }
    }
    Ok(Artifacts {
        report: json!({
            "previous_iterate": to_value(&psi)?,
            "solver": to_value(&solved)?,
            "solver_objective_quadrature": exact,
            "grid_oracle": grid.map(|g| to_value(&g)).transpose()?,
        }),
        csv: vec![("descent.csv", w.into_inner()?)],
        seeds: json!({"base": cfg.seed(), "data": run.data_seed, "crn": derive_seed(cfg.seed(), 0, 0)}),
    })
}

fn audit(cfg: &RunConfig) -> Result<Artifacts> {
    let d = match cfg.family {
        FamilyKind::Gaussian => cfg.dim,
        _ => 1,
    };
    let prior = IsotropicGaussian::new(vec![cfg.prior_mean; d], cfg.prior_variance.sqrt())?;
    let theta0 = vec![cfg.truth; d];
    let model = match cfg.family {
        FamilyKind::Gaussian => ExponentialFamilyModel::new(GaussianMean { d }, prior, theta0.clone())?,
        FamilyKind::Bernoulli => ExponentialFamilyModel::new(Bernoulli, prior, theta0.clone())?,
        FamilyKind::Poisson => ExponentialFamilyModel::new(Poisson, prior, theta0.clone())?,
    };
    // equally spaced points through θ0 along each coordinate axis
    let k = cfg.audit_points;
    let mut grid: Vec<Vec<f64>> = Vec::new();
    for axis in 0..d {
        for i in 0..k {
            let mut p = theta0.clone();
            p[axis] += -cfg.audit_half_width + 2.0 * cfg.audit_half_width * i as f64 / (k - 1) as f64;
            if !grid.contains(&p) {
                grid.push(p);
            }
        }
    }
    let budget = AuditBudget {
        mc_samples: cfg.audit_samples,
        seed: cfg.seed(),
    };
    let report = audit_regularity(&model, &grid, cfg.audit_alpha, &budget)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (1..=d).map(|j| format!("theta{j}")).collect();
    header.extend(
        ["kl", "bregman", "identity_error", "mu2_closed_form", "mu2_monte_carlo", "mu2_std_error"]
            .iter()
            .map(|s| s.to_string()),
    );
    w.write_record(&header)?;
    for p in &report.points {
        let mut row: Vec<String> = p.theta.iter().map(|t| t.to_string()).collect();
        for v in [p.kl, p.bregman, p.identity_error, p.mu2_closed_form, p.mu2_monte_carlo, p.mu2_std_error] {
            row.push(v.to_string());
        }
        w.write_record(&row)?;
    }
    Ok(Artifacts {
        report: to_value(&report)?,
        csv: vec![("points.csv", w.into_inner()?)],
        seeds: json!({"base": cfg.seed()}),
    })
}
