use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Boost,
    #[serde(alias = "validate-thm1")]
    ValidateBoundedness,
    #[serde(alias = "validate-prop1")]
    ValidateLimits,
    ValidateConvergence,
    Curvature,
    LmoDebug,
    AuditExpfam,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Boost => "boost",
            CommandKind::ValidateBoundedness => "validate-boundedness",
            CommandKind::ValidateLimits => "validate-limits",
            CommandKind::ValidateConvergence => "validate-convergence",
            CommandKind::Curvature => "curvature",
            CommandKind::LmoDebug => "lmo-debug",
            CommandKind::AuditExpfam => "audit-expfam",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Gaussian,
    Bernoulli,
    Poisson,
}

/// Where the seed in force came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedSource {
    Flag,
    ConfigFile,
    Environment,
    Default,
}

pub const SEED_ENV: &str = "VBBOOST_SEED";

/// The fully resolved run configuration. Field names double as the keys of
/// the JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<CommandKind>,
    pub seed: Option<u64>,
    #[serde(rename = "d", alias = "dim")]
    pub dim: usize,
    #[serde(rename = "M", alias = "radius")]
    pub radius: f64,
    pub c0: f64,
    /// Bandwidth for single-n commands; `bandwidth_scale · n^bandwidth_exponent`
    /// when absent.
    pub sigma_n: Option<f64>,
    pub bandwidth_scale: f64,
    pub bandwidth_exponent: f64,
    pub n: usize,
    pub n_grid: Vec<usize>,
    pub n_values: Vec<usize>,
    pub replicates: usize,
    pub iterations: usize,
    pub curvature_trials: usize,
    pub lmo_samples: usize,
    pub lmo_restarts: usize,
    /// Monte Carlo draws for objective tracking [default: quadrature]
    /// Monte Carlo draws for objective tracking; quadrature when absent.
    pub eval_samples: Option<usize>,
    pub truth: f64,
    pub prior_mean: f64,
    pub likelihood_variance: f64,
    pub prior_variance: f64,
    pub family: FamilyKind,
    pub audit_alpha: f64,
    pub audit_points: usize,
    pub audit_half_width: f64,
    pub audit_samples: usize,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: None,
            seed: None,
            dim: 1,
            radius: 2.0,
            c0: 1.5,
            sigma_n: None,
            bandwidth_scale: 1.0,
            bandwidth_exponent: -0.5,
            n: 100,
            n_grid: vec![100, 1000, 10_000],
            n_values: vec![1, 4, 9, 16, 25],
            replicates: 200,
            iterations: 10,
            curvature_trials: 2000,
            lmo_samples: 128,
            lmo_restarts: 4,
            eval_samples: None,
            truth: 0.0,
            prior_mean: 0.0,
            likelihood_variance: 1.0,
            prior_variance: 1.0,
            family: FamilyKind::Gaussian,
            audit_alpha: 1.0,
            audit_points: 5,
            audit_half_width: 1.0,
            audit_samples: 100_000,
            out: None,
            jobs: None,
        }
    }
}

/// Flags that override fields of the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Base seed [default: $VBBOOST_SEED, else 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Parameter dimension d
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    /// Radius M of the mean ball
    #[arg(long, global = true)]
    pub radius: Option<f64>,
    /// Bandwidth ratio c0, in (1, 2)
    #[arg(long, global = true)]
    pub c0: Option<f64>,
    /// Smallest component standard deviation
    #[arg(long, global = true)]
    pub sigma_n: Option<f64>,
    /// Bandwidth rule scale: sigma_n = scale * n^exponent unless --sigma-n is set
    #[arg(long, global = true)]
    pub bandwidth_scale: Option<f64>,
    /// Bandwidth rule exponent
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub bandwidth_exponent: Option<f64>,
    /// Sample size for single-n commands
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// Comma-separated sample sizes for the replication experiments
    #[arg(long, global = true, value_delimiter = ',')]
    pub n_grid: Option<Vec<usize>>,
    /// Comma-separated sample sizes for the convergence experiment
    #[arg(long, global = true, value_delimiter = ',')]
    pub n_values: Option<Vec<usize>>,
    /// Replicates per sample size
    #[arg(long, global = true)]
    pub replicates: Option<usize>,
    /// Boosting iterations
    #[arg(long, global = true)]
    pub iterations: Option<usize>,
    /// Random perturbations sampled for the curvature constant
    #[arg(long, global = true)]
    pub curvature_trials: Option<usize>,
    /// Common-random-number draws per oracle objective
    #[arg(long, global = true)]
    pub lmo_samples: Option<usize>,
    /// Oracle restarts
    #[arg(long, global = true)]
    pub lmo_restarts: Option<usize>,
    /// Monte Carlo draws for objective tracking [default: quadrature]
    #[arg(long, global = true)]
    pub eval_samples: Option<usize>,
    /// Every coordinate of the true parameter
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub truth: Option<f64>,
    /// Every coordinate of the prior mean
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub prior_mean: Option<f64>,
    /// Observation variance per coordinate
    #[arg(long, global = true)]
    pub likelihood_variance: Option<f64>,
    /// Prior variance per coordinate
    #[arg(long, global = true)]
    pub prior_variance: Option<f64>,
    /// Likelihood family for audit-expfam
    #[arg(long, global = true, value_enum)]
    pub family: Option<FamilyKind>,
    /// Hölder exponent for the Lipschitz ratios
    #[arg(long, global = true)]
    pub audit_alpha: Option<f64>,
    /// Grid points per axis
    #[arg(long, global = true)]
    pub audit_points: Option<usize>,
    /// Grid half-width around the truth
    #[arg(long, global = true)]
    pub audit_half_width: Option<f64>,
    /// Monte Carlo draws for the moment check
    #[arg(long, global = true)]
    pub audit_samples: Option<usize>,
    /// Directory receiving report.json, CSV files and metadata.json
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

/// A configuration problem; reported with exit status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

pub fn load(path: Option<&Path>) -> Result<RunConfig, ConfigError> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| bad(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| bad(format!("config {}: {e}", path.display())))
}

macro_rules! take {
    ($cfg:ident, $o:ident, $($field:ident),+) => {
        $(if let Some(v) = $o.$field.clone() { $cfg.$field = v; })+
    };
}

impl RunConfig {
    pub fn apply(&mut self, o: &Overrides) {
        take!(
            self,
            o,
            dim,
            radius,
            c0,
            bandwidth_scale,
            bandwidth_exponent,
            n,
            n_grid,
            n_values,
            replicates,
            iterations,
            curvature_trials,
            lmo_samples,
            lmo_restarts,
            truth,
            prior_mean,
            likelihood_variance,
            prior_variance,
            family,
            audit_alpha,
            audit_points,
            audit_half_width,
            audit_samples
        );
        if o.seed.is_some() {
            self.seed = o.seed;
        }
        if o.sigma_n.is_some() {
            self.sigma_n = o.sigma_n;
        }
        if o.eval_samples.is_some() {
            self.eval_samples = o.eval_samples;
        }
        if o.out.is_some() {
            self.out.clone_from(&o.out);
        }
        if o.jobs.is_some() {
            self.jobs = o.jobs;
        }
    }

    /// Fills in the seed: flag or config file first, then `$VBBOOST_SEED`,
    /// then 0.
    pub fn resolve_seed(&mut self, from_flag: bool) -> Result<SeedSource, ConfigError> {
        if self.seed.is_some() {
            return Ok(if from_flag { SeedSource::Flag } else { SeedSource::ConfigFile });
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => {
                let seed = v
                    .trim()
                    .parse()
                    .map_err(|_| bad(format!("{SEED_ENV} must be a non-negative integer, got {v:?}")))?;
                self.seed = Some(seed);
                Ok(SeedSource::Environment)
            }
            Err(_) => {
                self.seed = Some(0);
                Ok(SeedSource::Default)
            }
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn command(&self) -> Result<CommandKind, ConfigError> {
        self.command
            .ok_or_else(|| bad("command must be given as a subcommand or in the config file"))
    }

    pub fn sigma_for(&self, n: usize) -> f64 {
        self.sigma_n
            .unwrap_or_else(|| self.bandwidth_scale * (n as f64).powf(self.bandwidth_exponent))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.c0 > 1.0 && self.c0 < 2.0) {
            return Err(bad(format!("c0 must lie in (1, 2), got {}", self.c0)));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(bad(format!("M must be positive and finite, got {}", self.radius)));
        }
        if let Some(s) = self.sigma_n {
            if !(s > 0.0 && s.is_finite()) {
                return Err(bad(format!("sigma_n must be positive, got {s}")));
            }
        }
        if !(self.bandwidth_scale > 0.0 && self.bandwidth_scale.is_finite()) {
            return Err(bad(format!("bandwidth_scale must be positive, got {}", self.bandwidth_scale)));
        }
        if !self.bandwidth_exponent.is_finite() {
            return Err(bad("bandwidth_exponent must be finite"));
        }
        if self.dim == 0 {
            return Err(bad("d must be at least 1"));
        }
        for (name, v) in [
            ("n", self.n),
            ("replicates", self.replicates),
            ("iterations", self.iterations),
            ("curvature_trials", self.curvature_trials),
            ("lmo_samples", self.lmo_samples),
            ("lmo_restarts", self.lmo_restarts),
            ("audit_samples", self.audit_samples),
        ] {
            if v == 0 {
                return Err(bad(format!("{name} must be at least 1")));
            }
        }
        if self.audit_points < 2 {
            return Err(bad("audit_points must be at least 2"));
        }
        if self.eval_samples.is_some_and(|s| s < 2) {
            return Err(bad("eval_samples must be at least 2"));
        }
        if self.jobs == Some(0) {
            return Err(bad("jobs must be at least 1"));
        }
        for (name, v) in [("likelihood_variance", self.likelihood_variance), ("prior_variance", self.prior_variance)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(bad(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.audit_alpha > 0.0 && self.audit_alpha <= 1.0) {
            return Err(bad(format!("audit_alpha must lie in (0, 1], got {}", self.audit_alpha)));
        }
        if !(self.audit_half_width > 0.0 && self.audit_half_width.is_finite()) {
            return Err(bad("audit_half_width must be positive"));
        }
        if let Some(out) = &self.out {
            check_writable(out)?;
        }
        Ok(())
    }
}

fn check_writable(dir: &Path) -> Result<(), ConfigError> {
    fs::create_dir_all(dir).map_err(|e| bad(format!("out directory {} cannot be created: {e}", dir.display())))?;
    let probe = dir.join(".vbboost-write-probe");
    fs::write(&probe, b"").map_err(|e| bad(format!("out directory {} is not writable: {e}", dir.display())))?;
    let _ = fs::remove_file(probe);
    Ok(())
}
