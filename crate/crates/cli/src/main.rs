//! `vbboost` command-line front end.
//!
//! Configuration comes from an optional JSON file (`--config`) whose fields
//! are overridden by flags. The seed falls back to `$VBBOOST_SEED` and then
//! to 0. The report is printed on stdout; with `--out DIR` it is also written
//! to `DIR/report.json` together with the CSV tables and `metadata.json`.

mod commands;
mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{ArgAction, Parser, Subcommand};
use serde_json::{json, Value};

use commands::Artifacts;
use config::{CommandKind, ConfigError, Overrides, RunConfig, SeedSource};

#[derive(Debug, Parser)]
#[command(name = "vbboost", version, about = "Boosting variational inference with small-bandwidth Gaussian mixtures")]
struct Cli {
    #[command(subcommand)]
    command: Option<Cmd>,
    /// JSON config file; flags override its fields
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    /// Raise log verbosity (-v info, -vv debug)
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Cmd {
    /// Run the Frank-Wolfe boosting loop on a simulated conjugate posterior
    Boost,
    /// Stability of KL(q0 || posterior) across sample sizes
    #[command(alias = "validate-thm1")]
    ValidateBoundedness,
    /// Limit laws of the Gaussian KL and Hellinger statistics
    #[command(alias = "validate-prop1")]
    ValidateLimits,
    /// Boosting with ceil(exp(sqrt n)) iterations against the rate bound
    ValidateConvergence,
    /// Sample the curvature constant and compare it with the analytic bounds
    Curvature,
    /// One oracle call with its descent paths and the grid oracle
    LmoDebug,
    /// Regularity audit of an exponential-family likelihood
    AuditExpfam,
}

impl From<Cmd> for CommandKind {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Boost => CommandKind::Boost,
            Cmd::ValidateBoundedness => CommandKind::ValidateBoundedness,
            Cmd::ValidateLimits => CommandKind::ValidateLimits,
            Cmd::ValidateConvergence => CommandKind::ValidateConvergence,
            Cmd::Curvature => CommandKind::Curvature,
            Cmd::LmoDebug => CommandKind::LmoDebug,
            Cmd::AuditExpfam => CommandKind::AuditExpfam,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let config_error = e.downcast_ref::<ConfigError>().is_some();
            let report = json!({
                "status": "error",
                "kind": if config_error { "config" } else { "run" },
                "message": format!("{e:#}"),
            });
            eprintln!("{report}");
            ExitCode::from(if config_error { 2 } else { 1 })
        }
    }
}

fn resolve(cli: &Cli) -> Result<(RunConfig, CommandKind, SeedSource), ConfigError> {
    let mut cfg = config::load(cli.config.as_deref())?;
    if let Some(c) = cli.command {
        cfg.command = Some(c.into());
    }
    cfg.apply(&cli.overrides);
    let source = cfg.resolve_seed(cli.overrides.seed.is_some())?;
    cfg.validate()?;
    let command = cfg.command()?;
    Ok((cfg, command, source))
}

fn run(cli: &Cli) -> Result<()> {
    let (cfg, command, seed_source) = resolve(cli)?;
    if let Some(jobs) = cfg.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring the worker pool")?;
    }
    log::info!("running {} with seed {}", command.name(), cfg.seed());
    let art = commands::dispatch(&cfg, command).with_context(|| format!("{} failed", command.name()))?;
    let metadata = metadata(&cfg, command, seed_source, &art);
    let document = json!({"metadata": metadata, "report": art.report});
    println!("{}", serde_json::to_string_pretty(&document)?);
    if let Some(dir) = &cfg.out {
        write_outputs(dir, &document, &metadata, &art)?;
    }
    Ok(())
}

fn metadata(cfg: &RunConfig, command: CommandKind, seed_source: SeedSource, art: &Artifacts) -> Value {
    json!({
        "tool": "vbboost",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command.name(),
        "seed": cfg.seed(),
        "seed_source": seed_source,
        "seeds": art.seeds,
        "config": cfg,
        "files": art.csv.iter().map(|(name, _)| *name).collect::<Vec<_>>(),
    })
}

fn write_outputs(dir: &Path, document: &Value, metadata: &Value, art: &Artifacts) -> Result<()> {
    let write = |name: &str, bytes: &[u8]| {
        let path = dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))
    };
    write("report.json", serde_json::to_string_pretty(document)?.as_bytes())?;
    for (name, bytes) in &art.csv {
        write(name, bytes)?;
    }
    write("metadata.json", serde_json::to_string_pretty(metadata)?.as_bytes())?;
    log::info!("wrote artifacts to {}", dir.display());
    Ok(())
}
