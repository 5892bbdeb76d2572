use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use snb_cli::config::{Overrides, Preset, RunConfig};
use snb_cli::pipeline::{resolve_cohort, run_pipeline, Stages};
use snb_cli::report::{self, emit_report, read_artifacts, write_artifacts};
use snb_cli::write_cohort;
use snb_core::synth::{generate_cohort, CohortSpec};

#[derive(Parser)]
#[command(name = "snb", version, about = "Subgroup net benefit: fit, validate and audit risk models across groups")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for bootstrap resampling and preset cohorts
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Upper bound on worker threads
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Directory for tables, plots and artifacts
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Cohort CSV (overrides the config cohort or preset)
    #[arg(long, global = true)]
    cohort: Option<PathBuf>,
    /// Synthetic preset cohort instead of a CSV
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    /// Size multiplier for preset cohorts
    #[arg(long, global = true)]
    scale: Option<f64>,
    /// Bootstrap replicates
    #[arg(long, global = true)]
    replicates: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a preset or custom synthetic cohort as CSV
    Synth {
        #[command(flatten)]
        common: Common,
        /// JSON cohort specification (groups, features, covariate shift)
        #[arg(long, conflicts_with = "preset")]
        spec: Option<PathBuf>,
        /// Output CSV path (default: <output-dir>/cohort.csv)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the configured model variants
    Fit(Common),
    /// Fit and report optimism-corrected metrics with intervals
    Validate(Common),
    /// Fit and evaluate policies, decision curves and gaps
    Evaluate(Common),
    /// Fit and search Pareto-optimal group thresholds under capacity caps
    Pareto(Common),
    /// Re-emit tables and plots from a saved artifacts file
    Report {
        #[command(flatten)]
        common: Common,
        /// Artifacts file (default: <output-dir>/artifacts.json)
        #[arg(long)]
        artifacts: Option<PathBuf>,
    },
    /// Full pipeline: fit, validate, evaluate, Pareto and report
    Run(Common),
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    config.apply(&Overrides {
        cohort: common.cohort.clone(),
        preset: common.preset,
        scale: common.scale,
        seed: common.seed,
        workers: common.workers,
        output_dir: common.output_dir.clone(),
        replicates: common.replicates,
    });
    Ok(config)
}

fn announce(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn run_stages(common: &Common, stages: Stages) -> Result<()> {
    let config = load_config(common)?;
    let artifacts = run_pipeline(&config, stages)?;
    let dir = config.output_dir();
    let mut files = vec![write_artifacts(&artifacts, &dir)?];
    if stages == Stages::FIT {
        let path = dir.join("models.json");
        let models: Vec<_> = artifacts.models.iter().map(|m| &m.model).collect();
        std::fs::write(&path, serde_json::to_string_pretty(&models)?)
            .with_context(|| format!("cannot write {}", path.display()))?;
        files.push(path);
    }
    let emitted = emit_report(&artifacts, &dir).context("stage `report`")?;
    files.extend(emitted.files);
    announce(&files);
    for notice in emitted.notices {
        eprintln!("note: {notice}");
    }
    Ok(())
}

fn synth(common: &Common, spec: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let config = load_config(common)?;
    let cohort = match spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            let mut spec: CohortSpec =
                serde_json::from_str(&text).with_context(|| format!("invalid cohort spec {}", path.display()))?;
            if let Some(seed) = common.seed {
                spec.seed = seed;
            }
            generate_cohort(&spec)?
        }
        None => resolve_cohort(&config)?.0,
    };
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| config.output_dir().join("cohort.csv"));
    write_cohort(&cohort, &path)?;
    println!("wrote {} ({} rows)", path.display(), cohort.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth { common, spec, out } => synth(common, spec.as_deref(), out.as_deref()),
        Command::Fit(c) => run_stages(c, Stages::FIT),
        Command::Validate(c) => run_stages(c, Stages { validate: true, evaluate: false, pareto: false }),
        Command::Evaluate(c) => run_stages(c, Stages { validate: false, evaluate: true, pareto: false }),
        Command::Pareto(c) => run_stages(c, Stages { validate: false, evaluate: false, pareto: true }),
        Command::Run(c) => run_stages(c, Stages::ALL),
        Command::Report { common, artifacts } => (|| {
            let config = load_config(common)?;
            let dir = config.output_dir();
            let path = artifacts.clone().unwrap_or_else(|| dir.join(report::ARTIFACTS_FILE));
            let emitted = emit_report(&read_artifacts(&path)?, &dir)?;
            announce(&emitted.files);
            for notice in emitted.notices {
                eprintln!("note: {notice}");
            }
            Ok(())
        })(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
