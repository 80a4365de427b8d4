use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use faas_sim::bundled::Bundled;
use faas_sim::config::{read_json, ConfigError, ExperimentConfig};
use faas_sim::experiment::{
    compare, run_experiment, run_sweep, sweep_csv, tradeoff_csv, write_outputs, ExperimentError, SweepSpec,
};
use faas_sim::workload::{generate_synthetic, write_trace, SyntheticWorkloadSpec};

/// Deterministic simulator of serverless control planes.
#[derive(Debug, Parser)]
#[command(name = "faas-sim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Output directory; defaults to the config's `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress the summary on stdout.
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment and write its reports.
    Run {
        /// Experiment config (JSON); built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run a one-axis parameter sweep and write `sweep.csv`.
    Sweep {
        /// Sweep spec (JSON).
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run several configs on one workload and write `tradeoff.csv`.
    Compare {
        /// Experiment configs; repeat the flag, at least two.
        #[arg(long, required = true, num_args = 1..)]
        config: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Write a synthetic workload as trace and manifest CSVs.
    GenTrace {
        /// Synthetic workload spec (JSON).
        #[arg(long, conflicts_with = "bundled", required_unless_present = "bundled")]
        config: Option<PathBuf>,
        /// One of the bundled workloads instead of a spec file.
        #[arg(long)]
        bundled: Option<Bundled>,
        #[command(flatten)]
        common: Common,
    },
    /// Check a config and print its effective form.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        quiet: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig, ExperimentError> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_file(path: &Path, text: &str) -> Result<(), ExperimentError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| ExperimentError::Io { path: parent.into(), source })?;
    }
    std::fs::write(path, text).map_err(|source| ExperimentError::Io { path: path.into(), source })
}

fn dispatch(command: Command) -> Result<(), ExperimentError> {
    match command {
        Command::Run { config, common } => {
            let cfg = load_config(config.as_deref(), common.seed)?;
            let result = run_experiment(&cfg)?;
            let dir = common.out.unwrap_or_else(|| cfg.output.dir.clone());
            let written = write_outputs(&cfg, &result, &dir)?;
            if !common.quiet {
                for w in &result.warnings {
                    eprintln!("warning: {w}");
                }
                for (name, v) in result.report.scalars() {
                    println!("{name} = {v}");
                }
                println!("wrote {} files to {}", written.len(), dir.display());
            }
            Ok(())
        }
        Command::Sweep { config, common } => {
            let mut spec = SweepSpec::load(&config)?;
            if let Some(s) = common.seed {
                spec.base = faas_sim::config::expand_dotted(spec.base)?;
                faas_sim::config::set_path(&mut spec.base, "run.seed", s.into())?;
            }
            let dir = match common.out {
                Some(d) => d,
                None => ExperimentConfig::from_value(spec.base.clone())?.output.dir,
            };
            let points = run_sweep(&spec)?;
            let path = dir.join("sweep.csv");
            write_file(&path, &sweep_csv(&points))?;
            let failed = points.iter().filter(|p| p.result.is_err()).count();
            if !common.quiet {
                for p in points.iter().filter(|p| p.result.is_err()) {
                    eprintln!("point {} failed: {}", p.value, p.result.as_ref().unwrap_err());
                }
                println!("{} points, {failed} failed; wrote {}", points.len(), path.display());
            }
            if failed == points.len() {
                return Err(ExperimentError::Config(ConfigError::Invalid("every sweep point failed".into())));
            }
            Ok(())
        }
        Command::Compare { config, common } => {
            let mut labelled = Vec::new();
            for p in &config {
                let label = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| p.display().to_string());
                labelled.push((label, load_config(Some(p), common.seed)?));
            }
            let dir = common.out.unwrap_or_else(|| labelled[0].1.output.dir.clone());
            let rows = compare(&labelled)?;
            let path = dir.join("tradeoff.csv");
            let csv = tradeoff_csv(&rows);
            write_file(&path, &csv)?;
            if !common.quiet {
                print!("{csv}");
            }
            Ok(())
        }
        Command::GenTrace { config, bundled, common } => {
            let workload = match (config, bundled) {
                (Some(p), _) => {
                    let mut spec: SyntheticWorkloadSpec =
                        serde_json::from_value(read_json(&p)?).map_err(|e| ConfigError::Parse(e.to_string()))?;
                    if let Some(s) = common.seed {
                        spec.seed = s;
                    }
                    generate_synthetic(&spec).map_err(|e| ConfigError::Workload(e.to_string()))?
                }
                (None, Some(b)) => match (b.spec(), common.seed) {
                    (Some(mut spec), Some(s)) => {
                        spec.seed = s;
                        generate_synthetic(&spec).map_err(|e| ConfigError::Workload(e.to_string()))?
                    }
                    _ => b.load().map_err(|e| ConfigError::Workload(e.to_string()))?,
                },
                (None, None) => unreachable!("clap requires one source"),
            };
            let dir = common.out.unwrap_or_else(|| PathBuf::from("."));
            std::fs::create_dir_all(&dir).map_err(|source| ExperimentError::Io { path: dir.clone(), source })?;
            let (trace, manifest) = (dir.join("trace.csv"), dir.join("manifest.csv"));
            write_trace(&workload.workload, &trace, &manifest).map_err(|e| ConfigError::Workload(e.to_string()))?;
            if !common.quiet {
                for w in &workload.warnings {
                    eprintln!("warning: {w}");
                }
                println!(
                    "{} functions, {} invocations; wrote {} and {}",
                    workload.workload.functions.len(),
                    workload.workload.events.len(),
                    trace.display(),
                    manifest.display()
                );
            }
            Ok(())
        }
        Command::Validate { config, seed, quiet } => {
            let cfg = load_config(Some(&config), seed)?;
            let generated = cfg.workload.load()?;
            if !quiet {
                println!("{}", cfg.effective().to_json_pretty());
                eprintln!(
                    "ok: {} functions, {} invocations",
                    generated.workload.functions.len(),
                    generated.workload.events.len()
                );
            }
            Ok(())
        }
    }
}
