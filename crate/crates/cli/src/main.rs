//! `metagmt` command-line interface.
//!
//! Exit codes: 0 success, 1 invalid configuration or input, 2 runtime
//! failure, 3 a verification suite found a failing check.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use metagmt::experiments::{self, ExperimentConfig};
use metagmt::Error;

#[derive(Parser)]
#[command(name = "metagmt", version, about = "Meta-filtered graph multilinear interpretation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Flat `key = value` configuration file; keys not given keep defaults.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set epochs=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let overrides = experiments::parse_overrides(&self.set)?;
        Ok(match &self.config {
            Some(path) => ExperimentConfig::load(path, &overrides)?,
            None => ExperimentConfig::from_pairs(&overrides)?,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset directory with a checksum manifest.
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Train one seed into `<output root>/<run name>`.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train every seed of the configuration and aggregate the results.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Seed list such as `0-9` or `0,2,4`; overrides `seeds`.
        #[arg(long)]
        seeds: Option<String>,
        /// Parallel workers; defaults to METAGMT_WORKERS, else 1.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Build X-ROC, X-Prec@5 and Clf-Acc tables from run or sweep directories.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Finite-difference checks of every gradient rule, layer and the meta-gradient.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Check only the deliberately corrupted rule; must exit with 3.
        #[arg(long, hide = true)]
        corrupted: bool,
    },
    /// Compare SubMT estimators against exact enumeration on tiny instances.
    OracleCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        instances: usize,
        /// Independent SAM draws per sample count.
        #[arg(long, default_value_t = 100)]
        reps: usize,
        /// CSV destination; stdout when absent.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

/// Outcome of a command that ran to completion.
enum Outcome {
    Ok,
    VerificationFailed,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::VerificationFailed) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 1 for configuration and input problems, 2 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::Input(_) | Error::Ingestion { .. } | Error::Format { .. }) => 1,
        _ => 2,
    }
}

fn execute(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::GenData { config, out } => {
            let cfg = config.resolve()?;
            let manifest = experiments::gen_data(&cfg.dataset, &out)?;
            for (k, v) in manifest {
                println!("{k} = {v}");
            }
        }
        Command::Train { config } => {
            let cfg = config.resolve()?;
            let (dir, record) = experiments::run(&cfg)?;
            let m = &record.final_metrics;
            println!(
                "{}: epoch {} x_roc {:.4} x_prec@{} {:.4} clf_acc {:.4}",
                dir.display(),
                record.best_epoch,
                m.x_roc,
                m.k,
                m.x_prec_at_k,
                m.clf_acc
            );
        }
        Command::Sweep { config, seeds, workers } => {
            let mut cfg = config.resolve()?;
            if let Some(s) = seeds {
                cfg.seeds = experiments::parse_seeds(&s)?;
            }
            let workers = match workers {
                Some(0) => bail!(Error::Config("--workers must be at least 1".into())),
                Some(n) => n,
                None => experiments::workers_from_env()?,
            };
            let summary = experiments::sweep(&cfg, workers)?;
            print!("{}", fs::read_to_string(summary.dir.join("summary.md"))?);
            if !summary.reused.is_empty() {
                println!("reused finished seeds: {:?}", summary.reused);
            }
            if !summary.failed.is_empty() {
                for (seed, err) in &summary.failed {
                    eprintln!("seed {seed} failed: {err}");
                }
                if summary.completed.is_empty() {
                    bail!("every seed failed");
                }
            }
        }
        Command::Report { dirs, out } => {
            experiments::report(&dirs, &out)?;
            print!("{}", fs::read_to_string(out.join("report.md"))?);
        }
        Command::Gradcheck { seed, corrupted } => {
            let results = if corrupted {
                vec![metagmt::gradcheck::corrupted_rule_check(seed)?]
            } else {
                experiments::gradcheck(seed)?
            };
            let mut failed = 0;
            for r in &results {
                let verdict = if r.passed() { "PASS" } else { "FAIL" };
                println!(
                    "{verdict} {:<60} rel_err {:.3e} (tol {:.0e}, {} scalars, {:.2}s)",
                    r.name, r.max_rel_err, r.tolerance, r.scalars, r.seconds
                );
                failed += usize::from(!r.passed());
            }
            println!("{} checks, {failed} failed", results.len());
            if failed > 0 {
                return Ok(Outcome::VerificationFailed);
            }
        }
        Command::OracleCheck { seed, instances, reps, out } => {
            let rows = experiments::oracle_check(seed, instances, reps)?;
            let csv = experiments::oracle_csv(&rows);
            match &out {
                Some(path) => write_file(path, &csv)?,
                None => print!("{csv}"),
            }
            let failures = experiments::oracle_failures(&rows);
            for f in &failures {
                eprintln!("FAIL {f}");
            }
            if !failures.is_empty() {
                return Ok(Outcome::VerificationFailed);
            }
        }
    }
    Ok(Outcome::Ok)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
