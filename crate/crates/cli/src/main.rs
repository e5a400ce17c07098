//! `tvgp`: run time-varying bandit experiments, check the theory numerically
//! and plot summaries.
//!
//! Exit codes: 0 success, 1 a verification check failed, 2 bad input
//! (configuration or missing file), 3 numerical failure during a run.

mod config;
mod experiment;
mod plot;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "tvgp",
    version,
    about = "Time-varying Gaussian-process bandits with evaluation-time costs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every strategy and seed of an experiment config.
    Run {
        config: PathBuf,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long)]
        jobs: Option<usize>,
        /// Override the config's output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check closed forms, identities and gradients numerically.
    VerifyTheory {
        #[arg(long)]
        lemma1: bool,
        #[arg(long)]
        lemma2: bool,
        #[arg(long)]
        chain: bool,
        #[arg(long)]
        gradients: bool,
        #[arg(long)]
        regime: bool,
        /// Simulate CTV-fixed and report the fraction of seeds under the regret bound.
        #[arg(long)]
        bound_coverage: bool,
        /// Restrict the closed-form checks to a single n.
        #[arg(long)]
        n: Option<usize>,
        /// Seeds for the bound-coverage check.
        #[arg(long, default_value_t = 30)]
        seeds: usize,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Render a summary CSV as SVG.
    Plot {
        summary: PathBuf,
        /// Defaults to the summary path with an `.svg` extension.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value = "cumulative regret per round")]
        title: String,
    },
}

fn seed_offset() -> Result<u64, String> {
    match std::env::var("TVGP_SEED_OFFSET") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|e| format!("TVGP_SEED_OFFSET={v:?} is not a nonnegative integer: {e}")),
        Err(_) => Ok(0),
    }
}

fn cmd_run(config_path: PathBuf, jobs: Option<usize>, output: Option<PathBuf>) -> ExitCode {
    let offset = match seed_offset() {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let resolved = ExperimentConfig::load(&config_path).and_then(|(cfg, source)| {
        cfg.resolve(&source, &config_path, offset)
            .map(|r| (r, source))
    });
    let (mut exp, source) = match resolved {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(out) = output {
        exp.output_dir = out;
    }
    let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    match experiment::execute(&exp, &config_path, &source, offset, jobs) {
        Ok(report) if report.failures.is_empty() => {
            eprintln!(
                "wrote {} traces and summary.csv to {}",
                report.traces_written,
                report.output_dir.display()
            );
            ExitCode::SUCCESS
        }
        Ok(report) => {
            for f in &report.failures {
                eprintln!("error: {f}");
            }
            eprintln!(
                "partial outputs ({} traces, manifest) left in {}",
                report.traces_written,
                report.output_dir.display()
            );
            ExitCode::from(3)
        }
        Err(e @ experiment::RunError::Numerical(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn cmd_plot(summary: PathBuf, output: Option<PathBuf>, title: String) -> ExitCode {
    let table = match plot::read_summary(&summary) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let out = output.unwrap_or_else(|| summary.with_extension("svg"));
    if let Err(e) = std::fs::write(&out, plot::render_svg(&table, &title)) {
        eprintln!("error: cannot write {}: {e}", out.display());
        return ExitCode::from(2);
    }
    eprintln!("wrote {}", out.display());
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            config,
            jobs,
            output,
        } => cmd_run(config, jobs, output),
        Command::VerifyTheory {
            lemma1,
            lemma2,
            chain,
            gradients,
            regime,
            bound_coverage,
            n,
            seeds,
            output,
        } => {
            let report = verify::verify(&verify::VerifyOptions {
                lemma1,
                lemma2,
                chain,
                gradients,
                regime,
                bound_coverage,
                n,
                seeds,
            });
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            match output {
                Some(path) => {
                    if let Err(e) = std::fs::write(&path, json + "\n") {
                        eprintln!("error: cannot write {}: {e}", path.display());
                        return ExitCode::from(2);
                    }
                }
                None => {
                    use std::io::Write;
                    let _ = writeln!(std::io::stdout(), "{json}");
                }
            }
            for c in report.checks.iter().filter(|c| !c.pass) {
                eprintln!(
                    "FAIL [{}] {}: observed {:e}, tolerance {:e}",
                    c.category, c.name, c.observed, c.tolerance
                );
            }
            if report.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Command::Plot {
            summary,
            output,
            title,
        } => cmd_plot(summary, output, title),
    }
}
