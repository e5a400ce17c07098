//! The `run` subcommand: every (strategy, seed) pair, trace files, summary
//! and manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use tvgp_core::bandit::{aggregate, run, GpPolicy, RunFailure, RunTrace, Summary};
use tvgp_core::envsim::{EnvConfig, Environment, GridFactor};

use crate::config::ResolvedExperiment;

pub const TRACE_HEADER: [&str; 10] = [
    "n",
    "x1",
    "x2",
    "t",
    "tau",
    "y",
    "regret",
    "cum_regret",
    "acq_value",
    "select_ms",
];

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0}")]
    Numerical(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn trace_file_name(label: &str, seed: u64) -> String {
    format!("{label}_seed{seed}.csv")
}

/// Trace rows; coordinates beyond the second extend the header as `x3, x4, …`.
pub fn write_trace(path: &Path, trace: &RunTrace) -> Result<(), RunError> {
    let dim = trace.records.first().map_or(2, |r| r.x.len());
    let mut header: Vec<String> = vec!["n".into()];
    header.extend((1..=dim.max(2)).map(|i| format!("x{i}")));
    header.extend(TRACE_HEADER[3..].iter().map(|s| s.to_string()));
    let mut w = csv::Writer::from_path(path).map_err(|e| RunError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    })?;
    let to_io = |e: csv::Error| RunError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    };
    w.write_record(&header).map_err(to_io)?;
    for r in &trace.records {
        let mut row = vec![r.n.to_string()];
        row.extend(r.x.iter().map(|v| v.to_string()));
        for _ in r.x.len()..2 {
            row.push(String::new());
        }
        row.extend(
            [
                r.t,
                r.tau,
                r.y,
                r.regret,
                r.cum_regret,
                r.acq_value,
                r.select_ms,
            ]
            .iter()
            .map(|v| v.to_string()),
        );
        w.write_record(&row).map_err(to_io)?;
    }
    w.flush().map_err(io_err(path))
}

/// Wide summary: `n,<label>_mean,<label>_std,…` for rounds after the initial design.
pub fn write_summary(
    path: &Path,
    labels: &[String],
    summaries: &[Summary],
    first_round: usize,
) -> Result<(), RunError> {
    let mut out = String::from("n");
    for l in labels {
        out.push_str(&format!(",{l}_mean,{l}_std"));
    }
    out.push('\n');
    let rounds = &summaries[0].rounds;
    for (i, n) in rounds.iter().enumerate() {
        if *n < first_round {
            continue;
        }
        out.push_str(&n.to_string());
        for s in summaries {
            out.push_str(&format!(",{},{}", s.mean[i], s.std[i]));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

#[derive(Serialize)]
struct Manifest<'a> {
    config_path: String,
    config_source: &'a str,
    git_describe: String,
    seeds: &'a [u64],
    seed_offset: u64,
    strategies: Vec<&'a str>,
    rounds: usize,
    init_points: usize,
    created_unix_seconds: u64,
    status: String,
    failures: Vec<String>,
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

pub struct RunReport {
    pub output_dir: PathBuf,
    pub traces_written: usize,
    pub failures: Vec<String>,
}

/// Run everything in `exp`, writing outputs under its output directory.
/// With failures, the completed and partial traces and the manifest are still written.
pub fn execute(
    exp: &ResolvedExperiment,
    config_path: &Path,
    config_source: &str,
    seed_offset: u64,
    jobs: usize,
) -> Result<RunReport, RunError> {
    let out = &exp.output_dir;
    let trace_dir = out.join("traces");
    fs::create_dir_all(&trace_dir).map_err(io_err(&trace_dir))?;

    let factor = Arc::new(
        GridFactor::new(&exp.env.domain, &exp.env.kernel)
            .map_err(|e| RunError::Numerical(e.to_string()))?,
    );
    let tasks: Vec<(usize, u64)> = (0..exp.strategies.len())
        .flat_map(|s| exp.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| RunError::Numerical(e.to_string()))?;
    let results: Vec<Result<RunTrace, Box<RunFailure>>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(s, seed)| {
                let env_cfg = EnvConfig {
                    seed,
                    ..exp.env.clone()
                };
                let (_, strategy) = &exp.strategies[s];
                let env = Environment::with_factor(&env_cfg, factor.clone())
                    .map_err(|error| fail(strategy, seed, error))?;
                let mut policy =
                    GpPolicy::new(strategy.clone()).map_err(|error| fail(strategy, seed, error))?;
                run(env, &mut policy, &exp.options, seed)
            })
            .collect()
    });

    let mut failures = Vec::new();
    let mut per_strategy: Vec<Vec<RunTrace>> = vec![Vec::new(); exp.strategies.len()];
    let mut written = 0;
    for ((s, seed), result) in tasks.iter().zip(results) {
        let label = &exp.strategies[*s].0;
        let trace = match result {
            Ok(t) => t,
            Err(f) => {
                failures.push(format!("{label} seed {seed}: {f}"));
                f.trace
            }
        };
        if let Err(e) = trace.check_invariants() {
            failures.push(format!(
                "{label} seed {seed}: trace invariant violated: {e}"
            ));
        }
        let path = trace_dir.join(trace_file_name(label, *seed));
        write_trace(&path, &trace)?;
        written += 1;
        per_strategy[*s].push(trace);
    }

    if failures.is_empty() {
        let summaries = per_strategy
            .iter()
            .map(|traces| aggregate(traces))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| RunError::Numerical(e.to_string()))?;
        let labels: Vec<String> = exp.strategies.iter().map(|(l, _)| l.clone()).collect();
        write_summary(
            &out.join("summary.csv"),
            &labels,
            &summaries,
            exp.options.init_points + 1,
        )?;
    }

    let manifest = Manifest {
        config_path: config_path.display().to_string(),
        config_source,
        git_describe: git_describe(),
        seeds: &exp.seeds,
        seed_offset,
        strategies: exp.strategies.iter().map(|(l, _)| l.as_str()).collect(),
        rounds: exp.options.rounds,
        init_points: exp.options.init_points,
        created_unix_seconds: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        status: if failures.is_empty() {
            "ok".into()
        } else {
            "failed".into()
        },
        failures: failures.clone(),
    };
    let path = out.join("manifest.json");
    let mut f = fs::File::create(&path).map_err(io_err(&path))?;
    serde_json::to_writer_pretty(&mut f, &manifest).map_err(|e| RunError::Io {
        path: path.clone(),
        source: e.into(),
    })?;
    writeln!(f).map_err(io_err(&path))?;

    Ok(RunReport {
        output_dir: out.clone(),
        traces_written: written,
        failures,
    })
}

fn fail(
    strategy: &tvgp_core::bandit::StrategyConfig,
    seed: u64,
    error: tvgp_core::Error,
) -> Box<RunFailure> {
    Box::new(RunFailure {
        trace: RunTrace {
            strategy: strategy.kind(),
            seed,
            records: Vec::new(),
        },
        error,
    })
}
