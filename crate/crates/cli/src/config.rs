//! Experiment configuration file.
//!
//! Top-level sections set defaults for every strategy; entries of
//! `[[strategies]]` may override `space`, `time`, `beta`, `quadrature_nodes`
//! and `optimizer` individually.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tvgp_core::acquisition::{
    AcquisitionKind, AcquisitionSpec, BetaSchedule, DEFAULT_QUADRATURE_NODES,
};
use tvgp_core::bandit::{RunOptions, StrategyConfig};
use tvgp_core::envsim::{EnvConfig, TimeProfile};
use tvgp_core::kernels::{SpaceFamily, SpaceKernel};
use tvgp_core::optimize::{BoxDomain, OptimizerOptions};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Located {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Unlocated { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    Count(u64),
    List(Vec<u64>),
}

impl Seeds {
    pub fn resolve(&self, offset: u64) -> Vec<u64> {
        match self {
            Seeds::Count(k) => (0..*k).map(|s| s + offset).collect(),
            Seeds::List(v) => v.iter().map(|s| s + offset).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileName {
    Uniform,
    SinusoidalBiased,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub grid_resolution: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub family: SpaceFamily,
    pub lengthscale: f64,
    pub variance: f64,
    pub lambda: f64,
    pub obs_noise_variance: f64,
    pub time_profile: ProfileName,
    /// Seconds per evaluation for the uniform profile.
    pub uniform_time: f64,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self {
            grid_resolution: 50,
            lower: vec![0.0, 0.0],
            upper: vec![1.0, 1.0],
            family: SpaceFamily::SquaredExponential,
            lengthscale: 0.2,
            variance: 1.0,
            lambda: 0.01,
            obs_noise_variance: 0.01,
            time_profile: ProfileName::SinusoidalBiased,
            uniform_time: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSection {
    pub family: SpaceFamily,
    pub lengthscale: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSection {
    /// Defaults to `env.lambda`.
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeModelSection {
    pub family: SpaceFamily,
    pub lengthscale: f64,
    pub variance: f64,
    pub noise_variance: f64,
}

impl Default for TimeModelSection {
    fn default() -> Self {
        Self {
            family: SpaceFamily::Matern52,
            lengthscale: 0.2,
            variance: 1.0,
            noise_variance: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Misspecification {
    pub lengthscale_factor: f64,
    pub epsilon_factor: f64,
}

impl Default for Misspecification {
    fn default() -> Self {
        Self {
            lengthscale_factor: 1.0,
            epsilon_factor: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySection {
    pub strategy: AcquisitionKind,
    /// Column and file prefix; defaults to the strategy name.
    pub label: Option<String>,
    pub space: Option<SpaceSection>,
    pub time: Option<TimeSection>,
    pub beta: Option<BetaSchedule>,
    pub quadrature_nodes: Option<usize>,
    pub optimizer: Option<OptimizerOptions>,
}

fn default_rounds() -> usize {
    100
}

fn default_init() -> usize {
    30
}

fn default_true() -> bool {
    true
}

fn default_seeds() -> Seeds {
    Seeds::Count(30)
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

fn default_nodes() -> usize {
    DEFAULT_QUADRATURE_NODES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_init")]
    pub init_points: usize,
    #[serde(default = "default_true")]
    pub init_consumes_time: bool,
    #[serde(default)]
    pub record_select_time: bool,
    #[serde(default = "default_seeds")]
    pub seeds: Seeds,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub env: EnvSection,
    /// Model space kernel; defaults to the generator's.
    pub space: Option<SpaceSection>,
    #[serde(default)]
    pub time: TimeSection,
    #[serde(default)]
    pub beta: BetaSchedule,
    #[serde(default = "default_nodes")]
    pub quadrature_nodes: usize,
    #[serde(default)]
    pub optimizer: OptimizerOptions,
    /// Objective-model noise; defaults to `env.obs_noise_variance`.
    pub noise_variance: Option<f64>,
    #[serde(default)]
    pub time_model: TimeModelSection,
    #[serde(default)]
    pub misspecification: Misspecification,
    pub strategies: Vec<StrategySection>,
}

/// A configuration with every default applied and every value checked.
#[derive(Debug, Clone)]
pub struct ResolvedExperiment {
    pub env: EnvConfig,
    pub strategies: Vec<(String, StrategyConfig)>,
    pub options: RunOptions,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

/// Semantic error with the config key it concerns.
struct KeyError {
    section: Option<String>,
    key: String,
    message: String,
}

fn key_error(section: Option<&str>, key: &str, message: impl ToString) -> KeyError {
    KeyError {
        section: section.map(str::to_string),
        key: key.to_string(),
        message: message.to_string(),
    }
}

impl ExperimentConfig {
    pub fn parse(source: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(source).map_err(|e| match e.span() {
            Some(span) => {
                let (line, column) = line_column(source, span.start);
                ConfigError::Located {
                    path: path.to_path_buf(),
                    line,
                    column,
                    message: e.message().to_string(),
                }
            }
            None => ConfigError::Unlocated {
                path: path.to_path_buf(),
                message: e.message().to_string(),
            },
        })
    }

    pub fn load(path: &Path) -> Result<(Self, String), ConfigError> {
        let source = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok((Self::parse(&source, path)?, source))
    }

    pub fn resolve(
        &self,
        source: &str,
        path: &Path,
        seed_offset: u64,
    ) -> Result<ResolvedExperiment, ConfigError> {
        self.resolve_inner(seed_offset).map_err(|e| {
            let message = match &e.section {
                Some(s) => format!("{s}.{}: {}", e.key, e.message),
                None => format!("{}: {}", e.key, e.message),
            };
            match locate_key(source, e.section.as_deref(), &e.key) {
                Some((line, column)) => ConfigError::Located {
                    path: path.to_path_buf(),
                    line,
                    column,
                    message,
                },
                None => ConfigError::Unlocated {
                    path: path.to_path_buf(),
                    message,
                },
            }
        })
    }

    fn resolve_inner(&self, seed_offset: u64) -> Result<ResolvedExperiment, KeyError> {
        let e = &self.env;
        let env_kernel = SpaceKernel::new(e.family, e.lengthscale, e.variance)
            .map_err(|err| key_error(Some("env"), "lengthscale", err))?;
        let res = e.grid_resolution;
        let domain = BoxDomain::new(e.lower.clone(), e.upper.clone(), vec![res; e.lower.len()])
            .map_err(|err| key_error(Some("env"), "grid_resolution", err))?;
        let time_profile = match e.time_profile {
            ProfileName::Uniform => TimeProfile::Uniform {
                seconds: e.uniform_time,
            },
            ProfileName::SinusoidalBiased => TimeProfile::SinusoidalBiased,
        };
        let env = EnvConfig {
            domain,
            kernel: env_kernel,
            lambda: e.lambda,
            obs_noise_variance: e.obs_noise_variance,
            time_profile,
            seed: 0,
        };
        if let Err(err) = env.validate() {
            let key = if !(0.0..=1.0).contains(&e.lambda) {
                "lambda"
            } else if !(e.obs_noise_variance > 0.0) {
                "obs_noise_variance"
            } else {
                "uniform_time"
            };
            return Err(key_error(Some("env"), key, err));
        }

        let options = RunOptions {
            rounds: self.rounds,
            init_points: self.init_points,
            init_consumes_time: self.init_consumes_time,
            record_select_time: self.record_select_time,
        };
        if self.rounds < 1 {
            return Err(key_error(None, "rounds", "must be at least 1"));
        }
        options
            .validate()
            .map_err(|err| key_error(None, "init_points", err))?;
        if self.strategies.is_empty() {
            return Err(key_error(
                None,
                "strategies",
                "at least one strategy is required",
            ));
        }
        let seeds = self.seeds.resolve(seed_offset);
        if seeds.is_empty() {
            return Err(key_error(None, "seeds", "at least one seed is required"));
        }

        let mut strategies = Vec::with_capacity(self.strategies.len());
        for s in &self.strategies {
            let label = s
                .label
                .clone()
                .unwrap_or_else(|| s.strategy.name().to_string());
            if strategies
                .iter()
                .any(|(l, _): &(String, StrategyConfig)| *l == label)
            {
                return Err(key_error(
                    Some("strategies"),
                    "label",
                    format!("duplicate strategy label {label}"),
                ));
            }
            let section = Some("strategies");
            let space = s.space.or(self.space);
            let model_kernel = match space {
                Some(sp) => SpaceKernel::new(sp.family, sp.lengthscale, sp.variance)
                    .map_err(|err| key_error(Some("space"), "lengthscale", err))?,
                None => env_kernel,
            };
            let epsilon = s
                .time
                .and_then(|t| t.epsilon)
                .or(self.time.epsilon)
                .unwrap_or(e.lambda);
            let tm = self.time_model;
            let time_model_kernel = SpaceKernel::new(tm.family, tm.lengthscale, tm.variance)
                .map_err(|err| key_error(Some("time_model"), "lengthscale", err))?;
            let config = StrategyConfig {
                acquisition: AcquisitionSpec {
                    kind: s.strategy,
                    beta: s.beta.unwrap_or(self.beta),
                    quadrature_nodes: s.quadrature_nodes.unwrap_or(self.quadrature_nodes),
                },
                model_kernel,
                epsilon,
                noise_variance: self.noise_variance.unwrap_or(e.obs_noise_variance),
                time_model_kernel,
                time_noise_variance: tm.noise_variance,
                optimizer: s.optimizer.unwrap_or(self.optimizer),
            };
            let m = self.misspecification;
            let config = config
                .misspecified(m.lengthscale_factor, m.epsilon_factor)
                .map_err(|err| key_error(Some("misspecification"), "lengthscale_factor", err))?;
            config.validate().map_err(|err| {
                let msg = err.to_string();
                let key = if msg.contains("epsilon") {
                    "epsilon"
                } else if msg.contains("quadrature") {
                    "quadrature_nodes"
                } else if msg.contains("optimizer") {
                    "optimizer"
                } else if msg.contains("noise") {
                    "noise_variance"
                } else {
                    "beta"
                };
                key_error(section, key, format!("{label}: {msg}"))
            })?;
            strategies.push((label, config));
        }
        Ok(ResolvedExperiment {
            env,
            strategies,
            options,
            seeds,
            output_dir: self.output_dir.clone(),
        })
    }
}

/// 1-based line and column of a byte offset.
fn line_column(source: &str, offset: usize) -> (usize, usize) {
    let before = &source[..offset.min(source.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Position of `key = ...` inside `[section]` (or the top level), also
/// accepting `section.key = ...` at the top level.
fn locate_key(source: &str, section: Option<&str>, key: &str) -> Option<(usize, usize)> {
    let mut current: Option<String> = None;
    let dotted = section.map(|s| format!("{s}.{key}"));
    let mut header_line = None;
    for (i, raw) in source.lines().enumerate() {
        let line = raw.trim_start();
        let indent = raw.len() - line.len();
        if line.starts_with('[') {
            let name = line.trim_matches(|c| c == '[' || c == ']' || c == ' ');
            let name = name.split(']').next().unwrap_or(name).trim().to_string();
            if Some(name.as_str()) == section && header_line.is_none() {
                header_line = Some((i + 1, indent + 1));
            }
            current = Some(name);
            continue;
        }
        let Some((lhs, _)) = line.split_once('=') else {
            continue;
        };
        let lhs = lhs.trim();
        let hit = (current.as_deref() == section && lhs == key)
            || (current.is_none() && dotted.as_deref() == Some(lhs));
        if hit {
            return Some((i + 1, indent + 1));
        }
    }
    header_line
}
