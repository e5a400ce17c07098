//! Synthetic drifting environment on a grid.
//!
//! The objective is a joint GP draw over the grid that mixes toward a fresh
//! draw as the clock advances: after `Δ` seconds
//! `f ← (1−λ)^{Δ/2} f + √(1 − (1−λ)^Δ) η` with `η` another joint draw. This
//! keeps every marginal at variance `θ` and reduces to `√(1−λ) f + √λ η`
//! for one second.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::kernels::{space_gram_matrix, SpaceKernel};
use crate::optimize::BoxDomain;

const DRIFT_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TimeProfile {
    /// Every evaluation takes `seconds`.
    Uniform { seconds: f64 },
    /// `t(x) = 2(sin(√2 π ‖x‖) + 2)`, ranging over `[2, 6]`.
    SinusoidalBiased,
}

impl TimeProfile {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TimeProfile::Uniform { seconds } => {
                ensure(seconds.is_finite() && seconds > 0.0, || {
                    format!("uniform evaluation time must be positive, got {seconds}")
                })
            }
            TimeProfile::SinusoidalBiased => Ok(()),
        }
    }

    pub fn eval_time(&self, x: &[f64]) -> f64 {
        match *self {
            TimeProfile::Uniform { seconds } => seconds,
            TimeProfile::SinusoidalBiased => {
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                2.0 * ((std::f64::consts::SQRT_2 * std::f64::consts::PI * norm).sin() + 2.0)
            }
        }
    }

    /// `∇t(x)`; zero at the origin where the norm is not differentiable.
    pub fn eval_time_gradient(&self, x: &[f64]) -> Vec<f64> {
        match *self {
            TimeProfile::Uniform { .. } => vec![0.0; x.len()],
            TimeProfile::SinusoidalBiased => {
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return vec![0.0; x.len()];
                }
                let w = std::f64::consts::SQRT_2 * std::f64::consts::PI;
                let scale = 2.0 * (w * norm).cos() * w / norm;
                x.iter().map(|v| scale * v).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub domain: BoxDomain,
    pub kernel: SpaceKernel,
    /// Per-second drift rate λ.
    pub lambda: f64,
    pub obs_noise_variance: f64,
    pub time_profile: TimeProfile,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            domain: BoxDomain::unit_cube(2, 50),
            kernel: SpaceKernel::squared_exponential(0.2, 1.0).expect("valid default kernel"),
            lambda: 0.01,
            obs_noise_variance: 0.01,
            time_profile: TimeProfile::SinusoidalBiased,
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        ensure((0.0..=1.0).contains(&self.lambda), || {
            format!("env.lambda must lie in [0, 1], got {}", self.lambda)
        })?;
        ensure(
            self.obs_noise_variance.is_finite() && self.obs_noise_variance > 0.0,
            || {
                format!(
                    "env.obs_noise_variance must be positive, got {}",
                    self.obs_noise_variance
                )
            },
        )?;
        self.time_profile.validate()
    }
}

/// Lower Cholesky factor of the grid Gram matrix, shared between environments
/// that use the same domain and kernel.
#[derive(Debug)]
pub struct GridFactor {
    points: Vec<Vec<f64>>,
    lower: DMatrix<f64>,
    jitter: f64,
}

impl GridFactor {
    pub fn new(domain: &BoxDomain, kernel: &SpaceKernel) -> Result<Self> {
        let points = domain.grid_points();
        let gram = space_gram_matrix(kernel, &points);
        let theta = kernel.variance();
        let mut jitter = 0.0;
        loop {
            let mut m = gram.clone();
            for i in 0..m.nrows() {
                m[(i, i)] += jitter;
            }
            if let Some(chol) = m.cholesky() {
                let mut lower = chol.unpack();
                lower.fill_upper_triangle(0.0, 1);
                return Ok(Self {
                    points,
                    lower,
                    jitter,
                });
            }
            jitter = if jitter == 0.0 {
                1e-10 * theta
            } else {
                jitter * 10.0
            };
            if jitter > 1e-4 * theta {
                return Err(Error::Numerical(
                    "grid Gram matrix could not be factorized".into(),
                ));
            }
        }
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `L z` for a standard normal `z`.
    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let g = self.len();
        let z: Vec<f64> = (0..g).map(|_| StandardNormal.sample(rng)).collect();
        let data = self.lower.as_slice();
        let mut out = vec![0.0; g];
        for (j, zj) in z.iter().enumerate() {
            let col = &data[j * g..(j + 1) * g];
            for i in j..g {
                out[i] += col[i] * zj;
            }
        }
        out
    }
}

/// Result of one noisy evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Observed {
    pub index: usize,
    pub x: Vec<f64>,
    pub y: f64,
    /// The requested point was not on the grid and was moved to the nearest grid point.
    pub snapped: bool,
}

#[derive(Debug, Clone)]
pub struct Environment {
    config: EnvConfig,
    factor: Arc<GridFactor>,
    values: Vec<f64>,
    clock: f64,
    drift_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
}

impl Environment {
    /// Factorize the grid Gram and draw `f_0`.
    pub fn sample_initial(config: &EnvConfig) -> Result<Self> {
        config.validate()?;
        let factor = Arc::new(GridFactor::new(&config.domain, &config.kernel)?);
        Self::with_factor(config, factor)
    }

    /// Draw `f_0` from a precomputed factor of the same domain and kernel.
    pub fn with_factor(config: &EnvConfig, factor: Arc<GridFactor>) -> Result<Self> {
        config.validate()?;
        ensure(factor.len() == config.domain.grid_len(), || {
            "grid factor does not match the configured domain".into()
        })?;
        let mut drift_rng = ChaCha8Rng::seed_from_u64(config.seed);
        drift_rng.set_stream(DRIFT_STREAM);
        let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed);
        noise_rng.set_stream(NOISE_STREAM);
        let values = factor.draw(&mut drift_rng);
        Ok(Self {
            config: config.clone(),
            factor,
            values,
            clock: 0.0,
            drift_rng,
            noise_rng,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.config.domain
    }

    pub fn factor(&self) -> &Arc<GridFactor> {
        &self.factor
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    /// Current noiseless objective on the grid, row-major.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value_at(&self, index: usize) -> f64 {
        self.values[index]
    }

    /// Move the clock forward by `delta` seconds and evolve `f` accordingly.
    pub fn advance(&mut self, delta: f64) -> Result<()> {
        ensure(delta.is_finite() && delta >= 0.0, || {
            format!("cannot advance by {delta} seconds")
        })?;
        if delta == 0.0 {
            return Ok(());
        }
        self.clock += delta;
        let lambda = self.config.lambda;
        if lambda == 0.0 {
            return Ok(());
        }
        let keep = (1.0 - lambda).powf(delta);
        let eta = self.factor.draw(&mut self.drift_rng);
        let (a, b) = (keep.sqrt(), (1.0 - keep).sqrt());
        for (f, e) in self.values.iter_mut().zip(&eta) {
            *f = a * *f + b * e;
        }
        Ok(())
    }

    /// Noisy evaluation at the grid point nearest to `x`.
    pub fn observe(&mut self, x: &[f64]) -> Observed {
        let index = self.config.domain.nearest_index(x);
        let grid_x = self.factor.points[index].clone();
        let snapped = grid_x.iter().zip(x).any(|(g, v)| (g - v).abs() > 1e-12);
        let z: f64 = StandardNormal.sample(&mut self.noise_rng);
        Observed {
            index,
            y: self.values[index] + self.config.obs_noise_variance.sqrt() * z,
            x: grid_x,
            snapped,
        }
    }

    pub fn eval_time(&self, x: &[f64]) -> f64 {
        self.config.time_profile.eval_time(x)
    }

    /// Grid argmax of the current objective; ties go to the first grid point.
    pub fn true_max(&self) -> (usize, f64) {
        let mut best = (0, self.values[0]);
        for (i, &v) in self.values.iter().enumerate().skip(1) {
            if v > best.1 {
                best = (i, v);
            }
        }
        best
    }
}
