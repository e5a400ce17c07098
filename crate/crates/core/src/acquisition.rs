//! UCB-based acquisition functions for time-varying objectives with
//! non-constant evaluation time, plus their analytic gradients.
//!
//! Every function takes the σ-multiplier of the UCB explicitly. With the
//! [`BetaMode::TheoremOne`] schedule the multiplier is `√β_n`; with
//! [`BetaMode::ConstantScaled`] it is the constant `c` itself.
//!
//! The CTV acquisition is the expectation of the base UCB over the log-normal
//! predictive evaluation time. Substituting `t = exp(√2·σ_g(x)·s + μ_g(x))`
//! turns it into an integral against `e^{−s²}/√π`, evaluated with
//! Gauss–Hermite quadrature.

use std::f64::consts::{PI, SQRT_2};

use gauss_quad::GaussHermite;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, invalid, Result};
use crate::gp::{
    lognormal_time_mean, Forecast, Posterior, Prediction, PredictionGradient, TimeModelPosterior,
};

pub const DEFAULT_QUADRATURE_NODES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AcquisitionKind {
    #[serde(rename = "gp-ucb")]
    GpUcb,
    #[serde(rename = "tv")]
    Tv,
    #[serde(rename = "ctv-fixed")]
    CtvFixed,
    #[serde(rename = "ctv")]
    Ctv,
    #[serde(rename = "ctv-simple")]
    CtvSimple,
}

impl AcquisitionKind {
    pub const ALL: [AcquisitionKind; 5] = [
        AcquisitionKind::GpUcb,
        AcquisitionKind::Tv,
        AcquisitionKind::CtvFixed,
        AcquisitionKind::Ctv,
        AcquisitionKind::CtvSimple,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AcquisitionKind::GpUcb => "gp-ucb",
            AcquisitionKind::Tv => "tv",
            AcquisitionKind::CtvFixed => "ctv-fixed",
            AcquisitionKind::Ctv => "ctv",
            AcquisitionKind::CtvSimple => "ctv-simple",
        }
    }

    /// Whether the strategy fits a model of the log evaluation time.
    pub fn uses_time_model(self) -> bool {
        matches!(self, AcquisitionKind::Ctv | AcquisitionKind::CtvSimple)
    }
}

impl std::fmt::Display for AcquisitionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BetaMode {
    TheoremOne,
    ConstantScaled,
}

/// Exploration schedule. Tail constants `a`, `b` bound the sample-path
/// derivatives; `r` is the side of the cube containing the domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BetaSchedule {
    pub mode: BetaMode,
    pub delta: f64,
    pub dim: usize,
    pub a: f64,
    pub b: f64,
    pub r: f64,
    pub c: f64,
}

impl Default for BetaSchedule {
    fn default() -> Self {
        Self {
            mode: BetaMode::ConstantScaled,
            delta: 0.1,
            dim: 2,
            a: 1.0,
            b: 1.0,
            r: 1.0,
            c: 2.0,
        }
    }
}

impl BetaSchedule {
    pub fn constant(c: f64) -> Self {
        Self {
            mode: BetaMode::ConstantScaled,
            c,
            ..Self::default()
        }
    }

    pub fn theorem_one(delta: f64, dim: usize, a: f64, b: f64, r: f64) -> Self {
        Self {
            mode: BetaMode::TheoremOne,
            delta,
            dim,
            a,
            b,
            r,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            BetaMode::ConstantScaled => ensure(self.c.is_finite() && self.c >= 0.0, || {
                format!("beta.c must be a nonnegative number, got {}", self.c)
            }),
            BetaMode::TheoremOne => beta_theorem_one(self, 1).map(|_| ()),
        }
    }

    /// `β_n` for round `n ≥ 1`.
    pub fn beta(&self, n: usize) -> Result<f64> {
        match self.mode {
            BetaMode::ConstantScaled => Ok(self.c),
            BetaMode::TheoremOne => beta_theorem_one(self, n),
        }
    }

    /// The σ-multiplier handed to the UCB at round `n`.
    pub fn multiplier(&self, n: usize) -> Result<f64> {
        match self.mode {
            BetaMode::ConstantScaled => Ok(self.c),
            BetaMode::TheoremOne => Ok(beta_theorem_one(self, n)?.sqrt()),
        }
    }
}

/// `β_n = 2 log(2π²n²/3δ) + 2d log(d n² b r √(log(2π²n²ad/3δ)))`.
pub fn beta_theorem_one(schedule: &BetaSchedule, n: usize) -> Result<f64> {
    let BetaSchedule {
        delta,
        dim,
        a,
        b,
        r,
        ..
    } = *schedule;
    ensure(n >= 1, || "round index must be at least 1".into())?;
    ensure(delta > 0.0 && delta < 1.0, || {
        format!("delta must lie in (0, 1), got {delta}")
    })?;
    ensure(dim >= 1, || "dimension must be at least 1".into())?;
    ensure(a > 0.0 && b > 0.0 && r > 0.0, || {
        "a, b and r must be positive".into()
    })?;
    let n2 = (n as f64).powi(2);
    let d = dim as f64;
    let inner = (2.0 * PI * PI * n2 * a * d / (3.0 * delta)).ln();
    if inner <= 0.0 {
        return Err(invalid(format!(
            "log(2π²n²ad/3δ) = {inner} is not positive for n = {n}"
        )));
    }
    let arg = d * n2 * b * r * inner.sqrt();
    if arg <= 0.0 || !arg.is_finite() {
        return Err(invalid(format!(
            "second logarithm argument {arg} is not positive"
        )));
    }
    let beta = 2.0 * (2.0 * PI * PI * n2 / (3.0 * delta)).ln() + 2.0 * d * arg.ln();
    if beta <= 0.0 {
        return Err(invalid(format!(
            "schedule constants give nonpositive beta {beta}"
        )));
    }
    Ok(beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionSpec {
    pub kind: AcquisitionKind,
    pub beta: BetaSchedule,
    pub quadrature_nodes: usize,
}

impl Default for AcquisitionSpec {
    fn default() -> Self {
        Self {
            kind: AcquisitionKind::Ctv,
            beta: BetaSchedule::default(),
            quadrature_nodes: DEFAULT_QUADRATURE_NODES,
        }
    }
}

/// Gauss–Hermite rule for `∫ f(s) e^{−s²}/√π ds`, i.e. weights normalized to sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl HermiteRule {
    pub fn new(nodes: usize) -> Result<Self> {
        ensure(nodes >= 1, || "quadrature needs at least one node".into())?;
        if nodes == 1 {
            return Ok(Self {
                nodes: vec![0.0],
                weights: vec![1.0],
            });
        }
        let rule = GaussHermite::new(nodes).map_err(|e| invalid(e.to_string()))?;
        let sqrt_pi = PI.sqrt();
        let (nodes, weights) = rule
            .into_node_weight_pairs()
            .into_iter()
            .map(|(s, w)| (s, w / sqrt_pi))
            .unzip();
        Ok(Self { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    /// `E[f(S)]` for `S ~ N(0, 1/2)`.
    pub fn expectation(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.iter().map(|(s, w)| w * f(s)).sum()
    }
}

/// Posterior belief about `g(x) = log t(x)`.
pub trait LogTimeBelief {
    fn log_time(&self, x: &[f64]) -> Prediction;

    /// Mean and variance of `g(x)` along with their gradients in `x`.
    fn log_time_gradient(&self, x: &[f64]) -> (Prediction, Vec<f64>, Vec<f64>);
}

impl LogTimeBelief for TimeModelPosterior {
    fn log_time(&self, x: &[f64]) -> Prediction {
        self.predict_log_time(x)
    }

    fn log_time_gradient(&self, x: &[f64]) -> (Prediction, Vec<f64>, Vec<f64>) {
        let g = self.posterior().forecast(x, true).gradient_at(0.0);
        (
            Prediction {
                mean: g.mean,
                variance: g.variance,
            },
            g.mean_dx,
            g.variance_dx,
        )
    }
}

/// An `x`-independent log-time belief; `variance = 0` is a point mass at `exp(mean)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedLogTime {
    pub mean: f64,
    pub variance: f64,
}

impl LogTimeBelief for FixedLogTime {
    fn log_time(&self, _x: &[f64]) -> Prediction {
        Prediction {
            mean: self.mean,
            variance: self.variance,
        }
    }

    fn log_time_gradient(&self, x: &[f64]) -> (Prediction, Vec<f64>, Vec<f64>) {
        (self.log_time(x), vec![0.0; x.len()], vec![0.0; x.len()])
    }
}

/// UCB value and its partial derivatives at one `(x, τ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UcbGradient {
    pub value: f64,
    pub dx: Vec<f64>,
    pub dtau: f64,
}

fn ucb_from_moments(p: &PredictionGradient, multiplier: f64) -> UcbGradient {
    let sd = p.variance.sqrt();
    // √v is not differentiable at 0; the posterior variance is at its minimum there
    let half_inv_sd = if sd > 1e-12 { 0.5 / sd } else { 0.0 };
    UcbGradient {
        value: p.mean + multiplier * sd,
        dx: p
            .mean_dx
            .iter()
            .zip(&p.variance_dx)
            .map(|(m, v)| m + multiplier * v * half_inv_sd)
            .collect(),
        dtau: p.mean_dtau + multiplier * p.variance_dtau * half_inv_sd,
    }
}

/// Evaluates the base UCB at one `x` for many horizons, through the closed-form
/// [`Forecast`] whenever every horizon lies at or beyond the latest training timestamp.
struct BaseAt<'a> {
    posterior: &'a Posterior,
    x: &'a [f64],
    forecast: Option<Forecast>,
}

impl<'a> BaseAt<'a> {
    fn new(posterior: &'a Posterior, x: &'a [f64], earliest_tau: f64, gradient: bool) -> Self {
        let forecast = (posterior.is_empty() || earliest_tau >= posterior.latest_tau())
            .then(|| posterior.forecast(x, gradient));
        Self {
            posterior,
            x,
            forecast,
        }
    }

    fn value(&self, tau: f64, multiplier: f64) -> f64 {
        let p = match &self.forecast {
            Some(f) => f.at(tau),
            None => self.posterior.predict(self.x, tau),
        };
        p.mean + multiplier * p.std_dev()
    }

    fn gradient(&self, tau: f64, multiplier: f64) -> UcbGradient {
        let p = match &self.forecast {
            Some(f) => f.gradient_at(tau),
            None => self.posterior.predict_with_gradient(self.x, tau),
        };
        ucb_from_moments(&p, multiplier)
    }
}

/// `μ_n(x, τ) + multiplier·σ_n(x, τ)`.
pub fn ucb_base(posterior: &Posterior, x: &[f64], tau: f64, multiplier: f64) -> f64 {
    let p = posterior.predict(x, tau);
    p.mean + multiplier * p.std_dev()
}

/// UCB value with its gradient in `x` and derivative in `τ`.
pub fn ucb_base_gradient(
    posterior: &Posterior,
    x: &[f64],
    tau: f64,
    multiplier: f64,
) -> UcbGradient {
    BaseAt::new(posterior, x, tau, true).gradient(tau, multiplier)
}

/// Time-varying baseline: the UCB at horizon `n + 1`, whatever the true clock.
pub fn tv_acquisition(posterior: &Posterior, x: &[f64], n: usize, multiplier: f64) -> f64 {
    ucb_base(posterior, x, (n + 1) as f64, multiplier)
}

/// Known evaluation time: the UCB at `τ_n + t`.
pub fn ctv_fixed(posterior: &Posterior, x: &[f64], tau_n: f64, t: f64, multiplier: f64) -> f64 {
    BaseAt::new(posterior, x, tau_n + t, false).value(tau_n + t, multiplier)
}

/// Gradient of [`ctv_fixed`] in `x` with `t` held fixed.
pub fn grad_ctv_fixed(
    posterior: &Posterior,
    x: &[f64],
    tau_n: f64,
    t: f64,
    multiplier: f64,
) -> Vec<f64> {
    ucb_base_gradient(posterior, x, tau_n + t, multiplier).dx
}

/// Posterior expectation of the UCB over the log-normal evaluation time.
pub fn ctv(
    posterior: &Posterior,
    time: &impl LogTimeBelief,
    x: &[f64],
    tau_n: f64,
    rule: &HermiteRule,
    multiplier: f64,
) -> f64 {
    let g = time.log_time(x);
    if g.variance <= 0.0 {
        let t = g.mean.exp();
        return ctv_fixed(posterior, x, tau_n, t, multiplier);
    }
    let scale = SQRT_2 * g.std_dev();
    let base = BaseAt::new(posterior, x, tau_n, false);
    rule.expectation(|s| base.value(tau_n + (scale * s + g.mean).exp(), multiplier))
}

/// [`ctv`] together with its gradient in `x`.
pub fn ctv_with_gradient(
    posterior: &Posterior,
    time: &impl LogTimeBelief,
    x: &[f64],
    tau_n: f64,
    rule: &HermiteRule,
    multiplier: f64,
) -> (f64, Vec<f64>) {
    let (g, mean_dx, var_dx) = time.log_time_gradient(x);
    let base = BaseAt::new(posterior, x, tau_n, true);
    if g.variance <= 0.0 {
        let t = g.mean.exp();
        let u = base.gradient(tau_n + t, multiplier);
        let grad =
            u.dx.iter()
                .zip(&mean_dx)
                .map(|(a, m)| a + u.dtau * t * m)
                .collect();
        return (u.value, grad);
    }
    let sd = g.std_dev();
    let sd_dx: Vec<f64> = var_dx.iter().map(|v| v / (2.0 * sd)).collect();
    let mut value = 0.0;
    let mut grad = vec![0.0; x.len()];
    for (s, w) in rule.iter() {
        let t = (SQRT_2 * sd * s + g.mean).exp();
        let u = base.gradient(tau_n + t, multiplier);
        value += w * u.value;
        for j in 0..x.len() {
            let dtau_dx = t * (SQRT_2 * s * sd_dx[j] + mean_dx[j]);
            grad[j] += w * (u.dx[j] + u.dtau * dtau_dx);
        }
    }
    (value, grad)
}

pub fn grad_ctv(
    posterior: &Posterior,
    time: &impl LogTimeBelief,
    x: &[f64],
    tau_n: f64,
    rule: &HermiteRule,
    multiplier: f64,
) -> Vec<f64> {
    ctv_with_gradient(posterior, time, x, tau_n, rule, multiplier).1
}

/// The UCB at `τ_n + t̃` with `t̃` the mean of the predictive evaluation time.
pub fn ctv_simple(
    posterior: &Posterior,
    time: &impl LogTimeBelief,
    x: &[f64],
    tau_n: f64,
    time_noise_variance: f64,
    multiplier: f64,
) -> f64 {
    let g = time.log_time(x);
    let t = lognormal_time_mean(g.mean, g.variance, time_noise_variance);
    ctv_fixed(posterior, x, tau_n, t, multiplier)
}

/// [`ctv_simple`] together with its gradient, chained through
/// `∂t̃/∂x = t̃·(σ_g ∂σ_g/∂x + ∂μ_g/∂x)`.
pub fn ctv_simple_with_gradient(
    posterior: &Posterior,
    time: &impl LogTimeBelief,
    x: &[f64],
    tau_n: f64,
    time_noise_variance: f64,
    multiplier: f64,
) -> (f64, Vec<f64>) {
    let (g, mean_dx, var_dx) = time.log_time_gradient(x);
    let t = lognormal_time_mean(g.mean, g.variance, time_noise_variance);
    let u = ucb_base_gradient(posterior, x, tau_n + t, multiplier);
    let grad =
        u.dx.iter()
            .zip(mean_dx.iter().zip(&var_dx))
            .map(|(a, (m, v))| a + u.dtau * t * (0.5 * v + m))
            .collect();
    (u.value, grad)
}

pub fn grad_ctv_simple(
    posterior: &Posterior,
    time: &impl LogTimeBelief,
    x: &[f64],
    tau_n: f64,
    time_noise_variance: f64,
    multiplier: f64,
) -> Vec<f64> {
    ctv_simple_with_gradient(posterior, time, x, tau_n, time_noise_variance, multiplier).1
}
