//! Exact Gaussian-process posteriors.
//!
//! The same algebra serves the objective model over `(x, τ)` and the
//! log-evaluation-time model over `x` (a joint kernel with ε = 0 and all
//! timestamps at zero).

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure, Error, Result};
use crate::kernels::{JointKernel, SpaceKernel};

/// One bandit interaction: query point, its evaluation time, the timestamp at
/// which the value was observed and the noisy value.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub x: Vec<f64>,
    pub t: f64,
    pub tau: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

impl Prediction {
    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Posterior moments at `(x, τ)` together with their partial derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionGradient {
    pub mean: f64,
    pub variance: f64,
    pub mean_dx: Vec<f64>,
    pub variance_dx: Vec<f64>,
    pub mean_dtau: f64,
    pub variance_dtau: f64,
}

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;

/// Factorized posterior of a zero-mean-plus-constant GP after conditioning on
/// noisy observations. Immutable once built.
#[derive(Debug)]
pub struct Posterior {
    kernel: JointKernel,
    noise_variance: f64,
    prior_mean: f64,
    xs: Vec<Vec<f64>>,
    taus: Vec<f64>,
    /// Lower Cholesky factor of `K + (σ² + jitter)·I`.
    lower: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
    latest_tau: f64,
    clamps: AtomicUsize,
}

impl Clone for Posterior {
    fn clone(&self) -> Self {
        Self {
            kernel: self.kernel,
            noise_variance: self.noise_variance,
            prior_mean: self.prior_mean,
            xs: self.xs.clone(),
            taus: self.taus.clone(),
            lower: self.lower.clone(),
            alpha: self.alpha.clone(),
            jitter: self.jitter,
            latest_tau: self.latest_tau,
            clamps: AtomicUsize::new(self.clamps.load(Ordering::Relaxed)),
        }
    }
}

impl Posterior {
    /// The GP prior: `predict` returns `(prior_mean, θ)` everywhere.
    pub fn prior(kernel: JointKernel, noise_variance: f64, prior_mean: f64) -> Result<Self> {
        Self::fit_targets(
            kernel,
            Vec::new(),
            Vec::new(),
            &[],
            noise_variance,
            prior_mean,
        )
    }

    /// Condition on observations, using each observation's `tau` as its timestamp.
    pub fn fit(
        kernel: JointKernel,
        observations: &[Observation],
        noise_variance: f64,
        prior_mean: f64,
    ) -> Result<Self> {
        let xs = observations.iter().map(|o| o.x.clone()).collect();
        let taus = observations.iter().map(|o| o.tau).collect();
        let ys: Vec<f64> = observations.iter().map(|o| o.y).collect();
        Self::fit_targets(kernel, xs, taus, &ys, noise_variance, prior_mean)
    }

    /// Condition on explicit inputs and targets.
    pub fn fit_targets(
        kernel: JointKernel,
        xs: Vec<Vec<f64>>,
        taus: Vec<f64>,
        targets: &[f64],
        noise_variance: f64,
        prior_mean: f64,
    ) -> Result<Self> {
        ensure(noise_variance.is_finite() && noise_variance > 0.0, || {
            format!("noise variance must be positive, got {noise_variance}")
        })?;
        ensure(prior_mean.is_finite(), || {
            "prior mean must be finite".into()
        })?;
        ensure(xs.len() == taus.len() && xs.len() == targets.len(), || {
            "inputs, timestamps and targets must have equal length".into()
        })?;
        if let Some(first) = xs.first() {
            let d = first.len();
            ensure(d >= 1, || "inputs need at least one coordinate".into())?;
            ensure(
                xs.iter()
                    .all(|x| x.len() == d && x.iter().all(|v| v.is_finite())),
                || "inputs must be finite and share one dimension".into(),
            )?;
        }
        ensure(taus.iter().chain(targets).all(|v| v.is_finite()), || {
            "timestamps and targets must be finite".into()
        })?;

        let n = xs.len();
        let mut gram = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in j..n {
                let v = kernel.value(&xs[i], taus[i], &xs[j], taus[j]);
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
        }
        for i in 0..n {
            gram[(i, i)] += noise_variance;
        }

        let theta = kernel.variance();
        let mut jitter = 0.0;
        let lower = loop {
            let mut m = gram.clone();
            for i in 0..n {
                m[(i, i)] += jitter;
            }
            if let Some(chol) = m.cholesky() {
                break chol.unpack();
            }
            jitter = if jitter == 0.0 {
                JITTER_START * theta
            } else {
                jitter * 10.0
            };
            if jitter > JITTER_MAX * theta * (1.0 + 1e-9) {
                return Err(Error::Numerical(format!(
                    "covariance of {n} observations is not positive definite even with jitter {:e}; \
                     the Gram matrix is too ill-conditioned",
                    JITTER_MAX * theta
                )));
            }
        };

        let mut alpha = DVector::from_iterator(n, targets.iter().map(|y| y - prior_mean));
        forward_substitute(&lower, alpha.as_mut_slice());
        backward_substitute(&lower, alpha.as_mut_slice());

        let latest_tau = taus.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            kernel,
            noise_variance,
            prior_mean,
            xs,
            taus,
            lower,
            alpha,
            jitter,
            latest_tau,
            clamps: AtomicUsize::new(0),
        })
    }

    pub fn kernel(&self) -> &JointKernel {
        &self.kernel
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn prior_mean(&self) -> f64 {
        self.prior_mean
    }

    pub fn prior_variance(&self) -> f64 {
        self.kernel.variance()
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn inputs(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.xs
            .iter()
            .map(Vec::as_slice)
            .zip(self.taus.iter().copied())
    }

    /// Jitter added to the diagonal for the factorization to succeed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Number of predictive variances clamped into `[0, θ]` so far.
    pub fn clamp_count(&self) -> usize {
        self.clamps.load(Ordering::Relaxed)
    }

    /// Largest training timestamp (`-inf` when empty).
    pub fn latest_tau(&self) -> f64 {
        self.latest_tau
    }

    /// Lower factor `L` with `L·Lᵀ = K + (σ² + jitter)·I`.
    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.lower
    }

    fn clamp_variance(&self, v: f64) -> f64 {
        let theta = self.prior_variance();
        if v < 0.0 || v > theta {
            // excursions at rounding level are expected and not counted
            if v < -1e-12 * theta || v > theta * (1.0 + 1e-12) {
                self.clamps.fetch_add(1, Ordering::Relaxed);
            }
            v.clamp(0.0, theta)
        } else {
            v
        }
    }

    pub fn predict(&self, x: &[f64], tau: f64) -> Prediction {
        if self.is_empty() {
            return Prediction {
                mean: self.prior_mean,
                variance: self.prior_variance(),
            };
        }
        let mut v: Vec<f64> = self
            .xs
            .iter()
            .zip(&self.taus)
            .map(|(xi, &ti)| self.kernel.value(x, tau, xi, ti))
            .collect();
        let mean = self.prior_mean + dot(&v, self.alpha.as_slice());
        forward_substitute(&self.lower, &mut v);
        let variance = self.clamp_variance(self.prior_variance() - dot(&v, &v));
        Prediction { mean, variance }
    }

    /// Posterior moments and their derivatives in `x` and `τ`. The τ-derivative
    /// is one-sided (from above) at training timestamps, where the time kernel
    /// has a cusp.
    pub fn predict_with_gradient(&self, x: &[f64], tau: f64) -> PredictionGradient {
        let d = x.len();
        if self.is_empty() {
            return PredictionGradient {
                mean: self.prior_mean,
                variance: self.prior_variance(),
                mean_dx: vec![0.0; d],
                variance_dx: vec![0.0; d],
                mean_dtau: 0.0,
                variance_dtau: 0.0,
            };
        }
        let n = self.len();
        let mut k = vec![0.0; n];
        let mut dk_dx = vec![0.0; n * d];
        let mut dk_dtau = vec![0.0; n];
        let time = self.kernel.time;
        for i in 0..n {
            let ks = self.kernel.space.value_and_gradient(
                x,
                &self.xs[i],
                &mut dk_dx[i * d..(i + 1) * d],
            );
            let lag = tau - self.taus[i];
            let kt = time.decay(lag.abs());
            let dkt = if lag >= 0.0 {
                time.decay_derivative(lag)
            } else {
                -time.decay_derivative(-lag)
            };
            k[i] = ks * kt;
            dk_dtau[i] = ks * dkt;
            for g in &mut dk_dx[i * d..(i + 1) * d] {
                *g *= kt;
            }
        }
        let alpha = self.alpha.as_slice();
        let mean = self.prior_mean + dot(&k, alpha);
        let mut v = k.clone();
        forward_substitute(&self.lower, &mut v);
        let raw_var = self.prior_variance() - dot(&v, &v);
        let variance = self.clamp_variance(raw_var);
        // z = (K + σ²I)⁻¹ k
        let mut z = v;
        backward_substitute(&self.lower, &mut z);

        let mut mean_dx = vec![0.0; d];
        let mut variance_dx = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                mean_dx[j] += dk_dx[i * d + j] * alpha[i];
                variance_dx[j] -= 2.0 * dk_dx[i * d + j] * z[i];
            }
        }
        let mean_dtau = dot(&dk_dtau, alpha);
        let variance_dtau = -2.0 * dot(&dk_dtau, &z);
        PredictionGradient {
            mean,
            variance,
            mean_dx,
            variance_dx,
            mean_dtau,
            variance_dtau,
        }
    }

    /// Precompute everything needed to predict at `x` for any horizon
    /// `τ ≥ latest_tau()`. For such horizons the time factor of every kernel
    /// entry splits as `k_time(τ, τ_ref)·k_time(τ_ref, τ_i)`, so the whole
    /// kernel vector is a scalar multiple of its value at `τ_ref`.
    pub fn forecast(&self, x: &[f64], with_gradient: bool) -> Forecast {
        let d = x.len();
        let reference = if self.is_empty() {
            0.0
        } else {
            self.latest_tau
        };
        let mut out = Forecast {
            prior_mean: self.prior_mean,
            prior_variance: self.prior_variance(),
            time: self.kernel.time,
            reference,
            mean0: 0.0,
            quad0: 0.0,
            mean0_dx: vec![0.0; d],
            quad0_dx: vec![0.0; d],
        };
        if self.is_empty() {
            return out;
        }
        let n = self.len();
        let mut u = vec![0.0; n];
        let mut du = if with_gradient {
            vec![0.0; n * d]
        } else {
            Vec::new()
        };
        for i in 0..n {
            let kt = self.kernel.time.decay(reference - self.taus[i]);
            if with_gradient {
                let g = &mut du[i * d..(i + 1) * d];
                let ks = self.kernel.space.value_and_gradient(x, &self.xs[i], g);
                g.iter_mut().for_each(|v| *v *= kt);
                u[i] = ks * kt;
            } else {
                u[i] = self.kernel.space.value(x, &self.xs[i]) * kt;
            }
        }
        let alpha = self.alpha.as_slice();
        out.mean0 = dot(&u, alpha);
        let mut v = u;
        forward_substitute(&self.lower, &mut v);
        out.quad0 = dot(&v, &v);
        if with_gradient {
            let mut z = v;
            backward_substitute(&self.lower, &mut z);
            for i in 0..n {
                for j in 0..d {
                    out.mean0_dx[j] += du[i * d + j] * alpha[i];
                    out.quad0_dx[j] += 2.0 * du[i * d + j] * z[i];
                }
            }
        }
        out
    }
}

/// Posterior at a fixed `x` as a closed-form function of the horizon τ
/// (valid for `τ ≥ reference`).
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    prior_mean: f64,
    prior_variance: f64,
    time: crate::kernels::TimeKernel,
    reference: f64,
    mean0: f64,
    quad0: f64,
    mean0_dx: Vec<f64>,
    quad0_dx: Vec<f64>,
}

impl Forecast {
    pub fn reference(&self) -> f64 {
        self.reference
    }

    pub fn at(&self, tau: f64) -> Prediction {
        debug_assert!(tau >= self.reference - 1e-9);
        let s = self.time.decay((tau - self.reference).max(0.0));
        Prediction {
            mean: self.prior_mean + s * self.mean0,
            variance: (self.prior_variance - s * s * self.quad0).clamp(0.0, self.prior_variance),
        }
    }

    pub fn gradient_at(&self, tau: f64) -> PredictionGradient {
        let lag = (tau - self.reference).max(0.0);
        let s = self.time.decay(lag);
        let ds = self.time.decay_derivative(lag);
        PredictionGradient {
            mean: self.prior_mean + s * self.mean0,
            variance: (self.prior_variance - s * s * self.quad0).clamp(0.0, self.prior_variance),
            mean_dx: self.mean0_dx.iter().map(|g| s * g).collect(),
            variance_dx: self.quad0_dx.iter().map(|g| -s * s * g).collect(),
            mean_dtau: ds * self.mean0,
            variance_dtau: -2.0 * s * ds * self.quad0,
        }
    }
}

/// GP posterior over `g(x) = log t(x)`, the log evaluation time.
#[derive(Debug, Clone)]
pub struct TimeModelPosterior {
    inner: Posterior,
}

impl TimeModelPosterior {
    /// Fit on `(x_i, t_i)` pairs using `log t_i` as targets. With `prior_mean`
    /// unset the constant prior mean is `log(mean t)` (or 0 without data).
    pub fn fit(
        kernel: SpaceKernel,
        points: &[(Vec<f64>, f64)],
        noise_variance: f64,
        prior_mean: Option<f64>,
    ) -> Result<Self> {
        ensure(
            points.iter().all(|(_, t)| t.is_finite() && *t > 0.0),
            || "evaluation times must be positive to model their logarithm".into(),
        )?;
        let prior = prior_mean.unwrap_or_else(|| {
            if points.is_empty() {
                0.0
            } else {
                (points.iter().map(|(_, t)| t).sum::<f64>() / points.len() as f64).ln()
            }
        });
        let xs: Vec<Vec<f64>> = points.iter().map(|(x, _)| x.clone()).collect();
        let targets: Vec<f64> = points.iter().map(|(_, t)| t.ln()).collect();
        let taus = vec![0.0; xs.len()];
        let inner = Posterior::fit_targets(
            JointKernel::space_only(kernel),
            xs,
            taus,
            &targets,
            noise_variance,
            prior,
        )?;
        Ok(Self { inner })
    }

    pub fn from_observations(
        kernel: SpaceKernel,
        observations: &[Observation],
        noise_variance: f64,
        prior_mean: Option<f64>,
    ) -> Result<Self> {
        let pts: Vec<_> = observations.iter().map(|o| (o.x.clone(), o.t)).collect();
        Self::fit(kernel, &pts, noise_variance, prior_mean)
    }

    /// Posterior mean and variance of `g` at `x`.
    pub fn predict_log_time(&self, x: &[f64]) -> Prediction {
        self.inner.predict(x, 0.0)
    }

    pub fn noise_variance(&self) -> f64 {
        self.inner.noise_variance()
    }

    pub fn posterior(&self) -> &Posterior {
        &self.inner
    }
}

/// Mean of the log-normal predictive evaluation time:
/// `exp(μ + (σ_n² + σ_g²) / 2)`.
pub fn lognormal_time_mean(mean: f64, posterior_variance: f64, noise_variance: f64) -> f64 {
    (mean + 0.5 * (posterior_variance + noise_variance)).exp()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// Solve `L·v = b` in place (column-oriented, contiguous column access).
fn forward_substitute(lower: &DMatrix<f64>, b: &mut [f64]) {
    let n = b.len();
    let data = lower.as_slice();
    for j in 0..n {
        let col = &data[j * n..(j + 1) * n];
        let vj = b[j] / col[j];
        b[j] = vj;
        if vj != 0.0 {
            for i in j + 1..n {
                b[i] -= col[i] * vj;
            }
        }
    }
}

/// Solve `Lᵀ·v = b` in place.
fn backward_substitute(lower: &DMatrix<f64>, b: &mut [f64]) {
    let n = b.len();
    let data = lower.as_slice();
    for j in (0..n).rev() {
        let col = &data[j * n..(j + 1) * n];
        let s: f64 = (j + 1..n).map(|i| col[i] * b[i]).sum();
        b[j] = (b[j] - s) / col[j];
    }
}
