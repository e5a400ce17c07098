//! The interaction loop: random initial design, then per round fit the
//! models, maximize the acquisition, evaluate, let the clock run for the
//! evaluation time and score the choice against the grid maximum.

use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{
    ctv, ctv_fixed, ctv_simple, ctv_simple_with_gradient, ctv_with_gradient, tv_acquisition,
    ucb_base, ucb_base_gradient, AcquisitionKind, AcquisitionSpec, HermiteRule, LogTimeBelief,
};
use crate::envsim::{Environment, TimeProfile};
use crate::error::{ensure, invalid, Error, Result};
use crate::gp::{lognormal_time_mean, Posterior, TimeModelPosterior};
use crate::kernels::{JointKernel, SpaceFamily, SpaceKernel, TimeKernel};
use crate::optimize::{maximize_from_grid, BoxDomain, Objective, OptimizerOptions};

const DESIGN_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    pub acquisition: AcquisitionSpec,
    /// Space kernel of the objective model.
    pub model_kernel: SpaceKernel,
    /// Forgetting rate of the objective model; ignored by GP-UCB.
    pub epsilon: f64,
    pub noise_variance: f64,
    /// Kernel of the log-time model used by CTV and CTV-simple.
    pub time_model_kernel: SpaceKernel,
    pub time_noise_variance: f64,
    pub optimizer: OptimizerOptions,
}

impl StrategyConfig {
    /// Model hyperparameters equal to the generator's: the environment's space
    /// kernel, `ε = λ` and the observation noise. The log-time model is Matérn 5/2
    /// with `l = 0.2`, `θ = 1` and `σ_g² = 0.01`.
    pub fn well_specified(kind: AcquisitionKind, env: &crate::envsim::EnvConfig) -> Self {
        Self {
            acquisition: AcquisitionSpec {
                kind,
                ..AcquisitionSpec::default()
            },
            model_kernel: env.kernel,
            epsilon: env.lambda,
            noise_variance: env.obs_noise_variance,
            time_model_kernel: SpaceKernel::new(SpaceFamily::Matern52, 0.2, 1.0)
                .expect("valid kernel"),
            time_noise_variance: 0.01,
            optimizer: OptimizerOptions::default(),
        }
    }

    pub fn kind(&self) -> AcquisitionKind {
        self.acquisition.kind
    }

    /// Scale the model lengthscale and forgetting rate away from the generator's.
    pub fn misspecified(mut self, lengthscale_factor: f64, epsilon_factor: f64) -> Result<Self> {
        self.model_kernel = self.model_kernel.scaled_lengthscale(lengthscale_factor)?;
        ensure(epsilon_factor >= 0.0, || {
            "epsilon factor must be nonnegative".into()
        })?;
        self.epsilon = (self.epsilon * epsilon_factor).min(1.0);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        TimeKernel::new(self.epsilon)?;
        ensure(
            self.noise_variance > 0.0 && self.time_noise_variance > 0.0,
            || "model noise variances must be positive".into(),
        )?;
        ensure(self.acquisition.quadrature_nodes >= 1, || {
            "quadrature_nodes must be at least 1".into()
        })?;
        self.acquisition.beta.validate()?;
        self.optimizer.validate()
    }

    /// Joint kernel the objective model uses; GP-UCB ignores time.
    pub fn joint_kernel(&self) -> Result<JointKernel> {
        Ok(match self.kind() {
            AcquisitionKind::GpUcb => JointKernel::space_only(self.model_kernel),
            _ => JointKernel::new(self.model_kernel, TimeKernel::new(self.epsilon)?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunOptions {
    /// Total interactions, initial design included.
    pub rounds: usize,
    pub init_points: usize,
    /// Initial evaluations advance the clock by their evaluation time.
    pub init_consumes_time: bool,
    /// Record wall-clock selection times; off keeps traces reproducible byte for byte.
    pub record_select_time: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            rounds: 100,
            init_points: 30,
            init_consumes_time: true,
            record_select_time: false,
        }
    }
}

impl RunOptions {
    pub fn validate(&self) -> Result<()> {
        ensure(self.rounds >= 1, || "rounds must be at least 1".into())?;
        ensure(self.init_points < self.rounds, || {
            format!(
                "init_points ({}) must be below rounds ({})",
                self.init_points, self.rounds
            )
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based round index.
    pub n: usize,
    /// The evaluated grid point.
    pub x: Vec<f64>,
    pub t: f64,
    /// Clock after the evaluation finished.
    pub tau: f64,
    pub y: f64,
    pub regret: f64,
    pub cum_regret: f64,
    /// Acquisition value at the selected point; NaN for the initial design.
    pub acq_value: f64,
    pub select_ms: f64,
    /// Time at which the acquisition evaluated the objective model, when it is a single point.
    pub horizon: Option<f64>,
    /// Timestamp the objective model attaches to this observation.
    pub model_tau: f64,
    pub init: bool,
    /// The selected point was off the grid and was snapped before evaluation.
    pub snapped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub strategy: AcquisitionKind,
    pub seed: u64,
    pub records: Vec<RoundRecord>,
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn cumulative_regret(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.cum_regret)
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.tau).collect()
    }

    /// `τ_n` equals the running sum of the evaluation times,
    /// `R_n` the running sum of `r_n ≥ 0`, rounds are numbered `1..`.
    pub fn check_invariants(&self) -> Result<()> {
        let (mut tau, mut cum) = (0.0, 0.0);
        for (k, r) in self.records.iter().enumerate() {
            ensure(r.n == k + 1, || {
                format!("round {} recorded as {}", k + 1, r.n)
            })?;
            ensure(r.regret >= 0.0, || {
                format!("negative regret in round {}", r.n)
            })?;
            // initial evaluations may be configured not to consume time
            if !(r.init && r.tau == tau) {
                tau += r.t;
            }
            cum += r.regret;
            ensure(r.tau == tau, || {
                format!("timestamp mismatch in round {}", r.n)
            })?;
            ensure(r.cum_regret == cum, || {
                format!("cumulative regret mismatch in round {}", r.n)
            })?;
        }
        Ok(())
    }
}

/// Everything a policy may look at when choosing the next query.
pub struct SelectionContext<'a> {
    /// 1-based index of the round being selected.
    pub round: usize,
    pub clock: f64,
    pub history: &'a [RoundRecord],
    pub env: &'a Environment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub x: Vec<f64>,
    pub acq_value: f64,
    pub horizon: Option<f64>,
}

pub trait Policy {
    fn kind(&self) -> AcquisitionKind;

    fn select(&mut self, ctx: &SelectionContext<'_>) -> Result<Selection>;

    /// Timestamp the model will attach to the observation of `round`.
    fn model_tau(&self, round: usize, clock: f64) -> f64;
}

/// `r = max_x f(x, τ) − f(x_n, τ)` on the noiseless grid.
pub fn regret(env: &Environment, index: usize) -> f64 {
    (env.true_max().1 - env.value_at(index)).max(0.0)
}

/// The five GP strategies.
pub struct GpPolicy {
    config: StrategyConfig,
    kernel: JointKernel,
    rule: HermiteRule,
}

impl GpPolicy {
    pub fn new(config: StrategyConfig) -> Result<Self> {
        config.validate()?;
        let kernel = config.joint_kernel()?;
        let rule = HermiteRule::new(config.acquisition.quadrature_nodes)?;
        Ok(Self {
            config,
            kernel,
            rule,
        })
    }

    pub fn config(&self) -> &StrategyConfig {
        &self.config
    }

    /// Objective model conditioned on `history` under this strategy's timestamps.
    pub fn fit_objective(&self, history: &[RoundRecord]) -> Result<Posterior> {
        let xs = history.iter().map(|r| r.x.clone()).collect();
        let taus = history.iter().map(|r| r.model_tau).collect();
        let ys: Vec<f64> = history.iter().map(|r| r.y).collect();
        Posterior::fit_targets(self.kernel, xs, taus, &ys, self.config.noise_variance, 0.0)
    }

    pub fn fit_time_model(&self, history: &[RoundRecord]) -> Result<TimeModelPosterior> {
        let pts: Vec<_> = history.iter().map(|r| (r.x.clone(), r.t)).collect();
        TimeModelPosterior::fit(
            self.config.time_model_kernel,
            &pts,
            self.config.time_noise_variance,
            None,
        )
    }
}

struct AcquisitionObjective<'a> {
    kind: AcquisitionKind,
    posterior: &'a Posterior,
    time: Option<&'a TimeModelPosterior>,
    profile: TimeProfile,
    rule: &'a HermiteRule,
    tau_n: f64,
    conditioned: usize,
    multiplier: f64,
    time_noise_variance: f64,
}

impl AcquisitionObjective<'_> {
    fn time(&self) -> &TimeModelPosterior {
        self.time.expect("time model is fitted for CTV strategies")
    }
}

impl Objective for AcquisitionObjective<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        let m = self.multiplier;
        match self.kind {
            AcquisitionKind::GpUcb => ucb_base(self.posterior, x, 0.0, m),
            AcquisitionKind::Tv => tv_acquisition(self.posterior, x, self.conditioned, m),
            AcquisitionKind::CtvFixed => {
                ctv_fixed(self.posterior, x, self.tau_n, self.profile.eval_time(x), m)
            }
            AcquisitionKind::Ctv => ctv(self.posterior, self.time(), x, self.tau_n, self.rule, m),
            AcquisitionKind::CtvSimple => ctv_simple(
                self.posterior,
                self.time(),
                x,
                self.tau_n,
                self.time_noise_variance,
                m,
            ),
        }
    }

    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let m = self.multiplier;
        match self.kind {
            AcquisitionKind::GpUcb => {
                let u = ucb_base_gradient(self.posterior, x, 0.0, m);
                (u.value, u.dx)
            }
            AcquisitionKind::Tv => {
                let u = ucb_base_gradient(self.posterior, x, (self.conditioned + 1) as f64, m);
                (u.value, u.dx)
            }
            AcquisitionKind::CtvFixed => {
                // the known time depends on x, so the horizon moves with it
                let t = self.profile.eval_time(x);
                let dt = self.profile.eval_time_gradient(x);
                let u = ucb_base_gradient(self.posterior, x, self.tau_n + t, m);
                let g = u.dx.iter().zip(&dt).map(|(a, b)| a + u.dtau * b).collect();
                (u.value, g)
            }
            AcquisitionKind::Ctv => {
                ctv_with_gradient(self.posterior, self.time(), x, self.tau_n, self.rule, m)
            }
            AcquisitionKind::CtvSimple => ctv_simple_with_gradient(
                self.posterior,
                self.time(),
                x,
                self.tau_n,
                self.time_noise_variance,
                m,
            ),
        }
    }
}

impl Policy for GpPolicy {
    fn kind(&self) -> AcquisitionKind {
        self.config.kind()
    }

    fn model_tau(&self, round: usize, clock: f64) -> f64 {
        match self.kind() {
            AcquisitionKind::GpUcb => 0.0,
            AcquisitionKind::Tv => round as f64,
            _ => clock,
        }
    }

    fn select(&mut self, ctx: &SelectionContext<'_>) -> Result<Selection> {
        let kind = self.kind();
        let posterior = self.fit_objective(ctx.history)?;
        let time = if kind.uses_time_model() {
            Some(self.fit_time_model(ctx.history)?)
        } else {
            None
        };
        let objective = AcquisitionObjective {
            kind,
            posterior: &posterior,
            time: time.as_ref(),
            profile: ctx.env.config().time_profile,
            rule: &self.rule,
            tau_n: ctx.clock,
            conditioned: ctx.history.len(),
            multiplier: self.config.acquisition.beta.multiplier(ctx.round)?,
            time_noise_variance: self.config.time_noise_variance,
        };
        let domain: &BoxDomain = ctx.env.domain();
        let grid: Vec<f64> = ctx
            .env
            .factor()
            .points()
            .iter()
            .map(|p| objective.value(p))
            .collect();
        if let Some(bad) = grid.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("acquisition evaluated to {bad}")));
        }
        let best = maximize_from_grid(&objective, domain, &self.config.optimizer, &grid);
        let horizon = match kind {
            AcquisitionKind::GpUcb => None,
            AcquisitionKind::Tv => Some((ctx.history.len() + 1) as f64),
            AcquisitionKind::CtvFixed => {
                Some(ctx.clock + ctx.env.config().time_profile.eval_time(&best.x))
            }
            AcquisitionKind::CtvSimple => {
                let g = time.as_ref().expect("fitted").log_time(&best.x);
                Some(
                    ctx.clock
                        + lognormal_time_mean(g.mean, g.variance, self.config.time_noise_variance),
                )
            }
            AcquisitionKind::Ctv => None,
        };
        Ok(Selection {
            x: best.x,
            acq_value: best.value,
            horizon,
        })
    }
}

/// A run that stopped early; `trace` holds the completed rounds.
#[derive(Debug, Clone)]
pub struct RunFailure {
    pub trace: RunTrace,
    pub error: Error,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "run stopped after {} rounds: {}",
            self.trace.len(),
            self.error
        )
    }
}

impl std::error::Error for RunFailure {}

/// Run `policy` against `env` for `options.rounds` interactions. The initial
/// design is drawn from `seed` alone, so strategies sharing a seed and
/// environment see the same initial points.
pub fn run(
    mut env: Environment,
    policy: &mut dyn Policy,
    options: &RunOptions,
    seed: u64,
) -> std::result::Result<RunTrace, Box<RunFailure>> {
    let mut trace = RunTrace {
        strategy: policy.kind(),
        seed,
        records: Vec::with_capacity(options.rounds),
    };
    if let Err(error) = options.validate() {
        return Err(Box::new(RunFailure { trace, error }));
    }
    let domain = env.domain().clone();
    let grid_len = domain.grid_len();
    let mut design_rng = ChaCha8Rng::seed_from_u64(seed);
    design_rng.set_stream(DESIGN_STREAM);
    let init: Vec<usize> = if options.init_points <= grid_len {
        sample(&mut design_rng, grid_len, options.init_points).into_vec()
    } else {
        use rand::Rng;
        (0..options.init_points)
            .map(|_| design_rng.gen_range(0..grid_len))
            .collect()
    };

    let mut cum = 0.0;
    for round in 1..=options.rounds {
        let is_init = round <= options.init_points;
        let started = Instant::now();
        let selection = if is_init {
            Ok(Selection {
                x: domain.grid_point(init[round - 1]),
                acq_value: f64::NAN,
                horizon: None,
            })
        } else {
            policy.select(&SelectionContext {
                round,
                clock: env.clock(),
                history: &trace.records,
                env: &env,
            })
        };
        let selection = match selection {
            Ok(s) => s,
            Err(error) => return Err(Box::new(RunFailure { trace, error })),
        };
        let select_ms = if options.record_select_time && !is_init {
            started.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        let index = domain.nearest_index(&selection.x);
        let x = domain.grid_point(index);
        let t = env.eval_time(&x);
        if !is_init || options.init_consumes_time {
            if let Err(error) = env.advance(t) {
                return Err(Box::new(RunFailure { trace, error }));
            }
        }
        let obs = env.observe(&x);
        let r = regret(&env, index);
        cum += r;
        trace.records.push(RoundRecord {
            n: round,
            x: obs.x,
            t,
            tau: env.clock(),
            y: obs.y,
            regret: r,
            cum_regret: cum,
            acq_value: selection.acq_value,
            select_ms,
            horizon: selection.horizon,
            model_tau: policy.model_tau(round, env.clock()),
            init: is_init,
            snapped: selection.x != x,
        });
    }
    Ok(trace)
}

/// Per-round mean and sample standard deviation of `R_n / n` across traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rounds: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn aggregate(traces: &[RunTrace]) -> Result<Summary> {
    let first = traces
        .first()
        .ok_or_else(|| invalid("no traces to aggregate"))?;
    let len = first.len();
    ensure(traces.iter().all(|t| t.len() == len), || {
        "traces have different lengths".into()
    })?;
    let k = traces.len() as f64;
    let mut summary = Summary {
        rounds: Vec::with_capacity(len),
        mean: Vec::with_capacity(len),
        std: Vec::with_capacity(len),
    };
    for i in 0..len {
        let n = first.records[i].n;
        let vals: Vec<f64> = traces
            .iter()
            .map(|t| t.records[i].cum_regret / n as f64)
            .collect();
        let mean = vals.iter().sum::<f64>() / k;
        let std = if traces.len() > 1 {
            (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
        } else {
            0.0
        };
        summary.rounds.push(n);
        summary.mean.push(mean);
        summary.std.push(std);
    }
    Ok(summary)
}
