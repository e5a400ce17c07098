//! The `verify-theory` subcommand: closed forms against brute force, the
//! information-gain chain identity, gradients against finite differences,
//! the regime table and, on request, simulated regret-bound coverage.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tvgp_core::acquisition::{
    ctv, ctv_fixed, ctv_simple, grad_ctv, grad_ctv_fixed, grad_ctv_simple, AcquisitionKind,
    BetaSchedule, HermiteRule,
};
use tvgp_core::bandit::{run, GpPolicy, RunOptions, StrategyConfig};
use tvgp_core::envsim::{EnvConfig, Environment, GridFactor};
use tvgp_core::gp::{Observation, Posterior, TimeModelPosterior};
use tvgp_core::kernels::{gram_matrix, JointKernel, SpaceFamily, SpaceKernel, TimeKernel};
use tvgp_core::optimize::BoxDomain;
use tvgp_core::theory::{
    biased_uniformity_closed_form, eval_time_uniformity, greedy_space_info_gain, info_gain_chain,
    information_gain, matern_exponent, phi, sequential_posterior_variances, theorem_one_bound,
    theorem_two_regime, uniform_uniformity_closed_form, BoundInputs, EvaluationTimeSetting, Order,
    Partition, Regime, Smoothness, TimestampSet,
};

#[derive(Debug, Clone, Default)]
pub struct VerifyOptions {
    pub lemma1: bool,
    pub lemma2: bool,
    pub chain: bool,
    pub gradients: bool,
    pub regime: bool,
    pub bound_coverage: bool,
    /// Restrict the closed-form checks to this `n`.
    pub n: Option<usize>,
    pub seeds: usize,
}

impl VerifyOptions {
    fn any_selected(&self) -> bool {
        self.lemma1
            || self.lemma2
            || self.chain
            || self.gradients
            || self.regime
            || self.bound_coverage
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub category: &'static str,
    pub name: String,
    /// Pass iff `observed <= tolerance`, unless stated otherwise in `comparison`.
    pub tolerance: f64,
    pub observed: f64,
    pub comparison: &'static str,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub pass: bool,
    pub categories: Vec<&'static str>,
    pub checks: Vec<Check>,
}

fn at_most(
    category: &'static str,
    name: impl Into<String>,
    observed: f64,
    tolerance: f64,
) -> Check {
    Check {
        category,
        name: name.into(),
        tolerance,
        observed,
        comparison: "observed <= tolerance",
        pass: observed <= tolerance,
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn lemma1(n_only: Option<usize>) -> Vec<Check> {
    let ns: Vec<usize> = match n_only {
        Some(n) => vec![n],
        None => (4..=60).collect(),
    };
    let mut worst: f64 = 0.0;
    for &n in &ns {
        for total in [n as f64, 2.0 * n as f64] {
            let taus = TimestampSet::uniform(total, n);
            for ratio in [Some(1.0), Some(2.0), Some(5.0), None] {
                let eps = ratio.map_or(1e-3 / total, |r| n as f64 / (r * total));
                for i in 1..=n {
                    let brute =
                        eval_time_uniformity(eps, &taus.as_slice()[..i]).unwrap_or(f64::NAN);
                    let closed =
                        uniform_uniformity_closed_form(eps, total, n, i).unwrap_or(f64::NAN);
                    worst = worst.max(rel_err(brute, closed));
                }
            }
        }
    }
    let label = match n_only {
        Some(n) => format!("uniform closed form vs brute force, n = {n}, all i"),
        None => "uniform closed form vs brute force, n in 4..=60, all i".into(),
    };
    vec![at_most("lemma1", label, worst, 1e-9)]
}

fn lemma2(n_only: Option<usize>) -> Vec<Check> {
    let ns: Vec<usize> = match n_only {
        Some(n) => vec![n],
        None => (1..=40).collect(),
    };
    let mut checks = Vec::new();
    for (eps, regime) in [(1.0, "1/eps^2 < T^2"), (0.05, "1/eps^2 > T^2")] {
        let mut worst: f64 = 0.0;
        for &n in &ns {
            for n0 in 1..=n {
                let taus = TimestampSet::extremely_biased(3.0, n, n0);
                for i in 1..=n {
                    for k0 in 0..=n - i {
                        let brute = eval_time_uniformity(eps, &taus.as_slice()[k0..k0 + i])
                            .unwrap_or(f64::NAN);
                        let closed = biased_uniformity_closed_form(eps, 3.0, n, k0, i, n0)
                            .unwrap_or(f64::NAN);
                        worst = worst.max(rel_err(brute, closed));
                    }
                }
            }
        }
        checks.push(at_most(
            "lemma2",
            format!("biased closed form vs brute force, {regime}"),
            worst,
            1e-9,
        ));
    }
    checks
}

fn chain() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_chain: f64 = 0.0;
    let mut worst_eig: f64 = 0.0;
    for k in 0..50 {
        let family = if k % 2 == 0 {
            SpaceFamily::SquaredExponential
        } else {
            SpaceFamily::Matern52
        };
        let kernel = JointKernel::new(
            SpaceKernel::new(family, rng.gen_range(0.1..0.5), 1.0).unwrap(),
            TimeKernel::new(rng.gen_range(0.0..0.2)).unwrap(),
        );
        let n = rng.gen_range(1..=40);
        let inputs: Vec<(Vec<f64>, f64)> = (0..n)
            .map(|_| (vec![rng.gen(), rng.gen()], rng.gen_range(0.0..30.0)))
            .collect();
        let gram = gram_matrix(&kernel, &inputs).unwrap();
        let logdet = information_gain(&gram, 0.01).unwrap_or(f64::NAN);
        let seq = sequential_posterior_variances(&kernel, &inputs, 0.01)
            .map_or(f64::NAN, |v| info_gain_chain(&v, 0.01));
        worst_chain = worst_chain.max(rel_err(logdet, seq));
        let eig = gram.symmetric_eigen();
        let oracle = 0.5
            * eig
                .eigenvalues
                .iter()
                .map(|l| (l.max(0.0) / 0.01).ln_1p())
                .sum::<f64>();
        worst_eig = worst_eig.max(rel_err(logdet, oracle));
    }
    vec![
        at_most(
            "chain-identity",
            "log-det vs sequential posterior variances, 50 sequences",
            worst_chain,
            1e-8,
        ),
        at_most(
            "information-gain",
            "log-det vs eigenvalue sum, 50 grams",
            worst_eig,
            1e-9,
        ),
    ]
}

fn instance(rng: &mut ChaCha8Rng, family: SpaceFamily) -> (Posterior, TimeModelPosterior, f64) {
    let n = rng.gen_range(1..=20);
    let mut clock = 0.0;
    let obs: Vec<Observation> = (0..n)
        .map(|_| {
            let t = rng.gen_range(2.0..6.0);
            clock += t;
            Observation {
                x: vec![rng.gen(), rng.gen()],
                t,
                tau: clock,
                y: rng.gen_range(-2.0..2.0),
            }
        })
        .collect();
    let space =
        SpaceKernel::new(family, rng.gen_range(0.15..0.4), rng.gen_range(0.5..2.0)).unwrap();
    let kernel = JointKernel::new(space, TimeKernel::new(rng.gen_range(0.001..0.1)).unwrap());
    let post = Posterior::fit(kernel, &obs, 0.01, 0.0).unwrap();
    let time = TimeModelPosterior::from_observations(
        SpaceKernel::matern52(0.2, 1.0).unwrap(),
        &obs,
        0.01,
        None,
    )
    .unwrap();
    (post, time, clock)
}

fn fd_error(g: &[f64], f: impl Fn(&[f64]) -> f64, x: &[f64]) -> f64 {
    let h = 1e-6;
    let fd: Vec<f64> = (0..x.len())
        .map(|j| {
            let (mut a, mut b) = (x.to_vec(), x.to_vec());
            a[j] += h;
            b[j] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect();
    let diff = g
        .iter()
        .zip(&fd)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    diff / fd.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-6)
}

fn gradients() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rule = HermiteRule::new(20).unwrap();
    let mut worst = [0.0f64; 3];
    for family in [SpaceFamily::SquaredExponential, SpaceFamily::Matern52] {
        for _ in 0..50 {
            let (post, time, tau) = instance(&mut rng, family);
            let x = [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)];
            let m = rng.gen_range(0.5..3.0);
            let t = rng.gen_range(1.0..8.0);
            worst[0] = worst[0].max(fd_error(
                &grad_ctv_fixed(&post, &x, tau, t, m),
                |z| ctv_fixed(&post, z, tau, t, m),
                &x,
            ));
            worst[1] = worst[1].max(fd_error(
                &grad_ctv(&post, &time, &x, tau, &rule, m),
                |z| ctv(&post, &time, z, tau, &rule, m),
                &x,
            ));
            worst[2] = worst[2].max(fd_error(
                &grad_ctv_simple(&post, &time, &x, tau, 0.01, m),
                |z| ctv_simple(&post, &time, z, tau, 0.01, m),
                &x,
            ));
        }
    }
    ["ctv-fixed", "ctv", "ctv-simple"]
        .iter()
        .zip(worst)
        .map(|(name, w)| {
            at_most(
                "gradients",
                format!("{name} gradient vs central differences, 100 posteriors"),
                w,
                1e-5,
            )
        })
        .collect()
}

fn phi_checks() -> Vec<Check> {
    let e = std::f64::consts::E;
    vec![
        at_most(
            "phi",
            "continuity at 1",
            (phi(1.0 - 1e-9).unwrap() - phi(1.0 + 1e-9).unwrap()).abs(),
            1e-6,
        ),
        at_most(
            "phi",
            "phi(e) = 1 + 1/e",
            (phi(e).unwrap() - (1.0 + 1.0 / e)).abs(),
            1e-15,
        ),
    ]
}

fn regime() -> Vec<Check> {
    let se = Smoothness::SquaredExponential;
    let n = 100;
    let u = |eps: f64, total: f64, s| {
        theorem_two_regime(eps, total, n, s, 2, EvaluationTimeSetting::Uniform).unwrap()
    };
    let b = |eps: f64, total: f64, s| {
        theorem_two_regime(eps, total, n, s, 2, EvaluationTimeSetting::ExtremelyBiased).unwrap()
    };
    let cases = [
        (
            "SE small eps*T gives sqrt(n)",
            u(1e-6, 1.0, se).regime == Regime::SmallET
                && u(1e-6, 1.0, se).order.symbol() == "sqrt(n)",
        ),
        (
            "SE mid eps*T gives n^(4/5) (T eps)^(1/5)",
            u(0.01, 300.0, se).order
                == Order::Power {
                    n_exp: 0.8,
                    t_exp: 0.2,
                },
        ),
        (
            "SE large eps*T gives n (1 + (eps T/n)^(1/2))",
            u(1.0, 400.0, se).order == Order::LinearPlus,
        ),
        (
            "SE thresholds are inclusive for the mid regime",
            u(1.0, 1e-3, se).regime == Regime::MidET && u(1.0, 100.0, se).regime == Regime::MidET,
        ),
        (
            "SE biased gives sqrt(n)",
            b(1.0, 400.0, se).order == Order::SqrtPower { c: 0.0 },
        ),
        (
            "Matern biased gives sqrt(n^(1+c))",
            b(1.0, 400.0, Smoothness::Matern { nu: 2.5 }).order
                == Order::SqrtPower { c: 6.0 / 11.0 },
        ),
    ];
    let mut checks: Vec<Check> = cases
        .iter()
        .map(|(name, ok)| Check {
            category: "regime",
            name: name.to_string(),
            tolerance: 0.0,
            observed: if *ok { 0.0 } else { 1.0 },
            comparison: "observed = 0 (table match)",
            pass: *ok,
        })
        .collect();
    checks.push(at_most(
        "regime",
        "Matern c at nu = 5/2, d = 2 equals 6/11",
        (matern_exponent(2.5, 2) - 6.0 / 11.0).abs(),
        1e-15,
    ));
    checks
}

/// Fraction of seeds whose cumulative regret after 60 rounds of CTV-fixed on
/// a 15×15 grid stays below the bound minimized over uniform partitions.
fn bound_coverage(seeds: usize) -> Vec<Check> {
    let base = EnvConfig {
        domain: BoxDomain::unit_cube(2, 15),
        ..EnvConfig::default()
    };
    let factor = Arc::new(GridFactor::new(&base.domain, &base.kernel).expect("grid factor"));
    let delta = 0.1;
    let beta = BetaSchedule::theorem_one(delta, 2, 1.0, 1.0, 1.0);
    let n = 60;
    let blocks = [5usize, 10, 20, 60];
    let gammas: Vec<f64> = blocks
        .iter()
        .map(|&m| {
            greedy_space_info_gain(&base.kernel, factor.points(), m, base.obs_noise_variance)
                .unwrap()
        })
        .collect();
    let beta_n = beta.beta(n).unwrap();
    let opts = RunOptions {
        rounds: n,
        init_points: 0,
        ..RunOptions::default()
    };
    let mut covered = 0;
    for seed in 0..seeds as u64 {
        let cfg = EnvConfig {
            seed,
            ..base.clone()
        };
        let mut strategy = StrategyConfig::well_specified(AcquisitionKind::CtvFixed, &cfg);
        strategy.acquisition.beta = beta;
        let Ok(mut policy) = GpPolicy::new(strategy) else {
            continue;
        };
        let Ok(env) = Environment::with_factor(&cfg, factor.clone()) else {
            continue;
        };
        let Ok(trace) = run(env, &mut policy, &opts, seed) else {
            continue;
        };
        let taus = trace.timestamps();
        let bound = blocks
            .iter()
            .zip(&gammas)
            .filter_map(|(&m, &gamma_m)| {
                let p = Partition::uniform(n, m).ok()?;
                theorem_one_bound(&BoundInputs {
                    beta: beta_n,
                    n,
                    partition: &p,
                    timestamps: &taus,
                    epsilon: cfg.lambda,
                    noise_variance: cfg.obs_noise_variance,
                    gamma_m,
                })
                .ok()
            })
            .fold(f64::INFINITY, f64::min);
        if trace.cumulative_regret() <= bound {
            covered += 1;
        }
    }
    let fraction = covered as f64 / seeds.max(1) as f64;
    vec![Check {
        category: "bound-coverage",
        name: format!("fraction of {seeds} seeds with R_60 <= bound"),
        tolerance: 1.0 - delta,
        observed: fraction,
        comparison: "observed >= tolerance",
        pass: fraction >= 1.0 - delta,
    }]
}

pub fn verify(options: &VerifyOptions) -> Report {
    let all = !options.any_selected();
    let mut checks = Vec::new();
    if all || options.lemma1 {
        checks.extend(lemma1(options.n));
    }
    if all || options.lemma2 {
        checks.extend(lemma2(options.n.map(|n| n.min(40))));
    }
    if all || options.chain {
        checks.extend(chain());
    }
    if all || options.gradients {
        checks.extend(gradients());
    }
    if all {
        checks.extend(phi_checks());
    }
    if all || options.regime {
        checks.extend(regime());
    }
    if options.bound_coverage {
        checks.extend(bound_coverage(options.seeds));
    }
    let mut categories: Vec<&'static str> = Vec::new();
    for c in &checks {
        if !categories.contains(&c.category) {
            categories.push(c.category);
        }
    }
    Report {
        pass: checks.iter().all(|c| c.pass),
        categories,
        checks,
    }
}
