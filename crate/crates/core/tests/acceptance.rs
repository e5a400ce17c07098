//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion numbers as arguments to run a subset:
//! `cargo test -p tvgp-core --test acceptance -- 1 2 9`.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tvgp_core::acquisition::{
    ctv, ctv_fixed, ctv_simple, grad_ctv, grad_ctv_fixed, grad_ctv_simple, AcquisitionKind,
    BetaSchedule, HermiteRule,
};
use tvgp_core::bandit::{run, GpPolicy, RunOptions, StrategyConfig};
use tvgp_core::envsim::{EnvConfig, Environment, GridFactor, TimeProfile};
use tvgp_core::gp::{Observation, Posterior, TimeModelPosterior};
use tvgp_core::kernels::{gram_matrix, JointKernel, SpaceFamily, SpaceKernel, TimeKernel};
use tvgp_core::optimize::BoxDomain;
use tvgp_core::theory::{
    biased_uniformity_closed_form, eval_time_uniformity, greedy_space_info_gain, info_gain_chain,
    information_gain, matern_exponent, sequential_posterior_variances, theorem_one_bound,
    theorem_two_regime, uniform_uniformity_closed_form, BoundInputs, EvaluationTimeSetting, Order,
    Partition, Regime, Smoothness, TimestampSet,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn lemma_one() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for n in 4..=60usize {
        for total in [n as f64, 2.0 * n as f64] {
            let taus = TimestampSet::uniform(total, n);
            for ratio in [Some(1.0), Some(2.0), Some(5.0), None] {
                // None: ε small enough that n/(εT) exceeds every block size
                let eps = match ratio {
                    Some(r) => n as f64 / (r * total),
                    None => 1e-3 / total,
                };
                for i in 1..=n {
                    let brute = eval_time_uniformity(eps, &taus.as_slice()[..i]).unwrap();
                    let closed = uniform_uniformity_closed_form(eps, total, n, i).unwrap();
                    worst = worst.max(rel_err(brute, closed));
                    cases += 1;
                }
            }
        }
    }
    outcome(
        worst <= 1e-9,
        format!("{cases} cases, max relative error {worst:.2e} (tol 1e-9)"),
    )
}

fn lemma_two() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    let total = 3.0;
    // 1/ε² below and above T²
    for eps in [1.0, 0.05] {
        for n in 1..=40usize {
            for n0 in 1..=n {
                let taus = TimestampSet::extremely_biased(total, n, n0);
                for i in 1..=n {
                    for k0 in 0..=n - i {
                        let brute =
                            eval_time_uniformity(eps, &taus.as_slice()[k0..k0 + i]).unwrap();
                        let closed =
                            biased_uniformity_closed_form(eps, total, n, k0, i, n0).unwrap();
                        worst = worst.max(rel_err(brute, closed));
                        cases += 1;
                    }
                }
            }
        }
    }
    outcome(
        worst <= 1e-9,
        format!("{cases} cases, max relative error {worst:.2e} (tol 1e-9)"),
    )
}

fn random_instance(
    rng: &mut ChaCha8Rng,
    family: SpaceFamily,
) -> (Posterior, TimeModelPosterior, f64) {
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
    let time = TimeKernel::new(rng.gen_range(0.001..0.1)).unwrap();
    let post = Posterior::fit(JointKernel::new(space, time), &obs, 0.01, 0.0).unwrap();
    let tm = TimeModelPosterior::from_observations(
        SpaceKernel::matern52(0.2, 1.0).unwrap(),
        &obs,
        0.01,
        None,
    )
    .unwrap();
    (post, tm, clock)
}

fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let h = 1e-6;
    (0..x.len())
        .map(|j| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[j] += h;
            b[j] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

/// `‖g − fd‖ / ‖fd‖`, with the denominator floored at 1e-6 for flat points.
fn gradient_error(g: &[f64], fd: &[f64]) -> f64 {
    let diff = g
        .iter()
        .zip(fd)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / norm.max(1e-6)
}

fn gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let rule = HermiteRule::new(20).unwrap();
    let mut worst = [0.0f64; 3];
    let mut count = 0;
    for family in [SpaceFamily::SquaredExponential, SpaceFamily::Matern52] {
        for _ in 0..60 {
            let (post, time, tau_n) = random_instance(&mut rng, family);
            let x = [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)];
            let m = rng.gen_range(0.5..3.0);
            let t = rng.gen_range(1.0..8.0);
            let fd = central_difference(|z| ctv_fixed(&post, z, tau_n, t, m), &x);
            worst[0] = worst[0].max(gradient_error(&grad_ctv_fixed(&post, &x, tau_n, t, m), &fd));
            let fd = central_difference(|z| ctv(&post, &time, z, tau_n, &rule, m), &x);
            worst[1] = worst[1].max(gradient_error(
                &grad_ctv(&post, &time, &x, tau_n, &rule, m),
                &fd,
            ));
            let fd = central_difference(|z| ctv_simple(&post, &time, z, tau_n, 0.01, m), &x);
            worst[2] = worst[2].max(gradient_error(
                &grad_ctv_simple(&post, &time, &x, tau_n, 0.01, m),
                &fd,
            ));
            count += 1;
        }
    }
    outcome(
        worst.iter().all(|w| *w <= 1e-5),
        format!(
            "{count} posteriors per gradient; max relative error ctv-fixed {:.2e}, ctv {:.2e}, ctv-simple {:.2e} (tol 1e-5)",
            worst[0], worst[1], worst[2]
        ),
    )
}

fn gp_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut worst_mean, mut worst_var, mut worst_mono): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for k in 0..100 {
        let family = if k % 2 == 0 {
            SpaceFamily::SquaredExponential
        } else {
            SpaceFamily::Matern52
        };
        let kernel = JointKernel::new(
            SpaceKernel::new(family, rng.gen_range(0.1..0.5), rng.gen_range(0.5..2.0)).unwrap(),
            TimeKernel::new(rng.gen_range(0.0..0.2)).unwrap(),
        );
        let noise = rng.gen_range(0.005..0.1);
        let prior_mean = rng.gen_range(-1.0..1.0);
        let n = rng.gen_range(1..=50);
        let obs: Vec<Observation> = (0..n)
            .map(|_| Observation {
                x: vec![rng.gen(), rng.gen()],
                t: 1.0,
                tau: rng.gen_range(0.0..30.0),
                y: rng.gen_range(-2.0..2.0),
            })
            .collect();
        let post = Posterior::fit(kernel, &obs, noise, prior_mean).unwrap();
        let inputs: Vec<(Vec<f64>, f64)> = obs.iter().map(|o| (o.x.clone(), o.tau)).collect();
        let mut a = gram_matrix(&kernel, &inputs).unwrap();
        for i in 0..n {
            a[(i, i)] += noise + post.jitter();
        }
        let inv = a.try_inverse().expect("invertible");
        let resid = DVector::from_iterator(n, obs.iter().map(|o| o.y - prior_mean));
        let tests: Vec<(Vec<f64>, f64)> = (0..5)
            .map(|_| (vec![rng.gen(), rng.gen()], rng.gen_range(0.0..40.0)))
            .collect();
        for (x, tau) in &tests {
            let kv = DVector::from_iterator(
                n,
                inputs.iter().map(|(xi, ti)| kernel.value(x, *tau, xi, *ti)),
            );
            let mean = prior_mean + (kv.transpose() * &inv * &resid)[0];
            let var = kernel.variance() - (kv.transpose() * &inv * &kv)[0];
            let p = post.predict(x, *tau);
            worst_mean = worst_mean.max((p.mean - mean).abs());
            worst_var = worst_var.max((p.variance - var.max(0.0)).abs());
            let mut last = kernel.variance();
            for m in 1..=n {
                let v = Posterior::fit(kernel, &obs[..m], noise, prior_mean)
                    .unwrap()
                    .predict(x, *tau)
                    .variance;
                worst_mono = worst_mono.max(v - last);
                last = v;
            }
        }
    }
    outcome(
        worst_mean <= 1e-8 && worst_var <= 1e-8 && worst_mono <= 1e-8,
        format!(
            "100 datasets: max |Δmean| {worst_mean:.2e}, max |Δvar| {worst_var:.2e} (tol 1e-8), max variance increase {worst_mono:.2e}"
        ),
    )
}

fn chain_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
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
        let lhs = information_gain(&gram_matrix(&kernel, &inputs).unwrap(), 0.01).unwrap();
        let rhs = info_gain_chain(
            &sequential_posterior_variances(&kernel, &inputs, 0.01).unwrap(),
            0.01,
        );
        worst = worst.max(rel_err(lhs, rhs));
    }
    outcome(
        worst <= 1e-8,
        format!("50 sequences, max relative error {worst:.2e} (tol 1e-8)"),
    )
}

fn bound_coverage() -> Outcome {
    let base = EnvConfig {
        domain: BoxDomain::unit_cube(2, 15),
        ..EnvConfig::default()
    };
    let factor = Arc::new(GridFactor::new(&base.domain, &base.kernel).unwrap());
    let beta = BetaSchedule::theorem_one(0.1, 2, 1.0, 1.0, 1.0);
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
    let mut worst_ratio: f64 = 0.0;
    for seed in 0..30u64 {
        let cfg = EnvConfig {
            seed,
            ..base.clone()
        };
        let mut strategy = StrategyConfig::well_specified(AcquisitionKind::CtvFixed, &cfg);
        strategy.acquisition.beta = beta;
        let mut policy = GpPolicy::new(strategy).unwrap();
        let trace = run(
            Environment::with_factor(&cfg, factor.clone()).unwrap(),
            &mut policy,
            &opts,
            seed,
        )
        .unwrap();
        let taus = trace.timestamps();
        let bound = blocks
            .iter()
            .zip(&gammas)
            .map(|(&m, &gamma_m)| {
                let p = Partition::uniform(n, m).unwrap();
                theorem_one_bound(&BoundInputs {
                    beta: beta_n,
                    n,
                    partition: &p,
                    timestamps: &taus,
                    epsilon: cfg.lambda,
                    noise_variance: cfg.obs_noise_variance,
                    gamma_m,
                })
                .unwrap()
            })
            .fold(f64::INFINITY, f64::min);
        let r = trace.cumulative_regret();
        worst_ratio = worst_ratio.max(r / bound);
        if r <= bound {
            covered += 1;
        }
    }
    outcome(
        covered >= 27,
        format!("{covered}/30 seeds with R_60 ≤ bound (need 27); max R_n/bound {worst_ratio:.3}"),
    )
}

/// Mean `R_100 / 100` per strategy over 30 seeds for the given profile.
fn experiment(profile: TimeProfile, resolution: usize) -> [f64; 5] {
    let base = EnvConfig {
        domain: BoxDomain::unit_cube(2, resolution),
        time_profile: profile,
        ..EnvConfig::default()
    };
    let factor = Arc::new(GridFactor::new(&base.domain, &base.kernel).unwrap());
    let opts = RunOptions::default();
    let mut means = [0.0; 5];
    for seed in 0..30u64 {
        let cfg = EnvConfig {
            seed,
            ..base.clone()
        };
        for (k, kind) in AcquisitionKind::ALL.into_iter().enumerate() {
            let mut policy = GpPolicy::new(StrategyConfig::well_specified(kind, &cfg)).unwrap();
            let env = Environment::with_factor(&cfg, factor.clone()).unwrap();
            let trace = run(env, &mut policy, &opts, seed).unwrap();
            means[k] += trace.cumulative_regret() / opts.rounds as f64 / 30.0;
        }
    }
    means
}

fn describe(means: &[f64; 5]) -> String {
    AcquisitionKind::ALL
        .iter()
        .zip(means)
        .map(|(k, m)| format!("{k} {m:.4}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn index(kind: AcquisitionKind) -> usize {
    AcquisitionKind::ALL
        .iter()
        .position(|k| *k == kind)
        .unwrap()
}

fn biased_reproduction() -> Outcome {
    let m = experiment(TimeProfile::SinusoidalBiased, 50);
    let baseline = m[index(AcquisitionKind::Tv)].min(m[index(AcquisitionKind::GpUcb)]);
    let ours = [
        AcquisitionKind::CtvFixed,
        AcquisitionKind::Ctv,
        AcquisitionKind::CtvSimple,
    ];
    let beats = ours.iter().all(|k| m[index(*k)] < baseline);
    let fixed_best = m[index(AcquisitionKind::CtvFixed)] <= m[index(AcquisitionKind::Ctv)];
    outcome(
        beats && fixed_best,
        format!(
            "50x50 grid, mean R_100/100: {}; CTV family below baselines: {beats}; ctv-fixed <= ctv: {fixed_best}",
            describe(&m)
        ),
    )
}

fn unit_time_reproduction() -> Outcome {
    let m = experiment(TimeProfile::Uniform { seconds: 1.0 }, 50);
    let tv = m[index(AcquisitionKind::Tv)];
    let rank = 1 + m.iter().filter(|v| **v < tv).count();
    outcome(
        rank <= 2,
        format!(
            "50x50 grid, mean R_100/100: {}; TV rank {rank}",
            describe(&m)
        ),
    )
}

fn regime_table() -> Outcome {
    let mut failures = Vec::new();
    let mut check = |label: &str, ok: bool| {
        if !ok {
            failures.push(label.to_string());
        }
    };
    let se = Smoothness::SquaredExponential;
    let n = 100usize;
    let nf = n as f64;
    let uniform = |eps: f64, total: f64, s| {
        theorem_two_regime(eps, total, n, s, 2, EvaluationTimeSetting::Uniform).unwrap()
    };
    let biased = |eps: f64, total: f64, s| {
        theorem_two_regime(eps, total, n, s, 2, EvaluationTimeSetting::ExtremelyBiased).unwrap()
    };

    let small = uniform(1e-6, 1.0, se);
    check(
        "SE small regime",
        small.regime == Regime::SmallET && small.order.symbol() == "sqrt(n)",
    );
    check("SE small value", (small.value - 10.0).abs() < 1e-12);
    let edge = uniform(1.0, nf.powf(-1.5), se);
    check("SE lower threshold is mid", edge.regime == Regime::MidET);
    let mid = uniform(0.01, 300.0, se);
    check(
        "SE mid regime",
        mid.regime == Regime::MidET
            && mid.order
                == Order::Power {
                    n_exp: 4.0 / 5.0,
                    t_exp: 1.0 / 5.0,
                },
    );
    check(
        "SE mid symbol",
        mid.order.symbol() == "n^(0.8) T^(0.2) eps^(0.2)",
    );
    check(
        "SE mid value",
        rel_err(mid.value, nf.powf(0.8) * 3f64.powf(0.2)) < 1e-12,
    );
    check(
        "SE upper threshold is mid",
        uniform(1.0, nf, se).regime == Regime::MidET,
    );
    let large = uniform(1.0, 400.0, se);
    check(
        "SE large regime",
        large.regime == Regime::LargeET && large.order == Order::LinearPlus,
    );
    check(
        "SE large symbol",
        large.order.symbol() == "n (1 + (eps T / n)^(1/2))",
    );
    check("SE large value", rel_err(large.value, 300.0) < 1e-12);
    for (eps, total) in [(1e-6, 1.0), (0.01, 300.0), (1.0, 400.0)] {
        check(
            "SE biased",
            biased(eps, total, se).order == Order::SqrtPower { c: 0.0 },
        );
        let mat = biased(eps, total, Smoothness::Matern { nu: 2.5 });
        check(
            "Matérn biased",
            mat.order == Order::SqrtPower { c: 6.0 / 11.0 },
        );
        check(
            "Matérn biased value",
            rel_err(mat.value, nf.powf(1.0 + 6.0 / 11.0).sqrt()) < 1e-12,
        );
    }
    let c = matern_exponent(2.5, 2);
    check("Matérn c", (c - 6.0 / 11.0).abs() < 1e-15);
    check(
        "exponential kernel is ν = 1/2",
        Smoothness::from(SpaceFamily::Exponential) == Smoothness::Matern { nu: 0.5 },
    );
    let detail = if failures.is_empty() {
        format!("SE thresholds and orders, biased orders, c = {c:.6} (6/11)")
    } else {
        format!("failed: {}", failures.join(", "))
    };
    outcome(failures.is_empty(), detail)
}

fn environment_statistics() -> Outcome {
    let base = EnvConfig {
        domain: BoxDomain::unit_cube(2, 10),
        ..EnvConfig::default()
    };
    let factor = Arc::new(GridFactor::new(&base.domain, &base.kernel).unwrap());
    let g = factor.len();
    let seeds = 500;
    // rows: f_0, f_10, f_100, f_1, f_10 (fresh), f_50
    let mut samples = vec![DMatrix::<f64>::zeros(seeds, g); 6];
    for seed in 0..seeds {
        let cfg = EnvConfig {
            seed: seed as u64,
            ..base.clone()
        };
        let mut env = Environment::with_factor(&cfg, factor.clone()).unwrap();
        let f0 = env.values().to_vec();
        let mut lagged = Vec::new();
        for delta in [1.0, 10.0, 50.0] {
            let mut e = env.clone();
            e.advance(delta).unwrap();
            lagged.push(e.values().to_vec());
        }
        env.advance(10.0).unwrap();
        let f10 = env.values().to_vec();
        env.advance(90.0).unwrap();
        let f100 = env.values().to_vec();
        for (row, vals) in [f0, f10, f100].into_iter().chain(lagged).enumerate() {
            for (j, v) in vals.into_iter().enumerate() {
                samples[row][(seed, j)] = v;
            }
        }
    }
    let column_var = |m: &DMatrix<f64>, j: usize| {
        let c = m.column(j);
        let mean = c.mean();
        c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (seeds as f64 - 1.0)
    };
    let theta = base.kernel.variance();
    let mut worst_var: f64 = 0.0;
    for m in &samples[..3] {
        for j in 0..g {
            worst_var = worst_var.max((column_var(m, j) / theta - 1.0).abs());
        }
    }
    let mut worst_corr: f64 = 0.0;
    for (k, delta) in [1.0f64, 10.0, 50.0].into_iter().enumerate() {
        let target = (1.0 - base.lambda).powf(delta / 2.0);
        let lagged = &samples[3 + k];
        for j in 0..g {
            let (a, b) = (samples[0].column(j), lagged.column(j));
            let (ma, mb) = (a.mean(), b.mean());
            let cov: f64 = a
                .iter()
                .zip(b.iter())
                .map(|(x, y)| (x - ma) * (y - mb))
                .sum();
            let corr = cov
                / ((column_var(&samples[0], j) * column_var(lagged, j)).sqrt()
                    * (seeds as f64 - 1.0));
            worst_corr = worst_corr.max((corr - target).abs());
        }
    }
    outcome(
        worst_var <= 0.2 && worst_corr <= 0.1,
        format!(
            "500 seeds on a 10x10 grid: max per-point variance deviation {:.1}% (tol 20%), max correlation error {worst_corr:.3} (tol 0.1)",
            100.0 * worst_var
        ),
    )
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        (
            1,
            "uniform-setting uniformity closed form vs brute force",
            lemma_one,
        ),
        (
            2,
            "extremely biased uniformity closed form vs brute force",
            lemma_two,
        ),
        (3, "acquisition gradients vs central differences", gradients),
        (4, "GP posterior vs direct-inverse oracle", gp_oracle),
        (5, "information-gain chain identity", chain_identity),
        (6, "regret bound coverage for CTV-fixed", bound_coverage),
        (
            7,
            "biased evaluation time: CTV family beats TV and GP-UCB",
            biased_reproduction,
        ),
        (
            8,
            "unit evaluation time: TV in the top two",
            unit_time_reproduction,
        ),
        (9, "regime classification table", regime_table),
        (
            10,
            "environment stationarity and temporal correlation",
            environment_statistics,
        ),
    ];
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let started = Instant::now();
        let result = check();
        let status = if result.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {id:>2} {status}: {name}; {} [{:.1}s]",
            result.detail,
            started.elapsed().as_secs_f64()
        );
        if !result.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
