use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tvgp_core::kernels::{gram_matrix, space_gram_matrix, JointKernel, SpaceKernel, TimeKernel};
use tvgp_core::theory::{
    biased_uniformity_closed_form, eval_time_uniformity, greedy_space_info_gain, info_gain_chain,
    information_gain, phi, sequential_posterior_variances, theorem_one_bound,
    uniform_uniformity_closed_form, BoundInputs, Partition, TimestampSet,
};

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn lemma_one_matches_brute_force(n in 4usize..=60, i_frac in 0.0f64..1.0, double in any::<bool>(), k in prop::sample::select(vec![1usize, 2, 5, 0])) {
        let i = 1 + ((n - 1) as f64 * i_frac) as usize;
        let total = if double { 2.0 * n as f64 } else { n as f64 };
        let eps = if k == 0 { 1e-3 / total } else { n as f64 / (k as f64 * total) };
        let taus = TimestampSet::uniform(total, n);
        let brute = eval_time_uniformity(eps, &taus.as_slice()[..i]).unwrap();
        let closed = uniform_uniformity_closed_form(eps, total, n, i).unwrap();
        prop_assert!(rel_err(brute, closed) <= 1e-9, "n={n} i={i} brute={brute} closed={closed}");
    }

    #[test]
    fn lemma_two_matches_brute_force(n in 1usize..=40, a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0, eps in prop::sample::select(vec![0.01, 0.5, 2.0]), total in 0.5f64..5.0) {
        let i = 1 + ((n - 1) as f64 * a) as usize;
        let k0 = ((n - i) as f64 * b) as usize;
        let n0 = 1 + ((n - 1) as f64 * c) as usize;
        let taus = TimestampSet::extremely_biased(total, n, n0);
        let brute = eval_time_uniformity(eps, &taus.as_slice()[k0..k0 + i]).unwrap();
        let closed = biased_uniformity_closed_form(eps, total, n, k0, i, n0).unwrap();
        prop_assert!(rel_err(brute, closed) <= 1e-9);
    }

    #[test]
    fn uniformity_is_order_free_and_nonnegative(mut taus in prop::collection::vec(0.0f64..50.0, 0..30), eps in 0.001f64..1.0) {
        let c = eval_time_uniformity(eps, &taus).unwrap();
        prop_assert!(c >= 0.0);
        taus.reverse();
        prop_assert!(rel_err(c, eval_time_uniformity(eps, &taus).unwrap()) < 1e-12);
    }

    #[test]
    fn chain_identity(seed in any::<u64>(), n in 1usize..=50, eps in 0.0f64..0.3, matern in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let space = if matern { SpaceKernel::matern52(0.3, 1.0) } else { SpaceKernel::squared_exponential(0.3, 1.0) }.unwrap();
        let k = JointKernel::new(space, TimeKernel::new(eps).unwrap());
        let inputs: Vec<(Vec<f64>, f64)> = (0..n).map(|_| (vec![rng.gen(), rng.gen()], rng.gen_range(0.0..30.0))).collect();
        let lhs = information_gain(&gram_matrix(&k, &inputs).unwrap(), 0.01).unwrap();
        let rhs = info_gain_chain(&sequential_posterior_variances(&k, &inputs, 0.01).unwrap(), 0.01);
        prop_assert!(rel_err(lhs, rhs) <= 1e-8, "{lhs} vs {rhs}");
    }

    #[test]
    fn bound_nondecreasing_in_epsilon(seed in any::<u64>(), e1 in 0.0f64..1.0, e2 in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut taus: Vec<f64> = (0..20).map(|_| rng.gen_range(0.0..60.0)).collect();
        taus.sort_by(f64::total_cmp);
        let p = Partition::uniform(20, 5).unwrap();
        let bound = |eps| theorem_one_bound(&BoundInputs {
            beta: 5.0, n: 20, partition: &p, timestamps: &taus, epsilon: eps, noise_variance: 0.01, gamma_m: 2.0,
        }).unwrap();
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        prop_assert!(bound(lo) <= bound(hi) * (1.0 + 1e-12));
    }
}

#[test]
fn information_gain_matches_eigenvalues() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let k = JointKernel::new(
        SpaceKernel::matern52(0.25, 1.3).unwrap(),
        TimeKernel::new(0.05).unwrap(),
    );
    for _ in 0..10 {
        let inputs: Vec<(Vec<f64>, f64)> = (0..20)
            .map(|_| (vec![rng.gen(), rng.gen()], rng.gen_range(0.0..10.0)))
            .collect();
        let g = gram_matrix(&k, &inputs).unwrap();
        let eig = g.clone().symmetric_eigen();
        let oracle = 0.5
            * eig
                .eigenvalues
                .iter()
                .map(|l| (l.max(0.0) / 0.02).ln_1p())
                .sum::<f64>();
        assert!(rel_err(information_gain(&g, 0.02).unwrap(), oracle) < 1e-9);
    }
}

fn exhaustive(kernel: &SpaceKernel, pts: &[Vec<f64>], m: usize, sigma2: f64) -> f64 {
    fn rec(
        start: usize,
        left: usize,
        chosen: &mut Vec<Vec<f64>>,
        pts: &[Vec<f64>],
        k: &SpaceKernel,
        s2: f64,
        best: &mut f64,
    ) {
        if left == 0 {
            let g: DMatrix<f64> = space_gram_matrix(k, chosen);
            *best = best.max(information_gain(&g, s2).unwrap());
            return;
        }
        for j in start..pts.len() {
            chosen.push(pts[j].clone());
            rec(j, left - 1, chosen, pts, k, s2, best);
            chosen.pop();
        }
    }
    let mut best = f64::NEG_INFINITY;
    rec(0, m, &mut Vec::new(), pts, kernel, sigma2, &mut best);
    best
}

#[test]
fn greedy_against_exhaustive() {
    let k = SpaceKernel::squared_exponential(0.2, 1.0).unwrap();
    let two = vec![vec![0.1, 0.1], vec![0.2, 0.15]];
    let g = greedy_space_info_gain(&k, &two, 2, 0.01).unwrap();
    assert!(rel_err(g, exhaustive(&k, &two, 2, 0.01)) < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let size = rng.gen_range(2..=12);
        let pts: Vec<Vec<f64>> = (0..size).map(|_| vec![rng.gen(), rng.gen()]).collect();
        for m in 1..=3 {
            let greedy = greedy_space_info_gain(&k, &pts, m, 0.01).unwrap();
            let best = exhaustive(&k, &pts, m, 0.01);
            assert!(greedy <= best + 1e-12);
            assert!(greedy >= (1.0 - (-1f64).exp()) * best - 1e-12);
        }
    }
}

#[test]
fn phi_is_continuous_at_one() {
    assert!((phi(1.0 - 1e-9).unwrap() - phi(1.0 + 1e-9).unwrap()).abs() < 1e-6);
}

#[test]
fn biased_blocks_avoiding_the_long_round_add_nothing() {
    let n = 30;
    let taus = TimestampSet::extremely_biased(100.0, n, 25);
    let p = Partition::uniform(n, 10).unwrap();
    let inputs = |eps| BoundInputs {
        beta: 4.0,
        n,
        partition: &p,
        timestamps: taus.as_slice(),
        epsilon: eps,
        noise_variance: 0.01,
        gamma_m: 3.0,
    };
    let with = theorem_one_bound(&inputs(0.1)).unwrap();
    // only the last block contains round 25
    let c3 = eval_time_uniformity(0.1, &taus.as_slice()[20..30]).unwrap();
    let x = 0.1 / 0.01 * (c3 / 10.0).sqrt();
    let c = 8.0 / 101f64.ln();
    let expected = (c * 4.0 * 30.0 * (3.0 * 3.0 + 0.5 * 10.0 * phi(x).unwrap())).sqrt() + 2.0;
    assert!(rel_err(with, expected) < 1e-14);
}
