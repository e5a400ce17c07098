//! Computable quantities from the regret analysis: evaluation-time
//! uniformity and its closed forms, information gain, the Theorem-1 style
//! regret bound over a partition of the rounds, and the asymptotic regime
//! table for uniform and extremely biased evaluation times.

use nalgebra::DMatrix;

use crate::error::{ensure, invalid, Error, Result};
use crate::gp::Posterior;
use crate::kernels::{JointKernel, SpaceKernel};

/// Nondecreasing sequence of timestamps (seconds).
#[derive(Debug, Clone, PartialEq)]
pub struct TimestampSet(Vec<f64>);

impl TimestampSet {
    pub fn new(taus: Vec<f64>) -> Result<Self> {
        ensure(taus.iter().all(|t| t.is_finite()), || {
            "timestamps must be finite".into()
        })?;
        ensure(taus.windows(2).all(|w| w[0] <= w[1]), || {
            "timestamps must be nondecreasing".into()
        })?;
        Ok(Self(taus))
    }

    /// `τ_k = (T/n)·k` for `k = 1..n`.
    pub fn uniform(total: f64, n: usize) -> Self {
        Self((1..=n).map(|k| total / n as f64 * k as f64).collect())
    }

    /// All time spent in round `n0` (1-based): `τ_k = 0` for `k < n0`, `T` afterwards.
    pub fn extremely_biased(total: f64, n: usize, n0: usize) -> Self {
        Self((1..=n).map(|k| if k < n0 { 0.0 } else { total }).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `C_{ε,T} = Σ_j Σ_k min(1/ε², (τ_j − τ_k)²)`, ordered pairs, exact double sum.
pub fn eval_time_uniformity(epsilon: f64, taus: &[f64]) -> Result<f64> {
    ensure(epsilon > 0.0 && epsilon.is_finite(), || {
        format!("uniformity needs epsilon > 0, got {epsilon}")
    })?;
    let cap = 1.0 / (epsilon * epsilon);
    let mut total = 0.0;
    for (j, a) in taus.iter().enumerate() {
        for b in &taus[j + 1..] {
            total += cap.min((a - b) * (a - b));
        }
    }
    Ok(2.0 * total)
}

/// Closed form of the uniformity of `i` consecutive timestamps under uniform
/// evaluation times `t_k = T/n`.
pub fn uniform_uniformity_closed_form(epsilon: f64, total: f64, n: usize, i: usize) -> Result<f64> {
    ensure(epsilon > 0.0, || "epsilon must be positive".into())?;
    ensure(total > 0.0, || "total time must be positive".into())?;
    ensure(i >= 1 && i <= n, || {
        format!("block size {i} must lie in 1..={n}")
    })?;
    let n = n as f64;
    let i = i as f64;
    let threshold = n / (epsilon * total);
    if i <= threshold {
        Ok(total * total / (6.0 * n * n) * i * i * (i * i - 1.0))
    } else {
        let a = threshold;
        Ok(total / (epsilon * n)
            * (0.5 * a.powi(3) - 4.0 / 3.0 * i * a * a + (i * i - 0.5) * a + i / 3.0))
    }
}

/// Closed form of the uniformity of the window `τ_{k0+1}, …, τ_{k0+i}` in the
/// extremely biased setting where round `n0` (1-based) takes all of `T`.
/// Membership of `τ_{n0}` is by index.
pub fn biased_uniformity_closed_form(
    epsilon: f64,
    total: f64,
    n: usize,
    k0: usize,
    i: usize,
    n0: usize,
) -> Result<f64> {
    ensure(epsilon > 0.0, || "epsilon must be positive".into())?;
    ensure(n0 >= 1 && n0 <= n, || {
        format!("n0 = {n0} must lie in 1..={n}")
    })?;
    ensure(i >= 1 && k0 + i <= n, || {
        format!("window (k0 = {k0}, i = {i}) exceeds n = {n}")
    })?;
    if n0 < k0 + 1 || n0 > k0 + i {
        return Ok(0.0);
    }
    let zeros = (n0 - k0 - 1) as f64;
    let fulls = (k0 + i - n0 + 1) as f64;
    Ok(2.0 * zeros * fulls * (1.0 / (epsilon * epsilon)).min(total * total))
}

/// `φ(x) = min(x, log x + 1/x)` for `x > 0`.
pub fn phi(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(invalid(format!(
            "phi needs a positive finite argument, got {x}"
        )));
    }
    Ok(x.min(x.ln() + 1.0 / x))
}

/// `½ log det(I + σ⁻²K)` through a Cholesky factorization.
pub fn information_gain(gram: &DMatrix<f64>, noise_variance: f64) -> Result<f64> {
    ensure(gram.is_square(), || "gram matrix must be square".into())?;
    ensure(noise_variance > 0.0, || {
        "noise variance must be positive".into()
    })?;
    let n = gram.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    let mut m = gram / noise_variance;
    for i in 0..n {
        m[(i, i)] += 1.0;
    }
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::Numerical("I + K/σ² is not positive definite".into()))?;
    let l = chol.l_dirty();
    Ok((0..n).map(|i| l[(i, i)].ln()).sum::<f64>().max(0.0))
}

/// `½ Σ log(1 + σ⁻² σ²_{i−1}(x_i, τ_i))` from sequential posterior variances.
pub fn info_gain_chain(variances: &[f64], noise_variance: f64) -> f64 {
    0.5 * variances
        .iter()
        .map(|v| (v / noise_variance).ln_1p())
        .sum::<f64>()
}

/// Posterior variance at each input given all earlier inputs, by refitting
/// the GP on each prefix.
pub fn sequential_posterior_variances(
    kernel: &JointKernel,
    inputs: &[(Vec<f64>, f64)],
    noise_variance: f64,
) -> Result<Vec<f64>> {
    (0..inputs.len())
        .map(|i| {
            let xs = inputs[..i].iter().map(|(x, _)| x.clone()).collect();
            let taus = inputs[..i].iter().map(|(_, t)| *t).collect();
            let post =
                Posterior::fit_targets(*kernel, xs, taus, &vec![0.0; i], noise_variance, 0.0)?;
            Ok(post.predict(&inputs[i].0, inputs[i].1).variance)
        })
        .collect()
}

/// Greedy estimate of the maximum space information gain over `M` picks from
/// `points` (repeats allowed). Each step takes the point of largest posterior
/// variance, the first in `points` order on ties.
pub fn greedy_space_info_gain(
    kernel: &SpaceKernel,
    points: &[Vec<f64>],
    picks: usize,
    noise_variance: f64,
) -> Result<f64> {
    ensure(picks >= 1, || "M must be at least 1".into())?;
    ensure(!points.is_empty(), || "candidate set is empty".into())?;
    ensure(noise_variance > 0.0, || {
        "noise variance must be positive".into()
    })?;
    let g = points.len();
    let mut variance = vec![kernel.variance(); g];
    // rows of the incremental Cholesky factor of the selected covariance, one per point
    let mut factors: Vec<Vec<f64>> = vec![Vec::with_capacity(picks); g];
    let mut gain = 0.0;
    for _ in 0..picks {
        let mut best = 0;
        for j in 1..g {
            if variance[j] > variance[best] {
                best = j;
            }
        }
        let v = variance[best].max(0.0);
        gain += 0.5 * (v / noise_variance).ln_1p();
        let denom = (v + noise_variance).sqrt();
        let pivot = factors[best].clone();
        for j in 0..g {
            let cross: f64 = factors[j].iter().zip(&pivot).map(|(a, b)| a * b).sum();
            let c = (kernel.value(&points[j], &points[best]) - cross) / denom;
            factors[j].push(c);
            variance[j] -= c * c;
        }
    }
    Ok(gain)
}

/// Cut points `0 = d_0 < d_1 < … < d_N = n` splitting rounds into blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    cuts: Vec<usize>,
}

impl Partition {
    pub fn new(cuts: Vec<usize>) -> Result<Self> {
        ensure(cuts.len() >= 2 && cuts[0] == 0, || {
            "partition must start at 0 and have a block".into()
        })?;
        ensure(cuts.windows(2).all(|w| w[0] < w[1]), || {
            "cuts must be strictly increasing".into()
        })?;
        Ok(Self { cuts })
    }

    /// Blocks of `block` rounds; the last block is shorter when `block ∤ n`.
    pub fn uniform(n: usize, block: usize) -> Result<Self> {
        ensure(n >= 1 && block >= 1, || {
            "n and block size must be positive".into()
        })?;
        let mut cuts: Vec<usize> = (0..n).step_by(block).collect();
        cuts.push(n);
        Self::new(cuts)
    }

    pub fn end(&self) -> usize {
        *self.cuts.last().unwrap()
    }

    pub fn num_blocks(&self) -> usize {
        self.cuts.len() - 1
    }

    /// `(d_{i−1}, d_i)` pairs.
    pub fn blocks(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.cuts.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn max_block(&self) -> usize {
        self.blocks().map(|(a, b)| b - a).max().unwrap()
    }
}

/// `C = 8 / log(1 + σ⁻²)`.
pub fn bound_constant(noise_variance: f64) -> f64 {
    8.0 / (1.0 / noise_variance).ln_1p()
}

/// Inputs of the cumulative-regret bound for CTV-fixed.
#[derive(Debug, Clone)]
pub struct BoundInputs<'a> {
    pub beta: f64,
    pub n: usize,
    pub partition: &'a Partition,
    pub timestamps: &'a [f64],
    pub epsilon: f64,
    pub noise_variance: f64,
    /// Maximum space information gain for `M = partition.max_block()` picks.
    pub gamma_m: f64,
}

/// `√(C β_n n (N γ_M + ½ Σ_i M_i φ(σ⁻² ε √(C_{ε,T_i}/M_i)))) + 2`. Blocks with
/// zero uniformity contribute nothing to the φ sum (the x → 0⁺ limit).
pub fn theorem_one_bound(inputs: &BoundInputs<'_>) -> Result<f64> {
    let BoundInputs {
        beta,
        n,
        partition,
        timestamps,
        epsilon,
        noise_variance,
        gamma_m,
    } = *inputs;
    ensure(beta > 0.0 && gamma_m >= 0.0, || {
        "beta must be positive and gamma_M nonnegative".into()
    })?;
    ensure(noise_variance > 0.0, || {
        "noise variance must be positive".into()
    })?;
    ensure((0.0..=1.0).contains(&epsilon), || {
        "epsilon must lie in [0, 1]".into()
    })?;
    ensure(partition.end() == n, || {
        format!("partition ends at {} but n = {n}", partition.end())
    })?;
    ensure(timestamps.len() == n, || {
        format!("{} timestamps for n = {n}", timestamps.len())
    })?;
    let mut time_term = 0.0;
    if epsilon > 0.0 {
        for (lo, hi) in partition.blocks() {
            let m = (hi - lo) as f64;
            let c = eval_time_uniformity(epsilon, &timestamps[lo..hi])?;
            if c > 0.0 {
                time_term += m * phi(epsilon / noise_variance * (c / m).sqrt())?;
            }
        }
    }
    let info = partition.num_blocks() as f64 * gamma_m + 0.5 * time_term;
    Ok((bound_constant(noise_variance) * beta * n as f64 * info).sqrt() + 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvaluationTimeSetting {
    Uniform,
    ExtremelyBiased,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Smoothness {
    SquaredExponential,
    Matern { nu: f64 },
}

impl From<crate::kernels::SpaceFamily> for Smoothness {
    fn from(f: crate::kernels::SpaceFamily) -> Self {
        match f.smoothness() {
            None => Smoothness::SquaredExponential,
            Some(nu) => Smoothness::Matern { nu },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// `εT < n^{−3/2}`
    SmallET,
    /// `n^{−3/2} ≤ εT ≤ n`
    MidET,
    /// `εT > n`
    LargeET,
}

/// Predicted regret order up to logarithmic factors and hidden constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Order {
    /// `√(n^{1+c})`; `c = 0` is `√n`.
    SqrtPower { c: f64 },
    /// `n^a T^b ε^b`.
    Power { n_exp: f64, t_exp: f64 },
    /// `n (1 + (εT/n)^{1/2})`.
    LinearPlus,
}

impl Order {
    pub fn value(&self, epsilon: f64, total: f64, n: f64) -> f64 {
        match *self {
            Order::SqrtPower { c } => n.powf(1.0 + c).sqrt(),
            Order::Power { n_exp, t_exp } => {
                n.powf(n_exp) * total.powf(t_exp) * epsilon.powf(t_exp)
            }
            Order::LinearPlus => n * (1.0 + (epsilon * total / n).sqrt()),
        }
    }

    pub fn symbol(&self) -> String {
        match *self {
            Order::SqrtPower { c: 0.0 } => "sqrt(n)".into(),
            Order::SqrtPower { c } => format!("sqrt(n^(1+{c}))"),
            Order::Power { n_exp, t_exp } => format!("n^({n_exp}) T^({t_exp}) eps^({t_exp})"),
            Order::LinearPlus => "n (1 + (eps T / n)^(1/2))".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeOrder {
    pub regime: Regime,
    pub order: Order,
    /// The bare order expression evaluated at `(ε, T, n)`.
    pub value: f64,
}

/// `c = d(d+1) / (2ν + d(d+1))`.
pub fn matern_exponent(nu: f64, dim: usize) -> f64 {
    let dd = (dim * (dim + 1)) as f64;
    dd / (2.0 * nu + dd)
}

pub fn theorem_two_regime(
    epsilon: f64,
    total: f64,
    n: usize,
    smoothness: Smoothness,
    dim: usize,
    setting: EvaluationTimeSetting,
) -> Result<RegimeOrder> {
    ensure(n >= 1 && dim >= 1, || "n and d must be positive".into())?;
    ensure(epsilon >= 0.0 && total >= 0.0, || {
        "epsilon and T must be nonnegative".into()
    })?;
    let nf = n as f64;
    let et = epsilon * total;
    let regime = if et < nf.powf(-1.5) {
        Regime::SmallET
    } else if et <= nf {
        Regime::MidET
    } else {
        Regime::LargeET
    };
    let c = match smoothness {
        Smoothness::SquaredExponential => 0.0,
        Smoothness::Matern { nu } => {
            ensure(nu > 0.0, || "Matérn smoothness must be positive".into())?;
            matern_exponent(nu, dim)
        }
    };
    let order = match (setting, regime) {
        (EvaluationTimeSetting::ExtremelyBiased, _) | (_, Regime::SmallET) => {
            Order::SqrtPower { c }
        }
        (EvaluationTimeSetting::Uniform, Regime::MidET) => Order::Power {
            n_exp: (4.0 - c) / (5.0 - 2.0 * c),
            t_exp: (1.0 - c) / (5.0 - 2.0 * c),
        },
        (EvaluationTimeSetting::Uniform, Regime::LargeET) => Order::LinearPlus,
    };
    Ok(RegimeOrder {
        regime,
        order,
        value: order.value(epsilon, total, nf),
    })
}
