//! Stationary space kernels, the exponential-decay time kernel and their
//! product.
//!
//! Space kernels have the form `θ·ρ(‖x − x'‖ / l)` with the profile `ρ` fixed
//! by the family. The time kernel is `(1 − ε)^{|τ − τ'| / 2}`, so stale
//! observations are discounted geometrically in elapsed seconds.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, invalid, Result};

const SQRT5: f64 = 2.236_067_977_499_79;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpaceFamily {
    SquaredExponential,
    /// Matérn with smoothness fixed at ν = 5/2.
    Matern52,
    Exponential,
}

impl SpaceFamily {
    /// Unit-variance profile as a function of the scaled distance `r = ‖Δx‖ / l`.
    pub fn profile(self, r: f64) -> f64 {
        match self {
            SpaceFamily::SquaredExponential => (-0.5 * r * r).exp(),
            SpaceFamily::Exponential => (-r).exp(),
            SpaceFamily::Matern52 => (1.0 + SQRT5 * r + 5.0 * r * r / 3.0) * (-SQRT5 * r).exp(),
        }
    }

    /// `ρ'(r) / r`, finite at `r = 0` for the differentiable families. The
    /// exponential profile has a cusp at the origin; its subgradient 0 is used there.
    fn profile_slope_over_r(self, r: f64) -> f64 {
        match self {
            SpaceFamily::SquaredExponential => -(-0.5 * r * r).exp(),
            SpaceFamily::Matern52 => -(5.0 / 3.0) * (1.0 + SQRT5 * r) * (-SQRT5 * r).exp(),
            SpaceFamily::Exponential => {
                if r > 0.0 {
                    -(-r).exp() / r
                } else {
                    0.0
                }
            }
        }
    }

    /// Smoothness parameter ν of the Matérn class this family belongs to
    /// (`None` for the squared exponential, the ν → ∞ limit).
    pub fn smoothness(self) -> Option<f64> {
        match self {
            SpaceFamily::SquaredExponential => None,
            SpaceFamily::Matern52 => Some(2.5),
            SpaceFamily::Exponential => Some(0.5),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpaceKernelRepr", into = "SpaceKernelRepr")]
pub struct SpaceKernel {
    family: SpaceFamily,
    lengthscale: f64,
    variance: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpaceKernelRepr {
    family: SpaceFamily,
    lengthscale: f64,
    variance: f64,
}

impl TryFrom<SpaceKernelRepr> for SpaceKernel {
    type Error = crate::Error;
    fn try_from(r: SpaceKernelRepr) -> Result<Self> {
        SpaceKernel::new(r.family, r.lengthscale, r.variance)
    }
}

impl From<SpaceKernel> for SpaceKernelRepr {
    fn from(k: SpaceKernel) -> Self {
        SpaceKernelRepr {
            family: k.family,
            lengthscale: k.lengthscale,
            variance: k.variance,
        }
    }
}

impl SpaceKernel {
    pub fn new(family: SpaceFamily, lengthscale: f64, variance: f64) -> Result<Self> {
        ensure(lengthscale.is_finite() && lengthscale > 0.0, || {
            format!("lengthscale must be positive and finite, got {lengthscale}")
        })?;
        ensure(variance.is_finite() && variance > 0.0, || {
            format!("variance must be positive and finite, got {variance}")
        })?;
        Ok(Self {
            family,
            lengthscale,
            variance,
        })
    }

    pub fn squared_exponential(lengthscale: f64, variance: f64) -> Result<Self> {
        Self::new(SpaceFamily::SquaredExponential, lengthscale, variance)
    }

    pub fn matern52(lengthscale: f64, variance: f64) -> Result<Self> {
        Self::new(SpaceFamily::Matern52, lengthscale, variance)
    }

    pub fn family(&self) -> SpaceFamily {
        self.family
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// Same kernel with the lengthscale multiplied by `factor`.
    pub fn scaled_lengthscale(&self, factor: f64) -> Result<Self> {
        Self::new(self.family, self.lengthscale * factor, self.variance)
    }

    /// Checked evaluation: rejects mismatched dimensions and non-finite coordinates.
    pub fn eval(&self, x: &[f64], x2: &[f64]) -> Result<f64> {
        check_points(x, x2)?;
        Ok(self.value(x, x2))
    }

    /// Unchecked evaluation used on hot paths.
    #[inline]
    pub fn value(&self, x: &[f64], x2: &[f64]) -> f64 {
        let r = squared_distance(x, x2).sqrt() / self.lengthscale;
        self.variance * self.family.profile(r)
    }

    /// Kernel value and its gradient with respect to the first argument.
    #[inline]
    pub fn value_and_gradient(&self, x: &[f64], x2: &[f64], grad: &mut [f64]) -> f64 {
        let l2 = self.lengthscale * self.lengthscale;
        let r = squared_distance(x, x2).sqrt() / self.lengthscale;
        let coef = self.variance * self.family.profile_slope_over_r(r) / l2;
        for ((g, a), b) in grad.iter_mut().zip(x).zip(x2) {
            *g = coef * (a - b);
        }
        self.variance * self.family.profile(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TimeKernelRepr", into = "TimeKernelRepr")]
pub struct TimeKernel {
    epsilon: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TimeKernelRepr {
    epsilon: f64,
}

impl TryFrom<TimeKernelRepr> for TimeKernel {
    type Error = crate::Error;
    fn try_from(r: TimeKernelRepr) -> Result<Self> {
        TimeKernel::new(r.epsilon)
    }
}

impl From<TimeKernel> for TimeKernelRepr {
    fn from(k: TimeKernel) -> Self {
        TimeKernelRepr { epsilon: k.epsilon }
    }
}

impl TimeKernel {
    pub fn new(epsilon: f64) -> Result<Self> {
        ensure((0.0..=1.0).contains(&epsilon), || {
            format!("forgetting rate epsilon must lie in [0, 1], got {epsilon}")
        })?;
        Ok(Self { epsilon })
    }

    /// The time-invariant kernel (ε = 0): every pair of timestamps correlates fully.
    pub fn invariant() -> Self {
        Self { epsilon: 0.0 }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn eval(&self, tau: f64, tau2: f64) -> Result<f64> {
        ensure(tau.is_finite() && tau2.is_finite(), || {
            format!("timestamps must be finite, got {tau} and {tau2}")
        })?;
        Ok(self.value(tau, tau2))
    }

    #[inline]
    pub fn value(&self, tau: f64, tau2: f64) -> f64 {
        self.decay((tau - tau2).abs())
    }

    /// Kernel value as a function of the absolute lag. ε = 1 gives exactly 0 for
    /// any nonzero lag.
    #[inline]
    pub fn decay(&self, lag: f64) -> f64 {
        if self.epsilon == 0.0 || lag == 0.0 {
            1.0
        } else if self.epsilon == 1.0 {
            0.0
        } else {
            (self.log_rate() * lag).exp()
        }
    }

    /// `d log k / d lag = ½ log(1 − ε)`; `-inf` for ε = 1.
    #[inline]
    pub fn log_rate(&self) -> f64 {
        0.5 * (1.0 - self.epsilon).ln()
    }

    /// Derivative of [`decay`](Self::decay) with respect to a positive lag.
    #[inline]
    pub fn decay_derivative(&self, lag: f64) -> f64 {
        if self.epsilon == 0.0 || self.epsilon == 1.0 {
            0.0
        } else {
            self.log_rate() * self.decay(lag)
        }
    }
}

/// Product kernel `k((x, τ), (x', τ')) = k_space(x, x')·k_time(τ, τ')`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointKernel {
    pub space: SpaceKernel,
    pub time: TimeKernel,
}

impl JointKernel {
    pub fn new(space: SpaceKernel, time: TimeKernel) -> Self {
        Self { space, time }
    }

    /// Joint kernel that ignores time entirely.
    pub fn space_only(space: SpaceKernel) -> Self {
        Self {
            space,
            time: TimeKernel::invariant(),
        }
    }

    pub fn variance(&self) -> f64 {
        self.space.variance()
    }

    pub fn eval(&self, a: (&[f64], f64), b: (&[f64], f64)) -> Result<f64> {
        Ok(self.space.eval(a.0, b.0)? * self.time.eval(a.1, b.1)?)
    }

    #[inline]
    pub fn value(&self, x: &[f64], tau: f64, x2: &[f64], tau2: f64) -> f64 {
        self.space.value(x, x2) * self.time.value(tau, tau2)
    }
}

/// Gram matrix of the joint kernel over `(x, τ)` inputs. Exactly symmetric:
/// the upper triangle is mirrored from the lower one.
pub fn gram_matrix(kernel: &JointKernel, inputs: &[(Vec<f64>, f64)]) -> Result<DMatrix<f64>> {
    if inputs.is_empty() {
        return Err(invalid("gram matrix needs at least one input"));
    }
    let d = inputs[0].0.len();
    for (x, tau) in inputs {
        ensure(x.len() == d, || {
            "inputs have inconsistent dimensions".into()
        })?;
        ensure(x.iter().all(|v| v.is_finite()) && tau.is_finite(), || {
            "inputs must be finite".into()
        })?;
    }
    let n = inputs.len();
    let mut gram = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let v = kernel.value(&inputs[i].0, inputs[i].1, &inputs[j].0, inputs[j].1);
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    Ok(gram)
}

/// Gram matrix of a space kernel alone.
pub fn space_gram_matrix(kernel: &SpaceKernel, points: &[Vec<f64>]) -> DMatrix<f64> {
    let n = points.len();
    let mut gram = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let v = kernel.value(&points[i], &points[j]);
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    gram
}

#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

fn check_points(x: &[f64], x2: &[f64]) -> Result<()> {
    ensure(!x.is_empty(), || {
        "points must have at least one coordinate".into()
    })?;
    ensure(x.len() == x2.len(), || {
        format!("dimension mismatch: {} vs {}", x.len(), x2.len())
    })?;
    ensure(x.iter().chain(x2).all(|v| v.is_finite()), || {
        "point coordinates must be finite".into()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn se() -> SpaceKernel {
        SpaceKernel::squared_exponential(0.2, 1.0).unwrap()
    }

    #[test]
    fn space_kernel_at_zero_distance_is_variance() {
        assert_eq!(se().eval(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 1.0);
        let e = SpaceKernel::new(SpaceFamily::Exponential, 1.0, 2.0).unwrap();
        assert_eq!(e.eval(&[1.0], &[1.0]).unwrap(), 2.0);
    }

    #[test]
    fn matern_at_unit_distance() {
        let k = SpaceKernel::matern52(1.0, 1.0).unwrap();
        // (1 + √5 + 5/3)·exp(−√5), evaluated term by term.
        let s5 = 5f64.sqrt();
        let expected = (1.0 + s5 + 5.0 / 3.0) * (-s5).exp();
        assert_relative_eq!(
            k.eval(&[0.0, 0.0], &[0.6, 0.8]).unwrap(),
            expected,
            max_relative = 1e-14
        );
        assert_relative_eq!(expected, 0.523_994_108_831_820_3, max_relative = 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(se().eval(&[f64::NAN, 0.0], &[0.0, 0.0]).is_err());
        assert!(se().eval(&[0.0], &[0.0, 0.0]).is_err());
        assert!(SpaceKernel::squared_exponential(0.0, 1.0).is_err());
        assert!(SpaceKernel::squared_exponential(1.0, -1.0).is_err());
        assert!(TimeKernel::new(1.5).is_err());
        assert!(TimeKernel::new(-0.1).is_err());
    }

    #[test]
    fn time_kernel_values() {
        assert_eq!(TimeKernel::new(0.5).unwrap().eval(7.3, 7.3).unwrap(), 1.0);
        assert_eq!(TimeKernel::new(0.0).unwrap().eval(0.0, 123.0).unwrap(), 1.0);
        assert_relative_eq!(
            TimeKernel::new(0.36).unwrap().eval(1.0, 3.0).unwrap(),
            0.64,
            max_relative = 1e-14
        );
        assert_eq!(TimeKernel::new(1.0).unwrap().eval(1.0, 1.5).unwrap(), 0.0);
        assert_eq!(TimeKernel::new(1.0).unwrap().eval(1.0, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn joint_kernel_is_product() {
        let jk = JointKernel::new(se(), TimeKernel::new(0.01).unwrap());
        let a = [0.1, 0.2];
        let b = [0.1, 0.4];
        let space = (-0.5f64).exp(); // ‖Δx‖/l = 1
        let time = 0.99f64.powf(1.5);
        assert_relative_eq!(
            jk.eval((&a, 2.0), (&b, 5.0)).unwrap(),
            space * time,
            max_relative = 1e-14
        );
        assert_eq!(jk.eval((&a, 4.0), (&a, 4.0)).unwrap(), 1.0);
        let flat = JointKernel::space_only(se());
        assert_eq!(
            flat.eval((&a, 0.0), (&b, 90.0)).unwrap(),
            se().eval(&a, &b).unwrap()
        );
    }

    #[test]
    fn gram_small_cases() {
        let jk = JointKernel::new(
            SpaceKernel::matern52(0.3, 2.5).unwrap(),
            TimeKernel::new(0.1).unwrap(),
        );
        let g = gram_matrix(&jk, &[(vec![0.2, 0.2], 1.0)]).unwrap();
        assert_eq!(g.shape(), (1, 1));
        assert_eq!(g[(0, 0)], 2.5);
        let g = gram_matrix(&jk, &[(vec![0.2, 0.2], 1.0), (vec![0.2, 0.2], 1.0)]).unwrap();
        assert!(g.iter().all(|&v| v == 2.5));
        assert!(gram_matrix(&jk, &[]).is_err());
    }

    #[test]
    fn matern_and_se_gradients_match_finite_differences() {
        for family in [
            SpaceFamily::SquaredExponential,
            SpaceFamily::Matern52,
            SpaceFamily::Exponential,
        ] {
            let k = SpaceKernel::new(family, 0.3, 1.7).unwrap();
            let x = [0.31, 0.77];
            let y = [0.52, 0.49];
            let mut g = [0.0; 2];
            k.value_and_gradient(&x, &y, &mut g);
            for i in 0..2 {
                let h = 1e-6;
                let mut xp = x;
                let mut xm = x;
                xp[i] += h;
                xm[i] -= h;
                let fd = (k.value(&xp, &y) - k.value(&xm, &y)) / (2.0 * h);
                assert_relative_eq!(g[i], fd, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn assumption_bound_fails_for_large_forgetting_at_short_lags() {
        // 1 − (1 − ε)^{Δ/2} ≤ ε·Δ only holds while −½ log(1 − ε) ≤ ε (ε ≲ 0.797).
        let k = TimeKernel::new(0.99).unwrap();
        assert!(1.0 - k.value(0.0, 0.1) > 0.99 * 0.1);
    }

    fn family() -> impl Strategy<Value = SpaceFamily> {
        prop_oneof![
            Just(SpaceFamily::SquaredExponential),
            Just(SpaceFamily::Matern52),
            Just(SpaceFamily::Exponential)
        ]
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(
            fam in family(),
            l in 0.05f64..3.0,
            theta in 0.1f64..5.0,
            eps in 0.0f64..=1.0,
            a in prop::collection::vec(-2.0f64..2.0, 2),
            b in prop::collection::vec(-2.0f64..2.0, 2),
            ta in 0.0f64..100.0,
            tb in 0.0f64..100.0,
        ) {
            let k = JointKernel::new(SpaceKernel::new(fam, l, theta).unwrap(), TimeKernel::new(eps).unwrap());
            let ab = k.eval((&a, ta), (&b, tb)).unwrap();
            let ba = k.eval((&b, tb), (&a, ta)).unwrap();
            prop_assert_eq!(ab, ba);
            let s = k.space.value(&a, &b);
            prop_assert!(s > 0.0 || squared_distance(&a, &b) / (l * l) > 1000.0);
            prop_assert!(s <= theta);
            let t = k.time.value(ta, tb);
            prop_assert!((0.0..=1.0).contains(&t));
        }

        #[test]
        fn profile_nonincreasing(fam in family(), r in 0.0f64..10.0, dr in 0.0f64..1.0) {
            prop_assert!(fam.profile(r + dr) <= fam.profile(r));
        }

        #[test]
        fn time_kernel_satisfies_linear_decay_bound(
            eps in 0.0f64..0.79,
            ta in 0.0f64..50.0,
            tb in 0.0f64..50.0,
        ) {
            let k = TimeKernel::new(eps).unwrap();
            prop_assert!(1.0 - k.value(ta, tb) <= eps * (ta - tb).abs() + 1e-12);
        }

        #[test]
        fn gram_is_psd(
            fam in family(),
            eps in 0.0f64..1.0,
            pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..20.0), 1..50),
        ) {
            let k = JointKernel::new(SpaceKernel::new(fam, 0.2, 1.3).unwrap(), TimeKernel::new(eps).unwrap());
            let inputs: Vec<_> = pts.iter().map(|&(a, b, t)| (vec![a, b], t)).collect();
            let g = gram_matrix(&k, &inputs).unwrap();
            prop_assert_eq!(g.clone(), g.transpose());
            for i in 0..g.nrows() {
                prop_assert_eq!(g[(i, i)], 1.3);
            }
            let min = g.symmetric_eigenvalues().min();
            prop_assert!(min >= -1e-8 * 1.3, "min eigenvalue {}", min);
        }
    }
}
