//! Acquisition maximization over a box: exhaustive grid scan, then projected
//! limited-memory quasi-Newton ascent from the best grid seeds.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxDomainRepr", into = "BoxDomainRepr")]
pub struct BoxDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
    resolution: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxDomainRepr {
    lower: Vec<f64>,
    upper: Vec<f64>,
    grid_resolution: Vec<usize>,
}

impl TryFrom<BoxDomainRepr> for BoxDomain {
    type Error = crate::Error;
    fn try_from(r: BoxDomainRepr) -> Result<Self> {
        BoxDomain::new(r.lower, r.upper, r.grid_resolution)
    }
}

impl From<BoxDomain> for BoxDomainRepr {
    fn from(d: BoxDomain) -> Self {
        BoxDomainRepr {
            lower: d.lower,
            upper: d.upper,
            grid_resolution: d.resolution,
        }
    }
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, resolution: Vec<usize>) -> Result<Self> {
        ensure(!lower.is_empty(), || {
            "domain needs at least one dimension".into()
        })?;
        ensure(
            lower.len() == upper.len() && lower.len() == resolution.len(),
            || "lower, upper and grid_resolution must have the same length".into(),
        )?;
        ensure(
            lower
                .iter()
                .zip(&upper)
                .all(|(l, u)| l.is_finite() && u.is_finite() && l < u),
            || "domain bounds must be finite with lower < upper".into(),
        )?;
        ensure(resolution.iter().all(|&r| r >= 1), || {
            "grid resolution must be positive".into()
        })?;
        Ok(Self {
            lower,
            upper,
            resolution,
        })
    }

    /// `[0, 1]^d` quantized into `resolution` points per dimension.
    pub fn unit_cube(dim: usize, resolution: usize) -> Self {
        Self::new(vec![0.0; dim], vec![1.0; dim], vec![resolution; dim]).expect("valid unit cube")
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn grid_len(&self) -> usize {
        self.resolution.iter().product()
    }

    /// Largest side length (the `r` of a `[0, r]^d` cube containing the domain,
    /// when the domain starts at the origin).
    pub fn side(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| u - l)
            .fold(0.0, f64::max)
    }

    fn coordinate(&self, dim: usize, k: usize) -> f64 {
        let r = self.resolution[dim];
        if r == 1 {
            0.5 * (self.lower[dim] + self.upper[dim])
        } else {
            self.lower[dim] + (self.upper[dim] - self.lower[dim]) * k as f64 / (r - 1) as f64
        }
    }

    /// Grid point at a flat row-major index (first coordinate slowest), so
    /// index order is lexicographic order.
    pub fn grid_point(&self, index: usize) -> Vec<f64> {
        let d = self.dim();
        let mut x = vec![0.0; d];
        let mut rem = index;
        for j in (0..d).rev() {
            let r = self.resolution[j];
            x[j] = self.coordinate(j, rem % r);
            rem /= r;
        }
        x
    }

    pub fn grid_points(&self) -> Vec<Vec<f64>> {
        (0..self.grid_len()).map(|i| self.grid_point(i)).collect()
    }

    /// Flat index of the nearest grid point.
    pub fn nearest_index(&self, x: &[f64]) -> usize {
        let mut index = 0;
        for j in 0..self.dim() {
            let r = self.resolution[j];
            let k = if r == 1 {
                0
            } else {
                let u = (x[j] - self.lower[j]) / (self.upper[j] - self.lower[j]);
                ((u * (r - 1) as f64).round().max(0.0) as usize).min(r - 1)
            };
            index = index * r + k;
        }
        index
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    pub fn project(&self, x: &mut [f64]) {
        for (v, (l, u)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*l, *u);
        }
    }
}

/// A differentiable function to maximize.
pub trait Objective {
    fn value(&self, x: &[f64]) -> f64;

    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>);
}

/// Adapter from a pair of closures.
pub struct FnObjective<F, G> {
    pub f: F,
    pub grad: G,
}

impl<F, G> Objective for FnObjective<F, G>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    fn value(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }

    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        ((self.f)(x), (self.grad)(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerOptions {
    pub starts: usize,
    pub max_iters: usize,
    pub grid_only: bool,
    pub gradient_tolerance: f64,
    pub memory: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            starts: 10,
            max_iters: 100,
            grid_only: false,
            gradient_tolerance: 1e-6,
            memory: 10,
        }
    }
}

impl OptimizerOptions {
    pub fn validate(&self) -> Result<()> {
        ensure(self.starts >= 1, || {
            "optimizer.starts must be at least 1".into()
        })?;
        ensure(self.memory >= 1, || {
            "optimizer.memory must be at least 1".into()
        })?;
        ensure(self.gradient_tolerance > 0.0, || {
            "optimizer.gradient_tolerance must be positive".into()
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Maximum {
    pub x: Vec<f64>,
    pub value: f64,
}

/// Grid point with the largest value; ties go to the lowest flat index.
pub fn grid_argmax(f: impl Fn(&[f64]) -> f64, domain: &BoxDomain) -> Maximum {
    let values = grid_values(&f, domain);
    let (index, value) = best_index(&values);
    Maximum {
        x: domain.grid_point(index),
        value,
    }
}

fn grid_values(f: &impl Fn(&[f64]) -> f64, domain: &BoxDomain) -> Vec<f64> {
    (0..domain.grid_len())
        .map(|i| f(&domain.grid_point(i)))
        .collect()
}

fn best_index(values: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &v) in values.iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Indices of the `k` largest values, best first, ties by lower index.
fn top_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Grid scan followed by projected quasi-Newton refinement of the `starts`
/// best grid points. Never returns less than the grid maximum.
pub fn maximize(
    objective: &impl Objective,
    domain: &BoxDomain,
    options: &OptimizerOptions,
) -> Maximum {
    let values = grid_values(&|x: &[f64]| objective.value(x), domain);
    maximize_from_grid(objective, domain, options, &values)
}

/// [`maximize`] with the grid values already computed (row-major order).
pub fn maximize_from_grid(
    objective: &impl Objective,
    domain: &BoxDomain,
    options: &OptimizerOptions,
    grid_values: &[f64],
) -> Maximum {
    assert_eq!(grid_values.len(), domain.grid_len());
    let (best_i, best_v) = best_index(grid_values);
    let mut best = Maximum {
        x: domain.grid_point(best_i),
        value: best_v,
    };
    if options.grid_only {
        return best;
    }
    for seed in top_indices(grid_values, options.starts) {
        let start = domain.grid_point(seed);
        let refined = ascend(objective, domain, start, grid_values[seed], options);
        let better = refined.value > best.value
            || (refined.value == best.value
                && refined.x.iter().partial_cmp(best.x.iter()) == Some(std::cmp::Ordering::Less));
        if better {
            best = refined;
        }
    }
    best
}

/// Projected L-BFGS ascent from `start`. Falls back to the start point when
/// no step improves on it.
fn ascend(
    objective: &impl Objective,
    domain: &BoxDomain,
    start: Vec<f64>,
    start_value: f64,
    options: &OptimizerOptions,
) -> Maximum {
    let start_point = start.clone();
    let mut x = start;
    domain.project(&mut x);
    // minimize h = −f
    let (v0, g0) = objective.value_and_gradient(&x);
    if !v0.is_finite() || g0.iter().any(|g| !g.is_finite()) {
        return Maximum {
            x: start_point,
            value: start_value,
        };
    }
    let mut h = -v0;
    let mut g: Vec<f64> = g0.iter().map(|v| -v).collect();
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();

    for _ in 0..options.max_iters {
        let free = free_mask(domain, &x, &g);
        let pg_norm = g
            .iter()
            .zip(&free)
            .filter(|(_, &f)| f)
            .map(|(v, _)| v.abs())
            .fold(0.0, f64::max);
        if pg_norm < options.gradient_tolerance {
            break;
        }
        let masked: Vec<f64> = g
            .iter()
            .zip(&free)
            .map(|(v, &f)| if f { *v } else { 0.0 })
            .collect();
        let mut dir = two_loop(&masked, &history);
        for (di, &f) in dir.iter_mut().zip(&free) {
            if !f {
                *di = 0.0;
            }
        }
        let slope: f64 = dir.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            dir = masked.iter().map(|v| -v).collect();
            history.clear();
        }

        // backtracking on the projected path
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut trial: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + step * b).collect();
            domain.project(&mut trial);
            let moved: f64 = trial
                .iter()
                .zip(&x)
                .zip(&g)
                .map(|((t, a), gi)| (t - a) * gi)
                .sum();
            let (fv, fg) = objective.value_and_gradient(&trial);
            if fv.is_finite() && -fv <= h + 1e-4 * moved.min(0.0) && -fv < h {
                accepted = Some((trial, fv, fg));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fv, fg)) = accepted else { break };
        if fg.iter().any(|v| !v.is_finite()) {
            break;
        }
        let gn: Vec<f64> = fg.iter().map(|v| -v).collect();
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-12 {
            if history.len() == options.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        x = xn;
        h = -fv;
        g = gn;
    }
    let value = -h;
    if value >= start_value {
        Maximum { x, value }
    } else {
        Maximum {
            x: start_point,
            value: start_value,
        }
    }
}

/// Variables not pinned at a bound by a gradient pushing outward (for minimization).
fn free_mask(domain: &BoxDomain, x: &[f64], g: &[f64]) -> Vec<bool> {
    x.iter()
        .zip(g)
        .zip(domain.lower().iter().zip(domain.upper()))
        .map(|((&xi, &gi), (&l, &u))| !((xi <= l && gi > 0.0) || (xi >= u && gi < 0.0)))
        .collect()
}

/// L-BFGS two-loop recursion: returns `−H·g`.
fn two_loop(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quadratic(center: [f64; 2]) -> impl Objective {
        FnObjective {
            f: move |x: &[f64]| -((x[0] - center[0]).powi(2) + 2.0 * (x[1] - center[1]).powi(2)),
            grad: move |x: &[f64]| vec![-2.0 * (x[0] - center[0]), -4.0 * (x[1] - center[1])],
        }
    }

    #[test]
    fn grid_indexing_is_lexicographic() {
        let d = BoxDomain::unit_cube(2, 3);
        assert_eq!(d.grid_point(0), vec![0.0, 0.0]);
        assert_eq!(d.grid_point(1), vec![0.0, 0.5]);
        assert_eq!(d.grid_point(3), vec![0.5, 0.0]);
        assert_eq!(d.grid_point(8), vec![1.0, 1.0]);
        for i in 0..9 {
            assert_eq!(d.nearest_index(&d.grid_point(i)), i);
        }
        assert_eq!(d.nearest_index(&[0.3, 0.9]), 5);
        assert_eq!(d.nearest_index(&[-4.0, 7.0]), 2);
    }

    #[test]
    fn constant_picks_first_grid_point() {
        let d = BoxDomain::unit_cube(2, 50);
        let m = grid_argmax(|_| 1.0, &d);
        assert_eq!(m.x, vec![0.0, 0.0]);
    }

    #[test]
    fn centered_bowl_picks_nearest_point() {
        let d = BoxDomain::unit_cube(2, 50);
        let m = grid_argmax(|x| -((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)), &d);
        let h = 0.5 / 49.0;
        assert!((m.x[0] - 0.5).abs() <= h + 1e-12 && (m.x[1] - 0.5).abs() <= h + 1e-12);
        assert_eq!(m.x, vec![24.0 / 49.0, 24.0 / 49.0]);
    }

    #[test]
    fn grid_argmax_matches_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = BoxDomain::unit_cube(2, 7);
        let table: Vec<f64> = (0..49).map(|_| rng.gen()).collect();
        let m = grid_argmax(|x| table[d.nearest_index(x)], &d);
        let mut best = 0;
        for i in 0..49 {
            if table[i] > table[best] {
                best = i;
            }
        }
        assert_eq!(m.x, d.grid_point(best));
        assert_eq!(m.value, table[best]);
    }

    #[test]
    fn refines_interior_maximum() {
        let d = BoxDomain::unit_cube(2, 11);
        let m = maximize(
            &quadratic([0.3137, 0.7211]),
            &d,
            &OptimizerOptions::default(),
        );
        assert!(
            (m.x[0] - 0.3137).abs() < 1e-6 && (m.x[1] - 0.7211).abs() < 1e-6,
            "{:?}",
            m.x
        );
    }

    #[test]
    fn boundary_maximum_respects_bounds() {
        let d = BoxDomain::unit_cube(2, 11);
        let m = maximize(&quadratic([1.4, -0.2]), &d, &OptimizerOptions::default());
        assert_eq!(m.x, vec![1.0, 0.0]);
        assert!(d.contains(&m.x));
    }

    #[test]
    fn grid_only_mode_skips_refinement() {
        let d = BoxDomain::unit_cube(2, 11);
        let opts = OptimizerOptions {
            grid_only: true,
            ..Default::default()
        };
        let m = maximize(&quadratic([0.3137, 0.7211]), &d, &opts);
        assert_eq!(m.x, vec![0.3, 0.7]);
    }

    #[test]
    fn broken_gradient_falls_back_to_seed() {
        let d = BoxDomain::unit_cube(1, 5);
        let obj = FnObjective {
            f: |x: &[f64]| -(x[0] - 0.6).powi(2),
            grad: |_: &[f64]| vec![f64::NAN],
        };
        let m = maximize(&obj, &d, &OptimizerOptions::default());
        assert_eq!(m.x, vec![0.5]);
    }

    #[test]
    fn never_worse_than_grid_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = BoxDomain::unit_cube(2, 15);
        for _ in 0..20 {
            let c: Vec<[f64; 3]> = (0..6)
                .map(|_| [rng.gen(), rng.gen(), rng.gen_range(0.5..2.0)])
                .collect();
            let c2 = c.clone();
            let obj = FnObjective {
                f: move |x: &[f64]| {
                    c.iter()
                        .map(|p| {
                            p[2] * (-((x[0] - p[0]).powi(2) + (x[1] - p[1]).powi(2)) / 0.02).exp()
                        })
                        .sum()
                },
                grad: move |x: &[f64]| {
                    let mut g = vec![0.0; 2];
                    for p in &c2 {
                        let e =
                            p[2] * (-((x[0] - p[0]).powi(2) + (x[1] - p[1]).powi(2)) / 0.02).exp();
                        g[0] += e * -(x[0] - p[0]) / 0.01;
                        g[1] += e * -(x[1] - p[1]) / 0.01;
                    }
                    g
                },
            };
            let grid = grid_argmax(|x| obj.value(x), &d);
            let a = maximize(&obj, &d, &OptimizerOptions::default());
            let b = maximize(&obj, &d, &OptimizerOptions::default());
            assert!(a.value >= grid.value - 1e-12);
            assert!(d.contains(&a.x));
            assert_eq!(a.x, b.x);
            assert_eq!(a.value.to_bits(), b.value.to_bits());
        }
    }
}
