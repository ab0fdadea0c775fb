//! Kernel functions and local constant / local linear smoothing weights.
//!
//! Both weight families are normalized to sum to one, so a smoothed value is
//! always a weighted average `sum_i w_i y_i`. Observations whose kernel value
//! is zero never enter a sum, which makes the estimates strictly local for
//! compactly supported kernels.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    /// `0.75 (1 - u^2)` on `[-1, 1]`.
    #[default]
    Epanechnikov,
    /// `0.5` on `[-1, 1]`.
    Uniform,
    /// `1 - |u|` on `[-1, 1]`.
    Triangular,
    /// Standard normal density. Not compactly supported.
    Gaussian,
}

impl Kernel {
    pub const ALL: [Kernel; 4] = [
        Kernel::Epanechnikov,
        Kernel::Uniform,
        Kernel::Triangular,
        Kernel::Gaussian,
    ];

    #[inline]
    pub fn eval(self, u: f64) -> f64 {
        match self {
            Kernel::Gaussian => (-0.5 * u * u).exp() * FRAC_1_SQRT_2PI,
            _ if !(u.abs() <= 1.0) => 0.0,
            Kernel::Epanechnikov => 0.75 * (1.0 - u * u),
            Kernel::Uniform => 0.5,
            Kernel::Triangular => 1.0 - u.abs(),
        }
    }

    pub fn is_compact(self) -> bool {
        !matches!(self, Kernel::Gaussian)
    }

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Epanechnikov => "epanechnikov",
            Kernel::Uniform => "uniform",
            Kernel::Triangular => "triangular",
            Kernel::Gaussian => "gaussian",
        }
    }
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl std::str::FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "epanechnikov" | "epan" => Ok(Kernel::Epanechnikov),
            "uniform" | "box" => Ok(Kernel::Uniform),
            "triangular" | "tri" => Ok(Kernel::Triangular),
            "gaussian" | "gauss" => Ok(Kernel::Gaussian),
            other => Err(Error::invalid(format!("unknown kernel '{other}'"))),
        }
    }
}

/// Degree of the local polynomial fit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Order {
    /// Local constant (Nadaraya-Watson).
    #[serde(rename = "nw")]
    NadarayaWatson,
    #[serde(rename = "locallinear")]
    LocalLinear,
}

/// Smoothing weights of every observation for one query time.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalWeights {
    weights: Vec<f64>,
    query: f64,
    bandwidth: f64,
    order: Order,
}

impl LocalWeights {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn query(&self) -> f64 {
        self.query
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn order(&self) -> Order {
        self.order
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.weights
    }

    /// `sum_i w_i y_i`, skipping observations with zero weight.
    pub fn apply(&self, values: &[f64]) -> f64 {
        weighted_sum(&self.weights, values)
    }
}

#[inline]
pub(crate) fn weighted_sum(weights: &[f64], values: &[f64]) -> f64 {
    debug_assert_eq!(weights.len(), values.len());
    let mut acc = 0.0;
    for (&w, &v) in weights.iter().zip(values) {
        if w != 0.0 {
            acc += w * v;
        }
    }
    acc
}

/// Smoothing weights of `times` for a query at `x`.
///
/// Local linear weights are `K_h(X_i - x) [r_2 - r_1 (X_i - x)]` rescaled to
/// sum to one; they go negative near the edge of the design.
pub fn local_weights(
    times: &[f64],
    x: f64,
    h: f64,
    order: Order,
    kernel: Kernel,
) -> Result<LocalWeights> {
    let mut weights = vec![0.0; times.len()];
    fill_weights(times, x, h, order, kernel, &mut weights)?;
    Ok(LocalWeights {
        weights,
        query: x,
        bandwidth: h,
        order,
    })
}

/// Writes the weights for a query at `x` into `out` (same length as `times`).
pub(crate) fn fill_weights(
    times: &[f64],
    x: f64,
    h: f64,
    order: Order,
    kernel: Kernel,
    out: &mut [f64],
) -> Result<()> {
    debug_assert_eq!(times.len(), out.len());
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::invalid(format!("bandwidth must be positive, got {h}")));
    }
    let degenerate = |reason| Error::DegenerateWindow {
        x,
        bandwidth: h,
        reason,
    };

    let mut s0 = 0.0;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut in_window = 0usize;
    let mut first_time = f64::NAN;
    let mut distinct = false;
    for (&t, k) in times.iter().zip(out.iter_mut()) {
        *k = kernel.eval((t - x) / h);
        if *k > 0.0 {
            let d = t - x;
            s0 += *k;
            s1 += *k * d;
            s2 += *k * d * d;
            if in_window == 0 {
                first_time = t;
            } else if t != first_time {
                distinct = true;
            }
            in_window += 1;
        }
    }

    match order {
        Order::NadarayaWatson => {
            if in_window == 0 {
                return Err(degenerate("no observation inside the window"));
            }
            for k in out.iter_mut() {
                *k /= s0;
            }
        }
        Order::LocalLinear => {
            if in_window < 2 {
                return Err(degenerate("local linear fit needs two observations"));
            }
            if !distinct {
                return Err(degenerate("all in-window times coincide"));
            }
            let mut total = 0.0;
            for (&t, k) in times.iter().zip(out.iter_mut()) {
                if *k > 0.0 {
                    *k *= s2 - s1 * (t - x);
                    total += *k;
                }
            }
            if !(total > 0.0) || !total.is_finite() {
                return Err(degenerate("local design variance vanishes"));
            }
            for k in out.iter_mut() {
                *k /= total;
            }
        }
    }
    Ok(())
}

/// Scalar function sampled on a strictly increasing grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarCurve {
    grid: Vec<f64>,
    values: Vec<f64>,
}

impl ScalarCurve {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(Error::DimMismatch {
                expected: grid.len(),
                found: values.len(),
            });
        }
        check_grid(&grid)?;
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Linear interpolation; `None` outside the grid hull.
    pub fn eval(&self, x: f64) -> Option<f64> {
        interpolate(&self.grid, &self.values, x)
    }
}

pub(crate) fn interpolate(grid: &[f64], values: &[f64], x: f64) -> Option<f64> {
    let (&lo, &hi) = (grid.first()?, grid.last()?);
    if !(x >= lo && x <= hi) {
        return None;
    }
    let idx = grid.partition_point(|&g| g <= x);
    if idx == 0 {
        return Some(values[0]);
    }
    if idx >= grid.len() {
        return Some(values[grid.len() - 1]);
    }
    let (g0, g1) = (grid[idx - 1], grid[idx]);
    if x == g0 {
        return Some(values[idx - 1]);
    }
    let t = (x - g0) / (g1 - g0);
    Some(values[idx - 1] + t * (values[idx] - values[idx - 1]))
}

pub(crate) fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.iter().any(|g| !g.is_finite()) {
        return Err(Error::invalid("grid contains non-finite values"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("grid must be strictly increasing"));
    }
    Ok(())
}

/// `m` equispaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    match m {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (m - 1) as f64;
            let mut out: Vec<f64> = (0..m).map(|i| lo + step * i as f64).collect();
            out[m - 1] = hi;
            out
        }
    }
}

/// Trapezoid-rule weights for `grid`: `sum_k w_k f(g_k)` approximates the
/// integral of `f` over `[g_0, g_last]`.
pub fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let m = grid.len();
    let mut w = vec![0.0; m];
    for k in 1..m {
        let half = 0.5 * (grid[k] - grid[k - 1]);
        w[k - 1] += half;
        w[k] += half;
    }
    w
}

pub fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    trapezoid_weights(grid).iter().zip(values).map(|(w, v)| w * v).sum()
}

/// Smooths one response vector onto `grid`.
pub fn smooth_scalar(
    times: &[f64],
    responses: &[f64],
    grid: &[f64],
    h: f64,
    order: Order,
    kernel: Kernel,
) -> Result<ScalarCurve> {
    if times.len() != responses.len() {
        return Err(Error::DimMismatch {
            expected: times.len(),
            found: responses.len(),
        });
    }
    check_grid(grid)?;
    let mut buf = vec![0.0; times.len()];
    let values = grid
        .iter()
        .map(|&x| {
            fill_weights(times, x, h, order, kernel, &mut buf)?;
            Ok(weighted_sum(&buf, responses))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScalarCurve {
        grid: grid.to_vec(),
        values,
    })
}

/// Smooths every column of `responses` (n x q) with a shared bandwidth.
/// Column `j` of the result equals `smooth_scalar` on that column exactly.
pub fn smooth_columns(
    times: &[f64],
    responses: &DMatrix<f64>,
    grid: &[f64],
    h: f64,
    order: Order,
    kernel: Kernel,
) -> Result<Vec<ScalarCurve>> {
    if times.len() != responses.nrows() {
        return Err(Error::DimMismatch {
            expected: times.len(),
            found: responses.nrows(),
        });
    }
    check_grid(grid)?;
    let q = responses.ncols();
    let mut values = vec![Vec::with_capacity(grid.len()); q];
    let mut buf = vec![0.0; times.len()];
    for &x in grid {
        fill_weights(times, x, h, order, kernel, &mut buf)?;
        for (j, column) in values.iter_mut().enumerate() {
            column.push(weighted_sum(&buf, responses.column(j).as_slice()));
        }
    }
    Ok(values
        .into_iter()
        .map(|values| ScalarCurve {
            grid: grid.to_vec(),
            values,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn trapezoid_is_exact_for_lines() {
        let grid = [0.0, 0.1, 0.4, 1.0];
        let w = trapezoid_weights(&grid);
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        let f: Vec<f64> = grid.iter().map(|x| 2.0 + 3.0 * x).collect();
        assert_abs_diff_eq!(trapezoid(&grid, &f), 3.5, epsilon = 1e-14);
        assert_eq!(trapezoid(&[0.5], &[1.0]), 0.0);
    }

    /// Integrates a compact kernel over [-1, 1] with composite Simpson.
    fn simpson_mass(kernel: Kernel) -> f64 {
        let m = 2000;
        let h = 2.0 / m as f64;
        let mut acc = kernel.eval(-1.0) + kernel.eval(1.0);
        for i in 1..m {
            let u = -1.0 + h * i as f64;
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * kernel.eval(u);
        }
        acc * h / 3.0
    }

    #[test]
    fn epanechnikov_values() {
        let k = Kernel::Epanechnikov;
        assert_eq!(k.eval(0.0), 0.75);
        assert_eq!(k.eval(1.5), 0.0);
        assert_eq!(k.eval(-1.5), 0.0);
        assert_eq!(k.eval(0.5), 0.5625);
    }

    #[test]
    fn compact_kernels_are_densities() {
        for k in [Kernel::Epanechnikov, Kernel::Triangular] {
            assert_abs_diff_eq!(simpson_mass(k), 1.0, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(simpson_mass(Kernel::Uniform), 1.0, epsilon = 1e-12);
        for k in Kernel::ALL {
            for u in [0.1, 0.3, 0.99, 2.0] {
                assert_eq!(k.eval(u), k.eval(-u));
                assert!(k.eval(u) >= 0.0);
            }
        }
    }

    #[test]
    fn kernel_names_round_trip() {
        for k in Kernel::ALL {
            assert_eq!(k.name().parse::<Kernel>().unwrap(), k);
        }
        assert!("cosine".parse::<Kernel>().is_err());
    }

    #[test]
    fn symmetric_pair_gives_equal_weights() {
        for order in [Order::NadarayaWatson, Order::LocalLinear] {
            let w = local_weights(&[0.4, 0.6], 0.5, 0.2, order, Kernel::Epanechnikov).unwrap();
            assert_abs_diff_eq!(w.weights()[0], 0.5, epsilon = 1e-15);
            assert_abs_diff_eq!(w.weights()[1], 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn boundary_local_linear_weights_match_hand_calculation() {
        // Independent evaluation of K_h(X_i - x) [r2 - r1 (X_i - x)] / (n sigma^2)
        // with r_l = n^-1 sum K_h(X_i - x)(X_i - x)^l, all scaled by 1/h.
        let times = [0.1, 0.15, 0.3];
        let (x, h) = (0.1, 0.25);
        let n = times.len() as f64;
        let kh = |t: f64| 0.75 * (1.0 - ((t - x) / h).powi(2)) / h;
        let r = |l: i32| times.iter().map(|&t| kh(t) * (t - x).powi(l)).sum::<f64>() / n;
        let (r0, r1, r2) = (r(0), r(1), r(2));
        let sigma2 = r0 * r2 - r1 * r1;
        let expected: Vec<f64> = times
            .iter()
            .map(|&t| kh(t) * (r2 - r1 * (t - x)) / (n * sigma2))
            .collect();
        // Frozen from an exact rational evaluation of the closed form.
        let frozen = [0.683_593_75, 0.421_875, -0.105_468_75];
        for (e, f) in expected.iter().zip(frozen) {
            assert_abs_diff_eq!(*e, f, epsilon = 1e-12);
        }

        let w = local_weights(&times, x, h, Order::LocalLinear, Kernel::Epanechnikov).unwrap();
        for (got, want) in w.weights().iter().zip(&expected) {
            assert_abs_diff_eq!(*got, *want, epsilon = 1e-12);
        }
        assert!(w.weights().iter().any(|&v| v < 0.0));
    }

    #[test]
    fn out_of_window_weights_are_exactly_zero() {
        let times = [0.0, 0.2, 0.45, 0.5, 0.55, 0.9];
        let w = local_weights(&times, 0.5, 0.1, Order::LocalLinear, Kernel::Epanechnikov).unwrap();
        assert_eq!(w.weights()[0], 0.0);
        assert_eq!(w.weights()[1], 0.0);
        assert_eq!(w.weights()[5], 0.0);
    }

    #[test]
    fn degenerate_windows() {
        let times = [0.1, 0.5, 0.5, 0.9];
        let err = local_weights(&times, 0.3, 0.05, Order::NadarayaWatson, Kernel::Epanechnikov)
            .unwrap_err();
        assert!(matches!(err, Error::DegenerateWindow { x, .. } if x == 0.3));
        // Two observations at the same time: enough for NW, not for local linear.
        assert!(local_weights(&times, 0.5, 0.1, Order::NadarayaWatson, Kernel::Epanechnikov).is_ok());
        let err = local_weights(&times, 0.5, 0.1, Order::LocalLinear, Kernel::Epanechnikov)
            .unwrap_err();
        assert!(matches!(err, Error::DegenerateWindow { .. }));
        assert!(local_weights(&times, 0.5, 0.0, Order::LocalLinear, Kernel::Epanechnikov).is_err());
    }

    #[test]
    fn smoothing_reproduces_constants_and_lines() {
        let times: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let grid = linspace(0.1, 0.9, 17);
        let c = vec![3.25; times.len()];
        for order in [Order::NadarayaWatson, Order::LocalLinear] {
            let curve = smooth_scalar(&times, &c, &grid, 0.3, order, Kernel::Epanechnikov).unwrap();
            for v in curve.values() {
                assert_abs_diff_eq!(*v, 3.25, epsilon = 1e-12);
            }
        }
        let line: Vec<f64> = times.iter().map(|t| 1.5 - 2.0 * t).collect();
        let curve =
            smooth_scalar(&times, &line, &grid, 0.3, Order::LocalLinear, Kernel::Epanechnikov).unwrap();
        for (x, v) in grid.iter().zip(curve.values()) {
            assert_abs_diff_eq!(*v, 1.5 - 2.0 * x, epsilon = 1e-10);
        }
    }

    #[test]
    fn local_linear_matches_weighted_least_squares() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 500;
        let times: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let ys: Vec<f64> = times
            .iter()
            .map(|t| 2.0 + t - 3.0 * t * t + 0.3 * (rng.random::<f64>() - 0.5))
            .collect();
        let grid = linspace(0.05, 0.95, 20);
        let h = 0.15;
        let curve =
            smooth_scalar(&times, &ys, &grid, h, Order::LocalLinear, Kernel::Epanechnikov).unwrap();
        for (&x, &v) in grid.iter().zip(curve.values()) {
            // Normal equations of min sum K (y - b - c (t - x))^2.
            let (mut a00, mut a01, mut a11, mut b0, mut b1) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (&t, &y) in times.iter().zip(&ys) {
                let k = Kernel::Epanechnikov.eval((t - x) / h);
                let d = t - x;
                a00 += k;
                a01 += k * d;
                a11 += k * d * d;
                b0 += k * y;
                b1 += k * d * y;
            }
            let intercept = (a11 * b0 - a01 * b1) / (a00 * a11 - a01 * a01);
            assert_abs_diff_eq!(v, intercept, epsilon = 1e-8);
        }
    }

    #[test]
    fn smooth_columns_matches_scalar_smoother_bitwise() {
        let times = vec![0.05, 0.1, 0.22, 0.3, 0.41, 0.5, 0.66, 0.8, 0.9];
        let data = DMatrix::from_fn(times.len(), 3, |i, j| ((i * 7 + j * 3) as f64).cos());
        let grid = linspace(0.1, 0.8, 8);
        let curves =
            smooth_columns(&times, &data, &grid, 0.25, Order::LocalLinear, Kernel::Triangular).unwrap();
        for j in 0..3 {
            let single = smooth_scalar(
                &times,
                data.column(j).as_slice(),
                &grid,
                0.25,
                Order::LocalLinear,
                Kernel::Triangular,
            )
            .unwrap();
            assert_eq!(single.values(), curves[j].values());
        }
    }

    #[test]
    fn curve_interpolation() {
        let c = ScalarCurve::new(vec![0.0, 1.0, 3.0], vec![0.0, 2.0, 0.0]).unwrap();
        assert_eq!(c.eval(0.5), Some(1.0));
        assert_eq!(c.eval(2.0), Some(1.0));
        assert_eq!(c.eval(3.0), Some(0.0));
        assert_eq!(c.eval(3.01), None);
        assert!(ScalarCurve::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(ScalarCurve::new(vec![0.0, 1.0], vec![1.0]).is_err());
    }

    fn window_design() -> impl Strategy<Value = (Vec<f64>, f64, f64)> {
        (
            prop::collection::vec(0.0f64..1.0, 2..60),
            0.0f64..1.0,
            0.05f64..0.8,
        )
    }

    proptest! {
        #[test]
        fn weights_sum_to_one((times, x, h) in window_design(), ll in any::<bool>()) {
            let order = if ll { Order::LocalLinear } else { Order::NadarayaWatson };
            for kernel in Kernel::ALL {
                if let Ok(w) = local_weights(&times, x, h, order, kernel) {
                    let s: f64 = w.weights().iter().sum();
                    prop_assert!((s - 1.0).abs() <= 1e-12, "sum = {}", s);
                    if !ll {
                        prop_assert!(w.weights().iter().all(|&v| v >= 0.0));
                    }
                }
            }
        }

        #[test]
        fn nw_equals_ll_on_symmetric_designs(half in prop::collection::vec(0.01f64..0.3, 1..10), x in 0.3f64..0.7) {
            let mut times: Vec<f64> = half.iter().map(|d| x - d).collect();
            times.extend(half.iter().map(|d| x + d));
            let nw = local_weights(&times, x, 0.31, Order::NadarayaWatson, Kernel::Epanechnikov).unwrap();
            let ll = local_weights(&times, x, 0.31, Order::LocalLinear, Kernel::Epanechnikov).unwrap();
            for (a, b) in nw.weights().iter().zip(ll.weights()) {
                prop_assert!((a - b).abs() <= 1e-10);
            }
        }

        #[test]
        fn far_responses_do_not_matter((times, x, h) in window_design(), bump in -1e3f64..1e3) {
            let ys: Vec<f64> = times.iter().map(|t| t.sin()).collect();
            let mut perturbed = ys.clone();
            for (y, t) in perturbed.iter_mut().zip(&times) {
                if (t - x).abs() > h {
                    *y += bump;
                }
            }
            let grid = [x];
            let a = smooth_scalar(&times, &ys, &grid, h, Order::LocalLinear, Kernel::Epanechnikov);
            let b = smooth_scalar(&times, &perturbed, &grid, h, Order::LocalLinear, Kernel::Epanechnikov);
            if let (Ok(a), Ok(b)) = (a, b) {
                prop_assert_eq!(a.values()[0].to_bits(), b.values()[0].to_bits());
            }
        }
    }
}
