//! One-dimensional quadrature: adaptive Gauss-Kronrod, fixed Gauss-Legendre,
//! composite Simpson.

use crate::error::{IsoflowError, Result};

// G7/K15 abscissae and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn kronrod15(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive G7K15 quadrature with a global absolute error target.
///
/// Returns `(value, error_estimate)`. Intervals are bisected in order of
/// their local error, so the result is deterministic for a given integrand.
pub fn integrate_adaptive(
    mut f: impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    abs_tol: f64,
) -> Result<(f64, f64)> {
    if a == b {
        return Ok((0.0, 0.0));
    }
    const MAX_INTERVALS: usize = 4000;
    let (v, e) = kronrod15(&mut f, a, b);
    let mut parts = vec![(a, b, v, e)];
    loop {
        let total_err: f64 = parts.iter().map(|p| p.3).sum();
        let total: f64 = parts.iter().map(|p| p.2).sum();
        if !total.is_finite() {
            return Err(IsoflowError::NumericFailure(
                "non-finite integrand in adaptive quadrature".into(),
            ));
        }
        // Tiny floor keeps round-off from driving endless bisection.
        let floor = 50.0 * f64::EPSILON * parts.iter().map(|p| p.2.abs()).sum::<f64>();
        if total_err <= abs_tol.max(floor) {
            return Ok((total, total_err));
        }
        if parts.len() >= MAX_INTERVALS {
            return Err(IsoflowError::SolverFailure {
                message: "adaptive quadrature exhausted its interval budget".into(),
                residual: total_err,
            });
        }
        let (idx, _) = parts
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, p)| if p.3 > acc.1 { (i, p.3) } else { acc });
        let (lo, hi, _, _) = parts.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = kronrod15(&mut f, lo, mid);
        let (v2, e2) = kronrod15(&mut f, mid, hi);
        parts.push((lo, mid, v1, e1));
        parts.push((mid, hi, v2, e2));
        // Keep summation order independent of the swap_remove history.
        parts.sort_by(|p, q| p.0.total_cmp(&q.0));
    }
}

/// Adaptive quadrature over consecutive breakpoints `[x0, x1, ..., xk]`,
/// splitting the tolerance evenly.
pub fn integrate_piecewise(
    mut f: impl FnMut(f64) -> f64,
    breaks: &[f64],
    abs_tol: f64,
) -> Result<f64> {
    let pieces = breaks.len().saturating_sub(1).max(1) as f64;
    let mut total = 0.0;
    for w in breaks.windows(2) {
        total += integrate_adaptive(&mut f, w[0], w[1], abs_tol / pieces)?.0;
    }
    Ok(total)
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "gauss_legendre needs at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        dp = if d != 0.0 { d } else { dp };
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Fixed Gauss-Legendre rule mapped onto `[a, b]`.
#[derive(Clone, Debug)]
pub struct GaussRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussRule {
    pub fn new(n: usize) -> Self {
        let (nodes, weights) = gauss_legendre(n);
        GaussRule { nodes, weights }
    }

    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(c + h * x);
        }
        acc * h
    }

    /// Rule applied on each of `cells` equal subintervals.
    pub fn integrate_composite(
        &self,
        a: f64,
        b: f64,
        cells: usize,
        mut f: impl FnMut(f64) -> f64,
    ) -> f64 {
        let step = (b - a) / cells as f64;
        (0..cells)
            .map(|j| {
                let lo = a + j as f64 * step;
                self.integrate(lo, lo + step, &mut f)
            })
            .sum()
    }
}

/// Composite Simpson rule on `n` (even) panels.
pub fn simpson(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = if n % 2 == 1 { n + 1 } else { n.max(2) };
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for j in 1..n {
        let w = if j % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + j as f64 * h);
    }
    acc * h / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kronrod_integrates_polynomials_exactly() {
        let (v, _) = integrate_adaptive(|x| x.powi(6) - 3.0 * x, 0.0, 2.0, 1e-14).unwrap();
        assert!((v - (128.0 / 7.0 - 6.0)).abs() < 1e-12);
    }

    #[test]
    fn adaptive_handles_sharp_feature() {
        let (v, _) = integrate_adaptive(|x| 1.0 / (1e-4 + x * x), -1.0, 1.0, 1e-10).unwrap();
        let exact = 2.0 / 1e-2 * (1.0f64 / 1e-2).atan();
        assert!((v - exact).abs() < 1e-8);
    }

    #[test]
    fn gauss_legendre_weights_sum_to_two() {
        for n in [1, 2, 5, 16, 33] {
            let (x, w) = gauss_legendre(n);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
            // exact for degree 2n-1
            let m: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(2 * n as i32 - 2)).sum();
            assert!((m - 2.0 / (2 * n - 1) as f64).abs() < 1e-13);
        }
    }

    #[test]
    fn simpson_is_fourth_order() {
        let exact = 1.0 - (1.0f64).cos();
        let e1 = (simpson(f64::sin, 0.0, 1.0, 8) - exact).abs();
        let e2 = (simpson(f64::sin, 0.0, 1.0, 16) - exact).abs();
        assert!((e1 / e2).log2() > 3.8);
    }
}
