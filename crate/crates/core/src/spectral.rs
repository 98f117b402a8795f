//! Spectral calculus on periodic tensor grids: derivatives and the Poisson
//! solve used by the Moser flow.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{IsoflowError, Result};

/// Periodic grid `counts` over the box `[0, periods)` (row-major, last axis
/// fastest).
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicGrid {
    pub counts: Vec<usize>,
    pub periods: Vec<f64>,
}

impl PeriodicGrid {
    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    fn strides(&self) -> Vec<usize> {
        let mut s = vec![1usize; self.dim()];
        for a in (0..self.dim().saturating_sub(1)).rev() {
            s[a] = s[a + 1] * self.counts[a + 1];
        }
        s
    }

    /// Signed angular wavenumber of index `k` along `axis`.
    fn wavenumber(&self, axis: usize, k: usize) -> f64 {
        let n = self.counts[axis];
        let signed = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
        std::f64::consts::TAU * signed / self.periods[axis]
    }

    fn transform(&self, data: &mut [Complex<f64>], inverse: bool) {
        let mut planner = FftPlanner::new();
        let strides = self.strides();
        for axis in 0..self.dim() {
            let n = self.counts[axis];
            let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
            let stride = strides[axis];
            let mut line = vec![Complex::new(0.0, 0.0); n];
            for start in 0..data.len() {
                // visit each line once, from its first element
                if !(start / stride).is_multiple_of(n) {
                    continue;
                }
                for (k, slot) in line.iter_mut().enumerate() {
                    *slot = data[start + k * stride];
                }
                fft.process(&mut line);
                for (k, v) in line.iter().enumerate() {
                    data[start + k * stride] = *v;
                }
            }
        }
        if inverse {
            let scale = 1.0 / self.len() as f64;
            data.iter_mut().for_each(|v| *v *= scale);
        }
    }

    pub fn forward(&self, values: &[f64]) -> Vec<Complex<f64>> {
        let mut data: Vec<_> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.transform(&mut data, false);
        data
    }

    pub fn inverse(&self, mut spectrum: Vec<Complex<f64>>) -> Vec<f64> {
        self.transform(&mut spectrum, true);
        spectrum.into_iter().map(|c| c.re).collect()
    }

    /// Band-limited resampling onto the grid refined `factor` times per axis
    /// (zero-padded spectrum; an even grid's Nyquist mode is split evenly
    /// between its two aliases so the result stays real).
    pub fn upsample(&self, values: &[f64], factor: usize) -> (PeriodicGrid, Vec<f64>) {
        let fine = PeriodicGrid { counts: self.counts.iter().map(|n| n * factor).collect(), periods: self.periods.clone() };
        let coarse = self.forward(values);
        let cs = self.strides();
        let scale = (fine.len() / self.len()) as f64;
        let mut spec = vec![Complex::new(0.0, 0.0); fine.len()];
        for (flat, slot) in spec.iter_mut().enumerate() {
            let mut rem = flat;
            let mut src = 0usize;
            let mut weight = scale;
            for a in (0..self.dim()).rev() {
                let (n, m) = (self.counts[a], fine.counts[a]);
                let k = rem % m;
                rem /= m;
                let signed = if k <= m / 2 { k as i64 } else { k as i64 - m as i64 };
                let half = (n / 2) as i64;
                if signed.abs() > half || (n % 2 == 1 && signed.abs() == half + 1) {
                    weight = 0.0;
                    break;
                }
                if n % 2 == 0 && signed.abs() == half {
                    weight *= 0.5;
                }
                src += (signed.rem_euclid(n as i64) as usize) * cs[a];
            }
            if weight != 0.0 {
                *slot = coarse[src] * weight;
            }
        }
        let v = fine.inverse(spec);
        (fine, v)
    }

    /// Multi-index wavenumbers of a flat spectral index.
    fn wavevector(&self, flat: usize) -> Vec<(f64, bool)> {
        let mut rem = flat;
        let mut out = vec![(0.0, false); self.dim()];
        for a in (0..self.dim()).rev() {
            let k = rem % self.counts[a];
            rem /= self.counts[a];
            // the Nyquist mode of an even grid has no odd-derivative partner
            let nyquist = self.counts[a].is_multiple_of(2) && k == self.counts[a] / 2;
            out[a] = (self.wavenumber(a, k), nyquist);
        }
        out
    }

    /// Spectral derivative along `axis`.
    pub fn derivative(&self, values: &[f64], axis: usize) -> Vec<f64> {
        let mut spec = self.forward(values);
        for (flat, c) in spec.iter_mut().enumerate() {
            let (k, nyq) = self.wavevector(flat)[axis];
            *c = if nyq { Complex::new(0.0, 0.0) } else { *c * Complex::new(0.0, k) };
        }
        self.inverse(spec)
    }

    /// Spectral Laplacian.
    pub fn laplacian(&self, values: &[f64]) -> Vec<f64> {
        let mut spec = self.forward(values);
        for (flat, c) in spec.iter_mut().enumerate() {
            let k2: f64 = self.wavevector(flat).iter().map(|(k, _)| k * k).sum();
            *c *= -k2;
        }
        self.inverse(spec)
    }

    /// Zero-mean solution of `Lap w = rhs`; `rhs` must have zero mean to
    /// `mean_tol` (relative to its sup norm). Returns `w` and the residual of
    /// re-applying the Laplacian.
    pub fn poisson(&self, rhs: &[f64], tol: f64) -> Result<(Vec<f64>, f64)> {
        let scale = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let mean = rhs.iter().sum::<f64>() / rhs.len() as f64;
        let mut spec = self.forward(rhs);
        for (flat, c) in spec.iter_mut().enumerate() {
            let k2: f64 = self.wavevector(flat).iter().map(|(k, _)| k * k).sum();
            *c = if flat == 0 { Complex::new(0.0, 0.0) } else { -*c / k2 };
        }
        let w = self.inverse(spec);
        let back = self.laplacian(&w);
        let residual = back
            .iter()
            .zip(rhs)
            .fold(0.0f64, |m, (b, r)| m.max((b - (r - mean)).abs()))
            / scale;
        if !(residual <= tol) {
            return Err(IsoflowError::SolverFailure { message: "spectral Poisson residual too large".into(), residual });
        }
        Ok((w, residual))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsampling_is_exact_for_band_limited_data() {
        use std::f64::consts::TAU;
        let f = |x: f64, y: f64| 1.0 + (TAU * x).cos() * (2.0 * TAU * y).sin() + 0.3 * (3.0 * TAU * y).cos();
        for n in [8usize, 9] {
            let g = PeriodicGrid { counts: vec![n, n], periods: vec![1.0, 1.0] };
            let node = |i: usize, m: usize| i as f64 / m as f64;
            let coarse: Vec<f64> = (0..n * n).map(|k| f(node(k / n, n), node(k % n, n))).collect();
            let (fine, v) = g.upsample(&coarse, 3);
            let m = fine.counts[0];
            for (k, val) in v.iter().enumerate() {
                assert!((val - f(node(k / m, m), node(k % m, m))).abs() < 1e-12, "n = {n}, node {k}");
            }
        }
    }
    use std::f64::consts::TAU;

    fn grid2(n: usize) -> PeriodicGrid {
        PeriodicGrid { counts: vec![n, n], periods: vec![1.0, 2.0] }
    }

    fn sample(g: &PeriodicGrid, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let mut v = Vec::new();
        for i in 0..g.counts[0] {
            for j in 0..g.counts[1] {
                v.push(f(i as f64 / g.counts[0] as f64, 2.0 * j as f64 / g.counts[1] as f64));
            }
        }
        v
    }

    #[test]
    fn derivative_exact_on_modes() {
        let g = grid2(16);
        let u = sample(&g, |x, y| (TAU * x).sin() * (TAU * y / 2.0).cos());
        let dy = g.derivative(&u, 1);
        let exact = sample(&g, |x, y| -(TAU / 2.0) * (TAU * x).sin() * (TAU * y / 2.0).sin());
        for (a, b) in dy.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn poisson_inverts_laplacian() {
        let g = grid2(24);
        let w = sample(&g, |x, y| (TAU * x).cos() + 0.3 * (TAU * (x + y)).sin());
        let rhs = g.laplacian(&w);
        let (sol, res) = g.poisson(&rhs, 1e-12).unwrap();
        assert!(res < 1e-12);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        for (a, b) in sol.iter().zip(&w) {
            assert!((a - (b - mean)).abs() < 1e-12);
        }
    }
}
