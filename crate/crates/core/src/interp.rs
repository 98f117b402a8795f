//! Local Lagrange interpolation on uniform tensor grids, clamped or periodic.

use crate::chart::Lattice;

/// Largest supported stencil.
pub const MAX_ORDER: usize = 8;

/// Uniform axis: `count` nodes starting at `origin` with `spacing`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Axis {
    pub origin: f64,
    pub spacing: f64,
    pub count: usize,
    pub periodic: bool,
    /// Nodes per segment when the data are only piecewise smooth with kinks
    /// every `segment` nodes; stencils never cross a kink. Zero for none.
    pub segment: usize,
}

impl Axis {
    pub fn spanning(lo: f64, hi: f64, count: usize) -> Self {
        Axis { origin: lo, spacing: (hi - lo) / (count - 1) as f64, count, periodic: false, segment: 0 }
    }

    pub fn periodic(period: f64, count: usize) -> Self {
        Axis { origin: 0.0, spacing: period / count as f64, count, periodic: true, segment: 0 }
    }

    pub fn node(&self, i: usize) -> f64 {
        self.origin + i as f64 * self.spacing
    }

    /// Grid coordinate of `x` and the first node of its stencil.
    fn stencil_start(&self, x: f64, order: usize) -> (f64, i64) {
        let u = (x - self.origin) / self.spacing;
        let half = (order / 2) as i64;
        let base = u.floor() as i64 - half + 1;
        let start = if self.periodic {
            base
        } else if self.segment > 0 {
            let m = self.segment as i64;
            let last = (self.count as i64 - 1) / m - 1;
            let lo = (u.floor() as i64).div_euclid(m).clamp(0, last) * m;
            base.clamp(lo, lo + m + 1 - order as i64)
        } else {
            base.clamp(0, self.count as i64 - order as i64)
        };
        (u, start)
    }

    /// Value weights only, without allocating.
    fn value_weights(&self, x: f64, order: usize) -> ([usize; MAX_ORDER], [f64; MAX_ORDER]) {
        let (u, start) = self.stencil_start(x, order);
        let n = self.count as i64;
        let mut idx = [0usize; MAX_ORDER];
        let mut w = [0.0; MAX_ORDER];
        for a in 0..order {
            idx[a] = (start + a as i64).rem_euclid(n) as usize;
            let ta = (start + a as i64) as f64;
            let mut num = 1.0;
            let mut den = 1.0;
            for b in 0..order {
                if b != a {
                    let tb = (start + b as i64) as f64;
                    num *= u - tb;
                    den *= ta - tb;
                }
            }
            w[a] = num / den;
        }
        (idx, w)
    }

    /// Stencil node indices and Lagrange weights (and derivative weights) of
    /// the `order`-point rule around `x`.
    pub fn weights(&self, x: f64, order: usize) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
        let (u, start) = self.stencil_start(x, order);
        let n = self.count as i64;
        let mut idx = Vec::with_capacity(order);
        let mut ts = Vec::with_capacity(order);
        for k in 0..order as i64 {
            let j = start + k;
            ts.push(j as f64);
            idx.push(j.rem_euclid(n) as usize);
        }
        let mut w = vec![0.0; order];
        let mut dw = vec![0.0; order];
        for a in 0..order {
            let mut num = 1.0;
            let mut den = 1.0;
            for b in 0..order {
                if b != a {
                    num *= u - ts[b];
                    den *= ts[a] - ts[b];
                }
            }
            w[a] = num / den;
            // derivative of the basis polynomial in u
            let mut d = 0.0;
            for c in 0..order {
                if c == a {
                    continue;
                }
                let mut p = 1.0;
                for b in 0..order {
                    if b != a && b != c {
                        p *= u - ts[b];
                    }
                }
                d += p;
            }
            dw[a] = d / den / self.spacing;
        }
        (idx, w, dw)
    }
}

/// Axes of a [`Lattice`] (periodic lattices give periodic axes).
pub fn lattice_axes(lat: &Lattice) -> Vec<Axis> {
    (0..lat.dim())
        .map(|a| Axis { origin: lat.origin[a], spacing: lat.spacing[a], count: lat.counts[a], periodic: lat.periodic, segment: 0 })
        .collect()
}

/// Scalar data on a tensor grid (row-major, last axis fastest).
#[derive(Clone, Debug)]
pub struct GridInterpolant {
    pub axes: Vec<Axis>,
    pub values: Vec<f64>,
    pub order: usize,
}

impl GridInterpolant {
    pub fn new(axes: Vec<Axis>, values: Vec<f64>, order: usize) -> Self {
        debug_assert_eq!(axes.iter().map(|a| a.count).product::<usize>(), values.len());
        GridInterpolant { axes, values, order }
    }

    /// Value and gradient at `x`.
    pub fn eval_with_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let dim = self.axes.len();
        if dim == 0 {
            return (self.values[0], Vec::new());
        }
        let stencils: Vec<_> = self.axes.iter().zip(x).map(|(a, &xi)| a.weights(xi, self.order)).collect();
        let mut strides = vec![1usize; dim];
        for a in (0..dim.saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * self.axes[a + 1].count;
        }
        let mut value = 0.0;
        let mut grad = vec![0.0; dim];
        let total = self.order.pow(dim as u32);
        let mut digits = vec![0usize; dim];
        for _ in 0..total {
            let mut flat = 0;
            let mut w = 1.0;
            for a in 0..dim {
                flat += stencils[a].0[digits[a]] * strides[a];
                w *= stencils[a].1[digits[a]];
            }
            let v = self.values[flat];
            value += w * v;
            for (g, gr) in grad.iter_mut().enumerate() {
                let mut dw = 1.0;
                for a in 0..dim {
                    dw *= if a == g { stencils[a].2[digits[a]] } else { stencils[a].1[digits[a]] };
                }
                *gr += dw * v;
            }
            for a in (0..dim).rev() {
                digits[a] += 1;
                if digits[a] < self.order {
                    break;
                }
                digits[a] = 0;
            }
        }
        (value, grad)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let dim = self.axes.len();
        if dim == 0 {
            return self.values[0];
        }
        debug_assert!(self.order <= MAX_ORDER && dim <= 8);
        let mut idx = [[0usize; MAX_ORDER]; 8];
        let mut w = [[0.0; MAX_ORDER]; 8];
        let mut strides = [1usize; 8];
        for a in 0..dim {
            (idx[a], w[a]) = self.axes[a].value_weights(x[a], self.order);
        }
        for a in (0..dim - 1).rev() {
            strides[a] = strides[a + 1] * self.axes[a + 1].count;
        }
        // contract the last axis first, one row of the stencil at a time
        let total = self.order.pow(dim as u32 - 1);
        let last = dim - 1;
        let mut digits = [0usize; 8];
        let mut value = 0.0;
        for _ in 0..total {
            let mut base = 0;
            let mut wl = 1.0;
            for a in 0..last {
                base += idx[a][digits[a]] * strides[a];
                wl *= w[a][digits[a]];
            }
            let mut row = 0.0;
            for k in 0..self.order {
                row += w[last][k] * self.values[base + idx[last][k]];
            }
            value += wl * row;
            for a in (0..last).rev() {
                digits[a] += 1;
                if digits[a] < self.order {
                    break;
                }
                digits[a] = 0;
            }
        }
        value
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_polynomials() {
        let ax = Axis::spanning(0.0, 1.0, 11);
        let vals: Vec<f64> = (0..11).map(|i| ax.node(i).powi(5) - 2.0 * ax.node(i)).collect();
        let g = GridInterpolant::new(vec![ax], vals, 8);
        for x in [0.0, 0.03, 0.5, 0.97, 1.0] {
            let (v, d) = g.eval_with_gradient(&[x]);
            assert!((v - (x.powi(5) - 2.0 * x)).abs() < 1e-13);
            assert!((d[0] - (5.0 * x.powi(4) - 2.0)).abs() < 1e-11);
        }
    }

    #[test]
    fn value_path_matches_gradient_path() {
        let axes = vec![Axis::spanning(0.0, 1.0, 9), Axis::periodic(2.0, 12), Axis::spanning(-1.0, 1.0, 7)];
        let vals: Vec<f64> = (0..9 * 12 * 7).map(|k| ((k * 37) % 101) as f64 / 101.0).collect();
        let g = GridInterpolant::new(axes, vals, 6);
        for x in [[0.0, 0.0, -1.0], [0.31, 1.93, 0.2], [1.0, -0.4, 1.0], [0.77, 5.1, -0.35]] {
            assert!((g.eval(&x) - g.eval_with_gradient(&x).0).abs() < 1e-13);
        }
    }

    #[test]
    fn segments_reproduce_piecewise_polynomials() {
        // a kink at x = 0.5, node 10 of 21
        let f = |x: f64| (x - 0.5).abs() * x;
        let ax = Axis { segment: 10, ..Axis::spanning(0.0, 1.0, 21) };
        let g = GridInterpolant::new(vec![ax], (0..21).map(|i| f(ax.node(i))).collect(), 8);
        for x in [0.0, 0.13, 0.49, 0.5, 0.51, 0.88, 1.0] {
            assert!((g.eval(&[x]) - f(x)).abs() < 1e-14, "{x}");
        }
    }

    #[test]
    fn periodic_trig() {
        let n = 32;
        let ax = Axis::periodic(1.0, n);
        let f = |x: f64, y: f64| (std::f64::consts::TAU * x).sin() * (std::f64::consts::TAU * y).cos();
        let mut vals = Vec::new();
        for i in 0..n {
            for j in 0..n {
                vals.push(f(ax.node(i), ax.node(j)));
            }
        }
        let g = GridInterpolant::new(vec![ax, ax], vals, 8);
        let (x, y) = (0.987, 0.0123);
        assert!((g.eval(&[x, y]) - f(x, y)).abs() < 1e-9);
    }
}
