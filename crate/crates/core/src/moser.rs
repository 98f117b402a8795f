//! Volume equalization.
//!
//! [`local_moser`] builds the axis-by-axis map on a box: stage `s` moves only
//! `x_s`, rebalancing the mass on every `x_s`-segment between two
//! intermediate densities. With `D = f - g`, `I_s` the integral of `D` over
//! the first `s` coordinates and `k` a cutoff of unit mass supported inside
//! the collar, the intermediates are `rho_s = g + prod_{i<=s} k(x_i) I_s`;
//! `rho_0 = f`, `rho_n = g`, consecutive ones have equal segment masses and
//! all of them equal `g` near the boundary.
//!
//! [`global_moser`] is the Moser flow on a periodic box, with the vector field
//! `grad w / rho_t` from a spectral Poisson solve.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chart::Lattice;
use crate::error::{IsoflowError, Result};
use crate::interp::{lattice_axes, Axis, GridInterpolant};
use crate::ode::rk4_fixed;
use crate::profile::{step, step_derivative};
use crate::quadrature::gauss_legendre;
use crate::spectral::PeriodicGrid;

const TABLE_ORDER: usize = 8;

pub type DensityFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Positive density sampled on a lattice, optionally with an exact evaluator
/// used off the nodes.
#[derive(Clone, Serialize, Deserialize)]
pub struct DensityField {
    pub lattice: Lattice,
    pub values: Vec<f64>,
    /// Width of the boundary band where densities are pinned (box domains).
    #[serde(default)]
    pub collar: f64,
    #[serde(skip)]
    exact: Option<DensityFn>,
    #[serde(skip)]
    interp: Option<Arc<GridInterpolant>>,
}

impl std::fmt::Debug for DensityField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DensityField")
            .field("lattice", &self.lattice)
            .field("collar", &self.collar)
            .field("exact", &self.exact.is_some())
            .finish()
    }
}

impl DensityField {
    pub fn from_fn(lattice: Lattice, collar: f64, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Result<Self> {
        let values: Vec<f64> = (0..lattice.len()).map(|k| f(&lattice.point(&lattice.multi(k)))).collect();
        let mut d = DensityField { lattice, values, collar, exact: Some(Arc::new(f)), interp: None };
        d.check()?;
        d.build_interp();
        Ok(d)
    }

    pub fn from_values(lattice: Lattice, values: Vec<f64>, collar: f64) -> Result<Self> {
        if values.len() != lattice.len() {
            return Err(IsoflowError::Config(format!(
                "density has {} values for {} nodes",
                values.len(),
                lattice.len()
            )));
        }
        let mut d = DensityField { lattice, values, collar, exact: None, interp: None };
        d.check()?;
        d.build_interp();
        Ok(d)
    }

    /// Re-establish the interpolant after deserialization.
    pub fn restore(mut self) -> Result<Self> {
        self.check()?;
        self.build_interp();
        Ok(self)
    }

    fn check(&self) -> Result<()> {
        let min = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        if !(min > 0.0) {
            return Err(IsoflowError::InvalidDensity { min });
        }
        Ok(())
    }

    fn build_interp(&mut self) {
        let order = 8.min(self.lattice.counts.iter().copied().min().unwrap_or(2));
        if self.lattice.periodic && self.exact.is_none() {
            // node-only periodic data: read as the trigonometric interpolant,
            // resampled finely enough that the local stencil adds nothing
            let lat = &self.lattice;
            let periods: Vec<f64> = lat.spacing.iter().zip(&lat.counts).map(|(h, n)| h * *n as f64).collect();
            let factor = [4usize, 2].into_iter().find(|f| lat.len() * f.pow(lat.dim() as u32) <= 1 << 22).unwrap_or(1);
            let grid = PeriodicGrid { counts: lat.counts.clone(), periods: periods.clone() };
            let (fine, values) = grid.upsample(&self.values, factor);
            let axes = fine.counts.iter().zip(&periods).map(|(&n, &p)| Axis::periodic(p, n)).collect();
            self.interp = Some(Arc::new(GridInterpolant::new(axes, values, order)));
            return;
        }
        self.interp = Some(Arc::new(GridInterpolant::new(lattice_axes(&self.lattice), self.values.clone(), order)));
    }

    pub fn has_exact(&self) -> bool {
        self.exact.is_some()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        if let Some(f) = &self.exact {
            return f(x);
        }
        self.interp.as_ref().expect("interpolant built on construction").eval(x)
    }

    /// Node quadrature: rectangle rule when periodic, trapezoid otherwise.
    pub fn mass(&self) -> f64 {
        let lat = &self.lattice;
        let cell: f64 = lat.spacing.iter().product();
        (0..lat.len())
            .map(|k| {
                let idx = lat.multi(k);
                let w: f64 = if lat.periodic {
                    1.0
                } else {
                    idx.iter().zip(&lat.counts).map(|(&i, &n)| if i == 0 || i + 1 == n { 0.5 } else { 1.0 }).product()
                };
                w * self.values[k]
            })
            .sum::<f64>()
            * cell
    }
}

/// `lambda = mass(pullback) / mass(reference)` on a shared lattice.
pub fn mass_ratio(omega_plus_pullback: &DensityField, omega_minus: &DensityField) -> Result<f64> {
    if omega_plus_pullback.lattice != omega_minus.lattice {
        return Err(IsoflowError::Config("mass ratio needs densities on the same lattice".into()));
    }
    Ok(omega_plus_pullback.mass() / omega_minus.mass())
}

/// A map sampled at nodes, with its Jacobian determinant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffeoGrid {
    pub nodes: Vec<Vec<f64>>,
    pub map: Vec<Vec<f64>>,
    pub jacobian_det: Vec<f64>,
}

impl DiffeoGrid {
    pub fn identity(nodes: Vec<Vec<f64>>) -> Self {
        let n = nodes.len();
        DiffeoGrid { map: nodes.clone(), nodes, jacobian_det: vec![1.0; n] }
    }

    pub fn min_det(&self) -> f64 {
        self.jacobian_det.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_displacement(&self) -> f64 {
        self.nodes
            .iter()
            .zip(&self.map)
            .map(|(x, y)| x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max)
    }
}

// ---------------------------------------------------------------- local

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalMoserOptions {
    /// Support of the unit-mass cutoff `k`, as fractions of each axis; must
    /// lie inside the collar.
    pub cutoff: (f64, f64),
    /// Gauss cells (eight nodes each) per unit fraction of an axis.
    pub quad_cells: usize,
    /// Nodes per axis of the tabulated partial integrals.
    pub table_points: usize,
    /// Step of the FD Jacobian, as a fraction of the axis length.
    pub fd_step: f64,
    pub mass_tolerance: f64,
}

impl Default for LocalMoserOptions {
    fn default() -> Self {
        LocalMoserOptions { cutoff: (0.2, 0.8), quad_cells: 48, table_points: 513, fd_step: 5e-4, mass_tolerance: 1e-10 }
    }
}

/// The stagewise map of a local Moser problem, evaluable anywhere in the box.
pub struct LocalMoserMap {
    f: DensityField,
    g: DensityField,
    lo: Vec<f64>,
    hi: Vec<f64>,
    opts: LocalMoserOptions,
    gl: (Vec<f64>, Vec<f64>),
    /// `partial[s-2]`: `I_s` over the trailing `n - s` axes (1 < s < n).
    partial: Vec<GridInterpolant>,
    /// `cumulative[s-2]`: `C_s(x_s; x_>s)`, the integral of `I_{s-1}` from the
    /// lower face to `x_s` (s >= 2).
    cumulative: Vec<GridInterpolant>,
    total: f64,
}

impl LocalMoserMap {
    fn dim(&self) -> usize {
        self.lo.len()
    }

    fn diff(&self, x: &[f64]) -> f64 {
        self.f.eval(x) - self.g.eval(x)
    }

    fn cutoff(&self, axis: usize, x: f64) -> f64 {
        let (a, b) = self.cutoff_interval(axis);
        step_derivative(x, a, b)
    }

    fn cutoff_mass(&self, axis: usize, x: f64) -> f64 {
        let (a, b) = self.cutoff_interval(axis);
        step(x, a, b)
    }

    fn cutoff_interval(&self, axis: usize) -> (f64, f64) {
        let len = self.hi[axis] - self.lo[axis];
        (self.lo[axis] + self.opts.cutoff.0 * len, self.lo[axis] + self.opts.cutoff.1 * len)
    }

    /// Composite Gauss rule on `[a, b]` with cell count scaled to the length.
    /// Node-only densities are piecewise polynomials between lattice nodes,
    /// so their cells break at the nodes and each piece integrates exactly.
    fn line_integral(&self, axis: usize, a: f64, b: f64, f: &mut dyn FnMut(f64) -> f64) -> f64 {
        if a == b {
            return 0.0;
        }
        if self.f.has_exact() && self.g.has_exact() {
            return self.gauss_cells(axis, a, b, f);
        }
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let h = self.f.lattice.spacing[axis];
        let origin = self.lo[axis];
        let mut cuts = vec![lo];
        let first = ((lo - origin) / h).floor() as i64 + 1;
        let mut k = first;
        loop {
            let node = origin + k as f64 * h;
            if node >= hi - 1e-14 * h {
                break;
            }
            cuts.push(node);
            k += 1;
        }
        cuts.push(hi);
        let total: f64 = cuts.windows(2).map(|w| self.gauss_cells(axis, w[0], w[1], f)).sum();
        if a < b {
            total
        } else {
            -total
        }
    }

    fn gauss_cells(&self, axis: usize, a: f64, b: f64, f: &mut dyn FnMut(f64) -> f64) -> f64 {
        if a == b {
            return 0.0;
        }
        let len = self.hi[axis] - self.lo[axis];
        let cells = ((self.opts.quad_cells as f64 * (b - a).abs() / len).ceil() as usize).max(1);
        let h = (b - a) / cells as f64;
        let (xs, ws) = &self.gl;
        let mut total = 0.0;
        for c in 0..cells {
            let mid = a + (c as f64 + 0.5) * h;
            let mut part = 0.0;
            for (x, w) in xs.iter().zip(ws) {
                part += w * f(mid + 0.5 * h * x);
            }
            total += 0.5 * h * part;
        }
        total
    }

    /// Integral of `D` over the leading `s` axes at fixed trailing coordinates.
    fn leading_integral(&self, s: usize, trailing: &[f64]) -> f64 {
        let n = self.dim();
        let mut point = vec![0.0; n];
        point[s..].copy_from_slice(trailing);
        self.nested(s, 0, &mut point)
    }

    fn nested(&self, s: usize, axis: usize, point: &mut [f64]) -> f64 {
        if axis == s {
            return self.diff(point);
        }
        let (lo, hi) = (self.lo[axis], self.hi[axis]);
        let mut p = point.to_vec();
        self.line_integral(axis, lo, hi, &mut |t| {
            p[axis] = t;
            self.nested(s, axis + 1, &mut p)
        })
    }

    /// Node-only densities are smooth only inside lattice cells, so the map
    /// has second-derivative jumps wherever an input or output coordinate
    /// crosses a node.
    fn piecewise(&self) -> bool {
        !(self.f.has_exact() && self.g.has_exact())
    }

    /// Whether a lattice node of `axis` lies strictly inside the range of `vals`.
    fn straddles_node(&self, axis: usize, vals: &[f64]) -> bool {
        let lat = &self.f.lattice;
        let (h, o) = (lat.spacing[axis], lat.origin[axis]);
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let k = ((lo - o) / h + 1e-9).floor() + 1.0;
        o + k * h < hi - 1e-9 * h
    }

    /// Fourth-order difference of the map along `j` on the first of the
    /// central, forward and backward stencils whose points stay inside one
    /// lattice cell in every input and output coordinate.
    fn fd_column_within_cells(&self, x: &[f64], j: usize, h: f64) -> Result<Vec<f64>> {
        const STENCILS: [(&[f64], &[f64]); 3] = [
            (&[1.0, -1.0, 2.0, -2.0], &[8.0, -8.0, -1.0, 1.0]),
            (&[0.0, 1.0, 2.0, 3.0, 4.0], &[-25.0, 48.0, -36.0, 16.0, -3.0]),
            (&[0.0, -1.0, -2.0, -3.0, -4.0], &[25.0, -48.0, 36.0, -16.0, 3.0]),
        ];
        let (lo, hi) = (self.lo[j], self.hi[j]);
        let mut fallback = None;
        for (offsets, coefs) in STENCILS {
            let (omin, omax) = offsets.iter().fold((0.0f64, 0.0f64), |(a, b), &o| (a.min(o), b.max(o)));
            if x[j] + omin * h < lo || x[j] + omax * h > hi {
                continue;
            }
            let points: Vec<Vec<f64>> = offsets
                .iter()
                .map(|o| {
                    let mut p = x.to_vec();
                    p[j] += o * h;
                    p
                })
                .collect();
            let images = points.iter().map(|p| self.apply(p)).collect::<Result<Vec<_>>>()?;
            let mut inputs: Vec<f64> = points.iter().map(|p| p[j]).collect();
            inputs.push(x[j]);
            let clean = !self.straddles_node(j, &inputs)
                && (0..x.len()).all(|c| !self.straddles_node(c, &images.iter().map(|y| y[c]).collect::<Vec<_>>()));
            let col: Vec<f64> = (0..x.len())
                .map(|c| images.iter().zip(coefs).map(|(y, w)| w * y[c]).sum::<f64>() / (12.0 * h))
                .collect();
            if clean {
                return Ok(col);
            }
            fallback.get_or_insert(col);
        }
        // every stencil crosses a node: a cell narrower than the stencil
        fallback.ok_or_else(|| IsoflowError::Config("difference stencil does not fit in the box".into()))
    }

    fn table_axes(&self, from: usize) -> Vec<Axis> {
        let tabulated = self.piecewise();
        (from..self.dim())
            .map(|a| {
                if !tabulated {
                    return Axis::spanning(self.lo[a], self.hi[a], self.opts.table_points);
                }
                // integrals of node-only densities kink at the lattice nodes:
                // put table nodes on them and keep stencils inside one cell
                let cells = self.f.lattice.counts[a] - 1;
                let m = (self.opts.table_points - 1).div_ceil(cells).max(TABLE_ORDER - 1);
                Axis { segment: m, ..Axis::spanning(self.lo[a], self.hi[a], m * cells + 1) }
            })
            .collect()
    }

    /// Cumulative tables `C_s` for `s >= 2`; `I_s` is the upper-face slice of
    /// `C_s`, so the two agree exactly wherever the cutoff has saturated.
    fn tabulate(&mut self) {
        let n = self.dim();
        let order = TABLE_ORDER.min(self.opts.table_points);
        if n == 1 {
            self.total = self.leading_integral(1, &[]);
            return;
        }
        for s in 2..=n {
            let axes = self.table_axes(s - 1);
            let ax = axes[0];
            let rest: Vec<Axis> = axes[1..].to_vec();
            let rest_pts = grid_points(&rest);
            let m = rest_pts.len();
            let columns: Vec<Vec<f64>> = rest_pts
                .par_iter()
                .map(|tail| {
                    let mut col = vec![0.0; ax.count];
                    let mut p = vec![0.0; 1 + tail.len()];
                    p[1..].copy_from_slice(tail);
                    for j in 1..ax.count {
                        let (a, b) = (ax.node(j - 1), ax.node(j));
                        col[j] = col[j - 1]
                            + self.line_integral(s - 1, a, b, &mut |t| {
                                p[0] = t;
                                self.partial_at(s - 1, &p)
                            });
                    }
                    col
                })
                .collect();
            let mut vals = vec![0.0; ax.count * m];
            for (r, col) in columns.iter().enumerate() {
                for (j, v) in col.iter().enumerate() {
                    vals[j * m + r] = *v;
                }
            }
            let upper = vals[(ax.count - 1) * m..].to_vec();
            self.cumulative.push(GridInterpolant::new(axes, vals, order));
            if s < n {
                self.partial.push(GridInterpolant::new(rest, upper, order));
            } else {
                self.total = upper[0];
            }
        }
    }

    fn partial_at(&self, s: usize, trailing: &[f64]) -> f64 {
        if s == self.dim() {
            self.total
        } else if s == 1 {
            self.leading_integral(1, trailing)
        } else {
            self.partial[s - 2].eval(trailing)
        }
    }

    fn cumulative_at(&self, s: usize, y: &[f64]) -> f64 {
        if s == 1 {
            let mut p = y.to_vec();
            return self.line_integral(0, self.lo[0], y[0], &mut |t| {
                p[0] = t;
                self.diff(&p)
            });
        }
        self.cumulative[s - 2].eval(&y[s - 1..])
    }

    /// Apply stage `s` (1-based) to `y`, returning the new `x_s`.
    pub fn stage(&self, s: usize, y: &[f64]) -> Result<f64> {
        let a = s - 1;
        let weight: f64 = (0..a).map(|i| self.cutoff(i, y[i])).product();
        let is = self.partial_at(s, &y[s..]);
        let mut p = y.to_vec();
        let mut g_line = |t: f64| {
            p[a] = t;
            self.g.eval(&p)
        };
        let rhs = self.line_integral(a, self.lo[a], y[a], &mut g_line) + weight * self.cumulative_at(s, y);
        let residual = |v: f64, pp: &mut Vec<f64>| -> (f64, f64) {
            let mut line = |t: f64| {
                pp[a] = t;
                self.g.eval(pp)
            };
            let val = self.line_integral(a, self.lo[a], v, &mut line) + weight * self.cutoff_mass(a, v) * is - rhs;
            pp[a] = v;
            let rho = self.g.eval(pp) + weight * self.cutoff(a, v) * is;
            (val, rho)
        };
        let mut v = y[a];
        let (mut lo, mut hi) = (self.lo[a], self.hi[a]);
        let scale = (self.hi[a] - self.lo[a]) * 1e-15;
        for _ in 0..60 {
            let (r, rho) = residual(v, &mut p);
            if !(rho > 0.0) {
                return Err(IsoflowError::InvalidDensity { min: rho });
            }
            if r > 0.0 {
                hi = v;
            } else {
                lo = v;
            }
            let mut next = v - r / rho;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - v).abs() <= scale {
                return Ok(next);
            }
            v = next;
        }
        Err(IsoflowError::SolverFailure { message: format!("stage {s} rebalancing did not converge"), residual: residual(v, &mut p).0 })
    }

    /// Intermediate points `y_0 = x, y_1, ..., y_n = psi(x)`.
    pub fn stages(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mut out = vec![x.to_vec()];
        let mut y = x.to_vec();
        for s in 1..=self.dim() {
            y[s - 1] = self.stage(s, &y)?;
            out.push(y.clone());
        }
        Ok(out)
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.stages(x)?.pop().expect("nonempty"))
    }

    /// Fourth-order FD Jacobian of `psi` (one-sided within two steps of a
    /// face).
    pub fn jacobian(&self, x: &[f64]) -> Result<nalgebra::DMatrix<f64>> {
        let n = self.dim();
        let mut jac = nalgebra::DMatrix::zeros(n, n);
        for j in 0..n {
            let h = self.opts.fd_step * (self.hi[j] - self.lo[j]);
            let col = if self.piecewise() {
                self.fd_column_within_cells(x, j, h)?
            } else {
                fd_column(x, j, h, self.lo[j], self.hi[j], &|p| self.apply(p))?
            };
            for i in 0..n {
                jac[(i, j)] = col[i];
            }
        }
        Ok(jac)
    }

    /// The pushforward residual `g(psi) det Dpsi - f` at `x`.
    pub fn residual_at(&self, x: &[f64]) -> Result<f64> {
        let y = self.apply(x)?;
        let det = self.jacobian(x)?.determinant();
        Ok(self.g.eval(&y) * det - self.f.eval(x))
    }

    /// FD derivative of stage `s` in its own coordinate at `x`.
    pub fn stage_derivative(&self, s: usize, x: &[f64]) -> Result<f64> {
        let y = self.stages(x)?.swap_remove(s - 1);
        let a = s - 1;
        let h = self.opts.fd_step * (self.hi[a] - self.lo[a]);
        let col = fd_column(&y, a, h, self.lo[a], self.hi[a], &|p| Ok(vec![self.stage(s, p)?]))?;
        Ok(col[0])
    }

    pub fn total_mass_difference(&self) -> f64 {
        self.total
    }
}

fn grid_points(axes: &[Axis]) -> Vec<Vec<f64>> {
    let mut pts = vec![Vec::new()];
    for ax in axes {
        pts = pts
            .into_iter()
            .flat_map(|p| {
                (0..ax.count).map(move |i| {
                    let mut q = p.clone();
                    q.push(ax.node(i));
                    q
                })
            })
            .collect();
    }
    pts
}

/// Fourth-order derivative of a vector map along axis `j`, central when the
/// stencil fits in `[lo, hi]` and one-sided otherwise.
fn fd_column(
    x: &[f64],
    j: usize,
    h: f64,
    lo: f64,
    hi: f64,
    map: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
) -> Result<Vec<f64>> {
    let at = |s: f64| -> Result<Vec<f64>> {
        let mut p = x.to_vec();
        p[j] += s * h;
        map(&p)
    };
    let combine = |coefs: &[(f64, f64)], denom: f64| -> Result<Vec<f64>> {
        let mut acc: Option<Vec<f64>> = None;
        for &(s, c) in coefs {
            let v = at(s)?;
            let a = acc.get_or_insert_with(|| vec![0.0; v.len()]);
            for (ai, vi) in a.iter_mut().zip(&v) {
                *ai += c * vi;
            }
        }
        Ok(acc.expect("stencil nonempty").into_iter().map(|v| v / denom).collect())
    };
    if x[j] - 2.0 * h >= lo && x[j] + 2.0 * h <= hi {
        combine(&[(1.0, 8.0), (-1.0, -8.0), (2.0, -1.0), (-2.0, 1.0)], 12.0 * h)
    } else if x[j] + 4.0 * h <= hi {
        combine(&[(0.0, -25.0), (1.0, 48.0), (2.0, -36.0), (3.0, 16.0), (4.0, -3.0)], 12.0 * h)
    } else {
        combine(&[(0.0, 25.0), (-1.0, -48.0), (-2.0, 36.0), (-3.0, -16.0), (-4.0, 3.0)], 12.0 * h)
    }
}

/// Certificates of one local Moser solve on the density lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalMoserReport {
    pub residual: f64,
    /// Minimum FD derivative of each stage in its own coordinate.
    pub stage_min_derivative: Vec<f64>,
    /// Largest displacement of collar nodes.
    pub collar_displacement: f64,
    pub mass_difference: f64,
}

pub struct LocalMoser {
    pub map: LocalMoserMap,
    pub grid: DiffeoGrid,
    pub report: LocalMoserReport,
}

/// Solve `g(psi) det Dpsi = f` on the box spanned by the lattice of `f`.
pub fn local_moser(f: &DensityField, g: &DensityField, opts: &LocalMoserOptions) -> Result<LocalMoser> {
    if f.lattice != g.lattice || f.lattice.periodic {
        return Err(IsoflowError::Config("local Moser needs both densities on one box lattice".into()));
    }
    let lat = &f.lattice;
    let lo = lat.origin.clone();
    let hi = lat.upper();
    let collar = f.collar.max(g.collar);
    for (a, (&l, &h)) in lo.iter().zip(&hi).enumerate() {
        let len = h - l;
        if !(opts.cutoff.0 * len >= collar && (1.0 - opts.cutoff.1) * len >= collar && opts.cutoff.0 < opts.cutoff.1) {
            return Err(IsoflowError::Config(format!("cutoff support leaves the interior of axis {a}")));
        }
    }
    let mut deviation = 0.0f64;
    for k in 0..lat.len() {
        let x = lat.point(&lat.multi(k));
        if in_collar(&x, &lo, &hi, collar) {
            deviation = deviation.max((f.values[k] - g.values[k]).abs());
        }
    }
    if deviation > 1e-12 {
        return Err(IsoflowError::CollarMismatch { deviation });
    }
    let mut map = LocalMoserMap {
        f: f.clone(),
        g: g.clone(),
        lo: lo.clone(),
        hi: hi.clone(),
        opts: *opts,
        gl: gauss_legendre(8),
        partial: Vec::new(),
        cumulative: Vec::new(),
        total: 0.0,
    };
    // mass check before the expensive tables
    let total = map.leading_integral(lo.len(), &[]);
    let mass_f = map.line_integral_total(f);
    if total.abs() > opts.mass_tolerance * mass_f.abs().max(1.0) {
        return Err(IsoflowError::UnbalancedMass { mass_f, mass_g: mass_f - total });
    }
    map.tabulate();
    let n = lo.len();
    let nodes: Vec<Vec<f64>> = (0..lat.len()).map(|k| lat.point(&lat.multi(k))).collect();
    let rows: Vec<Result<(Vec<f64>, f64, f64, Vec<f64>)>> = nodes
        .par_iter()
        .map(|x| {
            let y = map.apply(x)?;
            let det = map.jacobian(x)?.determinant();
            let res = (map.g.eval(&y) * det - map.f.eval(x)).abs();
            let stage_d = (1..=n).map(|s| map.stage_derivative(s, x)).collect::<Result<Vec<_>>>()?;
            Ok((y, det, res, stage_d))
        })
        .collect();
    let mut grid = DiffeoGrid { nodes: nodes.clone(), map: Vec::with_capacity(nodes.len()), jacobian_det: Vec::new() };
    let mut residual = 0.0f64;
    let mut stage_min = vec![f64::INFINITY; n];
    let mut collar_disp = 0.0f64;
    for (x, row) in nodes.iter().zip(rows) {
        let (y, det, res, sd) = row?;
        residual = residual.max(res);
        for (m, d) in stage_min.iter_mut().zip(&sd) {
            *m = m.min(*d);
        }
        if in_collar(x, &lo, &hi, collar) {
            collar_disp = collar_disp.max(x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        }
        grid.map.push(y);
        grid.jacobian_det.push(det);
    }
    let report = LocalMoserReport {
        residual,
        stage_min_derivative: stage_min,
        collar_displacement: collar_disp,
        mass_difference: map.total,
    };
    Ok(LocalMoser { map, grid, report })
}

impl LocalMoserMap {
    fn line_integral_total(&self, d: &DensityField) -> f64 {
        let n = self.dim();
        let mut point = vec![0.0; n];
        self.nested_of(d, 0, &mut point)
    }

    fn nested_of(&self, d: &DensityField, axis: usize, point: &mut [f64]) -> f64 {
        if axis == self.dim() {
            return d.eval(point);
        }
        let mut p = point.to_vec();
        self.line_integral(axis, self.lo[axis], self.hi[axis], &mut |t| {
            p[axis] = t;
            self.nested_of(d, axis + 1, &mut p)
        })
    }
}

fn in_collar(x: &[f64], lo: &[f64], hi: &[f64], collar: f64) -> bool {
    x.iter().zip(lo.iter().zip(hi)).any(|(&v, (&l, &h))| v - l < collar || h - v < collar)
}

// ---------------------------------------------------------------- global

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalMoserOptions {
    pub steps: usize,
    pub poisson_tolerance: f64,
    pub mass_tolerance: f64,
}

impl Default for GlobalMoserOptions {
    fn default() -> Self {
        GlobalMoserOptions { steps: 128, poisson_tolerance: 1e-12, mass_tolerance: 1e-10 }
    }
}

pub struct GlobalMoser {
    pub grid: DiffeoGrid,
    /// `psi - id` and its spectral gradient components, for off-node use.
    pub displacement: Vec<GridInterpolant>,
    pub jacobian: Vec<Vec<GridInterpolant>>,
    pub residual: f64,
    pub poisson_residual: f64,
    pub min_det_over_flow: f64,
}

impl GlobalMoser {
    /// `psi(x)` off the nodes (not reduced modulo the periods).
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.displacement).map(|(xi, d)| xi + d.eval(x)).collect()
    }

    pub fn jacobian_at(&self, x: &[f64]) -> nalgebra::DMatrix<f64> {
        let n = x.len();
        nalgebra::DMatrix::from_fn(n, n, |i, j| self.jacobian[i][j].eval(x) + if i == j { 1.0 } else { 0.0 })
    }
}

fn wrap(x: &[f64], periods: &[f64]) -> Vec<f64> {
    x.iter().zip(periods).map(|(v, p)| v.rem_euclid(*p)).collect()
}

/// Moser flow for `psi^* tau = sigma` on a periodic box.
pub fn global_moser(tau: &DensityField, sigma: &DensityField, opts: &GlobalMoserOptions) -> Result<GlobalMoser> {
    let lat = &tau.lattice;
    if !lat.periodic || *lat != sigma.lattice {
        return Err(IsoflowError::Config("global Moser needs both densities on one periodic lattice".into()));
    }
    let (mt, ms) = (tau.mass(), sigma.mass());
    if (mt - ms).abs() > opts.mass_tolerance * mt.abs().max(ms.abs()) {
        return Err(IsoflowError::UnbalancedMass { mass_f: mt, mass_g: ms });
    }
    let dim = lat.dim();
    let periods: Vec<f64> = (0..dim).map(|a| lat.spacing[a] * lat.counts[a] as f64).collect();
    let grid = PeriodicGrid { counts: lat.counts.clone(), periods: periods.clone() };
    let rhs: Vec<f64> = sigma.values.iter().zip(&tau.values).map(|(s, t)| s - t).collect();
    let (w, poisson_residual) = grid.poisson(&rhs, opts.poisson_tolerance)?;
    let axes = lattice_axes(lat);
    let grad: Vec<GridInterpolant> =
        (0..dim).map(|a| GridInterpolant::new(axes.clone(), grid.derivative(&w, a), 8)).collect();
    let nodes: Vec<Vec<f64>> = (0..lat.len()).map(|k| lat.point(&lat.multi(k))).collect();
    let velocity = |t: f64, y: &[f64], dy: &mut [f64]| {
        for k in 0..y.len() / dim {
            let p = wrap(&y[k * dim..(k + 1) * dim], &periods);
            let rho = (1.0 - t) * sigma.eval(&p) + t * tau.eval(&p);
            for a in 0..dim {
                dy[k * dim + a] = grad[a].eval(&p) / rho;
            }
        }
    };
    let mut state: Vec<f64> = nodes.iter().flatten().copied().collect();
    let dt = 1.0 / opts.steps as f64;
    let mut min_det = f64::INFINITY;
    for step_i in 0..opts.steps {
        let t0 = step_i as f64 * dt;
        // parallel over node chunks; each RK4 step is node-local
        let chunk = dim * 64;
        let next: Vec<Vec<f64>> =
            state.par_chunks(chunk).map(|c| rk4_fixed(velocity, t0, c, t0 + dt, 1)).collect();
        state = next.concat();
        let dets = jacobian_dets(&grid, &nodes, &state, dim);
        let m = dets.iter().copied().fold(f64::INFINITY, f64::min);
        min_det = min_det.min(m);
        if !(m > 0.0) {
            let node = dets.iter().position(|d| !(*d > 0.0)).unwrap_or(0);
            return Err(IsoflowError::Orientation { det: m, node });
        }
    }
    let map: Vec<Vec<f64>> = state.chunks(dim).map(|c| c.to_vec()).collect();
    let disp: Vec<Vec<f64>> = (0..dim).map(|a| map.iter().zip(&nodes).map(|(y, x)| y[a] - x[a]).collect()).collect();
    let mut jac = Vec::with_capacity(dim);
    for da in &disp {
        jac.push((0..dim).map(|b| GridInterpolant::new(axes.clone(), grid.derivative(da, b), 8)).collect::<Vec<_>>());
    }
    let dets = jacobian_dets(&grid, &nodes, &state, dim);
    let residual = map
        .iter()
        .zip(&nodes)
        .zip(&dets)
        .map(|((y, x), d)| (tau.eval(&wrap(y, &periods)) * d - sigma.eval(x)).abs())
        .fold(0.0, f64::max);
    let displacement = disp.into_iter().map(|v| GridInterpolant::new(axes.clone(), v, 8)).collect();
    Ok(GlobalMoser {
        grid: DiffeoGrid { nodes, map, jacobian_det: dets },
        displacement,
        jacobian: jac,
        residual,
        poisson_residual,
        min_det_over_flow: min_det,
    })
}

fn jacobian_dets(grid: &PeriodicGrid, nodes: &[Vec<f64>], state: &[f64], dim: usize) -> Vec<f64> {
    let disp: Vec<Vec<f64>> =
        (0..dim).map(|a| nodes.iter().enumerate().map(|(k, x)| state[k * dim + a] - x[a]).collect()).collect();
    let partials: Vec<Vec<Vec<f64>>> =
        disp.iter().map(|d| (0..dim).map(|b| grid.derivative(d, b)).collect()).collect();
    (0..nodes.len())
        .map(|k| {
            nalgebra::DMatrix::from_fn(dim, dim, |i, j| partials[i][j][k] + if i == j { 1.0 } else { 0.0 }).determinant()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate_adaptive;
    use std::f64::consts::TAU;

    fn unit_lattice(dim: usize, n: usize) -> Lattice {
        Lattice::spanning(&vec![0.0; dim], &vec![1.0; dim], &vec![n; dim]).unwrap()
    }

    /// Zero-mean bump supported in `(0.2, 0.8)`.
    fn w(x: f64) -> f64 {
        crate::profile::bump(x, 0.2, 0.5) - crate::profile::bump(x, 0.5, 0.8)
    }

    #[test]
    fn identity_when_equal() {
        let lat = unit_lattice(2, 9);
        let f = DensityField::from_fn(lat.clone(), 0.1, |x| 1.0 + 0.1 * x[0]).unwrap();
        let out = local_moser(&f, &f, &LocalMoserOptions { table_points: 33, ..Default::default() }).unwrap();
        assert!(out.grid.max_displacement() < 1e-14);
        assert!(out.report.residual < 1e-10);
    }

    #[test]
    fn one_dimensional_matches_root_finding() {
        let lat = unit_lattice(1, 41);
        let c = 0.3;
        let f = DensityField::from_fn(lat.clone(), 0.1, |_| 1.0).unwrap();
        let g = DensityField::from_fn(lat.clone(), 0.1, move |x| 1.0 + c * w(x[0])).unwrap();
        let out = local_moser(&f, &g, &LocalMoserOptions::default()).unwrap();
        let gx = |t: f64| 1.0 + c * w(t);
        for (x, y) in out.grid.nodes.iter().zip(&out.grid.map) {
            // bisection on the cumulative mass of g
            let target = x[0];
            let (mut a, mut b) = (0.0, 1.0);
            for _ in 0..80 {
                let m = 0.5 * (a + b);
                let mass = integrate_adaptive(gx, 0.0, m, 1e-15).unwrap().0;
                if mass < target {
                    a = m;
                } else {
                    b = m;
                }
            }
            assert!((y[0] - 0.5 * (a + b)).abs() < 1e-8, "{x:?} {} {}", y[0], 0.5 * (a + b));
        }
        assert!(out.report.residual < 1e-6);
    }

    #[test]
    fn separable_example_moves_only_y() {
        let lat = unit_lattice(2, 13);
        let k = |x: f64| step_derivative(x, 0.2, 0.8);
        let f = DensityField::from_fn(lat.clone(), 0.1, move |p| 1.0 + 0.5 * k(p[0]) * crate::profile::bump(p[1], 0.25, 0.55)).unwrap();
        let g = DensityField::from_fn(lat, 0.1, move |p| 1.0 + 0.5 * k(p[0]) * crate::profile::bump(p[1], 0.45, 0.75)).unwrap();
        let out = local_moser(&f, &g, &LocalMoserOptions::default()).unwrap();
        assert!(out.report.residual < 1e-6, "{}", out.report.residual);
        assert!(out.report.stage_min_derivative.iter().all(|d| *d > 0.0));
        assert!(out.report.collar_displacement < 1e-10, "{}", out.report.collar_displacement);
        for (x, y) in out.grid.nodes.iter().zip(&out.grid.map) {
            assert!((x[0] - y[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn unbalanced_and_collar_errors() {
        let lat = unit_lattice(1, 21);
        let f = DensityField::from_fn(lat.clone(), 0.1, |_| 1.0).unwrap();
        let g = DensityField::from_fn(lat.clone(), 0.1, |x| 1.0 + 0.1 * crate::profile::bump(x[0], 0.3, 0.7)).unwrap();
        assert!(matches!(local_moser(&f, &g, &LocalMoserOptions::default()), Err(IsoflowError::UnbalancedMass { .. })));
        let h = DensityField::from_fn(lat, 0.1, |x| 1.0 + 0.1 * (TAU * x[0]).sin()).unwrap();
        assert!(matches!(local_moser(&f, &h, &LocalMoserOptions::default()), Err(IsoflowError::CollarMismatch { .. })));
        assert!(matches!(
            DensityField::from_fn(unit_lattice(1, 5), 0.0, |x| x[0] - 0.5),
            Err(IsoflowError::InvalidDensity { .. })
        ));
    }

    #[test]
    fn global_circle_matches_cumulative_mass() {
        let lat = Lattice::periodic(1, 64, 1.0);
        let tau = DensityField::from_fn(lat.clone(), 0.0, |_| 1.0).unwrap();
        let sigma = DensityField::from_fn(lat, 0.0, |x| 1.0 + 0.5 * (TAU * x[0]).sin()).unwrap();
        let out = global_moser(&tau, &sigma, &GlobalMoserOptions::default()).unwrap();
        let psi0 = out.grid.map[0][0];
        for (x, y) in out.grid.nodes.iter().zip(&out.grid.map) {
            let mass = integrate_adaptive(|t| 1.0 + 0.5 * (TAU * t).sin(), 0.0, x[0], 1e-14).unwrap().0;
            assert!((y[0] - psi0 - mass).abs() < 1e-7, "{} {}", y[0] - psi0, mass);
        }
        assert!(out.residual < 1e-6, "{}", out.residual);
    }

    #[test]
    fn mass_ratio_scaling() {
        let lat = Lattice::periodic(2, 8, 1.0);
        let a = DensityField::from_fn(lat.clone(), 0.0, |x| 1.0 + 0.2 * (TAU * x[0]).cos()).unwrap();
        let b = DensityField::from_fn(lat, 0.0, |x| 2.0 + 0.4 * (TAU * x[0]).cos()).unwrap();
        assert!((mass_ratio(&b, &a).unwrap() - 2.0).abs() < 1e-14);
        assert!((mass_ratio(&a, &a).unwrap() - 1.0).abs() < 1e-15);
    }
}
