//! Metric fields over coordinate charts and the finite-difference machinery
//! shared by every certificate: divergence-form Laplace-Beltrami, metric
//! gradient norms, Christoffel symbols, geodesics and sectional curvature.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{IsoflowError, Result};
use crate::ode::{dopri5, OdeOptions, OdeSolution};

/// A Riemannian metric given pointwise in chart coordinates.
pub trait MetricField: Send + Sync {
    fn dim(&self) -> usize;
    fn metric(&self, x: &[f64]) -> Result<DMatrix<f64>>;
}

impl<T: MetricField + ?Sized> MetricField for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn metric(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        (**self).metric(x)
    }
}

/// The flat metric on R^dim.
#[derive(Clone, Copy, Debug)]
pub struct Euclidean(pub usize);

impl MetricField for Euclidean {
    fn dim(&self) -> usize {
        self.0
    }
    fn metric(&self, _x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(DMatrix::identity(self.0, self.0))
    }
}

/// A metric defined by a closure.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&[f64]) -> DMatrix<f64> + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnField { dim, f }
    }
}

impl<F> MetricField for FnField<F>
where
    F: Fn(&[f64]) -> DMatrix<f64> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn metric(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok((self.f)(x))
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(g: &DMatrix<f64>) -> f64 {
    g.clone().symmetric_eigen().eigenvalues.min()
}

pub fn symmetric_defect(g: &DMatrix<f64>) -> f64 {
    (g - g.transpose()).abs().max()
}

/// Inverse of an SPD matrix via Cholesky.
pub fn spd_inverse(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    g.clone().cholesky().map(|c| c.inverse()).ok_or_else(|| IsoflowError::NotPositiveDefinite {
        location: "matrix inversion".into(),
        min_eigenvalue: min_eigenvalue(g),
    })
}

/// Regular lattice over a box, optionally periodic in every axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub origin: Vec<f64>,
    pub spacing: Vec<f64>,
    pub counts: Vec<usize>,
    #[serde(default)]
    pub periodic: bool,
}

impl Lattice {
    /// `counts[i]` nodes spanning `[lo[i], hi[i]]` inclusive.
    pub fn spanning(lo: &[f64], hi: &[f64], counts: &[usize]) -> Result<Self> {
        let mut spacing = Vec::with_capacity(lo.len());
        for i in 0..lo.len() {
            if !(lo[i] < hi[i]) {
                return Err(IsoflowError::InvalidInterval { lo: lo[i], hi: hi[i] });
            }
            if counts[i] < 2 {
                return Err(IsoflowError::Config("lattice needs two nodes per axis".into()));
            }
            spacing.push((hi[i] - lo[i]) / (counts[i] - 1) as f64);
        }
        Ok(Lattice { origin: lo.to_vec(), spacing, counts: counts.to_vec(), periodic: false })
    }

    /// `n` nodes per axis on the periodic box `[0, period)^dim`.
    pub fn periodic(dim: usize, n: usize, period: f64) -> Self {
        Lattice {
            origin: vec![0.0; dim],
            spacing: vec![period / n as f64; dim],
            counts: vec![n; dim],
            periodic: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major flat index; the last axis varies fastest.
    pub fn flat(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.counts).fold(0, |acc, (i, n)| acc * n + i)
    }

    pub fn multi(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            idx[a] = flat % self.counts[a];
            flat /= self.counts[a];
        }
        idx
    }

    pub fn point(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter()
            .enumerate()
            .map(|(a, &i)| self.origin[a] + i as f64 * self.spacing[a])
            .collect()
    }

    /// Neighbor at integer offset, wrapping on periodic lattices.
    pub fn offset(&self, idx: &[usize], off: &[i32]) -> Option<Vec<usize>> {
        let mut out = Vec::with_capacity(idx.len());
        for a in 0..idx.len() {
            let j = idx[a] as i64 + off[a] as i64;
            let n = self.counts[a] as i64;
            if self.periodic {
                out.push(j.rem_euclid(n) as usize);
            } else if j < 0 || j >= n {
                return None;
            } else {
                out.push(j as usize);
            }
        }
        Some(out)
    }

    pub fn upper(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|a| self.origin[a] + (self.counts[a] - 1) as f64 * self.spacing[a])
            .collect()
    }
}

fn packed_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// A metric sampled on every node of a lattice.
#[derive(Clone, Debug)]
pub struct MetricChart {
    pub lattice: Lattice,
    packed: Vec<f64>,
}

impl MetricChart {
    /// Sample `field` on every lattice node, asserting symmetry and positive
    /// definiteness node by node.
    pub fn sample(field: &dyn MetricField, lattice: Lattice) -> Result<Self> {
        let dim = lattice.dim();
        if field.dim() != dim {
            return Err(IsoflowError::Config(format!(
                "metric of dimension {} sampled on a {}-dimensional lattice",
                field.dim(),
                dim
            )));
        }
        let m = packed_len(dim);
        let rows: Vec<Result<Vec<f64>>> = (0..lattice.len())
            .into_par_iter()
            .map(|k| {
                let idx = lattice.multi(k);
                let x = lattice.point(&idx);
                let g = field.metric(&x)?;
                check_spd(&g, &x)?;
                let mut row = Vec::with_capacity(m);
                for i in 0..dim {
                    for j in i..dim {
                        row.push(g[(i, j)]);
                    }
                }
                Ok(row)
            })
            .collect();
        let mut packed = Vec::with_capacity(m * lattice.len());
        for r in rows {
            packed.extend(r?);
        }
        Ok(MetricChart { lattice, packed })
    }

    pub fn from_packed(lattice: Lattice, packed: Vec<f64>) -> Result<Self> {
        let dim = lattice.dim();
        if packed.len() != packed_len(dim) * lattice.len() {
            return Err(IsoflowError::Parse("packed metric table has the wrong length".into()));
        }
        let chart = MetricChart { lattice, packed };
        for k in 0..chart.lattice.len() {
            let idx = chart.lattice.multi(k);
            check_spd(&chart.at(&idx), &chart.lattice.point(&idx))?;
        }
        Ok(chart)
    }

    pub fn dim(&self) -> usize {
        self.lattice.dim()
    }

    pub fn packed(&self) -> &[f64] {
        &self.packed
    }

    pub fn packed_row(&self, flat: usize) -> &[f64] {
        let m = packed_len(self.dim());
        &self.packed[flat * m..(flat + 1) * m]
    }

    pub fn at(&self, idx: &[usize]) -> DMatrix<f64> {
        unpack(self.dim(), self.packed_row(self.lattice.flat(idx)))
    }

    /// Central-difference derivative of the metric along `axis` at a node.
    pub fn derivative(&self, idx: &[usize], axis: usize) -> Result<DMatrix<f64>> {
        let mut plus = vec![0i32; self.dim()];
        plus[axis] = 1;
        let minus: Vec<i32> = plus.iter().map(|v| -v).collect();
        let (p, m) = match (self.lattice.offset(idx, &plus), self.lattice.offset(idx, &minus)) {
            (Some(p), Some(m)) => (p, m),
            _ => return Err(IsoflowError::Stencil { node: idx.to_vec() }),
        };
        Ok((self.at(&p) - self.at(&m)) / (2.0 * self.lattice.spacing[axis]))
    }
}

fn unpack(dim: usize, row: &[f64]) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(dim, dim);
    let mut k = 0;
    for i in 0..dim {
        for j in i..dim {
            g[(i, j)] = row[k];
            g[(j, i)] = row[k];
            k += 1;
        }
    }
    g
}

fn check_spd(g: &DMatrix<f64>, x: &[f64]) -> Result<()> {
    let scale = g.abs().max().max(1.0);
    if symmetric_defect(g) > 1e-12 * scale {
        return Err(IsoflowError::NotPositiveDefinite {
            location: format!("{x:?} (asymmetric)"),
            min_eigenvalue: f64::NAN,
        });
    }
    let lam = min_eigenvalue(g);
    if !(lam > 0.0) {
        return Err(IsoflowError::NotPositiveDefinite { location: format!("{x:?}"), min_eigenvalue: lam });
    }
    Ok(())
}

/// `sqrt(det g) g^{-1}` and `sqrt(det g)`.
fn density_weighted_inverse(g: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let chol = g.clone().cholesky().ok_or_else(|| IsoflowError::NotPositiveDefinite {
        location: "Laplacian stencil".into(),
        min_eigenvalue: min_eigenvalue(g),
    })?;
    let sqrt_det: f64 = chol.l_dirty().diagonal().iter().product();
    Ok((chol.inverse() * sqrt_det, sqrt_det))
}

/// Divergence-form second-order kernel
/// `(1/sqrt g) sum_i d_i (sqrt g g^{ij} d_j u)` on the 3^dim stencil.
///
/// `u(off)` reads the field at an integer offset; `a_half(i, side)` returns
/// `sqrt(g) g^{-1}` at the half point `x + side * h_i / 2 * e_i`.
fn divergence_kernel(
    h: &[f64],
    u: &dyn Fn(&[i32]) -> f64,
    a_half: &dyn Fn(usize, i32) -> Result<DMatrix<f64>>,
    sqrt_g_center: f64,
) -> Result<f64> {
    let dim = h.len();
    let mut off = vec![0i32; dim];
    let u0 = u(&off);
    let mut total = 0.0;
    for i in 0..dim {
        let mut flux = [0.0; 2];
        for (slot, side) in [-1i32, 1].into_iter().enumerate() {
            let a = a_half(i, side)?;
            let mut f = 0.0;
            for j in 0..dim {
                let d = if j == i {
                    off.iter_mut().for_each(|v| *v = 0);
                    off[i] = side;
                    side as f64 * (u(&off) - u0) / h[i]
                } else {
                    off.iter_mut().for_each(|v| *v = 0);
                    off[j] = 1;
                    let c0p = u(&off);
                    off[j] = -1;
                    let c0m = u(&off);
                    off[i] = side;
                    let c1m = u(&off);
                    off[j] = 1;
                    let c1p = u(&off);
                    (c0p - c0m + c1p - c1m) / (4.0 * h[j])
                };
                f += a[(i, j)] * d;
            }
            flux[slot] = f;
        }
        total += (flux[1] - flux[0]) / h[i];
    }
    Ok(total / sqrt_g_center)
}

/// Grid Laplace-Beltrami of nodal values `u` at an interior node; the
/// weighted inverse metric at half points is the average of its neighbors.
pub fn fd_laplacian(chart: &MetricChart, u: &[f64], node: &[usize]) -> Result<f64> {
    let lat = &chart.lattice;
    let dim = lat.dim();
    let stencil_fits = lat.periodic || node.iter().zip(&lat.counts).all(|(&i, &n)| i >= 1 && i + 1 < n);
    if !stencil_fits {
        return Err(IsoflowError::Stencil { node: node.to_vec() });
    }
    let read = |off: &[i32]| u[lat.flat(&lat.offset(node, off).expect("interior stencil"))];
    let weighted = |off: &[i32]| -> Result<(DMatrix<f64>, f64)> {
        density_weighted_inverse(&chart.at(&lat.offset(node, off).expect("interior stencil")))
    };
    let (a0, s0) = weighted(&vec![0; dim])?;
    let a_half = |i: usize, side: i32| -> Result<DMatrix<f64>> {
        let mut off = vec![0i32; dim];
        off[i] = side;
        let (a1, _) = weighted(&off)?;
        Ok((&a0 + a1) * 0.5)
    };
    divergence_kernel(&lat.spacing, &read, &a_half, s0)
}

/// Laplace-Beltrami of a function at an arbitrary point with stencil step
/// `h`, evaluating the metric lazily at the half points.
pub fn fd_laplacian_at(
    field: &dyn MetricField,
    u: &dyn Fn(&[f64]) -> f64,
    x: &[f64],
    h: f64,
) -> Result<f64> {
    let dim = x.len();
    let shifted = |off: &[i32], half: f64| -> Vec<f64> {
        x.iter().zip(off).map(|(xi, o)| xi + *o as f64 * h * half).collect()
    };
    let read = |off: &[i32]| u(&shifted(off, 1.0));
    let (_, s0) = density_weighted_inverse(&field.metric(x)?)?;
    let a_half = |i: usize, side: i32| -> Result<DMatrix<f64>> {
        let mut off = vec![0i32; dim];
        off[i] = side;
        Ok(density_weighted_inverse(&field.metric(&shifted(&off, 0.5))?)?.0)
    };
    divergence_kernel(&vec![h; dim], &read, &a_half, s0)
}

/// [`fd_laplacian_at`] at steps `h` and `2h` combined to cancel the
/// leading `h^2` error term.
pub fn fd_laplacian_extrapolated(
    field: &dyn MetricField,
    u: &dyn Fn(&[f64]) -> f64,
    x: &[f64],
    h: f64,
) -> Result<f64> {
    let fine = fd_laplacian_at(field, u, x, h)?;
    let coarse = fd_laplacian_at(field, u, x, 2.0 * h)?;
    Ok((4.0 * fine - coarse) / 3.0)
}

/// Fourth-order central-difference gradient of `u` at `x`.
pub fn fd_gradient(u: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|a| {
            let mut at = |s: f64| {
                y[a] = x[a] + s * h;
                let v = u(&y);
                y[a] = x[a];
                v
            };
            (8.0 * (at(1.0) - at(-1.0)) - (at(2.0) - at(-2.0))) / (12.0 * h)
        })
        .collect()
}

/// `g^{ij} d_i u d_j u` with a fourth-order FD gradient.
pub fn fd_gradient_norm_sq(
    field: &dyn MetricField,
    u: &dyn Fn(&[f64]) -> f64,
    x: &[f64],
    h: f64,
) -> Result<f64> {
    let du = nalgebra::DVector::from_vec(fd_gradient(u, x, h));
    let ginv = spd_inverse(&field.metric(x)?)?;
    Ok((du.transpose() * ginv * &du)[(0, 0)])
}

/// Step used for metric derivatives inside Christoffel symbols.
pub const CHRISTOFFEL_STEP: f64 = 1e-4;

/// Christoffel symbols `Gamma^k_{ij}` at `x`, flat index `(k * dim + i) * dim + j`,
/// from fourth-order central differences of the metric.
pub fn christoffel(field: &dyn MetricField, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let dim = x.len();
    let mut dg = Vec::with_capacity(dim);
    let mut y = x.to_vec();
    for a in 0..dim {
        let mut at = |s: f64| -> Result<DMatrix<f64>> {
            y[a] = x[a] + s * h;
            let g = field.metric(&y);
            y[a] = x[a];
            g
        };
        let d = ((at(1.0)? - at(-1.0)?) * 8.0 - (at(2.0)? - at(-2.0)?)) / (12.0 * h);
        dg.push(d);
    }
    let ginv = spd_inverse(&field.metric(x)?)?;
    let mut gamma = vec![0.0; dim * dim * dim];
    for k in 0..dim {
        for i in 0..dim {
            for j in i..dim {
                let mut acc = 0.0;
                for l in 0..dim {
                    acc += ginv[(k, l)] * (dg[i][(l, j)] + dg[j][(l, i)] - dg[l][(i, j)]);
                }
                gamma[(k * dim + i) * dim + j] = 0.5 * acc;
                gamma[(k * dim + j) * dim + i] = 0.5 * acc;
            }
        }
    }
    Ok(gamma)
}

/// Geodesic state: position, velocity and accumulated arc length.
#[derive(Clone, Debug)]
pub struct GeodesicRun {
    pub solution: OdeSolution,
    pub dim: usize,
}

impl GeodesicRun {
    pub fn position(&self) -> &[f64] {
        &self.solution.y[..self.dim]
    }
    pub fn velocity(&self) -> &[f64] {
        &self.solution.y[self.dim..2 * self.dim]
    }
    pub fn length(&self) -> f64 {
        self.solution.y[2 * self.dim]
    }
    /// Positions along the recorded trajectory.
    pub fn path(&self) -> impl Iterator<Item = &[f64]> {
        self.solution.trajectory.iter().map(move |(_, y)| &y[..self.dim])
    }
}

/// Integrate the geodesic equation from `(x0, v0)` for parameter time up to
/// `t_max`, optionally stopping on `event(position, velocity)`.
pub fn integrate_geodesic(
    field: &dyn MetricField,
    x0: &[f64],
    v0: &[f64],
    t_max: f64,
    opts: &OdeOptions,
    event: Option<&dyn Fn(&[f64], &[f64]) -> f64>,
    record: bool,
) -> Result<GeodesicRun> {
    let dim = x0.len();
    let failure = std::sync::Mutex::new(None::<IsoflowError>);
    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
        let (x, v) = (&y[..dim], &y[dim..2 * dim]);
        let (gamma, g) = match (christoffel(field, x, CHRISTOFFEL_STEP), field.metric(x)) {
            (Ok(c), Ok(g)) => (c, g),
            (Err(e), _) | (_, Err(e)) => {
                // keep the first failure; later ones are NaN fallout
                failure.lock().expect("no poisoning").get_or_insert(e);
                dy.iter_mut().for_each(|d| *d = f64::NAN);
                return;
            }
        };
        let mut speed2 = 0.0;
        for k in 0..dim {
            dy[k] = v[k];
            let mut acc = 0.0;
            for i in 0..dim {
                for j in 0..dim {
                    acc += gamma[(k * dim + i) * dim + j] * v[i] * v[j];
                }
                speed2 += g[(k, i)] * v[k] * v[i];
            }
            dy[dim + k] = -acc;
        }
        dy[2 * dim] = speed2.max(0.0).sqrt();
    };
    let mut y0 = x0.to_vec();
    y0.extend_from_slice(v0);
    y0.push(0.0);
    let wrapped;
    let ev: Option<&dyn Fn(f64, &[f64]) -> f64> = match event {
        Some(e) => {
            wrapped = move |_t: f64, y: &[f64]| e(&y[..dim], &y[dim..2 * dim]);
            Some(&wrapped)
        }
        None => None,
    };
    let result = dopri5(rhs, 0.0, &y0, t_max, opts, ev, record);
    if let Some(e) = failure.into_inner().expect("no poisoning") {
        return Err(e);
    }
    Ok(GeodesicRun { solution: result?, dim })
}

/// Sectional curvature of the plane spanned by `u`, `w` at `x`, from finite
/// differences of the FD Christoffel symbols with outer step `h`.
pub fn sectional_curvature(
    field: &dyn MetricField,
    x: &[f64],
    u: &[f64],
    w: &[f64],
    h: f64,
) -> Result<f64> {
    let dim = x.len();
    let gamma = christoffel(field, x, CHRISTOFFEL_STEP)?;
    let mut dgamma = Vec::with_capacity(dim);
    let mut y = x.to_vec();
    for a in 0..dim {
        let mut at = |s: f64| -> Result<Vec<f64>> {
            y[a] = x[a] + s * h;
            let c = christoffel(field, &y, CHRISTOFFEL_STEP);
            y[a] = x[a];
            c
        };
        let (p1, m1, p2, m2) = (at(1.0)?, at(-1.0)?, at(2.0)?, at(-2.0)?);
        dgamma.push(
            (0..gamma.len())
                .map(|k| (8.0 * (p1[k] - m1[k]) - (p2[k] - m2[k])) / (12.0 * h))
                .collect::<Vec<f64>>(),
        );
    }
    let idx = |k: usize, i: usize, j: usize| (k * dim + i) * dim + j;
    // R^l_{ijk} = d_i G^l_{jk} - d_j G^l_{ik} + G^l_{im} G^m_{jk} - G^l_{jm} G^m_{ik}
    let riemann = |l: usize, i: usize, j: usize, k: usize| {
        let mut r = dgamma[i][idx(l, j, k)] - dgamma[j][idx(l, i, k)];
        for m in 0..dim {
            r += gamma[idx(l, i, m)] * gamma[idx(m, j, k)] - gamma[idx(l, j, m)] * gamma[idx(m, i, k)];
        }
        r
    };
    let g = field.metric(x)?;
    let mut ryy = vec![0.0; dim];
    for (l, slot) in ryy.iter_mut().enumerate() {
        for i in 0..dim {
            for j in 0..dim {
                for k in 0..dim {
                    *slot += u[i] * w[j] * w[k] * riemann(l, i, j, k);
                }
            }
        }
    }
    let inner = |a: &[f64], b: &[f64]| {
        let mut s = 0.0;
        for i in 0..dim {
            for j in 0..dim {
                s += g[(i, j)] * a[i] * b[j];
            }
        }
        s
    };
    let area = inner(u, u) * inner(w, w) - inner(u, w).powi(2);
    Ok(inner(&ryy, u) / area)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn round_s2_stereo() -> impl MetricField {
        FnField::new(2, |x: &[f64]| {
            let c = 4.0 / (1.0 + x[0] * x[0] + x[1] * x[1]).powi(2);
            DMatrix::identity(2, 2) * c
        })
    }

    #[test]
    fn lattice_indexing_round_trips() {
        let lat = Lattice::spanning(&[0.0, -1.0, 2.0], &[1.0, 1.0, 3.0], &[3, 4, 5]).unwrap();
        for k in 0..lat.len() {
            assert_eq!(lat.flat(&lat.multi(k)), k);
        }
        assert_eq!(lat.upper(), vec![1.0, 1.0, 3.0]);
        let per = Lattice::periodic(2, 8, 1.0);
        assert_eq!(per.offset(&[0, 7], &[-1, 1]), Some(vec![7, 0]));
    }

    #[test]
    fn euclidean_laplacian_of_quadratic() {
        let lat = Lattice::spanning(&[-1.0; 3], &[1.0; 3], &[11; 3]).unwrap();
        let chart = MetricChart::sample(&Euclidean(3), lat.clone()).unwrap();
        let u: Vec<f64> = (0..lat.len())
            .map(|k| lat.point(&lat.multi(k)).iter().map(|v| v * v).sum())
            .collect();
        let lin: Vec<f64> = (0..lat.len()).map(|k| lat.point(&lat.multi(k)).iter().sum()).collect();
        let v = fd_laplacian(&chart, &u, &[5, 3, 7]).unwrap();
        assert!((v - 6.0).abs() < 1e-12);
        assert!(fd_laplacian(&chart, &lin, &[4, 4, 4]).unwrap().abs() < 1e-12);
        assert!(matches!(fd_laplacian(&chart, &u, &[0, 3, 3]), Err(IsoflowError::Stencil { .. })));
    }

    #[test]
    fn non_spd_sample_is_rejected() {
        let bad = FnField::new(2, |x: &[f64]| DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, x[0]]));
        let lat = Lattice::spanning(&[-1.0, 0.0], &[1.0, 1.0], &[5, 3]).unwrap();
        assert!(matches!(
            MetricChart::sample(&bad, lat),
            Err(IsoflowError::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn round_sphere_laplacian_of_height() {
        // z = (|x|^2 - 1)/(|x|^2 + 1) is a first eigenfunction: Delta z = -2 z.
        let g = round_s2_stereo();
        let z = |x: &[f64]| {
            let r2 = x[0] * x[0] + x[1] * x[1];
            (r2 - 1.0) / (r2 + 1.0)
        };
        let x = [0.3, -0.4];
        let e1 = (fd_laplacian_at(&g, &z, &x, 1e-2).unwrap() + 2.0 * z(&x)).abs();
        let e2 = (fd_laplacian_at(&g, &z, &x, 5e-3).unwrap() + 2.0 * z(&x)).abs();
        assert!(e2 < 1e-4);
        assert!((e1 / e2).log2() > 1.8);
    }

    #[test]
    fn round_sphere_curvature_is_one() {
        let g = round_s2_stereo();
        let k = sectional_curvature(&g, &[0.2, 0.5], &[1.0, 0.0], &[0.3, 1.0], 1e-3).unwrap();
        assert!((k - 1.0).abs() < 1e-6, "{k}");
        let flat = sectional_curvature(&Euclidean(3), &[0.1, 0.2, 0.3], &[1.0, 0.0, 0.0], &[0.0, 1.0, 1.0], 1e-3)
            .unwrap();
        assert!(flat.abs() < 1e-12);
    }

    #[test]
    fn great_circle_length() {
        // equator of the stereographic S^2 is the unit circle; half of it is pi
        let g = round_s2_stereo();
        // the conformal factor is 1 at (1, 0), so this is unit speed
        let v0 = [0.0, 1.0];
        let run = integrate_geodesic(&g, &[1.0, 0.0], &v0, std::f64::consts::PI, &OdeOptions::default(), None, false)
            .unwrap();
        assert!((run.length() - std::f64::consts::PI).abs() < 1e-8);
        assert!((run.position()[0] + 1.0).abs() < 1e-7 && run.position()[1].abs() < 1e-7);
    }

    proptest! {
        #[test]
        fn christoffel_symmetric_in_lower_indices(a in -1.0f64..1.0, b in -1.0f64..1.0) {
            let g = round_s2_stereo();
            let c = christoffel(&g, &[a, b], CHRISTOFFEL_STEP).unwrap();
            for k in 0..2 { for i in 0..2 { for j in 0..2 {
                prop_assert!((c[(k*2+i)*2+j] - c[(k*2+j)*2+i]).abs() < 1e-14);
            }}}
        }
    }
}
