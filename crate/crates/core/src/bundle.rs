//! Disc-bundle caps: the total metric of a Riemannian submersion with
//! totally geodesic fibers, built from a flat base, a metric connection and
//! the warped fiber metric.
//!
//! Coordinates are `(p, v)` with `p` on the base (a flat torus of dimension
//! `base_dim`, periods `base_periods`) and `v` in the fiber disc. The
//! connection form is `omega = sum_a c_a dp_a (A v)` with `A` skew, so the
//! total metric is the Kaluza-Klein block
//! `[[h + Om^T G Om, Om^T G], [G Om, G]]` with `Om = [c_a A v]`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::chart::{fd_laplacian_at, integrate_geodesic, MetricField};
use crate::error::{IsoflowError, Result};
use crate::ode::OdeOptions;
use crate::report::{CheckEntry, Status};
use crate::warped_disc::WarpedDiscSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Connection {
    Zero,
    /// Constant rotation: generator `A` (fiber-dim square, row-major) and
    /// one rate per base axis.
    ConstantRotation { generator: Vec<f64>, rates: Vec<f64> },
}

/// Test fixture breaking total geodesy: the fiber metric is scaled by
/// `1 + amplitude * sin(2 pi p_0 / period_0)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberModulation {
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubmersionBundleSpec {
    pub base_periods: Vec<f64>,
    /// Constant flat base metric (row-major, `base_dim` square).
    pub base_metric: Vec<f64>,
    pub fiber: WarpedDiscSpec,
    pub connection: Connection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modulation: Option<FiberModulation>,
}

impl SubmersionBundleSpec {
    pub fn new(
        base_periods: Vec<f64>,
        base_metric: Vec<f64>,
        fiber: WarpedDiscSpec,
        connection: Connection,
    ) -> Result<Self> {
        let spec = SubmersionBundleSpec { base_periods, base_metric, fiber, connection, modulation: None };
        spec.validate()?;
        Ok(spec)
    }

    /// Rotation about the first two fiber axes at `rate` along base axis 0.
    pub fn planar_rotation(d: usize, base_dim: usize, rate: f64) -> Connection {
        let mut a = vec![0.0; d * d];
        a[1] = -1.0;
        a[d] = 1.0;
        let mut rates = vec![0.0; base_dim];
        rates[0] = rate;
        Connection::ConstantRotation { generator: a, rates }
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.base_dim();
        if b == 0 || self.base_metric.len() != b * b {
            return Err(IsoflowError::Config("base metric must be base_dim x base_dim".into()));
        }
        let h = DMatrix::from_row_slice(b, b, &self.base_metric);
        if crate::chart::symmetric_defect(&h) > 1e-14 || crate::chart::min_eigenvalue(&h) <= 0.0 {
            return Err(IsoflowError::NotPositiveDefinite {
                location: "base metric".into(),
                min_eigenvalue: crate::chart::min_eigenvalue(&h),
            });
        }
        if let Connection::ConstantRotation { generator, rates } = &self.connection {
            let d = self.fiber.d;
            if generator.len() != d * d || rates.len() != b {
                return Err(IsoflowError::Config("connection shape does not match the bundle".into()));
            }
            let a = DMatrix::from_row_slice(d, d, generator);
            let defect = (&a + a.transpose()).abs().max();
            if defect > 1e-14 {
                return Err(IsoflowError::InvalidConnection { defect });
            }
        }
        Ok(())
    }

    pub fn base_dim(&self) -> usize {
        self.base_periods.len()
    }

    pub fn total_dim(&self) -> usize {
        self.base_dim() + self.fiber.d
    }

    fn base_block(&self) -> DMatrix<f64> {
        let b = self.base_dim();
        DMatrix::from_row_slice(b, b, &self.base_metric)
    }

    /// Columns `c_a A v` of the connection form at fiber point `v`.
    pub fn connection_columns(&self, v: &[f64]) -> DMatrix<f64> {
        let (b, d) = (self.base_dim(), self.fiber.d);
        let mut om = DMatrix::zeros(d, b);
        if let Connection::ConstantRotation { generator, rates } = &self.connection {
            let a = DMatrix::from_row_slice(d, d, generator);
            let av = a * nalgebra::DVector::from_column_slice(v);
            for (col, c) in rates.iter().enumerate() {
                for i in 0..d {
                    om[(i, col)] = c * av[i];
                }
            }
        }
        om
    }

    fn fiber_scale(&self, p: &[f64]) -> f64 {
        match &self.modulation {
            Some(m) => 1.0 + m.amplitude * (std::f64::consts::TAU * p[0] / self.base_periods[0]).sin(),
            None => 1.0,
        }
    }

    /// Total metric at `(p, v)`.
    pub fn total_metric(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let (b, d) = (self.base_dim(), self.fiber.d);
        let (p, v) = x.split_at(b);
        let gv = self.fiber.metric_at(v)? * self.fiber_scale(p);
        let om = self.connection_columns(v);
        let gom = &gv * &om;
        let mut g = DMatrix::zeros(b + d, b + d);
        let hb = self.base_block() + om.transpose() * &gom;
        g.view_mut((0, 0), (b, b)).copy_from(&hb);
        g.view_mut((b, 0), (d, b)).copy_from(&gom);
        g.view_mut((0, b), (b, d)).copy_from(&gom.transpose());
        g.view_mut((b, b), (d, d)).copy_from(&gv);
        Ok(g)
    }

    /// Height function `f(p, v) = f_fiber(v)`.
    pub fn height(&self, x: &[f64]) -> f64 {
        self.fiber.height(&x[self.base_dim()..])
    }

    /// Horizontal lift of the base vector `xi` at `(p, v)`.
    pub fn horizontal_lift(&self, x: &[f64], xi: &[f64]) -> Vec<f64> {
        let b = self.base_dim();
        let om = self.connection_columns(&x[b..]);
        let w = om * nalgebra::DVector::from_column_slice(xi);
        xi.iter().copied().chain(w.iter().map(|c| -c)).collect()
    }
}

impl MetricField for SubmersionBundleSpec {
    fn dim(&self) -> usize {
        self.total_dim()
    }
    fn metric(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.total_metric(x)
    }
}

/// The metric of one fiber (base coordinates frozen), used for the vertical
/// Laplacian.
struct FiberSlice<'a> {
    spec: &'a SubmersionBundleSpec,
    p: Vec<f64>,
}

impl MetricField for FiberSlice<'_> {
    fn dim(&self) -> usize {
        self.spec.fiber.d
    }
    fn metric(&self, v: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.spec.fiber.metric_at(v)? * self.spec.fiber_scale(&self.p))
    }
}

/// Deterministic sample points `(p, v)` spread over the base and the fiber
/// disc up to `max_radius`.
pub fn sample_points(spec: &SubmersionBundleSpec, count: usize, max_radius: f64) -> Vec<Vec<f64>> {
    let (b, d) = (spec.base_dim(), spec.fiber.d);
    (0..count)
        .map(|k| {
            let t = (k as f64 + 0.5) / count as f64;
            let mut x = Vec::with_capacity(b + d);
            for a in 0..b {
                x.push(spec.base_periods[a] * ((t * (a as f64 + 1.618) * 7.0).fract()));
            }
            // quasi-random direction, radius spread in (0, max_radius)
            let mut dir: Vec<f64> = (0..d).map(|i| ((k as f64 + 1.0) * (0.754877 + 0.29 * i as f64)).sin()).collect();
            let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            dir.iter_mut().for_each(|v| *v /= n);
            let r = max_radius * (0.05 + 0.95 * t);
            x.extend(dir.iter().map(|v| v * r));
            x
        })
        .collect()
}

/// Horizontal vectors have the base norm, vertical blocks equal the fiber
/// metric: the largest deviation over the sampled points.
pub fn verify_submersion(spec: &SubmersionBundleSpec, points: &[Vec<f64>]) -> Result<(f64, f64)> {
    let b = spec.base_dim();
    let h = spec.base_block();
    let mut horiz = 0.0f64;
    let mut vert = 0.0f64;
    for x in points {
        let g = spec.total_metric(x)?;
        for a in 0..b {
            let mut xi = vec![0.0; b];
            xi[a] = 1.0;
            xi[(a + 1) % b] += 0.5;
            let lift = nalgebra::DVector::from_vec(spec.horizontal_lift(x, &xi));
            let total = (lift.transpose() * &g * &lift)[(0, 0)];
            let xiv = nalgebra::DVector::from_vec(xi);
            let base = (xiv.transpose() * &h * &xiv)[(0, 0)];
            horiz = horiz.max((total - base).abs());
        }
        let fiber = FiberSlice { spec, p: x[..b].to_vec() }.metric(&x[b..])?;
        let block = g.view((b, b), (spec.fiber.d, spec.fiber.d)).into_owned();
        vert = vert.max((block - fiber).abs().max());
    }
    Ok((horiz, vert))
}

/// Largest base drift of geodesics launched tangent to the fiber.
pub fn fiber_geodesic_drift(
    spec: &SubmersionBundleSpec,
    points: &[Vec<f64>],
    duration: f64,
    opts: &OdeOptions,
) -> Result<f64> {
    let b = spec.base_dim();
    let mut drift = 0.0f64;
    for x in points {
        let g = spec.total_metric(x)?;
        let mut v = vec![0.0; spec.total_dim()];
        for i in 0..spec.fiber.d {
            v[b + i] = 0.3 + 0.1 * i as f64 - 0.2 * x[b + (i + 1) % spec.fiber.d];
        }
        let vv = nalgebra::DVector::from_column_slice(&v);
        let speed = (vv.transpose() * &g * &vv)[(0, 0)].sqrt();
        v.iter_mut().for_each(|c| *c /= speed);
        // stay inside the disc; the step cap keeps trial stages short of the
        // chart edge until the event fires
        let eps = spec.fiber.eps;
        let event = move |y: &[f64], _w: &[f64]| {
            eps * 0.98 - y[b..].iter().map(|c| c * c).sum::<f64>().sqrt()
        };
        let capped = OdeOptions { max_step: opts.max_step.min(0.01 * eps), ..*opts };
        let run = integrate_geodesic(spec, x, &v, duration, &capped, Some(&event), true)?;
        for y in run.path() {
            let d: f64 = (0..b).map(|a| (y[a] - x[a]).powi(2)).sum::<f64>().sqrt();
            drift = drift.max(d);
        }
    }
    Ok(drift)
}

/// `Delta f - Delta_fiber f` over the sampled points with stencil step `h`,
/// plus the worst disagreement of `Delta f` with the closed form.
pub fn horizontal_laplacian(
    spec: &SubmersionBundleSpec,
    points: &[Vec<f64>],
    h: f64,
) -> Result<(f64, f64)> {
    let b = spec.base_dim();
    let u = |x: &[f64]| spec.height(x);
    let uf = |v: &[f64]| spec.fiber.height(v);
    let mut horiz = 0.0f64;
    let mut closed = 0.0f64;
    for x in points {
        let full = fd_laplacian_at(spec, &u, x, h)?;
        let slice = FiberSlice { spec, p: x[..b].to_vec() };
        let vert = fd_laplacian_at(&slice, &uf, &x[b..], h)?;
        horiz = horiz.max((full - vert).abs());
        let r = x[b..].iter().map(|c| c * c).sum::<f64>().sqrt();
        closed = closed.max((full - spec.fiber.laplacian_of_height(r)?).abs());
    }
    Ok((horiz, closed))
}

/// Certificate stencil spacing for Laplacians on the caps.
pub const CERT_STEP: f64 = 1e-4;

/// The three bundle certificates as report entries.
pub fn bundle_checks(spec: &SubmersionBundleSpec, samples: usize, opts: &OdeOptions) -> Result<Vec<CheckEntry>> {
    let pts = sample_points(spec, samples, 0.95 * spec.fiber.eps);
    let (horiz, vert) = verify_submersion(spec, &pts)?;
    let drift = fiber_geodesic_drift(spec, &pts[..samples.min(4)], 0.5, opts)?;
    let (dh, closed) = horizontal_laplacian(spec, &pts, CERT_STEP)?;
    let negative = spec.modulation.is_some();
    let mut drift_entry =
        CheckEntry::new("bundle.fiber_totally_geodesic", "bundle:totally-geodesic-fibers", drift, 1e-6, opts.rtol);
    if negative {
        drift_entry = drift_entry.expect(Status::Fail);
    }
    Ok(vec![
        CheckEntry::new("bundle.submersion.horizontal", "bundle:riemannian-submersion", horiz, 1e-10, 0.0),
        CheckEntry::new("bundle.submersion.vertical", "bundle:fiber-isometric-to-cap", vert, 1e-12, 0.0),
        drift_entry,
        CheckEntry::new("bundle.horizontal_laplacian", "bundle:horizontal-laplacian-zero", dh, 1e-4, CERT_STEP),
        CheckEntry::new("bundle.laplacian_closed_form", "cap:laplacian-closed-form", closed, 1e-4, CERT_STEP),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::warped_disc::CapOrientation;

    fn fiber() -> WarpedDiscSpec {
        WarpedDiscSpec::new(2, 1.0, 0.0, CapOrientation::MinCap).unwrap()
    }

    fn twisted() -> SubmersionBundleSpec {
        SubmersionBundleSpec::new(
            vec![2.0],
            vec![1.0],
            fiber(),
            SubmersionBundleSpec::planar_rotation(2, 1, 0.8),
        )
        .unwrap()
    }

    #[test]
    fn zero_connection_is_product() {
        let s = SubmersionBundleSpec::new(vec![1.0], vec![2.0], fiber(), Connection::Zero).unwrap();
        let g = s.total_metric(&[0.3, 0.2, 0.1]).unwrap();
        assert_eq!(g[(0, 0)], 2.0);
        assert_eq!(g[(0, 1)], 0.0);
        assert_eq!(g[(0, 2)], 0.0);
    }

    #[test]
    fn skew_check() {
        let bad = Connection::ConstantRotation { generator: vec![0.0, 1.0, 1.0, 0.0], rates: vec![1.0] };
        assert!(matches!(
            SubmersionBundleSpec::new(vec![1.0], vec![1.0], fiber(), bad),
            Err(IsoflowError::InvalidConnection { .. })
        ));
    }

    #[test]
    fn rotation_connection_certificates() {
        let s = twisted();
        let pts = sample_points(&s, 12, 0.95);
        let (h, v) = verify_submersion(&s, &pts).unwrap();
        assert!(h < 1e-12 && v < 1e-14);
        let drift = fiber_geodesic_drift(&s, &pts[..3], 0.5, &OdeOptions::default()).unwrap();
        assert!(drift < 1e-6, "{drift}");
        let (dh, closed) = horizontal_laplacian(&s, &pts, CERT_STEP).unwrap();
        assert!(dh < 1e-4 && closed < 1e-4, "{dh} {closed}");
    }

    #[test]
    fn modulated_fiber_is_not_totally_geodesic() {
        let mut s = twisted();
        s.modulation = Some(FiberModulation { amplitude: 0.3 });
        let pts = sample_points(&s, 3, 0.9);
        let drift = fiber_geodesic_drift(&s, &pts, 0.5, &OdeOptions::default()).unwrap();
        assert!(drift > 1e-3, "{drift}");
    }
}
