//! The cap metric `F(r)^2 dr^2 + G(r)^2 ds^2` on the disc of radius `eps`,
//! in Cartesian coordinates, with its closed-form gradient and Laplacian of
//! the height function and the geodesic certificates.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chart::{fd_laplacian_at, integrate_geodesic, MetricField};
use crate::error::{IsoflowError, Result};
use crate::ode::OdeOptions;
use crate::profile::{make_F, make_G, radial_length, SmoothProfile};
use crate::report::CheckEntry;

/// Stencils and geodesic integrators may read the metric this far (relative
/// to `eps`) outside the disc; the profiles extend smoothly there.
pub const CHART_SLACK: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CapOrientation {
    /// `f = alpha + r^2`, the minimum focal set sits at the centre.
    MinCap,
    /// `f = beta - r^2`.
    MaxCap,
}

#[allow(non_snake_case)]
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarpedDiscSpec {
    pub d: usize,
    pub eps: f64,
    pub level_offset: f64,
    pub orientation: CapOrientation,
    pub F: SmoothProfile,
    pub G: SmoothProfile,
    pub delta: f64,
}

impl WarpedDiscSpec {
    /// Cap with the standard blended warps.
    pub fn new(d: usize, eps: f64, level_offset: f64, orientation: CapOrientation) -> Result<Self> {
        Self::with_profiles(d, eps, level_offset, orientation, make_F(eps)?, make_G(eps)?)
    }

    #[allow(non_snake_case)]
    pub fn with_profiles(
        d: usize,
        eps: f64,
        level_offset: f64,
        orientation: CapOrientation,
        F: SmoothProfile,
        G: SmoothProfile,
    ) -> Result<Self> {
        if d < 2 {
            return Err(IsoflowError::InvalidParameter {
                name: "d",
                value: d as f64,
                reason: "fiber dimension must be at least 2",
            });
        }
        let delta = radial_length(&F, eps)?;
        if G.eval(0.0) != 0.0 {
            return Err(IsoflowError::InvalidProfile("angular warp must vanish at the centre".into()));
        }
        Ok(WarpedDiscSpec { d, eps, level_offset, orientation, F, G, delta })
    }

    fn check_radius(&self, r: f64) -> Result<()> {
        if r > self.eps * (1.0 + CHART_SLACK) {
            return Err(IsoflowError::OutOfChart { radius: r, limit: self.eps });
        }
        Ok(())
    }

    /// Radial and tangential eigenvalues `(F^2, G^2/r^2)` at radius `r`.
    pub fn eigenvalues(&self, r: f64) -> (f64, f64) {
        let f = self.F.eval(r);
        let tan = if r == 0.0 { self.G.derivative(1, 0.0).powi(2) } else { (self.G.eval(r) / r).powi(2) };
        (f * f, tan)
    }

    pub fn metric_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let d = self.d;
        if x.len() != d {
            return Err(IsoflowError::Config(format!("point of dimension {} on a {d}-disc", x.len())));
        }
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.check_radius(r)?;
        Ok(self.metric_extended(x))
    }

    /// The metric formula without the chart-radius guard. Beyond `eps` it
    /// continues the boundary product zone, which the geodesic legs that
    /// cross a seam rely on.
    pub fn metric_extended(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.d;
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let (rad, tan) = self.eigenvalues(r);
        let mut g = DMatrix::identity(d, d) * tan;
        if r > 0.0 {
            let c = (rad - tan) / (r * r);
            for i in 0..d {
                for j in 0..d {
                    g[(i, j)] += c * x[i] * x[j];
                }
            }
        }
        g
    }

    /// The height function on this cap.
    pub fn height(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        match self.orientation {
            CapOrientation::MinCap => self.level_offset + r2,
            CapOrientation::MaxCap => self.level_offset - r2,
        }
    }

    /// Range of the height function over the cap.
    pub fn f_range(&self) -> (f64, f64) {
        let e2 = self.eps * self.eps;
        match self.orientation {
            CapOrientation::MinCap => (self.level_offset, self.level_offset + e2),
            CapOrientation::MaxCap => (self.level_offset - e2, self.level_offset),
        }
    }

    /// Radius at which the height takes the value `fval`.
    pub fn radius_of(&self, fval: f64) -> Result<f64> {
        let (lo, hi) = self.f_range();
        let slack = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
        if fval < lo - slack || fval > hi + slack {
            return Err(IsoflowError::OutOfRange { value: fval, lo, hi });
        }
        let s = match self.orientation {
            CapOrientation::MinCap => fval - self.level_offset,
            CapOrientation::MaxCap => self.level_offset - fval,
        };
        Ok(s.max(0.0).sqrt())
    }

    /// `|grad f|^2` as a function of the level: `4 s / F(sqrt s)^2`.
    pub fn gradient_norm_sq(&self, fval: f64) -> Result<f64> {
        let r = self.radius_of(fval)?;
        Ok(4.0 * r * r / self.F.eval(r).powi(2))
    }

    /// `Delta(r^2) = 2/F^2 - 2 r F'/F^3 + 2 (codim - 1) r G'/(F^2 G)`.
    pub fn laplacian_radial(&self, r: f64, codim: usize) -> Result<f64> {
        if r < 0.0 {
            return Err(IsoflowError::OutOfRange { value: r, lo: 0.0, hi: self.eps });
        }
        self.check_radius(r)?;
        let f = self.F.jet(r);
        let (fv, fd) = (f.value(), f.derivative(1));
        if r == 0.0 {
            return Ok(2.0 * codim as f64 / (fv * fv));
        }
        let g = self.G.jet(r);
        let (gv, gd) = (g.value(), g.derivative(1));
        Ok(2.0 / (fv * fv) - 2.0 * r * fd / fv.powi(3)
            + 2.0 * (codim as f64 - 1.0) * r * gd / (fv * fv * gv))
    }

    /// Laplacian of the height function (sign-aware) at radius `r`.
    pub fn laplacian_of_height(&self, r: f64) -> Result<f64> {
        let v = self.laplacian_radial(r, self.d)?;
        Ok(match self.orientation {
            CapOrientation::MinCap => v,
            CapOrientation::MaxCap => -v,
        })
    }

    /// A fixed non-axis-aligned unit direction used by the sampled checks.
    pub fn generic_direction(&self) -> Vec<f64> {
        let v: Vec<f64> = (0..self.d).map(|i| 1.0 + 0.37 * i as f64).collect();
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.into_iter().map(|a| a / n).collect()
    }
}

impl MetricField for WarpedDiscSpec {
    fn dim(&self) -> usize {
        self.d
    }
    fn metric(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.metric_at(x)
    }
}

/// Outcome of integrating a radial geodesic towards the centre.
#[derive(Clone, Debug)]
pub struct RadialGeodesic {
    /// Largest distance of the trajectory from the straight radius.
    pub deviation: f64,
    pub length: f64,
    /// `int_0^start F`.
    pub expected_length: f64,
}

/// Integrate the unit-speed geodesic that starts at radius `start` along the
/// generic direction with inward radial velocity, until it crosses the centre.
pub fn radial_geodesic(spec: &WarpedDiscSpec, start: f64, opts: &OdeOptions) -> Result<RadialGeodesic> {
    let e = spec.generic_direction();
    let x0: Vec<f64> = e.iter().map(|v| v * start).collect();
    let speed = spec.F.eval(start);
    let v0: Vec<f64> = e.iter().map(|v| -v / speed).collect();
    let dir = e.clone();
    let event = move |x: &[f64], _v: &[f64]| x.iter().zip(&dir).map(|(a, b)| a * b).sum::<f64>();
    let run = integrate_geodesic(spec, &x0, &v0, 10.0 * spec.delta + 10.0, opts, Some(&event), true)?;
    if !run.solution.event {
        return Err(IsoflowError::NumericFailure("radial geodesic never reached the centre".into()));
    }
    let mut deviation = 0.0f64;
    for x in run.path() {
        let along: f64 = x.iter().zip(&e).map(|(a, b)| a * b).sum();
        let perp: f64 = x.iter().zip(&e).map(|(a, b)| (a - along * b).powi(2)).sum::<f64>().sqrt();
        deviation = deviation.max(perp);
    }
    let expected_length = if start >= spec.eps {
        spec.delta
    } else {
        crate::quadrature::integrate_adaptive(|r| spec.F.eval(r), 0.0, start, 1e-12)?.0
    };
    Ok(RadialGeodesic { deviation, length: run.length(), expected_length })
}

/// Geodesic started tangentially at radius `r0`; returns the largest radial
/// excursion `max |r(t) - r0|` over parameter time `duration`.
pub fn tangential_geodesic_drift(
    spec: &WarpedDiscSpec,
    r0: f64,
    duration: f64,
    opts: &OdeOptions,
) -> Result<f64> {
    let e = spec.generic_direction();
    let x0: Vec<f64> = e.iter().map(|v| v * r0).collect();
    // a unit tangent orthogonal to e
    let mut t = vec![0.0; spec.d];
    t[0] = e[1];
    t[1] = -e[0];
    let norm = (t[0] * t[0] + t[1] * t[1]).sqrt();
    let tan_speed = spec.G.eval(r0) / r0;
    let v0: Vec<f64> = t.iter().map(|v| v / norm / tan_speed).collect();
    let run = integrate_geodesic(spec, &x0, &v0, duration, opts, None, true)?;
    Ok(run
        .path()
        .map(|x| (x.iter().map(|a| a * a).sum::<f64>().sqrt() - r0).abs())
        .fold(0.0, f64::max))
}

/// The radius-is-a-geodesic certificate, as report entries.
pub fn radial_geodesic_check(spec: &WarpedDiscSpec, opts: &OdeOptions) -> Result<Vec<CheckEntry>> {
    let full = radial_geodesic(spec, spec.eps, opts)?;
    let inner = radial_geodesic(spec, 0.5 * spec.eps, opts)?;
    Ok(vec![
        CheckEntry::new("cap.radial_geodesic.deviation", "cap:radius-is-geodesic", full.deviation, 1e-6, opts.rtol)
            .detail("inner_zone_deviation", inner.deviation),
        CheckEntry::new(
            "cap.radial_geodesic.length",
            "cap:radial-length-delta",
            (full.length - full.expected_length).abs(),
            1e-6,
            opts.rtol,
        )
        .detail("length", full.length)
        .detail("delta", full.expected_length)
        .detail("inner_zone_length", inner.length),
    ])
}

/// Lattice sweep of the FD Laplacian of the height function against the
/// closed form. Nodes are the points `h * stride * k` (integer vectors `k`)
/// inside the disc with the stencil fitting inside the chart.
#[derive(Clone, Debug)]
pub struct LaplacianSweep {
    pub h: f64,
    pub nodes: usize,
    pub sup_error: f64,
    pub worst_radius: f64,
}

pub fn laplacian_sweep(spec: &WarpedDiscSpec, h: f64, stride: usize) -> Result<LaplacianSweep> {
    laplacian_sweep_within(spec, h, stride, spec.eps - h)
}

/// As [`laplacian_sweep`], restricted to nodes of radius at most `r_max`
/// (which must leave room for the stencil), so that sweeps at different
/// steps can share one node set.
pub fn laplacian_sweep_within(spec: &WarpedDiscSpec, h: f64, stride: usize, r_max: f64) -> Result<LaplacianSweep> {
    if r_max + h > spec.eps {
        return Err(IsoflowError::Config(format!("sweep radius {r_max} leaves no room for the step {h}")));
    }
    let step = h * stride as f64;
    let kmax = (r_max / step).floor() as i64;
    let side = (2 * kmax + 1) as usize;
    let d = spec.d;
    let total = side.pow(d as u32);
    let u = |x: &[f64]| spec.height(x);
    let errors: Vec<Option<(f64, f64)>> = (0..total)
        .into_par_iter()
        .map(|mut flat| {
            let mut x = vec![0.0; d];
            for slot in x.iter_mut() {
                *slot = ((flat % side) as i64 - kmax) as f64 * step;
                flat /= side;
            }
            let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if r > r_max {
                return Ok(None);
            }
            let fd = fd_laplacian_at(spec, &u, &x, h)?;
            let exact = spec.laplacian_of_height(r)?;
            Ok(Some(((fd - exact).abs(), r)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sup = 0.0;
    let mut worst = 0.0;
    let mut nodes = 0;
    for (e, r) in errors.into_iter().flatten() {
        nodes += 1;
        if e > sup {
            sup = e;
            worst = r;
        }
    }
    Ok(LaplacianSweep { h, nodes, sup_error: sup, worst_radius: worst })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::fd_gradient_norm_sq;
    use crate::profile::ProfileKind;
    use proptest::prelude::*;

    fn cap(d: usize) -> WarpedDiscSpec {
        WarpedDiscSpec::new(d, 1.0, 0.0, CapOrientation::MinCap).unwrap()
    }

    #[test]
    fn metric_zones() {
        let s = cap(3);
        let g = s.metric_at(&[0.1, 0.2, -0.3]).unwrap();
        assert!((g - DMatrix::identity(3, 3)).abs().max() < 1e-15);
        let x = [0.5, 0.5, 0.5];
        let r: f64 = 0.75f64.sqrt();
        let eig = s.metric_at(&x).unwrap().symmetric_eigen().eigenvalues;
        let mut e: Vec<f64> = eig.iter().copied().collect();
        e.sort_by(f64::total_cmp);
        // tangential eigenvalue in Cartesian form is G^2 / r^2
        assert!((e[0] - 1.0 / (r * r)).abs() < 1e-14 && (e[1] - 1.0 / (r * r)).abs() < 1e-14);
        assert!((e[2] - 4.0 * r * r).abs() < 1e-13);
        assert!(matches!(s.metric_at(&[1.1, 0.0, 0.0]), Err(IsoflowError::OutOfChart { .. })));
        assert!(WarpedDiscSpec::new(1, 1.0, 0.0, CapOrientation::MinCap).is_err());
    }

    #[test]
    fn gradient_norm_closed_forms() {
        let s = cap(3);
        assert_eq!(s.gradient_norm_sq(0.0).unwrap(), 0.0);
        assert!((s.gradient_norm_sq(0.09).unwrap() - 0.36).abs() < 1e-15);
        assert!((s.gradient_norm_sq(0.81).unwrap() - 1.0).abs() < 1e-14);
        assert!(matches!(s.gradient_norm_sq(1.5), Err(IsoflowError::OutOfRange { .. })));
        let m = WarpedDiscSpec::new(3, 1.0, 3.0, CapOrientation::MaxCap).unwrap();
        assert!((m.gradient_norm_sq(3.0 - 0.81).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn laplacian_closed_form_zones() {
        let s = cap(3);
        assert!((s.laplacian_radial(0.2, 3).unwrap() - 6.0).abs() < 1e-14);
        assert_eq!(s.laplacian_radial(0.0, 3).unwrap(), 6.0);
        assert!(s.laplacian_radial(0.9, 3).unwrap().abs() < 1e-15);
    }

    #[test]
    fn laplacian_agrees_with_fd_at_fine_step() {
        let s = cap(3);
        let e = s.generic_direction();
        let u = |x: &[f64]| s.height(x);
        for r in [0.3, 0.55, 0.62, 0.7, 0.8] {
            let x: Vec<f64> = e.iter().map(|v| v * r).collect();
            let fd = fd_laplacian_at(&s, &u, &x, 1e-4).unwrap();
            let exact = s.laplacian_radial(r, 3).unwrap();
            assert!((fd - exact).abs() < 1e-4, "r={r}: {fd} vs {exact}");
        }
    }

    #[test]
    fn radial_geodesic_has_length_delta() {
        let s = cap(3);
        let opts = OdeOptions::default();
        let g = radial_geodesic(&s, 1.0, &opts).unwrap();
        assert!(g.deviation < 1e-6, "{}", g.deviation);
        assert!((g.length - s.delta).abs() < 1e-6, "{} vs {}", g.length, s.delta);
        let inner = radial_geodesic(&s, 0.5, &opts).unwrap();
        assert!(inner.deviation < 1e-12);
        assert!((inner.length - 0.5).abs() < 1e-9);
    }

    #[test]
    fn tangential_geodesic_stays_on_product_sphere() {
        let s = cap(3);
        let drift = tangential_geodesic_drift(&s, 0.8, 1.0, &OdeOptions::default()).unwrap();
        assert!(drift < 1e-6, "{drift}");
    }

    #[test]
    fn round_profiles_give_unit_sphere_cap() {
        let f = SmoothProfile::constant(1.0);
        let g = SmoothProfile::new(ProfileKind::Sine { amplitude: 1.0, frequency: 1.0 }, (0.0, 2.0));
        let s = WarpedDiscSpec::with_profiles(2, 1.0, 0.0, CapOrientation::MinCap, f, g).unwrap();
        assert!((s.delta - 1.0).abs() < 1e-12);
        let k = crate::chart::sectional_curvature(&s, &[0.3, 0.2], &[1.0, 0.0], &[0.0, 1.0], 1e-3).unwrap();
        assert!((k - 1.0).abs() < 1e-6, "{k}");
    }

    fn rotation(d: usize, seed: &[f64]) -> DMatrix<f64> {
        // Gram-Schmidt on a seeded matrix
        let m = DMatrix::from_fn(d, d, |i, j| seed[(i * d + j) % seed.len()] + if i == j { 2.0 } else { 0.0 });
        m.qr().q()
    }

    proptest! {
        #[test]
        fn rotation_invariance(d in 2usize..5, seed in proptest::collection::vec(-1.0f64..1.0, 16), x in proptest::collection::vec(-0.55f64..0.55, 4)) {
            let s = cap(d);
            let x = &x[..d];
            let r = rotation(d, &seed);
            let rx: Vec<f64> = (r.clone() * nalgebra::DVector::from_column_slice(x)).iter().copied().collect();
            let lhs = s.metric_at(&rx).unwrap();
            let rhs = &r * s.metric_at(x).unwrap() * r.transpose();
            prop_assert!((lhs - rhs).abs().max() < 1e-12);
        }

        #[test]
        fn product_near_boundary(r in 0.75f64..1.0) {
            // ds-coefficient of s = r^2 is F^2/(4 r^2) = 1
            let s = cap(3);
            prop_assert!((s.F.eval(r).powi(2) / (4.0 * r * r) - 1.0).abs() < 1e-15);
        }

        #[test]
        fn gradient_norm_matches_fd(r in 0.05f64..0.98) {
            let s = cap(3);
            let e = s.generic_direction();
            let x: Vec<f64> = e.iter().map(|v| v * r).collect();
            let fd = fd_gradient_norm_sq(&s, &|y: &[f64]| s.height(y), &x, 1e-3).unwrap();
            let exact = s.gradient_norm_sq(r * r).unwrap();
            prop_assert!((fd - exact).abs() < 1e-6);
        }
    }
}
