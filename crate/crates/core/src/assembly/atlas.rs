//! Three-chart builds with disc-bundle caps over a circle: minus cap, neck on
//! the boundary torus `(p, theta)`, plus cap reached through a gluing
//! diffeomorphism of the torus.

use std::f64::consts::TAU;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::SubmersionBundleSpec;
use crate::chart::{fd_gradient_norm_sq, fd_laplacian_extrapolated, Lattice, MetricField};
use crate::conformal::{correct_neck, ConformalCorrection, ConformalSummary};
use crate::error::{IsoflowError, Result};
use crate::moser::{global_moser, DensityField, GlobalMoser, GlobalMoserOptions};
use crate::neck::{build_neck_metric, CrossSection, NeckFamily, NeckSpec, SectionMetric};
use crate::report::CheckEntry;
use crate::stats::{bin_by_level, BinFit, DEFAULT_BINS_PER_UNIT};
use crate::warped_disc::CapOrientation;

/// Period of both torus coordinates.
pub const TORUS_PERIOD: f64 = TAU;
/// Node-wise tolerance of the endpoint match required by [`AtlasBuild::glue`].
pub const ENDPOINT_TOLERANCE: f64 = 1e-10;

/// `Phi(p, theta) = (p + a sin p, theta + b sin p)` followed (on the right)
/// by an optional Moser correction `psi`, so the map is `Phi o psi`.
#[derive(Clone)]
pub struct TorusGluing {
    pub stretch: f64,
    pub twist: f64,
    pub moser: Option<Arc<GlobalMoser>>,
}

impl std::fmt::Debug for TorusGluing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "TorusGluing {{ stretch: {}, twist: {}, corrected: {} }}", self.stretch, self.twist, self.moser.is_some())
    }
}

impl TorusGluing {
    pub fn new(stretch: f64, twist: f64) -> Result<Self> {
        if !(stretch.abs() < 1.0) {
            return Err(IsoflowError::InvalidParameter { name: "stretch", value: stretch, reason: "|a| < 1 keeps Phi a diffeomorphism" });
        }
        Ok(TorusGluing { stretch, twist, moser: None })
    }

    pub fn phi(&self, y: &[f64]) -> Vec<f64> {
        let s = y[0].sin();
        vec![y[0] + self.stretch * s, y[1] + self.twist * s]
    }

    pub fn phi_jacobian(&self, y: &[f64]) -> DMatrix<f64> {
        let c = y[0].cos();
        DMatrix::from_row_slice(2, 2, &[1.0 + self.stretch * c, 0.0, self.twist * c, 1.0])
    }

    /// `det D Phi`, the pullback density of the flat area form.
    pub fn phi_density(&self, y: &[f64]) -> f64 {
        1.0 + self.stretch * y[0].cos()
    }

    pub fn map(&self, y: &[f64]) -> Vec<f64> {
        match &self.moser {
            Some(m) => self.phi(&m.apply(y)),
            None => self.phi(y),
        }
    }

    pub fn jacobian(&self, y: &[f64]) -> DMatrix<f64> {
        match &self.moser {
            Some(m) => self.phi_jacobian(&m.apply(y)) * m.jacobian_at(y),
            None => self.phi_jacobian(y),
        }
    }

    /// Solve `psi^*(Phi^* dA) = dA` on an `n x n` grid and attach `psi`.
    pub fn with_moser(mut self, n: usize, opts: &GlobalMoserOptions) -> Result<Self> {
        let lat = Lattice::periodic(2, n, TORUS_PERIOD);
        let me = self.clone();
        let tau = DensityField::from_fn(lat.clone(), 0.0, move |y| me.phi_density(y))?;
        let sigma = DensityField::from_fn(lat, 0.0, |_| 1.0)?;
        self.moser = Some(Arc::new(global_moser(&tau, &sigma, opts)?));
        Ok(self)
    }
}

/// How the neck family passes from the bottom to the top boundary metric.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NeckBlend {
    /// Smooth step, frozen on both collars.
    Frozen,
    /// Linear in `t` from seam to seam; the unfrozen-collar control.
    Unfrozen,
}

/// The collar chart `(p, theta, t) -> (p, r(t) (cos theta, sin theta))` of
/// a circle-bundle cap, with `r = sqrt(|t - level|)`.
fn collar_chart(cap: &SubmersionBundleSpec, q: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let (p, th, t) = (q[0], q[1], q[2]);
    let fiber = &cap.fiber;
    let (s2, sign) = match fiber.orientation {
        CapOrientation::MinCap => (t - fiber.level_offset, 1.0),
        CapOrientation::MaxCap => (fiber.level_offset - t, -1.0),
    };
    let r = s2.max(0.0).sqrt();
    let (sn, cs) = th.sin_cos();
    let x = vec![p, r * cs, r * sn];
    let dr = sign / (2.0 * r);
    let j = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, -r * sn, dr * cs, 0.0, r * cs, dr * sn]);
    (x, j)
}

/// Cap metric pulled back to collar coordinates `(p, theta, t)`.
pub fn collar_metric(cap: &SubmersionBundleSpec, q: &[f64]) -> Result<DMatrix<f64>> {
    let (x, j) = collar_chart(cap, q);
    Ok(j.transpose() * cap.total_metric(&x)? * j)
}

/// Plus-cap collar metric seen from neck coordinates through the gluing.
fn glued_plus_metric(cap: &SubmersionBundleSpec, gluing: &TorusGluing, q: &[f64]) -> Result<DMatrix<f64>> {
    let y = gluing.map(&q[..2]);
    let d = gluing.jacobian(&q[..2]);
    let mut jb = DMatrix::<f64>::identity(3, 3);
    jb.view_mut((0, 0), (2, 2)).copy_from(&d);
    let g = collar_metric(cap, &[y[0], y[1], q[2]])?;
    Ok(jb.transpose() * g * jb)
}

pub struct AtlasBuild {
    pub minus: SubmersionBundleSpec,
    pub plus: SubmersionBundleSpec,
    pub gluing: TorusGluing,
    pub neck: NeckSpec,
    pub correction: Option<ConformalCorrection>,
    pub alpha: f64,
    pub beta: f64,
}

impl AtlasBuild {
    /// Glue two circle-bundle caps through `gluing`; the neck family joins
    /// the two induced boundary metrics.
    pub fn glue(
        minus: SubmersionBundleSpec,
        plus: SubmersionBundleSpec,
        gluing: TorusGluing,
        collar: f64,
        blend: NeckBlend,
    ) -> Result<Self> {
        for cap in [&minus, &plus] {
            cap.validate()?;
            if cap.base_dim() != 1 || cap.fiber.d != 2 || (cap.base_periods[0] - TORUS_PERIOD).abs() > 1e-15 {
                return Err(IsoflowError::Config("atlas caps are disc-2 bundles over a circle of period 2 pi".into()));
            }
        }
        if minus.fiber.orientation != CapOrientation::MinCap || plus.fiber.orientation != CapOrientation::MaxCap {
            return Err(IsoflowError::Config("atlas build needs a min cap below and a max cap above".into()));
        }
        let alpha = minus.fiber.level_offset;
        let beta = plus.fiber.level_offset;
        let interval = (alpha + minus.fiber.eps.powi(2), beta - plus.fiber.eps.powi(2));
        let (lo, hi) = interval;
        let bottom_cap = minus.clone();
        let bottom = SectionMetric::Custom {
            dim: 2,
            metric: Arc::new(move |y: &[f64]| {
                collar_metric(&bottom_cap, &[y[0], y[1], lo]).expect("boundary inside chart").view((0, 0), (2, 2)).into()
            }),
        };
        let (top_cap, top_glue) = (plus.clone(), gluing.clone());
        let top = SectionMetric::Custom {
            dim: 2,
            metric: Arc::new(move |y: &[f64]| {
                glued_plus_metric(&top_cap, &top_glue, &[y[0], y[1], hi]).expect("boundary inside chart").view((0, 0), (2, 2)).into()
            }),
        };
        let family = match blend {
            NeckBlend::Frozen => {
                NeckFamily::Samples { t_samples: vec![lo + collar, hi - collar], metrics: vec![bottom, top] }
            }
            NeckBlend::Unfrozen => NeckFamily::Linear { t_samples: vec![lo, hi], metrics: vec![bottom, top] },
        };
        let neck = build_neck_metric(NeckSpec {
            cross_section: CrossSection::FlatTorus { periods: vec![TORUS_PERIOD; 2] },
            t_interval: interval,
            family,
            collar: if blend == NeckBlend::Frozen { collar } else { 0.0 },
            section_nodes: 6,
        })?;
        let build = AtlasBuild { minus, plus, gluing, neck, correction: None, alpha, beta };
        let deviation = build.endpoint_mismatch()?;
        if !(deviation <= ENDPOINT_TOLERANCE) {
            return Err(IsoflowError::Seam { deviation, location: "neck endpoint families".into() });
        }
        Ok(build)
    }

    /// Largest node-wise difference between the neck endpoint metrics and
    /// the cap boundary metrics.
    pub fn endpoint_mismatch(&self) -> Result<f64> {
        let (lo, hi) = self.neck.t_interval;
        let mut worst = 0.0f64;
        for y in self.neck.section_nodes() {
            let a = collar_metric(&self.minus, &[y[0], y[1], lo])?;
            let b = glued_plus_metric(&self.plus, &self.gluing, &[y[0], y[1], hi])?;
            let na = self.neck.metric(&[y[0], y[1], lo])?;
            let nb = self.neck.metric(&[y[0], y[1], hi])?;
            worst = worst.max((a - na).abs().max()).max((b - nb).abs().max());
        }
        Ok(worst)
    }

    /// Apply the conformal correction to the neck.
    pub fn correct(&mut self) -> Result<ConformalSummary> {
        let (corr, summary) = correct_neck(&self.neck, 3, None)?;
        self.correction = Some(corr);
        Ok(summary)
    }

    /// The neck chart actually in use.
    pub fn neck_field(&self) -> Box<dyn MetricField + '_> {
        match &self.correction {
            Some(c) => Box::new(c.corrected_metric()),
            None => Box::new(&self.neck),
        }
    }

    /// Seam jumps of all metric components and their first two `t`
    /// derivatives, one-sided on each side, over the section nodes.
    pub fn seam_jumps(&self, h: f64) -> Result<[AtlasSeamJump; 2]> {
        let neck = self.neck_field();
        let (lo, hi) = self.neck.t_interval;
        let minus = |q: &[f64]| collar_metric(&self.minus, q);
        let plus = |q: &[f64]| glued_plus_metric(&self.plus, &self.gluing, q);
        let neck_m = |q: &[f64]| neck.metric(q);
        let nodes = self.neck.section_nodes();
        Ok([seam_jump(&minus, &neck_m, &nodes, lo, h)?, seam_jump(&neck_m, &plus, &nodes, hi, h)?])
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AtlasSeamJump {
    pub t: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

type MetricFn<'a> = dyn Fn(&[f64]) -> Result<DMatrix<f64>> + 'a;

fn seam_jump(below: &MetricFn, above: &MetricFn, nodes: &[Vec<f64>], t: f64, h: f64) -> Result<AtlasSeamJump> {
    let mut out = AtlasSeamJump { t, ..Default::default() };
    for y in nodes {
        let side = |f: &MetricFn, dir: f64| -> Result<[DMatrix<f64>; 3]> {
            let v: Vec<DMatrix<f64>> =
                (0..6).map(|k| f(&[y[0], y[1], t + dir * k as f64 * h])).collect::<Result<_>>()?;
            let d1 = (&v[0] * -25.0 + &v[1] * 48.0 - &v[2] * 36.0 + &v[3] * 16.0 - &v[4] * 3.0) * (dir / (12.0 * h));
            let d2 = (&v[0] * 45.0 - &v[1] * 154.0 + &v[2] * 214.0 - &v[3] * 156.0 + &v[4] * 61.0 - &v[5] * 10.0)
                / (12.0 * h * h);
            Ok([v[0].clone(), d1, d2])
        };
        let [b0, b1, b2] = side(below, -1.0)?;
        let [a0, a1, a2] = side(above, 1.0)?;
        out.c0 = out.c0.max((b0 - a0).abs().max());
        out.c1 = out.c1.max((b1 - a1).abs().max());
        out.c2 = out.c2.max((b2 - a2).abs().max());
    }
    Ok(out)
}

/// One level-set node and its FD readings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSample {
    pub f: f64,
    pub chart: super::radial::Piece,
    pub grad_sq: f64,
    pub laplacian: f64,
    pub b_formula: f64,
    /// Closed-form Laplacian (caps), or `h(t)` on a corrected neck.
    pub a_formula: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelOptions {
    pub bins_per_unit: f64,
    /// Nodes per level along each of the two level-set coordinates.
    pub nodes_per_axis: usize,
    pub fd_step: f64,
}

impl Default for LevelOptions {
    fn default() -> Self {
        LevelOptions { bins_per_unit: DEFAULT_BINS_PER_UNIT, nodes_per_axis: 5, fd_step: 1e-3 }
    }
}

/// FD gradient norm and (extrapolated) Laplacian of `f` at nodes placed on
/// the level sets through the bin centres, in whichever chart contains each
/// level.
pub fn level_samples(build: &AtlasBuild, opts: &LevelOptions) -> Result<Vec<LevelSample>> {
    use super::radial::Piece;
    let width = 1.0 / opts.bins_per_unit;
    let count = ((build.beta - build.alpha) / width).floor() as usize;
    let (lo, hi) = build.neck.t_interval;
    let k = opts.nodes_per_axis;
    let angles: Vec<f64> = (0..k).map(|i| TORUS_PERIOD * (i as f64 + 0.31) / k as f64).collect();
    let neck = build.neck_field();
    let neck_ref: &dyn MetricField = &*neck;
    let h = opts.fd_step;
    let mut jobs: Vec<(f64, f64, f64)> = Vec::with_capacity(count * k * k);
    for b in 0..count {
        let f = build.alpha + (b as f64 + 0.5) * width;
        for &p in &angles {
            for &th in &angles {
                jobs.push((f, p, th));
            }
        }
    }
    jobs.par_iter()
        .map(|&(f, p, th)| {
            if f <= lo || f >= hi {
                let (cap, piece) = if f <= lo { (&build.minus, Piece::MinusCap) } else { (&build.plus, Piece::PlusCap) };
                let r = cap.fiber.radius_of(f)?;
                let x = [p, r * th.cos(), r * th.sin()];
                let u = |q: &[f64]| cap.height(q);
                Ok(LevelSample {
                    f,
                    chart: piece,
                    grad_sq: fd_gradient_norm_sq(cap, &u, &x, h)?,
                    laplacian: fd_laplacian_extrapolated(cap, &u, &x, h)?,
                    b_formula: cap.fiber.gradient_norm_sq(f)?,
                    a_formula: Some(cap.fiber.laplacian_of_height(r)?),
                })
            } else {
                let x = [p, th, f];
                let u = |q: &[f64]| q[2];
                Ok(LevelSample {
                    f,
                    chart: Piece::Neck,
                    grad_sq: fd_gradient_norm_sq(neck_ref, &u, &x, h)?,
                    laplacian: fd_laplacian_extrapolated(neck_ref, &u, &x, h)?,
                    b_formula: 1.0,
                    a_formula: build.correction.as_ref().map(|c| c.h.eval(f)),
                })
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelCertificates {
    pub transnormal_spread: f64,
    pub b_error: f64,
    pub isoparametric_spread: f64,
    /// Largest `|Delta f - a|` where a closed form or `h` is available.
    pub a_error: f64,
    pub min_regular_gradient: f64,
}

pub fn level_certificates(build: &AtlasBuild, samples: &[LevelSample], opts: &LevelOptions) -> LevelCertificates {
    let grad: Vec<(f64, f64)> = samples.iter().map(|s| (s.f, s.grad_sq)).collect();
    let lap: Vec<(f64, f64)> = samples.iter().map(|s| (s.f, s.laplacian)).collect();
    let b_error = samples.iter().map(|s| (s.grad_sq - s.b_formula).abs()).fold(0.0, f64::max);
    let a_error = samples
        .iter()
        .filter_map(|s| s.a_formula.map(|a| (s.laplacian - a).abs()))
        .fold(0.0, f64::max);
    // regularity away from the focal collars of radius eps / 8
    let ex_m = build.alpha + (build.minus.fiber.eps / 8.0).powi(2);
    let ex_p = build.beta - (build.plus.fiber.eps / 8.0).powi(2);
    let min_regular_gradient = samples
        .iter()
        .filter(|s| s.f > ex_m && s.f < ex_p)
        .map(|s| s.grad_sq)
        .fold(f64::INFINITY, f64::min);
    LevelCertificates {
        transnormal_spread: bin_by_level(&grad, build.alpha, opts.bins_per_unit, BinFit::Constant).max_spread(),
        b_error,
        isoparametric_spread: bin_by_level(&lap, build.alpha, opts.bins_per_unit, BinFit::Constant).max_spread(),
        a_error,
        min_regular_gradient,
    }
}

/// Report entries for the atlas build; `expect_isoparametric` is false for
/// the uncorrected-neck control.
pub fn atlas_checks(build: &AtlasBuild, opts: &LevelOptions, expect_isoparametric: bool) -> Result<Vec<CheckEntry>> {
    let samples = level_samples(build, opts)?;
    let cert = level_certificates(build, &samples, opts);
    let seams = build.seam_jumps(opts.fd_step)?;
    let worst = |sel: fn(&AtlasSeamJump) -> f64| seams.iter().map(sel).fold(0.0, f64::max);
    let res = opts.fd_step;
    let iso_expect = if expect_isoparametric { crate::report::Status::Pass } else { crate::report::Status::Fail };
    Ok(vec![
        CheckEntry::new("atlas.seam.c0", "seam:metric-continuous", worst(|j| j.c0), 1e-8, res),
        CheckEntry::new("atlas.seam.c1", "seam:metric-c1", worst(|j| j.c1), 1e-6, res),
        CheckEntry::new("atlas.seam.c2", "seam:metric-c2", worst(|j| j.c2), 1e-4, res),
        CheckEntry::new("atlas.transnormal.spread", "transnormal:gradient-function-of-f", cert.transnormal_spread, 1e-5, res)
            .detail("nodes", samples.len() as f64),
        CheckEntry::new("atlas.transnormal.piecewise_b", "transnormal:piecewise-gradient", cert.b_error, 1e-5, res),
        CheckEntry::exceeds("atlas.regular_off_focal", "assembly:regular-between-focal-levels", cert.min_regular_gradient, 1e-6, res),
        CheckEntry::new("atlas.isoparametric.spread", "isoparametric:laplacian-function-of-f", cert.isoparametric_spread, 1e-4, res)
            .expect(iso_expect),
        CheckEntry::new("atlas.isoparametric.closed_forms", "isoparametric:cap-laplacian-and-h", cert.a_error, 1e-4, res),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::warped_disc::WarpedDiscSpec;

    fn cap(orientation: CapOrientation, offset: f64, h: f64, c: f64) -> SubmersionBundleSpec {
        let fiber = WarpedDiscSpec::new(2, 0.5, offset, orientation).unwrap();
        SubmersionBundleSpec::new(
            vec![TORUS_PERIOD],
            vec![h],
            fiber,
            SubmersionBundleSpec::planar_rotation(2, 1, c),
        )
        .unwrap()
    }

    fn gluing(corrected: bool) -> TorusGluing {
        let g = TorusGluing::new(0.3, 0.4).unwrap();
        if corrected {
            g.with_moser(96, &GlobalMoserOptions { steps: 64, ..Default::default() }).unwrap()
        } else {
            g
        }
    }

    #[test]
    fn boundary_metric_has_connection_block() {
        let m = cap(CapOrientation::MinCap, 0.0, 0.8, 0.3);
        let g = collar_metric(&m, &[0.4, 1.1, 0.25]).unwrap();
        let want = DMatrix::from_row_slice(3, 3, &[0.8 + 0.09, 0.3, 0.0, 0.3, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert!((g - want).abs().max() < 1e-12);
    }

    #[test]
    fn moser_gluing_is_volume_preserving() {
        let g = gluing(true);
        for y in [[0.3, 2.0], [4.0, 0.5], [5.9, 5.9]] {
            assert!((g.jacobian(&y).determinant() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn corrected_build_is_isoparametric_and_smooth() {
        let minus = cap(CapOrientation::MinCap, 0.0, 0.8, 0.3);
        let plus = cap(CapOrientation::MaxCap, 1.5, 1.2, -0.2);
        let mut b = AtlasBuild::glue(minus, plus, gluing(true), 0.1, NeckBlend::Frozen).unwrap();
        let opts = LevelOptions { nodes_per_axis: 3, ..Default::default() };
        let before = level_certificates(&b, &level_samples(&b, &opts).unwrap(), &opts);
        assert!(before.transnormal_spread < 1e-5, "{}", before.transnormal_spread);
        assert!(before.isoparametric_spread > 1e-2, "{}", before.isoparametric_spread);
        b.correct().unwrap();
        let after = level_certificates(&b, &level_samples(&b, &opts).unwrap(), &opts);
        assert!(after.isoparametric_spread < 1e-4, "{}", after.isoparametric_spread);
        assert!(after.a_error < 1e-4, "{}", after.a_error);
        let [s0, s1] = b.seam_jumps(1e-3).unwrap();
        for s in [s0, s1] {
            assert!(s.c0 < 1e-8 && s.c1 < 1e-6 && s.c2 < 1e-4, "{s:?}");
        }
    }

    #[test]
    fn unfrozen_collar_shows_c1_jump() {
        let minus = cap(CapOrientation::MinCap, 0.0, 0.8, 0.3);
        let plus = cap(CapOrientation::MaxCap, 1.5, 1.2, -0.2);
        let b = AtlasBuild::glue(minus, plus, gluing(false), 0.0, NeckBlend::Unfrozen).unwrap();
        let [s0, _] = b.seam_jumps(1e-3).unwrap();
        assert!(s0.c0 < 1e-8);
        assert!(s0.c1 > 1e-3, "{s0:?}");
    }

    #[test]
    fn uncorrected_gluing_cannot_balance() {
        let minus = cap(CapOrientation::MinCap, 0.0, 0.8, 0.3);
        let plus = cap(CapOrientation::MaxCap, 1.5, 1.2, -0.2);
        let mut b = AtlasBuild::glue(minus, plus, gluing(false), 0.1, NeckBlend::Frozen).unwrap();
        assert!(matches!(b.correct(), Err(IsoflowError::CannotBalance { .. })));
    }
}
