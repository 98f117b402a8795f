//! Rotationally symmetric builds with point focal sets, represented as one
//! warped product `d rho^2 + B(rho)^2 ds^2` over the arclength `rho` from
//! the minus focal point.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::chart::{integrate_geodesic, MetricField};
use crate::error::{IsoflowError, Result};
use crate::neck::{build_neck_metric, CrossSection, NeckFamily, NeckSpec, SectionMetric};
use crate::ode::OdeOptions;
use crate::quadrature::GaussRule;
use crate::report::CheckEntry;
use crate::warped_disc::{CapOrientation, WarpedDiscSpec};

/// Cells of the cumulative arclength table of a cap.
const RHO_CELLS: usize = 4096;
/// Largest admissible value mismatch of the tangential warp at a seam.
pub const SEAM_VALUE_TOLERANCE: f64 = 1e-10;

/// A cap with its cumulative arclength `rho(r) = int_0^r F`.
#[derive(Clone, Debug)]
pub struct RadialCap {
    pub spec: WarpedDiscSpec,
    table: Vec<f64>,
    rule: GaussRule,
}

impl RadialCap {
    pub fn new(spec: WarpedDiscSpec) -> Self {
        let rule = GaussRule::new(8);
        let dr = spec.eps / RHO_CELLS as f64;
        let mut table = Vec::with_capacity(RHO_CELLS + 1);
        table.push(0.0);
        for j in 0..RHO_CELLS {
            let lo = j as f64 * dr;
            let next = table[j] + rule.integrate(lo, lo + dr, |r| spec.F.eval(r));
            table.push(next);
        }
        RadialCap { spec, table, rule }
    }

    /// Arclength of the whole radius, from the table.
    pub fn length(&self) -> f64 {
        self.table[RHO_CELLS]
    }

    fn cell(&self) -> f64 {
        self.spec.eps / RHO_CELLS as f64
    }

    pub fn rho_of_r(&self, r: f64) -> f64 {
        let r = r.clamp(0.0, self.spec.eps);
        let j = ((r / self.cell()).floor() as usize).min(RHO_CELLS - 1);
        let lo = j as f64 * self.cell();
        self.table[j] + self.rule.integrate(lo, r, |s| self.spec.F.eval(s))
    }

    /// Inverse of [`Self::rho_of_r`] by safeguarded Newton inside one cell.
    pub fn r_of_rho(&self, rho: f64) -> f64 {
        if rho <= 0.0 {
            return 0.0;
        }
        if rho >= self.length() {
            return self.spec.eps;
        }
        let j = self.table.partition_point(|&v| v <= rho).saturating_sub(1).min(RHO_CELLS - 1);
        let (mut lo, mut hi) = (j as f64 * self.cell(), (j + 1) as f64 * self.cell());
        let mut r = lo + (rho - self.table[j]) / self.spec.F.eval(lo).max(1e-300);
        for _ in 0..60 {
            if !(r > lo && r < hi) {
                r = 0.5 * (lo + hi);
            }
            let val = self.rho_of_r(r) - rho;
            if val > 0.0 {
                hi = r;
            } else {
                lo = r;
            }
            if val.abs() <= 4.0 * f64::EPSILON * rho.max(1.0) || hi - lo <= f64::EPSILON * hi {
                break;
            }
            let slope = self.spec.F.eval(r);
            r = if slope > 0.0 { r - val / slope } else { 0.5 * (lo + hi) };
        }
        r
    }
}

/// Which part of the build a point of the arclength axis lies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Piece {
    MinusCap,
    Neck,
    PlusCap,
}

#[derive(Clone, Debug)]
pub struct RadialBuild {
    pub minus: RadialCap,
    pub plus: RadialCap,
    pub alpha: f64,
    pub beta: f64,
    /// Constant radius of the round neck cross-section.
    pub neck_radius: f64,
}

/// Cap-neck-cap along the arclength axis. The neck carries the constant
/// round family of radius `G(eps)`, so the cap boundary values must agree.
pub fn glue_radial(minus: WarpedDiscSpec, plus: WarpedDiscSpec, alpha: f64, beta: f64) -> Result<RadialBuild> {
    if minus.orientation != CapOrientation::MinCap || plus.orientation != CapOrientation::MaxCap {
        return Err(IsoflowError::Config("radial build needs a min cap below and a max cap above".into()));
    }
    if minus.level_offset != alpha || plus.level_offset != beta {
        return Err(IsoflowError::Config("cap level offsets must be alpha and beta".into()));
    }
    if minus.d != plus.d {
        return Err(IsoflowError::Config("caps of different dimension".into()));
    }
    let neck_length = beta - alpha - minus.eps.powi(2) - plus.eps.powi(2);
    if neck_length < -1e-12 {
        return Err(IsoflowError::InvalidInterval { lo: alpha + minus.eps.powi(2), hi: beta - plus.eps.powi(2) });
    }
    let neck_radius = minus.G.eval(minus.eps);
    let deviation = (plus.G.eval(plus.eps) - neck_radius).abs();
    if !(deviation <= SEAM_VALUE_TOLERANCE) {
        return Err(IsoflowError::Seam { deviation, location: "cap boundary spheres".into() });
    }
    Ok(RadialBuild { minus: RadialCap::new(minus), plus: RadialCap::new(plus), alpha, beta, neck_radius })
}

impl RadialBuild {
    /// Dimension of the glued manifold.
    pub fn dim(&self) -> usize {
        self.minus.spec.d
    }

    pub fn neck_length(&self) -> f64 {
        (self.beta - self.alpha - self.minus.spec.eps.powi(2) - self.plus.spec.eps.powi(2)).max(0.0)
    }

    pub fn neck_interval(&self) -> (f64, f64) {
        (self.alpha + self.minus.spec.eps.powi(2), self.beta - self.plus.spec.eps.powi(2))
    }

    /// Total focal-to-focal arclength (tabulated cap lengths).
    pub fn total_length(&self) -> f64 {
        self.minus.length() + self.neck_length() + self.plus.length()
    }

    /// Arclength positions of the seams (one when the neck is empty).
    pub fn seams(&self) -> Vec<(f64, Piece, Piece)> {
        let s0 = self.minus.length();
        if self.neck_length() > 0.0 {
            vec![(s0, Piece::MinusCap, Piece::Neck), (s0 + self.neck_length(), Piece::Neck, Piece::PlusCap)]
        } else {
            vec![(s0, Piece::MinusCap, Piece::PlusCap)]
        }
    }

    pub fn piece(&self, rho: f64) -> Piece {
        let s0 = self.minus.length();
        if rho <= s0 {
            Piece::MinusCap
        } else if rho < s0 + self.neck_length() {
            Piece::Neck
        } else {
            Piece::PlusCap
        }
    }

    /// Height `f` on `piece`, continued by that piece's own formula.
    pub fn f_on(&self, piece: Piece, rho: f64) -> f64 {
        match piece {
            Piece::MinusCap => self.alpha + self.minus.r_of_rho(rho).powi(2),
            Piece::Neck => self.neck_interval().0 + (rho - self.minus.length()),
            Piece::PlusCap => self.beta - self.plus.r_of_rho(self.total_length() - rho).powi(2),
        }
    }

    /// Tangential warp `B` on `piece`.
    pub fn warp_on(&self, piece: Piece, rho: f64) -> f64 {
        match piece {
            Piece::MinusCap => self.minus.spec.G.eval(self.minus.r_of_rho(rho)),
            Piece::Neck => self.neck_radius,
            Piece::PlusCap => self.plus.spec.G.eval(self.plus.r_of_rho(self.total_length() - rho)),
        }
    }

    /// `f` on the whole line: even about both focal points.
    pub fn f(&self, rho: f64) -> f64 {
        let rho = self.fold(rho).0;
        self.f_on(self.piece(rho), rho)
    }

    /// `B` on the whole line: odd about both focal points.
    pub fn warp(&self, rho: f64) -> f64 {
        let (rho, sign) = self.fold(rho);
        sign * self.warp_on(self.piece(rho), rho)
    }

    fn fold(&self, rho: f64) -> (f64, f64) {
        let l = self.total_length();
        if rho < 0.0 {
            (-rho, -1.0)
        } else if rho > l {
            (2.0 * l - rho, -1.0)
        } else {
            (rho, 1.0)
        }
    }

    /// The displayed three-case gradient formula `b(f)`.
    pub fn b_closed_form(&self, f: f64) -> f64 {
        let (t0, t1) = self.neck_interval();
        if f <= t0 {
            let s = (f - self.alpha).max(0.0);
            4.0 * s / self.minus.spec.F.eval(s.sqrt()).powi(2)
        } else if f >= t1 {
            let s = (self.beta - f).max(0.0);
            4.0 * s / self.plus.spec.F.eval(s.sqrt()).powi(2)
        } else {
            1.0
        }
    }

    /// Closed-form Laplacian of `f` at arclength `rho`.
    pub fn a_closed_form(&self, rho: f64) -> Result<f64> {
        match self.piece(rho) {
            Piece::MinusCap => self.minus.spec.laplacian_of_height(self.minus.r_of_rho(rho)),
            Piece::Neck => Ok(0.0),
            Piece::PlusCap => self.plus.spec.laplacian_of_height(self.plus.r_of_rho(self.total_length() - rho)),
        }
    }

    /// The neck as a product chart on the stereographic sphere.
    pub fn neck_spec(&self) -> Result<NeckSpec> {
        let m = self.dim() - 1;
        build_neck_metric(NeckSpec {
            cross_section: CrossSection::SphereChart { dim: m, extent: 1.0 },
            t_interval: self.neck_interval(),
            family: NeckFamily::constant(SectionMetric::RoundStereographic { dim: m, radius: self.neck_radius }),
            collar: 0.0,
            section_nodes: 4,
        })
    }
}

fn d1(f: &dyn Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (8.0 * (f(x + h) - f(x - h)) - (f(x + 2.0 * h) - f(x - 2.0 * h))) / (12.0 * h)
}

fn d2(f: &dyn Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (-(f(x + 2.0 * h) + f(x - 2.0 * h)) + 16.0 * (f(x + h) + f(x - h)) - 30.0 * f(x)) / (12.0 * h * h)
}

/// One-sided fourth-order first and second derivatives; `dir = 1` reads
/// `x, x + h, ...`, `dir = -1` reads `x, x - h, ...`.
fn one_sided(f: &dyn Fn(f64) -> f64, x: f64, h: f64, dir: f64) -> (f64, f64, f64) {
    let v: Vec<f64> = (0..6).map(|k| f(x + dir * k as f64 * h)).collect();
    let first = dir * (-25.0 * v[0] + 48.0 * v[1] - 36.0 * v[2] + 16.0 * v[3] - 3.0 * v[4]) / (12.0 * h);
    let second =
        (45.0 * v[0] - 154.0 * v[1] + 214.0 * v[2] - 156.0 * v[3] + 61.0 * v[4] - 10.0 * v[5]) / (12.0 * h * h);
    (v[0], first, second)
}

/// Empirical profiles along the arclength axis.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RadialSamples {
    pub rho: Vec<f64>,
    pub f: Vec<f64>,
    /// `(df/drho)^2` by central differences.
    pub b: Vec<f64>,
    /// `f'' + (n - 1) (B'/B) f'` by central differences.
    pub a: Vec<f64>,
    pub b_formula: Vec<f64>,
    pub a_formula: Vec<f64>,
}

impl RadialSamples {
    pub fn b_error(&self) -> f64 {
        self.b.iter().zip(&self.b_formula).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }
    pub fn a_error(&self) -> f64 {
        self.a.iter().zip(&self.a_formula).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }
}

/// Samples spaced by `resolution` (which is also the difference step).
pub fn radial_samples(build: &RadialBuild, resolution: f64) -> Result<RadialSamples> {
    let h = resolution;
    let l = build.total_length();
    let count = (l / h).floor() as usize;
    let mut rhos: Vec<f64> = (0..=count).map(|k| k as f64 * h).collect();
    if l - rhos[count] > 1e-12 {
        rhos.push(l);
    }
    let f = |r: f64| build.f(r);
    let bw = |r: f64| build.warp(r);
    let n1 = (build.dim() - 1) as f64;
    let mut out = RadialSamples::default();
    for &rho in &rhos {
        let df = d1(&f, rho, h);
        let ddf = d2(&f, rho, h);
        let focal = rho == 0.0 || (rho - l).abs() < 1e-12;
        let a = if focal { build.dim() as f64 * ddf } else { ddf + n1 * d1(&bw, rho, h) / bw(rho) * df };
        let fv = f(rho);
        out.rho.push(rho);
        out.f.push(fv);
        out.b.push(df * df);
        out.a.push(a);
        out.b_formula.push(build.b_closed_form(fv));
        out.a_formula.push(build.a_closed_form(rho)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeamJump {
    pub rho: f64,
    pub left: Piece,
    pub right: Piece,
    /// Jumps of the tangential metric coefficient `B^2` and its first two
    /// normal derivatives.
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    /// Jump of `b = (df/drho)^2`.
    pub b_jump: f64,
}

/// One-sided differences of each piece's own formulas at every seam.
pub fn radial_seam_jumps(build: &RadialBuild, h: f64) -> Vec<SeamJump> {
    build
        .seams()
        .into_iter()
        .map(|(rho, left, right)| {
            let gl = move |r: f64| build.warp_on(left, r).powi(2);
            let gr = move |r: f64| build.warp_on(right, r).powi(2);
            let (l0, l1, l2) = one_sided(&gl, rho, h, -1.0);
            let (r0, r1, r2) = one_sided(&gr, rho, h, 1.0);
            let fl = move |r: f64| build.f_on(left, r);
            let fr = move |r: f64| build.f_on(right, r);
            let (_, bl, _) = one_sided(&fl, rho, h, -1.0);
            let (_, br, _) = one_sided(&fr, rho, h, 1.0);
            SeamJump {
                rho,
                left,
                right,
                c0: (l0 - r0).abs(),
                c1: (l1 - r1).abs(),
                c2: (l2 - r2).abs(),
                b_jump: (bl * bl - br * br).abs(),
            }
        })
        .collect()
}

/// Radial and tangential sectional curvatures `-B''/B`, `(1 - B'^2)/B^2`.
pub fn warped_curvatures(build: &RadialBuild, rho: f64, h: f64) -> (f64, f64) {
    let bw = |r: f64| build.warp(r);
    let b = bw(rho);
    let db = d1(&bw, rho, h);
    (-d2(&bw, rho, h) / b, (1.0 - db * db) / (b * b))
}

/// Cap metric continued past its boundary (the geodesic legs stop on the
/// boundary but their trial stages may overshoot it).
struct ExtendedCap<'a>(&'a WarpedDiscSpec);

impl MetricField for ExtendedCap<'_> {
    fn dim(&self) -> usize {
        self.0.d
    }
    fn metric(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.0.metric_extended(x))
    }
}

/// Stereographic projection of the unit sphere from `-e_last`, with its
/// differential applied to `du`.
fn stereo(u: &[f64], du: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let m = u.len() - 1;
    let q = 1.0 + u[m];
    let y = (0..m).map(|i| u[i] / q).collect();
    let dy = (0..m).map(|i| du[i] / q - u[i] * du[m] / (q * q)).collect();
    (y, dy)
}

fn inverse_stereo(y: &[f64], dy: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let y2: f64 = y.iter().map(|v| v * v).sum();
    let ydy: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    let q = 1.0 + y2;
    let mut u: Vec<f64> = y.iter().map(|v| 2.0 * v / q).collect();
    u.push((1.0 - y2) / q);
    let mut du: Vec<f64> = y.iter().zip(dy).map(|(v, d)| 2.0 * d / q - 4.0 * v * ydy / (q * q)).collect();
    du.push(-4.0 * ydy / (q * q));
    (u, du)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocalGeodesic {
    pub length: f64,
    /// `delta_- + delta_+ + beta - alpha - eps_-^2 - eps_+^2`.
    pub target: f64,
    /// Arc lengths of the minus-cap, neck and plus-cap legs.
    pub legs: Vec<f64>,
}

/// Geodesic from the minus focal point with radial initial velocity, carried
/// through the neck chart into the plus cap until it crosses the plus focal
/// point.
pub fn focal_geodesic_length(build: &RadialBuild, opts: &OdeOptions) -> Result<FocalGeodesic> {
    let (minus, plus) = (&build.minus.spec, &build.plus.spec);
    let e = minus.generic_direction();
    let d = build.dim();
    let x0 = vec![0.0; d];
    let v0: Vec<f64> = e.iter().map(|c| c / minus.F.eval(0.0)).collect();
    let eps_m = minus.eps;
    let out_event = move |x: &[f64], _v: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt() - eps_m;
    let leg1 = integrate_geodesic(&ExtendedCap(minus), &x0, &v0, 4.0 * (minus.delta + 1.0), opts, Some(&out_event), false)?;
    if !leg1.solution.event {
        return Err(IsoflowError::GeodesicRouting("never left the minus cap".into()));
    }
    // minus boundary -> neck coordinates (y, t), t = alpha + r^2
    let (x, v) = (leg1.position(), leg1.velocity());
    let r = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let u: Vec<f64> = x.iter().map(|a| a / r).collect();
    let rdot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let udot: Vec<f64> = v.iter().zip(&u).map(|(vi, ui)| (vi - ui * rdot) / r).collect();
    let (mut y, mut ydot) = stereo(&u, &udot);
    let mut t = build.alpha + r * r;
    let mut tdot = 2.0 * r * rdot;
    let mut legs = vec![leg1.length()];

    let (_, t_top) = build.neck_interval();
    if build.neck_length() > 0.0 {
        let neck = build.neck_spec()?;
        let m = d - 1;
        let mut p = y.clone();
        p.push(t);
        let mut pv = ydot.clone();
        pv.push(tdot);
        let top_event = move |q: &[f64], _v: &[f64]| q[m] - t_top;
        let leg2 = integrate_geodesic(&neck, &p, &pv, 4.0 * (build.neck_length() + 1.0), opts, Some(&top_event), false)?;
        if !leg2.solution.event {
            return Err(IsoflowError::GeodesicRouting("never crossed the neck".into()));
        }
        y = leg2.position()[..m].to_vec();
        ydot = leg2.velocity()[..m].to_vec();
        t = leg2.position()[m];
        tdot = leg2.velocity()[m];
        legs.push(leg2.length());
    } else {
        legs.push(0.0);
    }

    // neck -> plus cap, r^2 = beta - t
    let (u, udot) = inverse_stereo(&y, &ydot);
    let r = (build.beta - t).max(0.0).sqrt();
    let rdot = -tdot / (2.0 * r);
    let x3: Vec<f64> = u.iter().map(|a| a * r).collect();
    let v3: Vec<f64> = u.iter().zip(&udot).map(|(a, b)| rdot * a + r * b).collect();
    let centre_event = |x: &[f64], v: &[f64]| x.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let leg3 = integrate_geodesic(&ExtendedCap(plus), &x3, &v3, 4.0 * (plus.delta + 1.0), opts, Some(&centre_event), false)?;
    if !leg3.solution.event {
        return Err(IsoflowError::GeodesicRouting("never reached the plus focal point".into()));
    }
    legs.push(leg3.length());
    Ok(FocalGeodesic {
        length: legs.iter().sum(),
        target: minus.delta + plus.delta + build.neck_length(),
        legs,
    })
}

/// Certificates of the radial representation at `resolution`.
pub fn radial_checks(build: &RadialBuild, resolution: f64, opts: &OdeOptions) -> Result<Vec<CheckEntry>> {
    let samples = radial_samples(build, resolution)?;
    let jumps = radial_seam_jumps(build, resolution);
    let geo = focal_geodesic_length(build, opts)?;
    let worst = |sel: fn(&SeamJump) -> f64| jumps.iter().map(sel).fold(0.0, f64::max);
    let mut out = vec![
        CheckEntry::new("assembly.transnormal.piecewise_b", "transnormal:piecewise-gradient", samples.b_error(), 1e-5, resolution)
            .detail("samples", samples.rho.len() as f64),
        CheckEntry::new("assembly.isoparametric.radial_a", "isoparametric:cap-and-neck-laplacian", samples.a_error(), 1e-5, resolution),
        CheckEntry::new("assembly.seam.c0", "seam:metric-continuous", worst(|j| j.c0), 1e-8, resolution),
        CheckEntry::new("assembly.seam.c1", "seam:metric-c1", worst(|j| j.c1), 1e-6, resolution),
        CheckEntry::new("assembly.seam.c2", "seam:metric-c2", worst(|j| j.c2), 1e-4, resolution),
        CheckEntry::new("assembly.seam.b_continuity", "transnormal:b-continuous", worst(|j| j.b_jump), 1e-6, resolution),
        CheckEntry::new(
            "assembly.focal_geodesic_length",
            "assembly:focal-distance-two-delta-plus-neck",
            (geo.length - geo.target).abs(),
            1e-6,
            opts.rtol,
        )
        .detail("length", geo.length)
        .detail("target", geo.target),
    ];
    let b_focal = samples.b.first().copied().unwrap_or(f64::NAN).abs().max(samples.b.last().copied().unwrap_or(f64::NAN).abs());
    out.push(CheckEntry::new("assembly.transnormal.focal_b_zero", "transnormal:critical-at-focal-levels", b_focal, 1e-10, resolution));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::sectional_curvature;
    use crate::profile::{ProfileKind, SmoothProfile};
    use std::f64::consts::FRAC_PI_2;

    fn standard(d: usize, eps: f64, alpha: f64, beta: f64) -> RadialBuild {
        let minus = WarpedDiscSpec::new(d, eps, alpha, CapOrientation::MinCap).unwrap();
        let plus = WarpedDiscSpec::new(d, eps, beta, CapOrientation::MaxCap).unwrap();
        glue_radial(minus, plus, alpha, beta).unwrap()
    }

    fn round_cap(orientation: CapOrientation, offset: f64) -> WarpedDiscSpec {
        let f = SmoothProfile::constant(1.0);
        let g = SmoothProfile::new(ProfileKind::Sine { amplitude: 1.0, frequency: 1.0 }, (0.0, FRAC_PI_2));
        WarpedDiscSpec::with_profiles(3, FRAC_PI_2, offset, orientation, f, g).unwrap()
    }

    #[test]
    fn arclength_inverse_round_trips() {
        let b = standard(3, 1.0, 0.0, 3.0);
        assert!((b.minus.length() - 1.232_692_580_614_307).abs() < 1e-12);
        for r in [0.0, 0.1, 0.55, 0.62, 0.74, 0.9, 1.0] {
            assert!((b.minus.r_of_rho(b.minus.rho_of_r(r)) - r).abs() < 1e-13);
        }
    }

    #[test]
    fn gradient_formula_round_sphere_scenario() {
        let b = standard(3, 1.0, 0.0, 3.0);
        let s = radial_samples(&b, 1e-3).unwrap();
        assert!(s.b_error() < 1e-5, "{}", s.b_error());
        assert!(s.a_error() < 1e-5, "{}", s.a_error());
        // Euclidean zone: a -> 2 d at the focal point
        assert!((s.a[0] - 6.0).abs() < 1e-6);
        for j in radial_seam_jumps(&b, 1e-3) {
            assert!(j.c0 < 1e-12 && j.c1 < 1e-10 && j.c2 < 1e-8, "{j:?}");
            assert!(j.b_jump < 1e-8);
        }
    }

    #[test]
    fn focal_geodesic_matches_target() {
        let b = standard(3, 1.0, 0.0, 3.0);
        let g = focal_geodesic_length(&b, &OdeOptions::default()).unwrap();
        assert!((g.target - (2.0 * 1.232_692_580_614_307 + 1.0)).abs() < 1e-9);
        assert!((g.length - g.target).abs() < 1e-6, "{} vs {}", g.length, g.target);
        assert!((g.legs[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn flat_caps_give_two_eps_plus_neck() {
        let f = SmoothProfile::constant(1.0);
        let g = SmoothProfile::new(ProfileKind::Affine { offset: 0.0, slope: 1.0 }, (0.0, 1.0));
        let eps = 0.5;
        let mk = |o, off| WarpedDiscSpec::with_profiles(2, eps, off, o, f.clone(), g.clone()).unwrap();
        let b = glue_radial(mk(CapOrientation::MinCap, 0.0), mk(CapOrientation::MaxCap, 1.0), 0.0, 1.0).unwrap();
        let geo = focal_geodesic_length(&b, &OdeOptions::default()).unwrap();
        assert!((geo.target - (2.0 * eps + 1.0 - 2.0 * eps * eps)).abs() < 1e-10);
        assert!((geo.length - geo.target).abs() < 1e-6);
    }

    #[test]
    fn mismatched_boundary_spheres_rejected() {
        let minus = WarpedDiscSpec::new(3, 1.0, 0.0, CapOrientation::MinCap).unwrap();
        let mut plus = WarpedDiscSpec::new(3, 1.0, 3.0, CapOrientation::MaxCap).unwrap();
        plus.G = SmoothProfile::new(ProfileKind::Affine { offset: 0.0, slope: 1.1 }, (0.0, 1.0));
        assert!(matches!(glue_radial(minus, plus, 0.0, 3.0), Err(IsoflowError::Seam { .. })));
    }

    #[test]
    fn round_regression_has_unit_curvature() {
        let beta = 2.0 * FRAC_PI_2 * FRAC_PI_2;
        let b = glue_radial(round_cap(CapOrientation::MinCap, 0.0), round_cap(CapOrientation::MaxCap, beta), 0.0, beta)
            .unwrap();
        assert_eq!(b.neck_length(), 0.0);
        for rho in [0.3, 1.0, FRAC_PI_2, 2.2, 2.9] {
            let (kr, kt) = warped_curvatures(&b, rho, 1e-3);
            assert!((kr - 1.0).abs() < 1e-3 && (kt - 1.0).abs() < 1e-3, "{rho}: {kr} {kt}");
        }
        let cap = round_cap(CapOrientation::MinCap, 0.0);
        let k = sectional_curvature(&cap, &[0.3, 0.2, 0.4], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.5], 1e-3).unwrap();
        assert!((k - 1.0).abs() < 1e-3, "{k}");
        let geo = focal_geodesic_length(&b, &OdeOptions::default()).unwrap();
        assert!((geo.length - std::f64::consts::PI).abs() < 1e-6);
    }
}
