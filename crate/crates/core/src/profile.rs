//! Smooth one-variable profiles: the warping functions of the caps, the
//! neck schedule, target Laplacian profiles and umbilic curvature profiles.
//!
//! Every profile is evaluated on [`Jet`]s, so derivatives up to order four
//! are exact up to round-off. Flat zones record where a closed form is
//! pinned; inside a flat zone the blend factor is exactly 0 or 1, which is
//! what makes the glued metrics exact products near the seams.

use serde::{Deserialize, Serialize};

use crate::error::{IsoflowError, Result};
use crate::jet::Jet;
use crate::quadrature::{integrate_adaptive, integrate_piecewise, simpson};

/// Below this blend coordinate `exp(-1/x)` underflows to zero.
const PSI_CUTOFF: f64 = 1.0 / 740.0;

fn psi(x: Jet) -> Jet {
    if x.value() <= PSI_CUTOFF {
        Jet::zero()
    } else {
        (-x.recip()).exp()
    }
}

/// Ratio-of-exponentials smooth step on `[0, 1]`, applied to a jet.
fn unit_step(x: Jet) -> Jet {
    let v = x.value();
    if v <= 0.0 {
        return Jet::zero();
    }
    if v >= 1.0 {
        return Jet::constant(1.0);
    }
    let a = psi(x);
    let b = psi(Jet::constant(1.0) - x);
    a / (a + b)
}

fn step_jet(r: Jet, r0: f64, r1: f64) -> Jet {
    unit_step((r - r0) * (1.0 / (r1 - r0)))
}

fn psi_scalar(x: f64) -> f64 {
    if x <= PSI_CUTOFF {
        0.0
    } else {
        (-1.0 / x).exp()
    }
}

/// Scalar smooth step from 0 at `a` to 1 at `b`, flat to all orders at both
/// ends (the blend every profile is built from).
pub fn step(x: f64, a: f64, b: f64) -> f64 {
    let u = (x - a) / (b - a);
    if u <= 0.0 {
        return 0.0;
    }
    if u >= 1.0 {
        return 1.0;
    }
    let (p, q) = (psi_scalar(u), psi_scalar(1.0 - u));
    p / (p + q)
}

/// Derivative of [`step`] in `x`; integrates to 1 over `[a, b]`.
pub fn step_derivative(x: f64, a: f64, b: f64) -> f64 {
    let u = (x - a) / (b - a);
    if u <= 0.0 || u >= 1.0 {
        return 0.0;
    }
    let (p, q) = (psi_scalar(u), psi_scalar(1.0 - u));
    let (dp, dq) = (if p > 0.0 { p / (u * u) } else { 0.0 }, if q > 0.0 { q / ((1.0 - u) * (1.0 - u)) } else { 0.0 });
    (dp * q + p * dq) / ((p + q) * (p + q) * (b - a))
}

/// Scalar form of the `Bump` profile.
pub fn bump(x: f64, lo: f64, hi: f64) -> f64 {
    if x <= lo || x >= hi {
        return 0.0;
    }
    let mid = 0.5 * (lo + hi);
    step(x, lo, mid) * (1.0 - step(x, mid, hi))
}

/// Closed-form principal-curvature models for geodesic spheres.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureModel {
    /// `lambda(t) = 1/t`.
    Euclidean,
    /// `lambda(t) = cot t`.
    Round,
    /// `lambda(t) = coth t`.
    Hyperbolic,
}

impl CurvatureModel {
    fn lambda(self, t: Jet) -> Jet {
        match self {
            CurvatureModel::Euclidean => t.recip(),
            CurvatureModel::Round => {
                let (s, c) = t.sin_cos();
                c / s
            }
            CurvatureModel::Hyperbolic => {
                let (s, c) = t.sinh_cosh();
                c / s
            }
        }
    }

    /// `lambda(t) - 1/t`, evaluated without cancellation for small `t`.
    pub fn regularized(self, t: Jet) -> Jet {
        let sign = match self {
            CurvatureModel::Euclidean => return Jet::zero(),
            CurvatureModel::Round => -1.0,
            CurvatureModel::Hyperbolic => 1.0,
        };
        if t.value().abs() < 0.05 {
            // Laurent tails of coth and cot; truncation error below 1e-17.
            let c: [f64; 5] = [1.0 / 3.0, -1.0 / 45.0, 2.0 / 945.0, -1.0 / 4725.0, 2.0 / 93555.0];
            let t2 = t * t;
            let mut acc = Jet::zero();
            for ck in c.iter().rev() {
                let ck = if sign < 0.0 { -ck.abs() } else { *ck };
                acc = acc * t2 + ck;
            }
            return acc * t;
        }
        self.lambda(t) - t.recip()
    }

    /// Closed form of `exp(2 * int_0^r (lambda - 1/t) dt)`.
    pub fn warp_closed_form(self, r: f64) -> f64 {
        match self {
            CurvatureModel::Euclidean => 1.0,
            CurvatureModel::Round => {
                if r == 0.0 {
                    1.0
                } else {
                    (r.sin() / r).powi(2)
                }
            }
            CurvatureModel::Hyperbolic => {
                if r == 0.0 {
                    1.0
                } else {
                    (r.sinh() / r).powi(2)
                }
            }
        }
    }
}

/// The closed-form family a profile belongs to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum ProfileKind {
    /// 0 below `r0`, 1 above `r1`.
    SmoothStep { r0: f64, r1: f64 },
    /// Radial warp `F`: 1 on `[0, eps/2]`, `2r` on `[3eps/4, eps]`.
    RadialWarp { eps: f64 },
    /// Angular warp `G`: `r` on `[0, eps/2]`, 1 on `[3eps/4, eps]`.
    AngularWarp { eps: f64 },
    Constant { value: f64 },
    Affine { offset: f64, slope: f64 },
    /// `amplitude * sin(frequency * r)`.
    Sine { amplitude: f64, frequency: f64 },
    /// `amplitude * sinh(frequency * r)`.
    Sinh { amplitude: f64, frequency: f64 },
    /// `scale * exp(rate * r)`.
    ExpScale { scale: f64, rate: f64 },
    /// Smooth bump supported on `[lo, hi]` with peak 1 at the midpoint.
    Bump { lo: f64, hi: f64 },
    /// Collar-pinned target: `start` below `t0`, `end` above `t1`, plus a
    /// scaled bump on `[bump_lo, bump_hi]`.
    CollarBlend {
        start: f64,
        end: f64,
        t0: f64,
        t1: f64,
        amplitude: f64,
        bump_lo: f64,
        bump_hi: f64,
    },
    /// Principal curvature `lambda(t)` of geodesic spheres.
    Curvature { model: CurvatureModel },
    /// Tangential coefficient `H(r)` of a pole metric in normal coordinates,
    /// computed by quadrature of the regularized curvature.
    PoleWarp { model: CurvatureModel },
    /// Local degree-5 Lagrange interpolation through samples.
    Tabulated { xs: Vec<f64>, ys: Vec<f64> },
}

/// An interval on which a closed form holds exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatZone {
    pub lo: f64,
    pub hi: f64,
    pub form: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothProfile {
    #[serde(flatten)]
    pub kind: ProfileKind,
    pub domain: (f64, f64),
    #[serde(default)]
    pub flat_zones: Vec<FlatZone>,
}

pub fn make_smooth_step(r0: f64, r1: f64) -> Result<SmoothProfile> {
    if !(r0 < r1) || !r0.is_finite() || !r1.is_finite() {
        return Err(IsoflowError::InvalidInterval { lo: r0, hi: r1 });
    }
    Ok(SmoothProfile {
        kind: ProfileKind::SmoothStep { r0, r1 },
        domain: (f64::MIN, f64::MAX),
        flat_zones: vec![
            FlatZone { lo: f64::MIN, hi: r0, form: "0".into() },
            FlatZone { lo: r1, hi: f64::MAX, form: "1".into() },
        ],
    })
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(IsoflowError::InvalidParameter {
            name: "eps",
            value: eps,
            reason: "cap radius must be positive and finite",
        })
    }
}

#[allow(non_snake_case)]
pub fn make_F(eps: f64) -> Result<SmoothProfile> {
    check_eps(eps)?;
    Ok(SmoothProfile {
        kind: ProfileKind::RadialWarp { eps },
        domain: (0.0, eps),
        flat_zones: vec![
            FlatZone { lo: 0.0, hi: 0.5 * eps, form: "1".into() },
            FlatZone { lo: 0.75 * eps, hi: eps, form: "2r".into() },
        ],
    })
}

#[allow(non_snake_case)]
pub fn make_G(eps: f64) -> Result<SmoothProfile> {
    check_eps(eps)?;
    Ok(SmoothProfile {
        kind: ProfileKind::AngularWarp { eps },
        domain: (0.0, eps),
        flat_zones: vec![
            FlatZone { lo: 0.0, hi: 0.5 * eps, form: "r".into() },
            FlatZone { lo: 0.75 * eps, hi: eps, form: "1".into() },
        ],
    })
}

impl SmoothProfile {
    pub fn new(kind: ProfileKind, domain: (f64, f64)) -> Self {
        SmoothProfile { kind, domain, flat_zones: Vec::new() }
    }

    pub fn constant(value: f64) -> Self {
        let mut p = Self::new(
            ProfileKind::Constant { value },
            (f64::MIN, f64::MAX),
        );
        p.flat_zones.push(FlatZone {
            lo: f64::MIN,
            hi: f64::MAX,
            form: format!("{value}"),
        });
        p
    }

    pub fn bump(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(IsoflowError::InvalidInterval { lo, hi });
        }
        let mut p = Self::new(ProfileKind::Bump { lo, hi }, (f64::MIN, f64::MAX));
        p.flat_zones = vec![
            FlatZone { lo: f64::MIN, hi: lo, form: "0".into() },
            FlatZone { lo: hi, hi: f64::MAX, form: "0".into() },
        ];
        Ok(p)
    }

    pub fn tabulated(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() < 6 {
            return Err(IsoflowError::InvalidProfile(
                "tabulated profile needs at least six matching samples".into(),
            ));
        }
        if xs.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(IsoflowError::InvalidProfile(
                "tabulated abscissae must be strictly increasing".into(),
            ));
        }
        let domain = (xs[0], xs[xs.len() - 1]);
        Ok(Self::new(ProfileKind::Tabulated { xs, ys }, domain))
    }

    /// Full jet at `r`.
    pub fn jet(&self, r: f64) -> Jet {
        self.jet_of(Jet::variable(r))
    }

    fn jet_of(&self, x: Jet) -> Jet {
        let r = x.value();
        match &self.kind {
            ProfileKind::SmoothStep { r0, r1 } => step_jet(x, *r0, *r1),
            ProfileKind::RadialWarp { eps } => {
                if r <= 0.5 * eps {
                    return Jet::constant(1.0);
                }
                let s = step_jet(x, 0.5 * eps, 0.75 * eps);
                if s.value() == 1.0 && r >= 0.75 * eps {
                    return x * 2.0;
                }
                (Jet::constant(1.0) - s) + s * x * 2.0
            }
            ProfileKind::AngularWarp { eps } => {
                if r <= 0.5 * eps {
                    return x;
                }
                if r >= 0.75 * eps {
                    return Jet::constant(1.0);
                }
                let s = step_jet(x, 0.5 * eps, 0.75 * eps);
                (Jet::constant(1.0) - s) * x + s
            }
            ProfileKind::Constant { value } => Jet::constant(*value),
            ProfileKind::Affine { offset, slope } => x * *slope + *offset,
            ProfileKind::Sine { amplitude, frequency } => (x * *frequency).sin_cos().0 * *amplitude,
            ProfileKind::Sinh { amplitude, frequency } => {
                (x * *frequency).sinh_cosh().0 * *amplitude
            }
            ProfileKind::ExpScale { scale, rate } => (x * *rate).exp() * *scale,
            ProfileKind::Bump { lo, hi } => bump_jet(x, *lo, *hi),
            ProfileKind::CollarBlend { start, end, t0, t1, amplitude, bump_lo, bump_hi } => {
                let s = step_jet(x, *t0, *t1);
                let b = if *amplitude == 0.0 {
                    Jet::zero()
                } else {
                    bump_jet(x, *bump_lo, *bump_hi) * *amplitude
                };
                s * (end - start) + *start + b
            }
            ProfileKind::Curvature { model } => model.lambda(x),
            ProfileKind::PoleWarp { model } => {
                // H(r + s) = H(r) exp(2 int_r^{r+s} q)
                let h = pole_warp_value(*model, r);
                let q = model.regularized(x);
                (q.integrate() * 2.0).exp() * h
            }
            ProfileKind::Tabulated { xs, ys } => tabulated_jet(xs, ys, x),
        }
    }

    pub fn eval(&self, r: f64) -> f64 {
        self.jet(r).value()
    }

    /// k-th derivative at `r`, `k <= 4`.
    pub fn derivative(&self, k: usize, r: f64) -> f64 {
        assert!(k <= 4, "derivative order capped at 4");
        self.jet(r).derivative(k)
    }

    /// Interior breakpoints: flat-zone edges that lie inside the domain.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self
            .flat_zones
            .iter()
            .flat_map(|z| [z.lo, z.hi])
            .filter(|v| v.abs() < f64::MAX)
            .collect();
        match &self.kind {
            ProfileKind::Bump { lo, hi } => b.extend([0.5 * (lo + hi)]),
            ProfileKind::CollarBlend { t0, t1, bump_lo, bump_hi, .. } => {
                b.extend([*t0, *t1, *bump_lo, *bump_hi, 0.5 * (bump_lo + bump_hi)])
            }
            _ => {}
        }
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    }

    /// Sample the profile on `n` equally spaced points of `[a, b]` as
    /// rows `(r, value, d1, d2)`.
    pub fn sample_table(&self, a: f64, b: f64, n: usize) -> Vec<[f64; 4]> {
        let n = n.max(2);
        (0..n)
            .map(|j| {
                let r = a + (b - a) * j as f64 / (n - 1) as f64;
                let jt = self.jet(r);
                [r, jt.value(), jt.derivative(1), jt.derivative(2)]
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: SmoothProfile = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }

    /// Structural checks for deserialized profiles.
    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            ProfileKind::SmoothStep { r0, r1 } | ProfileKind::Bump { lo: r0, hi: r1 } => {
                if !(r0 < r1) {
                    return Err(IsoflowError::InvalidInterval { lo: *r0, hi: *r1 });
                }
            }
            ProfileKind::RadialWarp { eps } | ProfileKind::AngularWarp { eps } => check_eps(*eps)?,
            ProfileKind::CollarBlend { t0, t1, bump_lo, bump_hi, .. } => {
                if !(t0 < t1) {
                    return Err(IsoflowError::InvalidInterval { lo: *t0, hi: *t1 });
                }
                if !(bump_lo < bump_hi) {
                    return Err(IsoflowError::InvalidInterval { lo: *bump_lo, hi: *bump_hi });
                }
            }
            ProfileKind::Tabulated { xs, ys } => {
                SmoothProfile::tabulated(xs.clone(), ys.clone())?;
            }
            _ => {}
        }
        Ok(())
    }
}

/// `step(lo, mid) * (1 - step(mid, hi))`; integrates to `(hi - lo)/2`.
fn bump_jet(x: Jet, lo: f64, hi: f64) -> Jet {
    let r = x.value();
    if r <= lo || r >= hi {
        return Jet::zero();
    }
    let mid = 0.5 * (lo + hi);
    step_jet(x, lo, mid) * (Jet::constant(1.0) - step_jet(x, mid, hi))
}

fn pole_warp_value(model: CurvatureModel, r: f64) -> f64 {
    if r == 0.0 || model == CurvatureModel::Euclidean {
        return 1.0;
    }
    let q = |t: f64| model.regularized(Jet::constant(t)).value();
    let (v, _) = integrate_adaptive(q, 0.0, r, 1e-14).expect("regularized curvature is smooth");
    (2.0 * v).exp()
}

fn tabulated_jet(xs: &[f64], ys: &[f64], x: Jet) -> Jet {
    const W: usize = 6;
    let r = x.value();
    let n = xs.len();
    let pos = xs.partition_point(|v| *v <= r);
    let start = pos.saturating_sub(W / 2).min(n - W);
    let mut acc = Jet::zero();
    for i in start..start + W {
        let mut basis = Jet::constant(ys[i]);
        for j in start..start + W {
            if j != i {
                basis = basis * ((x - xs[j]) * (1.0 / (xs[i] - xs[j])));
            }
        }
        acc = acc + basis;
    }
    acc
}

/// `int_0^eps F(r) dr` by adaptive quadrature with absolute error <= 1e-10.
#[allow(non_snake_case)]
pub fn radial_length(F: &SmoothProfile, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    const SAMPLES: usize = 1024;
    // The centre may touch zero (a degenerate cone profile); nowhere else.
    if !(F.eval(0.0) >= 0.0) {
        return Err(IsoflowError::InvalidProfile("radial warp is negative at r = 0".into()));
    }
    for j in 1..=SAMPLES {
        let r = eps * j as f64 / SAMPLES as f64;
        let v = F.eval(r);
        if !(v > 0.0) {
            return Err(IsoflowError::InvalidProfile(format!(
                "radial warp is not positive at r = {r} (value {v})"
            )));
        }
    }
    let mut breaks = vec![0.0];
    breaks.extend(F.breakpoints().into_iter().filter(|b| *b > 0.0 && *b < eps));
    breaks.push(eps);
    integrate_piecewise(|r| F.eval(r), &breaks, 1e-10)
}

/// Composite Simpson estimate of the radial length on `panels` panels; used
/// for refinement studies.
#[allow(non_snake_case)]
pub fn radial_length_simpson(F: &SmoothProfile, eps: f64, panels: usize) -> f64 {
    simpson(|r| F.eval(r), 0.0, eps, panels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Blend value at the midpoint of the unit step: e^{-2}/(2e^{-2}).
    const STEP_MID: f64 = 0.5;
    /// `int_0^1 F` for eps = 1, from an independent composite Gauss rule
    /// with 4000 cells (see `radial_length_regression`).
    const DELTA_EPS1: f64 = 1.232_692_580_614_307;

    #[test]
    fn smooth_step_flat_zones_and_midpoint() {
        let s = make_smooth_step(0.0, 1.0).unwrap();
        assert_eq!(s.eval(-0.5), 0.0);
        assert_eq!(s.eval(2.0), 1.0);
        assert_eq!(s.eval(0.5), STEP_MID);
        for k in 1..=4 {
            assert_eq!(s.derivative(k, 0.0), 0.0);
            assert_eq!(s.derivative(k, 1.0), 0.0);
        }
    }

    #[test]
    fn smooth_step_rejects_empty_interval() {
        assert!(matches!(
            make_smooth_step(1.0, 1.0),
            Err(IsoflowError::InvalidInterval { .. })
        ));
    }

    #[test]
    fn warp_closed_forms_on_flat_zones() {
        let f = make_F(1.0).unwrap();
        let g = make_G(1.0).unwrap();
        assert_eq!(f.eval(0.25), 1.0);
        assert_eq!(f.eval(0.9), 1.8);
        assert_eq!(g.eval(0.3), 0.3);
        assert_eq!(g.eval(0.8), 1.0);
        assert_eq!(g.eval(0.0), 0.0);
        assert_eq!(g.derivative(1, 0.0), 1.0);
        let mid = f.eval(0.625);
        assert!(mid > 1.0 && mid < 1.25);
        assert!((mid - (0.5 + 0.625)).abs() < 1e-15);
        assert!(make_F(0.0).is_err());
        assert!(make_G(-1.0).is_err());
    }

    #[test]
    fn radial_length_trivial_profiles() {
        let one = SmoothProfile::constant(1.0);
        assert!((radial_length(&one, 1.0).unwrap() - 1.0).abs() < 1e-12);
        let lin = SmoothProfile::new(
            ProfileKind::Affine { offset: 0.0, slope: 2.0 },
            (0.0, 1.0),
        );
        assert!((radial_length(&lin, 1.0).unwrap() - 1.0).abs() < 1e-12);
        let negative = SmoothProfile::new(
            ProfileKind::Affine { offset: 0.5, slope: -2.0 },
            (0.0, 1.0),
        );
        assert!(matches!(
            radial_length(&negative, 1.0),
            Err(IsoflowError::InvalidProfile(_))
        ));
    }

    #[test]
    fn radial_length_regression() {
        let f = make_F(1.0).unwrap();
        let delta = radial_length(&f, 1.0).unwrap();
        let oracle = crate::quadrature::GaussRule::new(8).integrate_composite(0.0, 1.0, 4000, |r| {
            f.eval(r)
        });
        assert!((delta - oracle).abs() < 1e-11, "{delta} vs {oracle}");
        assert!((delta - DELTA_EPS1).abs() < 1e-11, "{delta:.16}");
    }

    #[test]
    fn radial_length_refinement_order() {
        let f = make_F(1.0).unwrap();
        let exact = radial_length(&f, 1.0).unwrap();
        let e1 = (radial_length_simpson(&f, 1.0, 64) - exact).abs();
        let e2 = (radial_length_simpson(&f, 1.0, 128) - exact).abs();
        assert!((e1 / e2).log2() >= 2.0, "observed order {}", (e1 / e2).log2());
    }

    #[test]
    fn pole_warp_matches_closed_forms() {
        for model in [CurvatureModel::Round, CurvatureModel::Hyperbolic, CurvatureModel::Euclidean] {
            let p = SmoothProfile::new(ProfileKind::PoleWarp { model }, (0.0, 2.0));
            for r in [1e-3, 0.1, 0.7, 1.3, 2.0] {
                let err = (p.eval(r) - model.warp_closed_form(r)).abs();
                assert!(err < 1e-12, "{model:?} r={r} err={err}");
            }
        }
    }

    #[test]
    fn regularized_curvature_series_matches_direct() {
        for model in [CurvatureModel::Round, CurvatureModel::Hyperbolic] {
            for t in [0.03, 0.049] {
                let series = model.regularized(Jet::variable(t));
                let direct = model.lambda(Jet::variable(t)) - Jet::variable(t).recip();
                for k in 0..3 {
                    let (a, b) = (series.derivative(k), direct.derivative(k));
                    assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()), "{model:?} k={k} {a} {b}");
                }
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let f = make_F(0.5).unwrap();
        let s = f.to_json().unwrap();
        assert!(s.contains("\"kind\": \"radial_warp\""));
        let back = SmoothProfile::from_json(&s).unwrap();
        assert_eq!(back, f);
        assert!(SmoothProfile::from_json("{\"kind\":\"smooth_step\",\"params\":{\"r0\":1,\"r1\":0},\"domain\":[0,1]}").is_err());
    }

    #[test]
    fn bump_integral_is_half_width() {
        let b = SmoothProfile::bump(0.2, 0.9).unwrap();
        let v = integrate_piecewise(|t| b.eval(t), &[0.2, 0.55, 0.9], 1e-13).unwrap();
        assert!((v - 0.35).abs() < 1e-12);
    }

    fn profiles() -> Vec<SmoothProfile> {
        vec![
            make_F(1.0).unwrap(),
            make_G(1.0).unwrap(),
            make_smooth_step(-0.3, 0.8).unwrap(),
            SmoothProfile::bump(0.1, 0.9).unwrap(),
            SmoothProfile::new(ProfileKind::PoleWarp { model: CurvatureModel::Round }, (0.0, 1.0)),
        ]
    }

    proptest! {
        #[test]
        fn first_derivative_matches_central_difference(r in 0.01f64..0.99, which in 0usize..5) {
            let p = &profiles()[which];
            let h = 1e-4;
            // five-point central stencil; the blend's third derivative
            // reaches O(1e3), too steep for the three-point one at this h
            let fd = (8.0 * (p.eval(r + h) - p.eval(r - h)) - (p.eval(r + 2.0 * h) - p.eval(r - 2.0 * h)))
                / (12.0 * h);
            let d = p.derivative(1, r);
            // relative to the profile's own slope scale
            let scale = (0..=200).map(|j| p.derivative(1, j as f64 / 200.0).abs()).fold(1.0, f64::max);
            prop_assert!((fd - d).abs() <= 1e-6 * scale, "fd {} exact {}", fd, d);
        }

        #[test]
        fn higher_derivatives_converge_at_second_order(r in 0.01f64..0.99, which in 0usize..5, k in 2usize..5) {
            let p = &profiles()[which];
            let d = p.derivative(k, r);
            let err = |h: f64| {
                ((p.derivative(k - 1, r + h) - p.derivative(k - 1, r - h)) / (2.0 * h) - d).abs()
            };
            let (e1, e2) = (err(2e-4), err(1e-4));
            prop_assert!(e2 < 1e-7 * (1.0 + d.abs()) || e1 / e2 > 3.0, "k {} errors {} {}", k, e1, e2);
        }

        #[test]
        fn step_is_bounded(r in -2.0f64..2.0) {
            let s = make_smooth_step(-1.0, 1.0).unwrap().eval(r);
            prop_assert!((0.0..=1.0).contains(&s));
        }

        #[test]
        fn warps_positive(r in 1e-6f64..1.0) {
            prop_assert!(make_F(1.0).unwrap().eval(r) > 0.0);
            prop_assert!(make_G(1.0).unwrap().eval(r) > 0.0);
        }
    }
}
