//! Conformal correction of the neck: rescale the cross-section family by
//! `exp(2u)` so that the Laplacian of `f = t` becomes a function `h(t)`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chart::{fd_laplacian_at, MetricField};
use crate::error::{IsoflowError, Result};
use crate::neck::{neck_laplacian, NeckSpec};
use crate::profile::{ProfileKind, SmoothProfile};
use crate::quadrature::GaussRule;
use crate::report::CheckEntry;
use crate::stats::{bin_by_level, BinFit};

/// Largest admissible spread of `int Delta f dt` over the cross-section.
pub const MASS_SPREAD_TOLERANCE: f64 = 1e-6;
/// Largest admissible `|u|` on the top collar.
pub const TOP_RESIDUAL_TOLERANCE: f64 = 1e-8;
/// Largest admissible disagreement in the conformal Laplacian identity.
pub const LEMMA_TOLERANCE: f64 = 1e-4;
/// Composite Gauss cells used for integrals in `t`.
const T_CELLS: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassIndependence {
    /// `I(x) = int Delta f(x, s) ds` per cross-section node.
    pub integrals: Vec<f64>,
    pub log_lambda: f64,
    pub max_deviation: f64,
    pub spread: f64,
}

/// Quadrature of the source Laplacian along each vertical line, compared
/// with `log lambda` (`lambda` is the volume ratio of the endpoint metrics,
/// read off the first node when `lambda` is `None`).
pub fn verify_mass_independence(neck: &NeckSpec, lambda: Option<f64>) -> MassIndependence {
    let (a, b) = neck.t_interval;
    let rule = GaussRule::new(8);
    let nodes = neck.section_nodes();
    let integrals: Vec<f64> = nodes
        .par_iter()
        .map(|x| rule.integrate_composite(a, b, T_CELLS, |s| neck_laplacian(neck, x, s)))
        .collect();
    let log_lambda = match lambda {
        Some(l) => l.ln(),
        None => {
            let x = &nodes[0];
            0.5 * (neck.section_metric(x, b).determinant() / neck.section_metric(x, a).determinant()).ln()
        }
    };
    let (lo, hi) = integrals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
    let max_deviation = integrals.iter().map(|v| (v - log_lambda).abs()).fold(0.0, f64::max);
    MassIndependence { integrals, log_lambda, max_deviation, spread: hi - lo }
}

/// Collar-pinned target `h`: the (common) collar values of `Delta f` at
/// both ends, joined by a smooth step, plus the bump that makes
/// `int h = log lambda`.
pub fn choose_h(neck: &NeckSpec, mass: &MassIndependence) -> Result<SmoothProfile> {
    if !(mass.spread <= MASS_SPREAD_TOLERANCE) {
        return Err(IsoflowError::CannotBalance { spread: mass.spread, tolerance: MASS_SPREAD_TOLERANCE });
    }
    let (a, b) = neck.t_interval;
    let nodes = neck.section_nodes();
    let mean_at = |t: f64| nodes.iter().map(|x| neck_laplacian(neck, x, t)).sum::<f64>() / nodes.len() as f64;
    // collar values are read just inside the ends so the FD stencil stays on the neck
    let inset = (neck.collar * 0.5).max(crate::neck::NECK_T_STEP * 2.0);
    let start = mean_at(a + inset);
    let end = mean_at(b - inset);
    let (t0, t1) = if neck.collar > 0.0 { (a + neck.collar, b - neck.collar) } else { (a, b) };
    let blend_integral = start * (b - a) + (end - start) * (0.5 * (t1 - t0) + (b - t1));
    let amplitude = (mass.log_lambda - blend_integral) / (0.5 * (t1 - t0));
    Ok(SmoothProfile::new(
        ProfileKind::CollarBlend { start, end, t0, t1, amplitude, bump_lo: t0, bump_hi: t1 },
        (a, b),
    ))
}

/// The solved factor `u(x, t) = (1/(n-1)) int_a^t [h(s) - Delta f(x, s)] ds`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConformalCorrection {
    pub neck: NeckSpec,
    pub h: SmoothProfile,
    /// Dimension of the assembled manifold.
    pub n: usize,
    pub lambda: f64,
    pub mass_spread: f64,
    pub u_top_residual: f64,
}

impl ConformalCorrection {
    /// `int_a^t Delta f(x, s) ds` in closed form: half the log-det increment.
    fn source_integral(&self, x: &[f64], t: f64) -> f64 {
        let a = self.neck.t_interval.0;
        0.5 * (self.neck.section_metric(x, t).determinant() / self.neck.section_metric(x, a).determinant()).ln()
    }

    fn h_integral(&self, t: f64) -> f64 {
        let a = self.neck.t_interval.0;
        let cells = ((T_CELLS as f64) * (t - a) / self.neck.length()).ceil().max(1.0) as usize;
        GaussRule::new(8).integrate_composite(a, t, cells, |s| self.h.eval(s))
    }

    pub fn u_at(&self, x: &[f64], t: f64) -> f64 {
        (self.h_integral(t) - self.source_integral(x, t)) / (self.n - 1) as f64
    }

    pub fn u_closure(&self) -> UField {
        let me = self.clone();
        Arc::new(move |x: &[f64], t: f64| me.u_at(x, t))
    }

    /// The rescaled neck `exp(2u) g_t + dt^2`.
    pub fn corrected_metric(&self) -> ConformalNeck {
        ConformalNeck { neck: self.neck.clone(), u: self.u_closure() }
    }
}

pub type UField = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

/// `exp(2u) g_t + dt^2`, the `dt^2` block untouched.
#[derive(Clone)]
pub struct ConformalNeck {
    pub neck: NeckSpec,
    pub u: UField,
}

impl MetricField for ConformalNeck {
    fn dim(&self) -> usize {
        self.neck.section_dim() + 1
    }
    fn metric(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        let m = self.neck.section_dim();
        let mut g = self.neck.metric(p)?;
        let scale = (2.0 * (self.u)(&p[..m], p[m])).exp();
        g.view_mut((0, 0), (m, m)).scale_mut(scale);
        Ok(g)
    }
}

/// Solve for `u` and confirm it vanishes on the top collar.
pub fn solve_u(neck: &NeckSpec, h: SmoothProfile, n: usize, mass: &MassIndependence) -> Result<ConformalCorrection> {
    if n != neck.section_dim() + 1 {
        return Err(IsoflowError::InvalidParameter {
            name: "n",
            value: n as f64,
            reason: "must be one more than the cross-section dimension",
        });
    }
    let mut corr = ConformalCorrection {
        neck: neck.clone(),
        h,
        n,
        lambda: mass.log_lambda.exp(),
        mass_spread: mass.spread,
        u_top_residual: 0.0,
    };
    let b = neck.t_interval.1;
    let top = neck.section_nodes().iter().map(|x| corr.u_at(x, b).abs()).fold(0.0, f64::max);
    corr.u_top_residual = top;
    if !(top <= TOP_RESIDUAL_TOLERANCE) {
        return Err(IsoflowError::BalanceViolation { residual: top });
    }
    Ok(corr)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaplacianShift {
    /// `Delta f + (n - 1) d_t u`.
    pub predicted: f64,
    /// FD Laplace-Beltrami of `t` on the rescaled chart.
    pub direct: f64,
}

/// Both sides of the conformal Laplacian identity at `(x, t)`. `d_t u` is a
/// fourth-order difference of `u`, independent of how `u` was built.
pub fn conformal_laplacian_shift(neck: &NeckSpec, u: &UField, n: usize, x: &[f64], t: f64, h: f64) -> Result<LaplacianShift> {
    let k = crate::neck::NECK_T_STEP;
    let du = (8.0 * (u(x, t + k) - u(x, t - k)) - (u(x, t + 2.0 * k) - u(x, t - 2.0 * k))) / (12.0 * k);
    let predicted = neck_laplacian(neck, x, t) + (n - 1) as f64 * du;
    let field = ConformalNeck { neck: neck.clone(), u: u.clone() };
    let m = neck.section_dim();
    let f = move |p: &[f64]| p[m];
    let mut p = x.to_vec();
    p.push(t);
    let direct = fd_laplacian_at(&field, &f, &p, h)?;
    let disagreement = (predicted - direct).abs();
    if !(disagreement <= LEMMA_TOLERANCE) {
        return Err(IsoflowError::LemmaCheck { disagreement, tolerance: LEMMA_TOLERANCE });
    }
    Ok(LaplacianShift { predicted, direct })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConformalSummary {
    pub lambda: f64,
    pub mass_spread: f64,
    pub u_top_residual: f64,
    pub laplacian_spread_before: f64,
    pub laplacian_spread_after: f64,
    /// `max |Delta~ f - h(t)|` over the interior nodes.
    pub target_error: f64,
    /// `(t, Delta~ f)` scatter over the interior nodes.
    #[serde(skip)]
    pub scatter: Vec<(f64, f64)>,
}

/// Level spreads of `Delta f` before and after the correction on
/// `t_count` interior levels (FD stencil step `h`).
pub fn summarize(corr: &ConformalCorrection, t_count: usize, h: f64) -> Result<ConformalSummary> {
    let neck = &corr.neck;
    let ts = neck.t_nodes(t_count + 2);
    let ts = &ts[1..ts.len() - 1];
    let u = corr.u_closure();
    let points: Vec<(Vec<f64>, f64)> =
        neck.section_nodes().into_iter().flat_map(|x| ts.iter().map(move |&t| (x.clone(), t))).collect();
    let rows: Vec<(f64, f64, f64)> = points
        .par_iter()
        .map(|(x, t)| {
            let before = neck_laplacian(neck, x, *t);
            let shift = conformal_laplacian_shift(neck, &u, corr.n, x, *t, h)?;
            Ok((*t, before, shift.direct))
        })
        .collect::<Result<_>>()?;
    let before: Vec<(f64, f64)> = rows.iter().map(|r| (r.0, r.1)).collect();
    let scatter: Vec<(f64, f64)> = rows.iter().map(|r| (r.0, r.2)).collect();
    let bins = 1.0 / (neck.length() / (4.0 * t_count as f64));
    let lo = neck.t_interval.0;
    let target_error = scatter.iter().map(|(t, v)| (v - corr.h.eval(*t)).abs()).fold(0.0, f64::max);
    Ok(ConformalSummary {
        lambda: corr.lambda,
        mass_spread: corr.mass_spread,
        u_top_residual: corr.u_top_residual,
        laplacian_spread_before: bin_by_level(&before, lo, bins, BinFit::Constant).max_spread(),
        laplacian_spread_after: bin_by_level(&scatter, lo, bins, BinFit::Constant).max_spread(),
        target_error,
        scatter,
    })
}

/// Full pipeline: mass check, `h`, `u`, and the level spreads.
pub fn correct_neck(neck: &NeckSpec, n: usize, lambda: Option<f64>) -> Result<(ConformalCorrection, ConformalSummary)> {
    let mass = verify_mass_independence(neck, lambda);
    let h = choose_h(neck, &mass)?;
    let corr = solve_u(neck, h, n, &mass)?;
    let summary = summarize(&corr, 15, 1e-3)?;
    Ok((corr, summary))
}

pub fn conformal_checks(summary: &ConformalSummary, expect_uncorrected_spread: bool) -> Vec<CheckEntry> {
    let mut out = vec![
        CheckEntry::new("conformal.mass_independence", "conformal:log-lambda-independent-of-x", summary.mass_spread, 1e-6, 1e-10),
        CheckEntry::new("conformal.u_top_residual", "conformal:u-vanishes-on-top-collar", summary.u_top_residual, 1e-8, 1e-12),
        CheckEntry::new("conformal.isoparametric_spread", "conformal:laplacian-function-of-t", summary.laplacian_spread_after, 1e-4, 1e-6),
        CheckEntry::new("conformal.target_h", "conformal:corrected-laplacian-equals-h", summary.target_error, 1e-4, 1e-6),
    ];
    if expect_uncorrected_spread {
        out.push(
            CheckEntry::exceeds(
                "conformal.uncorrected_spread",
                "conformal:negative-control-x-dependent",
                summary.laplacian_spread_before,
                1e-2,
                1e-6,
            ),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neck::{build_neck_metric, CrossSection, NeckFamily, SectionMetric};
    use crate::quadrature::integrate_adaptive;

    fn torus() -> CrossSection {
        CrossSection::FlatTorus { periods: vec![1.0, 1.0] }
    }

    fn shear_neck(lambda: f64) -> NeckSpec {
        let top = SectionMetric::Shear { dim: 2, scale: lambda.sqrt(), amplitude: 0.6, row: 0, col: 1, along: 0, period: 1.0 };
        let mut n = NeckSpec::interpolating(torus(), (1.0, 2.0), 0.15, SectionMetric::identity(2), top).unwrap();
        n.section_nodes = 6;
        n
    }

    #[test]
    fn constant_family_needs_nothing() {
        let neck = build_neck_metric(NeckSpec {
            cross_section: torus(),
            t_interval: (0.0, 1.0),
            family: NeckFamily::constant(SectionMetric::identity(2)),
            collar: 0.1,
            section_nodes: 3,
        })
        .unwrap();
        let mass = verify_mass_independence(&neck, None);
        assert_eq!(mass.spread, 0.0);
        assert_eq!(mass.log_lambda, 0.0);
        let h = choose_h(&neck, &mass).unwrap();
        assert_eq!(h.eval(0.5), 0.0);
        let corr = solve_u(&neck, h, 3, &mass).unwrap();
        assert_eq!(corr.u_at(&[0.2, 0.3], 0.7), 0.0);
    }

    #[test]
    fn exponential_family_is_already_balanced() {
        let c = 0.4;
        let neck = build_neck_metric(NeckSpec {
            cross_section: torus(),
            t_interval: (0.0, 1.5),
            family: NeckFamily::Exponential { base: SectionMetric::identity(2), rate: c },
            collar: 0.0,
            section_nodes: 3,
        })
        .unwrap();
        let mass = verify_mass_independence(&neck, None);
        assert!((mass.log_lambda - 2.0 * c * 1.5).abs() < 1e-12);
        assert!(mass.max_deviation < 1e-9);
        let h = choose_h(&neck, &mass).unwrap();
        for t in [0.1, 0.75, 1.4] {
            assert!((h.eval(t) - 2.0 * c).abs() < 1e-8);
        }
        let corr = solve_u(&neck, h, 3, &mass).unwrap();
        assert!(corr.u_at(&[0.3, 0.1], 0.9).abs() < 1e-8);
    }

    #[test]
    fn bump_amplitude_matches_quadrature() {
        let neck = shear_neck(2.5);
        let mass = verify_mass_independence(&neck, Some(2.5));
        let h = choose_h(&neck, &mass).unwrap();
        let (a, b) = neck.t_interval;
        let total = integrate_adaptive(|s| h.eval(s), a, b, 1e-13).unwrap().0;
        assert!((total - 2.5f64.ln()).abs() < 1e-10, "{total}");
    }

    #[test]
    fn shift_by_affine_u() {
        let neck = shear_neck(2.0);
        let c = 0.7;
        let u: UField = Arc::new(move |_x: &[f64], t: f64| c * t);
        let before = neck_laplacian(&neck, &[0.3, 0.2], 1.4);
        let s = conformal_laplacian_shift(&neck, &u, 3, &[0.3, 0.2], 1.4, 1e-3).unwrap();
        assert!((s.predicted - (before + 2.0 * c)).abs() < 1e-9);
        assert!((s.direct - s.predicted).abs() < 1e-5);
    }

    #[test]
    fn unbalanced_neck_cannot_be_corrected() {
        // shear whose determinant varies: the x-dependence of the volume ratio is not removable
        let top = SectionMetric::Constant { matrix: vec![2.0, 0.0, 0.0, 2.0] };
        let mut neck = NeckSpec::interpolating(torus(), (1.0, 2.0), 0.15, SectionMetric::identity(2), top).unwrap();
        if let NeckFamily::Samples { metrics, .. } = &mut neck.family {
            metrics[1] = SectionMetric::Custom {
                dim: 2,
                metric: Arc::new(|x: &[f64]| {
                    DMatrix::identity(2, 2) * (2.0 + 0.5 * (std::f64::consts::TAU * x[0]).sin())
                }),
            };
        }
        let mass = verify_mass_independence(&neck, None);
        assert!(matches!(choose_h(&neck, &mass), Err(IsoflowError::CannotBalance { .. })));
    }

    #[test]
    fn shear_neck_becomes_isoparametric() {
        let neck = shear_neck(2.0);
        let (corr, summary) = correct_neck(&neck, 3, None).unwrap();
        assert!(summary.laplacian_spread_before > 1e-2, "{}", summary.laplacian_spread_before);
        assert!(summary.laplacian_spread_after <= 1e-4, "{}", summary.laplacian_spread_after);
        assert!(summary.target_error <= 1e-4, "{}", summary.target_error);
        assert!(corr.u_top_residual <= 1e-8);
        let (a, b) = neck.t_interval;
        assert!(corr.u_at(&[0.4, 0.1], a + 0.05).abs() < 1e-14);
        assert!(corr.u_at(&[0.4, 0.1], b - 0.05).abs() < 1e-8);
    }
}
