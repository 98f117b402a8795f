//! The product region `S x [t0, t1]` with metric `g_t + dt^2`, on which the
//! height function is `f(x, t) = t`.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::chart::{fd_gradient_norm_sq, fd_laplacian_at, integrate_geodesic, min_eigenvalue, MetricField};
use crate::error::{IsoflowError, Result};
use crate::ode::OdeOptions;
use crate::profile::step;
use crate::report::CheckEntry;

pub type SectionFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// A metric on the cross-section, as a function of the section coordinates.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SectionMetric {
    /// Constant matrix (row-major).
    Constant { matrix: Vec<f64> },
    /// `scale^2 S(x)^T S(x)` with the unimodular shear
    /// `S = I + amplitude sin(2 pi x_along / period) E_{row, col}`.
    Shear { dim: usize, scale: f64, amplitude: f64, row: usize, col: usize, along: usize, period: f64 },
    /// `radius^2` times the round metric of `S^dim` in stereographic
    /// coordinates.
    RoundStereographic { dim: usize, radius: f64 },
    /// Computed metric (pullbacks through gluing maps); not serializable.
    #[serde(skip)]
    Custom { dim: usize, metric: SectionFn },
}

impl std::fmt::Debug for SectionMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SectionMetric::Custom { dim, .. } => write!(f, "Custom {{ dim: {dim} }}"),
            SectionMetric::Constant { matrix } => write!(f, "Constant {matrix:?}"),
            SectionMetric::Shear { dim, scale, amplitude, .. } => {
                write!(f, "Shear {{ dim: {dim}, scale: {scale}, amplitude: {amplitude} }}")
            }
            SectionMetric::RoundStereographic { dim, radius } => write!(f, "RoundStereographic {{ {dim}, {radius} }}"),
        }
    }
}

impl SectionMetric {
    pub fn dim(&self) -> usize {
        match self {
            SectionMetric::Constant { matrix } => (matrix.len() as f64).sqrt().round() as usize,
            SectionMetric::Shear { dim, .. }
            | SectionMetric::RoundStereographic { dim, .. }
            | SectionMetric::Custom { dim, .. } => *dim,
        }
    }

    pub fn identity(dim: usize) -> Self {
        SectionMetric::Constant { matrix: DMatrix::<f64>::identity(dim, dim).as_slice().to_vec() }
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        match self {
            SectionMetric::Constant { matrix } => {
                let d = self.dim();
                DMatrix::from_row_slice(d, d, matrix)
            }
            SectionMetric::Shear { dim, scale, amplitude, row, col, along, period } => {
                let mut s = DMatrix::<f64>::identity(*dim, *dim);
                s[(*row, *col)] += amplitude * (std::f64::consts::TAU * x[*along] / period).sin();
                (s.transpose() * &s) * (scale * scale)
            }
            SectionMetric::RoundStereographic { dim, radius } => {
                let y2: f64 = x.iter().map(|v| v * v).sum();
                let c = 2.0 * radius / (1.0 + y2);
                DMatrix::<f64>::identity(*dim, *dim) * (c * c)
            }
            SectionMetric::Custom { metric, .. } => metric(x),
        }
    }
}

/// Smooth one-parameter family `t -> g_t`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NeckFamily {
    /// Frozen below the first and above the last sample; consecutive samples
    /// are blended with the smooth step, so the family is constant on both
    /// collars and smooth in `t`.
    Samples { t_samples: Vec<f64>, metrics: Vec<SectionMetric> },
    /// Piecewise-linear in `t` between the samples, frozen outside. Only
    /// continuous at the samples; used as the unfrozen-collar control.
    Linear { t_samples: Vec<f64>, metrics: Vec<SectionMetric> },
    /// `exp(2 c t) g_0` (not collar-frozen).
    Exponential { base: SectionMetric, rate: f64 },
}

impl NeckFamily {
    pub fn constant(g: SectionMetric) -> Self {
        NeckFamily::Samples { t_samples: vec![0.0], metrics: vec![g] }
    }

    pub fn eval(&self, x: &[f64], t: f64) -> DMatrix<f64> {
        match self {
            NeckFamily::Samples { t_samples, metrics } | NeckFamily::Linear { t_samples, metrics } => {
                let n = t_samples.len();
                if t <= t_samples[0] {
                    return metrics[0].eval(x);
                }
                if t >= t_samples[n - 1] {
                    return metrics[n - 1].eval(x);
                }
                let k = t_samples.partition_point(|&s| s <= t) - 1;
                let s = match self {
                    NeckFamily::Linear { .. } => (t - t_samples[k]) / (t_samples[k + 1] - t_samples[k]),
                    _ => step(t, t_samples[k], t_samples[k + 1]),
                };
                metrics[k].eval(x) * (1.0 - s) + metrics[k + 1].eval(x) * s
            }
            NeckFamily::Exponential { base, rate } => base.eval(x) * (2.0 * rate * t).exp(),
        }
    }

    fn dim(&self) -> usize {
        match self {
            NeckFamily::Samples { metrics, .. } | NeckFamily::Linear { metrics, .. } => metrics[0].dim(),
            NeckFamily::Exponential { base, .. } => base.dim(),
        }
    }
}

/// Cross-section coordinates and their sampling box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CrossSection {
    FlatTorus { periods: Vec<f64> },
    /// Stereographic chart of the round sphere; sampled on `[-extent, extent]^dim`.
    SphereChart { dim: usize, extent: f64 },
}

impl CrossSection {
    pub fn dim(&self) -> usize {
        match self {
            CrossSection::FlatTorus { periods } => periods.len(),
            CrossSection::SphereChart { dim, .. } => *dim,
        }
    }

    /// `n` nodes per axis (periodic tori skip the duplicate endpoint).
    pub fn nodes(&self, n: usize) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = match self {
            CrossSection::FlatTorus { periods } => {
                periods.iter().map(|p| (0..n).map(|i| p * i as f64 / n as f64).collect()).collect()
            }
            CrossSection::SphereChart { dim, extent } => (0..*dim)
                .map(|_| (0..n).map(|i| -extent + 2.0 * extent * i as f64 / (n - 1).max(1) as f64).collect())
                .collect(),
        };
        let mut pts = vec![Vec::new()];
        for ax in axes {
            pts = pts
                .into_iter()
                .flat_map(|p| {
                    ax.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push(*v);
                        q
                    })
                })
                .collect();
        }
        pts
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NeckSpec {
    pub cross_section: CrossSection,
    /// `[alpha + eps^2, beta - eps^2]`.
    pub t_interval: (f64, f64),
    pub family: NeckFamily,
    /// Width of the frozen bands at both ends.
    pub collar: f64,
    /// Cross-section nodes per axis used by the certificates.
    #[serde(default = "default_section_nodes")]
    pub section_nodes: usize,
}

fn default_section_nodes() -> usize {
    8
}

/// Step of the central differences in `t`.
pub const NECK_T_STEP: f64 = 1e-3;

impl NeckSpec {
    /// Family blending `bottom` into `top` strictly inside the collars.
    pub fn interpolating(
        cross_section: CrossSection,
        t_interval: (f64, f64),
        collar: f64,
        bottom: SectionMetric,
        top: SectionMetric,
    ) -> Result<Self> {
        let family = NeckFamily::Samples {
            t_samples: vec![t_interval.0 + collar, t_interval.1 - collar],
            metrics: vec![bottom, top],
        };
        build_neck_metric(NeckSpec { cross_section, t_interval, family, collar, section_nodes: 8 })
    }

    pub fn section_dim(&self) -> usize {
        self.cross_section.dim()
    }

    pub fn length(&self) -> f64 {
        self.t_interval.1 - self.t_interval.0
    }

    pub fn section_metric(&self, x: &[f64], t: f64) -> DMatrix<f64> {
        self.family.eval(x, t)
    }

    pub fn section_nodes(&self) -> Vec<Vec<f64>> {
        self.cross_section.nodes(self.section_nodes)
    }

    /// `t` sample points: `count` equally spaced values across the interval.
    pub fn t_nodes(&self, count: usize) -> Vec<f64> {
        let (a, b) = self.t_interval;
        (0..count).map(|i| a + (b - a) * i as f64 / (count - 1) as f64).collect()
    }
}

impl MetricField for NeckSpec {
    fn dim(&self) -> usize {
        self.section_dim() + 1
    }
    fn metric(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let m = self.section_dim();
        let mut g = DMatrix::zeros(m + 1, m + 1);
        g.view_mut((0, 0), (m, m)).copy_from(&self.section_metric(&x[..m], x[m]));
        g[(m, m)] = 1.0;
        Ok(g)
    }
}

/// Validate the family and return it as the block metric
/// `g_t + dt^2`.
pub fn build_neck_metric(spec: NeckSpec) -> Result<NeckSpec> {
    let (a, b) = spec.t_interval;
    if !(a < b) {
        return Err(IsoflowError::InvalidInterval { lo: a, hi: b });
    }
    if spec.family.dim() != spec.section_dim() {
        return Err(IsoflowError::InvalidFamily("family dimension differs from the cross-section".into()));
    }
    if let NeckFamily::Samples { t_samples, metrics } | NeckFamily::Linear { t_samples, metrics } = &spec.family {
        if t_samples.is_empty() || t_samples.len() != metrics.len() {
            return Err(IsoflowError::InvalidFamily("need one metric per t sample".into()));
        }
        if t_samples.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(IsoflowError::InvalidFamily("t samples must increase".into()));
        }
        if t_samples.len() > 1 && (t_samples[0] < a + spec.collar || t_samples[t_samples.len() - 1] > b - spec.collar) {
            return Err(IsoflowError::InvalidFamily("family changes inside a collar".into()));
        }
    }
    for x in spec.section_nodes() {
        for t in spec.t_nodes(33) {
            let g = spec.section_metric(&x, t);
            let min = min_eigenvalue(&g);
            if !(min > 0.0) {
                return Err(IsoflowError::InvalidFamily(format!(
                    "g_t not positive definite at x = {x:?}, t = {t} (min eigenvalue {min:.3e})"
                )));
            }
        }
    }
    Ok(spec)
}

/// `Delta f` for `f = t`: half the `t`-derivative of `log det g_t`, by
/// fourth-order central differences.
pub fn neck_laplacian(spec: &NeckSpec, x: &[f64], t: f64) -> f64 {
    let h = NECK_T_STEP;
    let ld = |s: f64| spec.section_metric(x, t + s * h).determinant().ln();
    0.5 * (8.0 * (ld(1.0) - ld(-1.0)) - (ld(2.0) - ld(-2.0))) / (12.0 * h)
}

/// Largest `| |grad t|^2 - 1 |` over the sample nodes (FD metric gradient).
pub fn gradient_defect(spec: &NeckSpec, t_count: usize) -> Result<f64> {
    let m = spec.section_dim();
    let u = move |p: &[f64]| p[m];
    let mut worst = 0.0f64;
    for x in spec.section_nodes() {
        for t in spec.t_nodes(t_count) {
            let mut p = x.clone();
            p.push(t);
            worst = worst.max((fd_gradient_norm_sq(spec, &u, &p, 1e-3)? - 1.0).abs());
        }
    }
    Ok(worst)
}

/// Largest disagreement between [`neck_laplacian`] and the FD
/// Laplace-Beltrami of `t` over interior sample points.
pub fn laplacian_cross_check(spec: &NeckSpec, t_count: usize, h: f64) -> Result<f64> {
    let m = spec.section_dim();
    let u = move |p: &[f64]| p[m];
    let mut worst = 0.0f64;
    let ts = spec.t_nodes(t_count);
    for x in spec.section_nodes() {
        for &t in &ts[1..ts.len() - 1] {
            let mut p = x.clone();
            p.push(t);
            let fd = fd_laplacian_at(spec, &u, &p, h)?;
            worst = worst.max((fd - neck_laplacian(spec, &x, t)).abs());
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerticalGeodesic {
    pub drift: f64,
    pub length: f64,
    pub expected_length: f64,
}

/// Geodesics launched along `d/dt` from the bottom of the neck.
pub fn verify_vertical_geodesic(spec: &NeckSpec, opts: &OdeOptions) -> Result<VerticalGeodesic> {
    let m = spec.section_dim();
    let (t0, t1) = spec.t_interval;
    let mut drift = 0.0f64;
    let mut length_err = 0.0f64;
    let mut length = 0.0;
    let nodes = spec.section_nodes();
    let stride = (nodes.len() / 6).max(1);
    for x in nodes.iter().step_by(stride) {
        let mut p = x.clone();
        p.push(t0);
        let mut v = vec![0.0; m + 1];
        v[m] = 1.0;
        let event = move |y: &[f64], _v: &[f64]| y[m] - t1;
        let run = integrate_geodesic(spec, &p, &v, 2.0 * (t1 - t0), opts, Some(&event), true)?;
        if !run.solution.event {
            return Err(IsoflowError::NumericFailure("vertical geodesic never reached the top".into()));
        }
        for y in run.path() {
            let d = (0..m).map(|i| (y[i] - x[i]).powi(2)).sum::<f64>().sqrt();
            drift = drift.max(d);
        }
        let l = run.length();
        if (l - (t1 - t0)).abs() >= length_err {
            length_err = (l - (t1 - t0)).abs();
            length = l;
        }
    }
    Ok(VerticalGeodesic { drift, length, expected_length: t1 - t0 })
}

pub fn neck_checks(spec: &NeckSpec, opts: &OdeOptions) -> Result<Vec<CheckEntry>> {
    let grad = gradient_defect(spec, 9)?;
    let lap = laplacian_cross_check(spec, 9, 1e-3)?;
    let vg = verify_vertical_geodesic(spec, opts)?;
    Ok(vec![
        CheckEntry::new("neck.gradient_unit", "neck:unit-gradient", grad, 1e-10, 1e-3),
        CheckEntry::new("neck.laplacian_log_det", "neck:log-det-laplacian", lap, 1e-4, 1e-3),
        CheckEntry::new("neck.vertical_geodesic.drift", "neck:vertical-lines-geodesic", vg.drift, 1e-6, opts.rtol),
        CheckEntry::new(
            "neck.vertical_geodesic.length",
            "neck:length-beta-minus-alpha-minus-two-eps-squared",
            (vg.length - vg.expected_length).abs(),
            1e-8,
            opts.rtol,
        ),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn torus2() -> CrossSection {
        CrossSection::FlatTorus { periods: vec![1.0, 1.0] }
    }

    fn exp_neck(c: f64) -> NeckSpec {
        build_neck_metric(NeckSpec {
            cross_section: torus2(),
            t_interval: (1.0, 2.0),
            family: NeckFamily::Exponential { base: SectionMetric::identity(2), rate: c },
            collar: 0.0,
            section_nodes: 4,
        })
        .unwrap()
    }

    #[test]
    fn constant_family_is_product() {
        let spec = build_neck_metric(NeckSpec {
            cross_section: torus2(),
            t_interval: (1.0, 2.0),
            family: NeckFamily::constant(SectionMetric::identity(2)),
            collar: 0.1,
            section_nodes: 4,
        })
        .unwrap();
        assert_eq!(neck_laplacian(&spec, &[0.2, 0.3], 1.5), 0.0);
        assert!(gradient_defect(&spec, 5).unwrap() < 1e-12);
        let vg = verify_vertical_geodesic(&spec, &OdeOptions::default()).unwrap();
        assert!(vg.drift < 1e-14);
        assert!((vg.length - 1.0).abs() < 1e-8);
    }

    #[test]
    fn exponential_family_laplacian() {
        let c = 0.3;
        let spec = exp_neck(c);
        assert!((neck_laplacian(&spec, &[0.1, 0.7], 1.4) - 2.0 * c).abs() < 1e-9);
        assert!(laplacian_cross_check(&spec, 6, 1e-3).unwrap() < 1e-4);
        let vg = verify_vertical_geodesic(&spec, &OdeOptions::default()).unwrap();
        assert!(vg.drift < 1e-6);
        assert!((vg.length - 1.0).abs() < 1e-8);
    }

    #[test]
    fn interpolated_flat_tori_positive_and_frozen() {
        let top = SectionMetric::Constant { matrix: vec![4.0, 0.0, 0.0, 0.25] };
        let spec = NeckSpec::interpolating(torus2(), (1.0, 2.0), 0.1, SectionMetric::identity(2), top).unwrap();
        assert_eq!(neck_laplacian(&spec, &[0.0, 0.0], 1.05), 0.0);
        assert_eq!(neck_laplacian(&spec, &[0.0, 0.0], 1.95), 0.0);
        assert!(laplacian_cross_check(&spec, 9, 1e-3).unwrap() < 1e-4);
    }

    #[test]
    fn non_pd_family_rejected() {
        let bad = SectionMetric::Constant { matrix: vec![1.0, 2.0, 2.0, 1.0] };
        let r = NeckSpec::interpolating(torus2(), (1.0, 2.0), 0.1, SectionMetric::identity(2), bad);
        assert!(matches!(r, Err(IsoflowError::InvalidFamily(_))));
    }
}
