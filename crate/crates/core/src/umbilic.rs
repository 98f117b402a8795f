//! Pole metrics rebuilt from the principal curvatures of geodesic spheres,
//! the isometry test for the boundary gluing map, and the antipodally
//! symmetrised volume-preserving gluing map on `S^3`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chart::{Lattice, MetricField};
use crate::error::{IsoflowError, Result};
use crate::moser::{local_moser, DensityField, DiffeoGrid, LocalMoser, LocalMoserOptions, LocalMoserReport};
use crate::profile::{step, step_derivative, CurvatureModel, ProfileKind, SmoothProfile};
use crate::quadrature::GaussRule;
use crate::report::{CheckEntry, Status};
use crate::sphere::{embed, embed_frame, gnomonic, gnomonic_density, CubedSphere, Face, SphereDensity, SphereMap};
use crate::warped_disc::{CapOrientation, WarpedDiscSpec};

pub const ISOMETRY_TOLERANCE: f64 = 1e-6;
pub const EQUIVARIANCE_TOLERANCE: f64 = 1e-8;
pub const VOLUME_TOLERANCE: f64 = 1e-5;
/// How far from the identity a node of `S_+` may move before the
/// hemisphere precondition is considered violated.
pub const PRECONDITION_TOLERANCE: f64 = 1e-12;
/// Cells of the cumulative Gauss table for general curvature profiles.
const H_CELLS: usize = 256;

// ------------------------------------------------------------ reconstruction

/// A rotationally symmetric metric in normal coordinates around a pole,
/// `H(r) delta + (1 - H(r))/r^2 x x^T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UmbilicReconstruction {
    pub lambda: SmoothProfile,
    pub h: SmoothProfile,
    pub delta: f64,
    pub dim: usize,
}

impl UmbilicReconstruction {
    pub fn h_at(&self, r: f64) -> f64 {
        if r == 0.0 {
            1.0
        } else {
            self.h.eval(r)
        }
    }

    /// The closed-form model behind `lambda`, if it has one.
    pub fn model(&self) -> Option<CurvatureModel> {
        match self.lambda.kind {
            ProfileKind::Curvature { model } => Some(model),
            _ => None,
        }
    }

    pub fn metric_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let d = self.dim;
        if x.len() != d {
            return Err(IsoflowError::Config(format!("point of dimension {} in a {d}-dimensional pole chart", x.len())));
        }
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let r = r2.sqrt();
        if r > self.delta * (1.0 + 1e-12) {
            return Err(IsoflowError::OutOfChart { radius: r, limit: self.delta });
        }
        let h = self.h_at(r);
        let mut g = DMatrix::identity(d, d) * h;
        if r > 0.0 {
            let c = (1.0 - h) / r2;
            for i in 0..d {
                for j in 0..d {
                    g[(i, j)] += c * x[i] * x[j];
                }
            }
        }
        Ok(g)
    }
}

impl MetricField for UmbilicReconstruction {
    fn dim(&self) -> usize {
        self.dim
    }
    fn metric(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.metric_at(x)
    }
}

/// `lambda(t) - 1/t` for a general profile.
fn regularized(lambda: &SmoothProfile, t: f64) -> f64 {
    lambda.eval(t) - t.recip()
}

/// Limit sampling of `lambda - 1/t` towards the pole: it must stay bounded
/// and settle, which rules out `c/t` tails with `c != 1`.
fn check_pole_limit(lambda: &SmoothProfile, delta: f64) -> Result<()> {
    let samples: Vec<(f64, f64)> = (6..=24).map(|k| {
        let t = delta * 0.5f64.powi(k);
        (t, regularized(lambda, t))
    }).collect();
    for &(t, q) in &samples {
        if !q.is_finite() {
            return Err(IsoflowError::InvalidCurvatureProfile(format!("lambda - 1/t is not finite at t = {t:e}")));
        }
        if (t * q).abs() > 1e-3 {
            return Err(IsoflowError::InvalidCurvatureProfile(format!(
                "t (lambda - 1/t) = {:.3e} at t = {t:e}; lambda - 1/t has a non-integrable singularity",
                t * q
            )));
        }
    }
    let tail = &samples[samples.len() - 4..];
    let spread = tail.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max) - tail.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    if spread > 1e-6 * (1.0 + tail[0].1.abs()) {
        return Err(IsoflowError::InvalidCurvatureProfile(format!("lambda - 1/t does not settle at the pole (spread {spread:e})")));
    }
    Ok(())
}

/// `H` on `[0, delta]` by cumulative Gauss quadrature of `lambda - 1/t`,
/// stored as a tabulated profile.
fn tabulate_h(lambda: &SmoothProfile, delta: f64) -> Result<SmoothProfile> {
    let rule = GaussRule::new(8);
    let step = delta / H_CELLS as f64;
    let mut xs = Vec::with_capacity(H_CELLS + 1);
    let mut ys = Vec::with_capacity(H_CELLS + 1);
    let mut acc = 0.0;
    xs.push(0.0);
    ys.push(1.0);
    for j in 0..H_CELLS {
        let lo = j as f64 * step;
        acc += rule.integrate(lo, lo + step, |t| regularized(lambda, t));
        xs.push(lo + step);
        ys.push((2.0 * acc).exp());
    }
    if let Some(bad) = ys.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(IsoflowError::InvalidCurvatureProfile(format!("reconstructed H = {bad} is not positive")));
    }
    SmoothProfile::tabulated(xs, ys)
}

/// Rebuild the pole chart of radius `delta` from `lambda`.
///
/// Closed-form curvature models use an exact Laurent-regularised integrand;
/// all other profiles go through limit sampling and a tabulated `H`.
pub fn kowalski_vanhecke_metric(lambda: &SmoothProfile, delta: f64, dim: usize) -> Result<UmbilicReconstruction> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(IsoflowError::InvalidParameter { name: "delta", value: delta, reason: "radius must be positive" });
    }
    if dim < 2 {
        return Err(IsoflowError::InvalidParameter { name: "dim", value: dim as f64, reason: "pole chart needs dimension >= 2" });
    }
    let h = match lambda.kind {
        ProfileKind::Curvature { model } => SmoothProfile::new(ProfileKind::PoleWarp { model }, (0.0, delta)),
        _ => {
            check_pole_limit(lambda, delta)?;
            tabulate_h(lambda, delta)?
        }
    };
    Ok(UmbilicReconstruction { lambda: lambda.clone(), h, delta, dim })
}

pub fn curvature_profile(model: CurvatureModel, delta: f64) -> SmoothProfile {
    SmoothProfile::new(ProfileKind::Curvature { model }, (0.0, delta))
}

/// Sup-norm residuals of one reconstruction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionErrors {
    /// Against the closed form of the curvature model.
    pub h_closed_form: Option<f64>,
    /// `|x^T g x / r^2 - 1|`.
    pub radial_unit: f64,
    pub pole_limit: f64,
    pub min_h: f64,
    /// Against the warped-disc round cap (round model only).
    pub round_cap: Option<f64>,
}

fn chart_samples(dim: usize, delta: f64, per_axis: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = (0..per_axis).map(|i| -delta + 2.0 * delta * i as f64 / (per_axis - 1) as f64).collect();
    let mut pts = vec![Vec::new()];
    for _ in 0..dim {
        pts = pts.into_iter().flat_map(|p| axis.iter().map(move |v| {
            let mut q: Vec<f64> = p.clone();
            q.push(*v);
            q
        })).collect();
    }
    pts.into_iter().filter(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt() <= delta).collect()
}

/// Node-wise sup deviation from the warped-disc cap with `F = 1`, `G = sin`.
pub fn round_cap_deviation(recon: &UmbilicReconstruction, per_axis: usize) -> Result<f64> {
    let cap = WarpedDiscSpec::with_profiles(
        recon.dim,
        recon.delta,
        0.0,
        CapOrientation::MinCap,
        SmoothProfile::constant(1.0),
        SmoothProfile::new(ProfileKind::Sine { amplitude: 1.0, frequency: 1.0 }, (0.0, recon.delta)),
    )?;
    let mut worst = 0.0f64;
    for x in chart_samples(recon.dim, recon.delta, per_axis) {
        let a = recon.metric_at(&x)?;
        let b = cap.metric_at(&x)?;
        worst = worst.max((a - b).abs().max());
    }
    Ok(worst)
}

pub fn reconstruction_errors(recon: &UmbilicReconstruction) -> Result<ReconstructionErrors> {
    let rs: Vec<f64> = (1..=200).map(|k| recon.delta * k as f64 / 200.0).collect();
    let h_closed_form = recon
        .model()
        .map(|m| rs.iter().map(|&r| (recon.h_at(r) - m.warp_closed_form(r)).abs()).fold(0.0, f64::max));
    let min_h = rs.iter().map(|&r| recon.h_at(r)).fold(f64::INFINITY, f64::min);
    let mut radial_unit = 0.0f64;
    for x in chart_samples(recon.dim, recon.delta, 9) {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        if r2 == 0.0 {
            continue;
        }
        let g = recon.metric_at(&x)?;
        let v = DVector::from_column_slice(&x);
        radial_unit = radial_unit.max(((v.transpose() * &g * &v)[(0, 0)] / r2 - 1.0).abs());
    }
    let pole_limit = (recon.h_at(1e-6 * recon.delta) - 1.0).abs();
    let round_cap = match recon.model() {
        Some(CurvatureModel::Round) => Some(round_cap_deviation(recon, 9)?),
        _ => None,
    };
    Ok(ReconstructionErrors { h_closed_form, radial_unit, pole_limit, min_h, round_cap })
}

// ------------------------------------------------------------ isometry

/// Outcome of comparing `eta^* g_+` with `g_-` on the unit sphere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsometryCheck {
    pub deviation: f64,
    pub worst_node: usize,
    pub nodes: usize,
}

/// Boundary metric of a pole chart pulled back to the unit sphere through
/// `p -> delta p`, evaluated on the frame `cols` at `p`.
fn boundary_gram(recon: &UmbilicReconstruction, p: &[f64], cols: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let x: Vec<f64> = p.iter().map(|v| v * recon.delta).collect();
    let g = recon.metric_at(&x)?;
    Ok(cols.transpose() * g * cols * (recon.delta * recon.delta))
}

/// Sup deviation of `eta^* g_+` from `g_-` in the gnomonic frames of `grid`.
/// `minus` plays the role of `H_-` near `m_-`, `plus` of `H_+` near `m_+`.
pub fn gluing_isometry_check(
    grid: &CubedSphere,
    eta: &dyn SphereMap,
    minus: &UmbilicReconstruction,
    plus: &UmbilicReconstruction,
) -> Result<IsometryCheck> {
    if minus.dim != grid.dim + 1 || plus.dim != grid.dim + 1 {
        return Err(IsoflowError::Config("boundary sphere dimension must be one less than the pole charts".into()));
    }
    let devs: Vec<Result<f64>> = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let (face, a) = grid.node(k);
            let p = embed(face, &a);
            let frame = embed_frame(face, &a);
            let (y, pushed) = eta.push_frame(face, &a)?;
            let lhs = boundary_gram(plus, &y, &pushed)?;
            let rhs = boundary_gram(minus, &p, &frame)?;
            Ok((lhs - rhs).abs().max())
        })
        .collect();
    let mut out = IsometryCheck { deviation: 0.0, worst_node: 0, nodes: grid.len() };
    for (k, d) in devs.into_iter().enumerate() {
        let d = d?;
        if !(d <= out.deviation) {
            out.deviation = d;
            out.worst_node = k;
        }
    }
    Ok(out)
}

pub fn umbilic_checks(recon: &UmbilicReconstruction, errs: &ReconstructionErrors) -> Vec<CheckEntry> {
    let tag = match recon.model() {
        Some(CurvatureModel::Round) => "round",
        Some(CurvatureModel::Hyperbolic) => "hyperbolic",
        Some(CurvatureModel::Euclidean) => "euclidean",
        None => "profile",
    };
    let mut out = Vec::new();
    if let Some(e) = errs.h_closed_form {
        out.push(CheckEntry::new(&format!("umbilic.{tag}.h_closed_form"), "umbilic:H-from-curvature-quadrature", e, 1e-10, recon.delta / 200.0));
    }
    out.push(CheckEntry::new(&format!("umbilic.{tag}.radial_unit"), "umbilic:normal-coordinates-radial-coefficient", errs.radial_unit, 1e-12, 0.0));
    out.push(CheckEntry::new(&format!("umbilic.{tag}.pole_limit"), "umbilic:H-tends-to-one-at-pole", errs.pole_limit, 1e-9, 0.0));
    out.push(CheckEntry::exceeds(&format!("umbilic.{tag}.h_positive"), "umbilic:H-positive", errs.min_h, 0.0, 0.0));
    if let Some(e) = errs.round_cap {
        out.push(CheckEntry::new("umbilic.round.matches_round_cap", "umbilic:round-chart-equals-round-cap", e, 1e-8, 2.0 * recon.delta / 8.0));
    }
    out
}

pub fn isometry_entry(name: &str, check: &IsometryCheck, expected: Option<Status>) -> CheckEntry {
    let e = CheckEntry::new(name, "umbilic:gluing-map-is-isometry", check.deviation, ISOMETRY_TOLERANCE, crate::sphere::FRAME_STEP)
        .detail("nodes", check.nodes as f64)
        .detail("worst_node", check.worst_node as f64);
    match expected {
        Some(s) => e.expect(s),
        None => e,
    }
}

// ------------------------------------------------------------ SC^p gluing

/// `a -> a + c beta(a) e` in one gnomonic face, `beta` a product bump of
/// half-width `width` around the face centre.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BumpDeformation {
    pub face: Face,
    pub amplitude: f64,
    pub width: f64,
    pub direction: Vec<f64>,
}

impl BumpDeformation {
    /// `beta(a)` and its gradient, from the scalar blends directly.
    fn beta_and_gradient(&self, a: &[f64]) -> (f64, Vec<f64>) {
        let w = self.width;
        let mut vals = [0.0f64; 8];
        let mut ders = [0.0f64; 8];
        for (i, &x) in a.iter().enumerate() {
            if x.abs() < w {
                let (up, down) = (step(x, -w, 0.0), 1.0 - step(x, 0.0, w));
                vals[i] = up * down;
                ders[i] = step_derivative(x, -w, 0.0) * down - up * step_derivative(x, 0.0, w);
            }
        }
        let k = a.len();
        let beta = vals[..k].iter().product();
        let grad = (0..k).map(|i| (0..k).map(|j| if i == j { ders[j] } else { vals[j] }).product()).collect();
        (beta, grad)
    }

    pub fn chart(&self, a: &[f64]) -> Vec<f64> {
        let (beta, _) = self.beta_and_gradient(a);
        a.iter().zip(&self.direction).map(|(x, e)| x + self.amplitude * beta * e).collect()
    }

    pub fn chart_jacobian(&self, a: &[f64]) -> DMatrix<f64> {
        let (_, grad) = self.beta_and_gradient(a);
        let k = a.len();
        DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { 0.0 } + self.amplitude * self.direction[i] * grad[j])
    }

    /// `mu(eta'(a)) det D eta'(a)`, the pullback of the round density.
    pub fn pulled_density(&self, a: &[f64]) -> f64 {
        let (beta, grad) = self.beta_and_gradient(a);
        if beta == 0.0 && grad.iter().all(|g| *g == 0.0) {
            return gnomonic_density(a);
        }
        let moved: Vec<f64> = a.iter().zip(&self.direction).map(|(x, e)| x + self.amplitude * beta * e).collect();
        // det(I + c e grad^T) = 1 + c e . grad
        let det = 1.0 + self.amplitude * self.direction.iter().zip(&grad).map(|(e, g)| e * g).sum::<f64>();
        gnomonic_density(&moved) * det
    }
}

/// `eta_tilde = eta' o u` with `u` a local Moser map on a box of the face
/// (`u = id` when absent, which is the uncorrected `eta'`).
#[derive(Clone)]
pub struct FaceDeformation {
    pub bump: BumpDeformation,
    pub half_box: f64,
    pub moser: Option<Arc<LocalMoser>>,
}

impl FaceDeformation {
    fn in_box(&self, a: &[f64]) -> bool {
        a.iter().all(|v| v.abs() < self.half_box)
    }

    fn chart_with_jacobian(&self, a: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let k = a.len();
        let (b, du) = match &self.moser {
            Some(m) if self.in_box(a) => (m.map.apply(a)?, m.map.jacobian(a)?),
            _ => (a.to_vec(), DMatrix::identity(k, k)),
        };
        Ok((self.bump.chart(&b), self.bump.chart_jacobian(&b) * du))
    }
}

impl SphereMap for FaceDeformation {
    fn apply(&self, p: &[f64]) -> Result<Vec<f64>> {
        let (face, a) = gnomonic(p);
        if face != self.bump.face || !self.in_box(&a) {
            return Ok(p.to_vec());
        }
        Ok(embed(face, &self.chart_with_jacobian(&a)?.0))
    }

    fn push_frame(&self, face: Face, a: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        if face != self.bump.face || !self.in_box(a) {
            return Ok((embed(face, a), embed_frame(face, a)));
        }
        let (b, j) = self.chart_with_jacobian(a)?;
        Ok((embed(face, &b), embed_frame(face, &b) * j))
    }
}

/// `tau_0 o eta o tau_0 o eta` evaluated literally.
pub fn compose_literal(eta: &dyn SphereMap, p: &[f64]) -> Result<Vec<f64>> {
    let neg = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|x| -x).collect() };
    let y = eta.apply(p)?;
    Ok(neg(eta.apply(&neg(y))?))
}

/// The composite `tau_0 o eta_tilde o tau_0 o eta_tilde` on the nodes of a
/// grid closed under the antipodal map.
///
/// `eta_tilde` must be the identity on `S_+ = {x_0 >= 0}`; it then maps `S_-`
/// to itself and the composite reads `eta_tilde(x)` on `S_-` and
/// `-eta_tilde(-x)` on `S_+`, which only ever uses node values.
pub fn scp_gluing_build(eta: &DiffeoGrid) -> Result<DiffeoGrid> {
    let anti = crate::sphere::antipode_index(&eta.nodes)?;
    for (k, x) in eta.nodes.iter().enumerate() {
        if eta.jacobian_det[k] <= 0.0 {
            return Err(IsoflowError::Orientation { det: eta.jacobian_det[k], node: k });
        }
        if x[0] >= 0.0 {
            let moved = x.iter().zip(&eta.map[k]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let det = (eta.jacobian_det[k] - 1.0).abs();
            if moved > PRECONDITION_TOLERANCE || det > PRECONDITION_TOLERANCE {
                return Err(IsoflowError::Precondition(format!(
                    "eta is not the identity on S_+ at node {k} (displacement {moved:e}, det - 1 = {det:e})"
                )));
            }
        }
    }
    let mut phi = DiffeoGrid { nodes: eta.nodes.clone(), map: Vec::with_capacity(eta.nodes.len()), jacobian_det: Vec::new() };
    for (k, x) in eta.nodes.iter().enumerate() {
        if x[0] < 0.0 {
            phi.map.push(eta.map[k].clone());
            phi.jacobian_det.push(eta.jacobian_det[k]);
        } else {
            let j = anti[k];
            phi.map.push(eta.map[j].iter().map(|v| -v).collect());
            // tau_0 preserves orientation on odd spheres and reverses it on
            // even ones; it enters twice, so the sign cancels either way
            phi.jacobian_det.push(eta.jacobian_det[j]);
        }
    }
    debug_assert!(equivariance_residual(&phi, &anti) <= EQUIVARIANCE_TOLERANCE);
    Ok(phi)
}

fn equivariance_residual(phi: &DiffeoGrid, anti: &[usize]) -> f64 {
    (0..phi.nodes.len())
        .map(|k| phi.map[k].iter().zip(&phi.map[anti[k]]).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max)
}

/// `sup |phi(-x) + phi(x)|` over the grid.
pub fn scp_check_equivariance(phi: &DiffeoGrid) -> Result<CheckEntry> {
    let anti = crate::sphere::antipode_index(&phi.nodes)?;
    let r = equivariance_residual(phi, &anti);
    Ok(CheckEntry::new("scp.equivariance", "scp:phi-commutes-with-antipodal-map", r, EQUIVARIANCE_TOLERANCE, 0.0)
        .detail("nodes", phi.nodes.len() as f64))
}

/// `sup |omega(phi(x)) det phi(x) - omega(x)|`, with `det` the round-volume
/// ratio stored in the grid.
pub fn scp_check_volume(phi: &DiffeoGrid, omega: &SphereDensity) -> Result<CheckEntry> {
    let mut worst = 0.0f64;
    for (k, x) in phi.nodes.iter().enumerate() {
        let det = phi.jacobian_det[k];
        if det <= 0.0 {
            return Err(IsoflowError::Orientation { det, node: k });
        }
        worst = worst.max((omega.eval(&phi.map[k]) * det - omega.eval(x)).abs());
    }
    Ok(CheckEntry::new("scp.volume", "scp:phi-preserves-volume-form", worst, VOLUME_TOLERANCE, crate::sphere::FRAME_STEP)
        .detail("nodes", phi.nodes.len() as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScpOptions {
    /// Cubed-sphere nodes per face axis.
    pub per_axis: usize,
    pub amplitude: f64,
    pub width: f64,
    pub direction: Vec<f64>,
    /// Half-width of the local Moser box in gnomonic units.
    pub half_box: f64,
    pub collar: f64,
    pub density_nodes: usize,
    pub moser: LocalMoserOptions,
}

impl Default for ScpOptions {
    fn default() -> Self {
        ScpOptions {
            per_axis: 9,
            amplitude: 0.05,
            width: 0.35,
            direction: vec![0.8, 0.48, -0.36],
            half_box: 0.55,
            collar: 0.15,
            density_nodes: 9,
            moser: LocalMoserOptions { cutoff: (0.2, 0.8), quad_cells: 32, table_points: 65, fd_step: 5e-4, mass_tolerance: 1e-10 },
        }
    }
}

/// Every stage of the `S^3` pipeline, sampled on one cubed sphere.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScpPipeline {
    pub grid: CubedSphere,
    pub eta_prime: DiffeoGrid,
    pub eta_tilde: DiffeoGrid,
    pub phi: DiffeoGrid,
    pub phi_uncorrected: DiffeoGrid,
    pub moser: LocalMoserReport,
}

/// Deform `S^3` inside the face `{x_0 = -1}`, correct the volume with a local
/// Moser map and symmetrise.
pub fn scp_pipeline(opts: &ScpOptions) -> Result<ScpPipeline> {
    let grid = CubedSphere::new(3, opts.per_axis)?;
    let bump = BumpDeformation {
        face: Face { axis: 0, positive: false },
        amplitude: opts.amplitude,
        width: opts.width,
        direction: opts.direction.clone(),
    };
    if opts.width + opts.collar > opts.half_box {
        return Err(IsoflowError::Config("bump support must clear the Moser collar".into()));
    }
    let hb = opts.half_box;
    let lattice = Lattice::spanning(&[-hb; 3], &[hb; 3], &[opts.density_nodes; 3])?;
    let f = DensityField::from_fn(lattice.clone(), opts.collar, gnomonic_density)?;
    let b2 = bump.clone();
    let g = DensityField::from_fn(lattice, opts.collar, move |a| b2.pulled_density(a))?;
    let moser = local_moser(&f, &g, &opts.moser)?;
    let report = moser.report.clone();
    let uncorrected = FaceDeformation { bump: bump.clone(), half_box: hb, moser: None };
    let corrected = FaceDeformation { bump, half_box: hb, moser: Some(Arc::new(moser)) };
    let eta_prime = grid.sample(&uncorrected)?;
    let eta_tilde = grid.sample(&corrected)?;
    let phi = scp_gluing_build(&eta_tilde)?;
    let phi_uncorrected = scp_gluing_build(&eta_prime)?;
    Ok(ScpPipeline { grid, eta_prime, eta_tilde, phi, phi_uncorrected, moser: report })
}

pub fn scp_checks(p: &ScpPipeline) -> Result<Vec<CheckEntry>> {
    let round = SphereDensity::Uniform(1.0);
    let mut out = vec![
        scp_check_equivariance(&p.phi)?,
        scp_check_volume(&p.phi, &round)?.detail("moser_residual", p.moser.residual),
    ];
    let mut c = scp_check_volume(&p.phi_uncorrected, &round)?.expect(Status::Fail);
    c.name = "scp.control.uncorrected_volume".into();
    out.push(c);
    let mut c = scp_check_equivariance(&p.eta_tilde)?.expect(Status::Fail);
    c.name = "scp.control.unsymmetrized_equivariance".into();
    out.push(c);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::{IdentityMap, Rotation, Squeeze};
    use proptest::prelude::*;

    #[test]
    fn round_model_matches_closed_form_and_cap() {
        let recon = kowalski_vanhecke_metric(&curvature_profile(CurvatureModel::Round, 1.0), 1.0, 3).unwrap();
        let e = reconstruction_errors(&recon).unwrap();
        assert!(e.h_closed_form.unwrap() < 1e-10, "{e:?}");
        assert!(e.round_cap.unwrap() < 1e-8, "{e:?}");
        assert!(e.radial_unit < 1e-12);
        assert!(umbilic_checks(&recon, &e).iter().all(|c| c.passed()));
    }

    #[test]
    fn hyperbolic_and_euclidean_models() {
        let h = kowalski_vanhecke_metric(&curvature_profile(CurvatureModel::Hyperbolic, 1.5), 1.5, 3).unwrap();
        assert!(reconstruction_errors(&h).unwrap().h_closed_form.unwrap() < 1e-10);
        let e = kowalski_vanhecke_metric(&curvature_profile(CurvatureModel::Euclidean, 1.0), 1.0, 2).unwrap();
        let g = e.metric_at(&[0.3, -0.4]).unwrap();
        assert!((g - DMatrix::identity(2, 2)).abs().max() < 1e-15);
    }

    #[test]
    fn general_path_agrees_with_model_path() {
        // cot through the sampled path instead of the Laurent-regularised one
        let lambda = curvature_profile(CurvatureModel::Round, 1.2);
        let h = tabulate_h(&lambda, 1.2).unwrap();
        check_pole_limit(&lambda, 1.2).unwrap();
        for k in 1..=40 {
            let r = 1.2 * k as f64 / 40.0;
            assert!((h.eval(r) - CurvatureModel::Round.warp_closed_form(r)).abs() < 1e-9);
        }
    }

    #[test]
    fn non_integrable_profile_is_rejected() {
        let lambda = SmoothProfile::constant(1.0);
        let err = kowalski_vanhecke_metric(&lambda, 1.0, 3).unwrap_err();
        assert!(matches!(err, IsoflowError::InvalidCurvatureProfile(_)));
    }

    #[test]
    fn rotation_is_isometry_and_squeeze_is_not() {
        let recon = kowalski_vanhecke_metric(&curvature_profile(CurvatureModel::Round, 1.0), 1.0, 3).unwrap();
        let grid = CubedSphere::new(2, 8).unwrap();
        let id = gluing_isometry_check(&grid, &IdentityMap, &recon, &recon).unwrap();
        assert_eq!(id.deviation, 0.0);
        let rot = gluing_isometry_check(&grid, &Rotation::plane(2, 0, 2, 0.9), &recon, &recon).unwrap();
        assert!(rot.deviation < 1e-6, "{rot:?}");
        let sq = gluing_isometry_check(&grid, &Squeeze(vec![1.4, 1.0, 0.8]), &recon, &recon).unwrap();
        assert!(sq.deviation > 1e-3, "{sq:?}");
    }

    #[test]
    fn composite_of_identity_is_identity() {
        let grid = CubedSphere::new(3, 3).unwrap();
        let id = grid.sample(&IdentityMap).unwrap();
        let phi = scp_gluing_build(&id).unwrap();
        assert_eq!(phi.map, id.map);
    }

    #[test]
    fn precondition_rejects_maps_moving_the_upper_hemisphere() {
        let grid = CubedSphere::new(3, 3).unwrap();
        let rot = grid.sample(&Rotation::plane(3, 1, 2, 0.3)).unwrap();
        assert!(matches!(scp_gluing_build(&rot), Err(IsoflowError::Precondition(_))));
    }

    #[test]
    fn node_build_matches_literal_composite() {
        let opts = ScpOptions::default();
        let bump = BumpDeformation { face: Face { axis: 0, positive: false }, amplitude: 0.05, width: 0.35, direction: opts.direction.clone() };
        let eta = FaceDeformation { bump, half_box: opts.half_box, moser: None };
        let grid = CubedSphere::new(3, 7).unwrap();
        let phi = scp_gluing_build(&grid.sample(&eta).unwrap()).unwrap();
        for k in 0..grid.len() {
            let lit = compose_literal(&eta, &grid.point(k)).unwrap();
            let d = lit.iter().zip(&phi.map[k]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(d < 1e-15, "node {k}: {d}");
        }
        assert!(scp_check_equivariance(&phi).unwrap().passed());
        assert!(!scp_check_volume(&phi, &SphereDensity::Uniform(1.0)).unwrap().passed());
    }

    #[test]
    fn rotation_volume_check_passes() {
        let grid = CubedSphere::new(3, 4).unwrap();
        let rot = grid.sample(&Rotation::plane(3, 0, 3, 1.1)).unwrap();
        assert!(scp_check_volume(&rot, &SphereDensity::Uniform(1.0)).unwrap().residual < 1e-10);
    }

    #[test]
    fn s3_pipeline_passes_and_controls_fail() {
        let p = scp_pipeline(&ScpOptions::default()).unwrap();
        let checks = scp_checks(&p).unwrap();
        assert!(checks.iter().all(|c| c.as_expected()));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn bump_jacobian_matches_fd(a in -0.5f64..0.5, b in -0.5f64..0.5, c in -0.5f64..0.5) {
            let bump = BumpDeformation { face: Face { axis: 0, positive: false }, amplitude: 0.05, width: 0.35, direction: vec![0.8, 0.48, -0.36] };
            let x = [a, b, c];
            let j = bump.chart_jacobian(&x);
            let h = 1e-5;
            for col in 0..3 {
                let mut p = x; p[col] += h;
                let mut m = x; m[col] -= h;
                let (fp, fm) = (bump.chart(&p), bump.chart(&m));
                for row in 0..3 {
                    prop_assert!(((fp[row] - fm[row]) / (2.0 * h) - j[(row, col)]).abs() < 1e-6);
                }
            }
        }
    }
}
