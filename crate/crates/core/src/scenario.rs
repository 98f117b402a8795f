//! Scenario configs: a named list of stages whose report entries are
//! aggregated into one [`Report`], plus the bundled regression suite.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::assembly::atlas::{AtlasBuild, LevelOptions, NeckBlend, TorusGluing, TORUS_PERIOD};
use crate::assembly::milnor::{milnor_chart_check, milnor_checks};
use crate::assembly::radial::{focal_geodesic_length, glue_radial, radial_samples, warped_curvatures};
use crate::assembly::{CertifyOptions, GluedManifoldSpec};
use crate::bundle::{bundle_checks, FiberModulation, SubmersionBundleSpec};
use crate::chart::Lattice;
use crate::conformal::{conformal_checks, correct_neck};
use crate::error::{IsoflowError, Result};
use crate::io::{density_from_table, density_table, diffeo_from_table, diffeo_table, read_text, Table};
use crate::moser::{global_moser, local_moser, DensityField, DiffeoGrid, GlobalMoserOptions, LocalMoserOptions};
use crate::neck::{build_neck_metric, neck_checks, CrossSection, NeckSpec, SectionMetric};
use crate::ode::OdeOptions;
use crate::profile::{bump, step_derivative, CurvatureModel, ProfileKind, SmoothProfile};
use crate::quadrature::integrate_adaptive;
use crate::report::{Bound, CheckEntry, Report, Status};
use crate::sphere::{CubedSphere, Rotation, SphereDensity, Squeeze};
use crate::umbilic::{
    curvature_profile, gluing_isometry_check, isometry_entry, kowalski_vanhecke_metric, reconstruction_errors,
    scp_check_equivariance, scp_check_volume, scp_checks, scp_gluing_build, scp_pipeline, umbilic_checks, ScpOptions,
};
use crate::warped_disc::{laplacian_sweep, laplacian_sweep_within, radial_geodesic_check, CapOrientation, WarpedDiscSpec};

/// A spec given inline or as a path relative to the scenario file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpecRef<T> {
    Path(String),
    Inline(T),
}

impl<T: DeserializeOwned + Clone> SpecRef<T> {
    pub fn load(&self, base: &Path) -> Result<T> {
        match self {
            SpecRef::Inline(v) => Ok(v.clone()),
            SpecRef::Path(p) => {
                let path = base.join(p);
                serde_json::from_str(&read_text(&path)?)
                    .map_err(|e| IsoflowError::Parse(format!("{}: {e}", path.display())))
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    /// Recorded in the report; every stage is deterministic, so the seed
    /// only labels the run.
    #[serde(default)]
    pub seed: u64,
    pub stages: Vec<Stage>,
    /// Per-check tolerance overrides, keyed by entry name.
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default = "unit")]
    pub tolerance_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
}

fn unit() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "kebab-case")]
pub enum Stage {
    Cap(CapStage),
    Bundle(BundleStage),
    Neck(NeckStage),
    MoserLocal(MoserLocalStage),
    MoserGlobal(MoserGlobalStage),
    Conformal(ConformalStage),
    Radial(RadialStage),
    Atlas(AtlasStage),
    Milnor(MilnorStage),
    Umbilic(UmbilicStage),
    Scp(ScpStage),
}

impl Stage {
    pub fn kind(&self) -> &'static str {
        match self {
            Stage::Cap(_) => "cap",
            Stage::Bundle(_) => "bundle",
            Stage::Neck(_) => "neck",
            Stage::MoserLocal(_) => "moser-local",
            Stage::MoserGlobal(_) => "moser-global",
            Stage::Conformal(_) => "conformal",
            Stage::Radial(_) => "radial",
            Stage::Atlas(_) => "atlas",
            Stage::Milnor(_) => "milnor",
            Stage::Umbilic(_) => "umbilic",
            Stage::Scp(_) => "scp",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapStage {
    pub dim: usize,
    pub eps: f64,
    pub level_offset: f64,
    /// FD step of the Laplacian sweep; the order check reruns at half of it.
    pub fd_step: f64,
    pub stride: usize,
}

impl Default for CapStage {
    fn default() -> Self {
        CapStage { dim: 3, eps: 1.0, level_offset: 0.0, fd_step: 1e-2, stride: 10 }
    }
}

/// Without a spec: a circle bundle over a circle with a rotating connection.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BundleStage {
    pub spec: Option<SpecRef<SubmersionBundleSpec>>,
    pub samples: usize,
    /// Fiber modulation amplitude of the negative control.
    pub modulation: Option<f64>,
}

impl Default for BundleStage {
    fn default() -> Self {
        BundleStage { spec: None, samples: 12, modulation: None }
    }
}

/// Without a spec: the shear neck.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeckStage {
    pub spec: Option<SpecRef<NeckSpec>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MoserLocalFixture {
    /// `f, g` differ by a bump moved along `y`, scaled by a cutoff in `x`.
    #[default]
    Separable2d,
    /// `g = 1 + c w` on the unit interval against its cumulative-mass map.
    Cumulative1d,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MoserLocalStage {
    pub fixture: MoserLocalFixture,
    /// CSV density tables; both or neither.
    pub f: Option<String>,
    pub g: Option<String>,
    pub collar: f64,
    pub options: LocalMoserOptions,
}

impl Default for MoserLocalStage {
    fn default() -> Self {
        MoserLocalStage {
            fixture: MoserLocalFixture::Separable2d,
            f: None,
            g: None,
            collar: 0.1,
            options: LocalMoserOptions::default(),
        }
    }
}

/// Without tables: uniform `tau` against a normalized two-bump `sigma` on
/// the unit 2-torus.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MoserGlobalStage {
    pub tau: Option<String>,
    pub sigma: Option<String>,
    pub nodes: usize,
    pub options: GlobalMoserOptions,
}

impl Default for MoserGlobalStage {
    fn default() -> Self {
        MoserGlobalStage { tau: None, sigma: None, nodes: 48, options: GlobalMoserOptions::default() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConformalStage {
    pub neck: Option<SpecRef<NeckSpec>>,
    /// Dimension of the glued manifold.
    pub n: usize,
    pub lambda: Option<f64>,
}

impl Default for ConformalStage {
    fn default() -> Self {
        ConformalStage { neck: None, n: 3, lambda: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadialStage {
    pub dim: usize,
    pub eps: f64,
    pub alpha: f64,
    pub beta: f64,
    pub resolution: f64,
    /// Also glue two round hemispheres and check unit curvature.
    pub round_regression: bool,
}

impl Default for RadialStage {
    fn default() -> Self {
        RadialStage { dim: 3, eps: 1.0, alpha: 0.0, beta: 3.0, resolution: 1e-3, round_regression: false }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AtlasControl {
    /// Moser gluing, frozen collars, conformal correction.
    #[default]
    None,
    /// As above without the correction: transnormal but not isoparametric.
    Uncorrected,
    /// Collars not frozen: the seam loses C^1.
    Unfrozen,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AtlasStage {
    pub control: AtlasControl,
    pub moser_nodes: usize,
    pub moser_steps: usize,
    pub levels: LevelOptions,
}

impl Default for AtlasStage {
    fn default() -> Self {
        AtlasStage {
            control: AtlasControl::None,
            moser_nodes: 96,
            moser_steps: 64,
            levels: LevelOptions { nodes_per_axis: 3, ..Default::default() },
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MilnorStage {
    pub m: usize,
    pub n: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UmbilicStage {
    /// Closed-form curvature model; ignored when `lambda` is given.
    pub model: CurvatureModel,
    pub lambda: Option<SpecRef<SmoothProfile>>,
    pub delta: f64,
    pub dim: usize,
    /// Cubed-sphere nodes per face axis of the isometry checks; 0 skips them.
    pub isometry_nodes: usize,
}

impl Default for UmbilicStage {
    fn default() -> Self {
        UmbilicStage { model: CurvatureModel::Round, lambda: None, delta: 1.0, dim: 3, isometry_nodes: 8 }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScpStage {
    pub options: ScpOptions,
    /// CSV node map of `eta_tilde` on a cubed `S^k`; replaces the built-in
    /// pipeline.
    pub eta: Option<String>,
    /// CSV density on the same nodes; the round density when absent.
    pub omega: Option<String>,
}

/// Run-time overrides from the command line.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub base_dir: PathBuf,
    /// Replaces the primary step of the cap, radial and atlas stages.
    pub resolution: Option<f64>,
    /// Multiplies the scenario's own scale.
    pub tolerance_scale: Option<f64>,
    /// Keep only entries whose names start with one of these prefixes.
    pub verify: Option<Vec<String>>,
    pub timestamp: bool,
}

#[derive(Debug)]
pub struct RunOutput {
    pub report: Report,
    /// `(file name, contents)`, CSV unless the name says otherwise.
    pub artifacts: Vec<(String, String)>,
}

impl RunOutput {
    /// Everything is computed before the first byte is written.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.report.to_json())?;
        for (name, body) in &self.artifacts {
            std::fs::write(dir.join(name), body)?;
        }
        Ok(())
    }
}

pub fn parse_scenario(text: &str) -> Result<ScenarioConfig> {
    let cfg: ScenarioConfig = serde_json::from_str(text)?;
    Ok(cfg)
}

/// `name` as a bundled scenario, otherwise as a path.
pub fn load_scenario(name: &str) -> Result<(ScenarioConfig, PathBuf)> {
    if let Some(text) = bundled(name) {
        return Ok((parse_scenario(text)?, PathBuf::from(".")));
    }
    let path = Path::new(name);
    let text = read_text(path)?;
    let cfg = parse_scenario(&text).map_err(|e| match e {
        IsoflowError::Parse(m) => IsoflowError::Parse(format!("{}: {m}", path.display())),
        other => other,
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, base))
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(IsoflowError::Config(format!("scenario `{}` has no stages", self.name)));
        }
        if !(self.tolerance_scale > 0.0 && self.tolerance_scale.is_finite()) {
            return Err(IsoflowError::Config("tolerance_scale must be positive".into()));
        }
        if let Some((k, v)) = self.tolerances.iter().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(IsoflowError::Config(format!("tolerance for `{k}` must be positive, got {v}")));
        }
        for s in &self.stages {
            validate_stage(s)?;
        }
        Ok(())
    }
}

fn need(ok: bool, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(IsoflowError::Config(msg.into()))
    }
}

fn validate_stage(s: &Stage) -> Result<()> {
    match s {
        Stage::Cap(c) => {
            need(c.fd_step >= 1e-4 && c.fd_step < c.eps / 4.0, "cap fd_step must lie in [1e-4, eps/4)")?;
            need(c.stride >= 1, "cap stride must be at least 1")
        }
        Stage::Bundle(b) => need(b.samples >= 1, "bundle needs at least one sample"),
        Stage::Neck(_) => Ok(()),
        Stage::MoserLocal(m) => {
            need(m.f.is_some() == m.g.is_some(), "moser-local takes both f and g tables or neither")?;
            need(m.options.table_points >= 9 && m.options.quad_cells >= 4, "moser-local tables are too coarse")
        }
        Stage::MoserGlobal(m) => {
            need(m.tau.is_some() == m.sigma.is_some(), "moser-global takes both tau and sigma tables or neither")?;
            need(m.nodes >= 8 && m.options.steps >= 8, "moser-global needs at least 8 nodes and 8 steps")
        }
        Stage::Conformal(c) => need(c.n >= 2, "conformal needs n >= 2"),
        Stage::Radial(r) => need(r.resolution >= 1e-5 && r.resolution <= 1e-2, "radial resolution must lie in [1e-5, 1e-2]"),
        Stage::Atlas(a) => {
            need(a.levels.nodes_per_axis >= 2, "atlas needs at least 2 nodes per level axis")?;
            need(a.moser_nodes >= 16, "atlas Moser grid needs at least 16 nodes")
        }
        Stage::Milnor(m) => need((1..=3).contains(&m.m) && (1..=3).contains(&m.n), "milnor needs 1 <= m, n <= 3"),
        Stage::Umbilic(u) => need(u.delta > 0.0 && u.dim >= 2, "umbilic needs delta > 0 and dim >= 2"),
        Stage::Scp(s) => need(s.options.per_axis >= 3 || s.eta.is_some(), "scp needs at least 3 nodes per face axis"),
    }
}

/// Execute every stage in order and aggregate the entries.
pub fn run_scenario(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<RunOutput> {
    cfg.validate()?;
    let mut report = Report::new(&cfg.name);
    let mut artifacts = Vec::new();
    report.meta("seed", cfg.seed);
    report.meta("stages", cfg.stages.iter().map(Stage::kind).collect::<Vec<_>>());
    let scale = cfg.tolerance_scale * opts.tolerance_scale.unwrap_or(1.0);
    report.meta("tolerance_scale", scale);
    if let Some(r) = opts.resolution {
        report.meta("resolution", r);
    }
    for stage in &cfg.stages {
        let out = run_stage(stage, opts)?;
        report.extend(out.entries);
        artifacts.extend(out.artifacts);
        for (k, v) in out.metadata {
            report.meta(&k, v);
        }
    }
    let mut seen = BTreeSet::new();
    for e in &report.checks {
        if !seen.insert(e.name.clone()) {
            return Err(IsoflowError::Config(format!("check `{}` appears twice in scenario `{}`", e.name, cfg.name)));
        }
    }
    for name in cfg.tolerances.keys() {
        if !seen.contains(name) {
            return Err(IsoflowError::Config(format!("tolerance override for unknown check `{name}`")));
        }
    }
    for e in &mut report.checks {
        if let Some(t) = cfg.tolerances.get(&e.name) {
            e.set_tolerance(*t);
        }
        // separation thresholds and order bounds are not loosened
        if e.bound == Bound::AtMost && scale != 1.0 {
            e.set_tolerance(e.tolerance * scale);
        }
    }
    if let Some(prefixes) = &opts.verify {
        report.checks.retain(|e| prefixes.iter().any(|p| e.name.starts_with(p.as_str())));
    }
    let mut names = BTreeSet::new();
    artifacts.retain(|(n, _): &(String, String)| names.insert(n.clone()));
    if opts.timestamp {
        let secs = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs());
        report.generated_at = Some(secs.to_string());
    }
    Ok(RunOutput { report, artifacts })
}

#[derive(Default)]
struct StageOutput {
    entries: Vec<CheckEntry>,
    artifacts: Vec<(String, String)>,
    metadata: Vec<(String, serde_json::Value)>,
}

fn run_stage(stage: &Stage, opts: &RunOptions) -> Result<StageOutput> {
    let base = &opts.base_dir;
    match stage {
        Stage::Cap(c) => run_cap(c, opts.resolution),
        Stage::Bundle(b) => run_bundle(b, base),
        Stage::Neck(n) => {
            let spec = load_neck(n.spec.as_ref(), base)?;
            Ok(StageOutput { entries: neck_checks(&spec, &OdeOptions::default())?, ..Default::default() })
        }
        Stage::MoserLocal(m) => run_moser_local(m, base),
        Stage::MoserGlobal(m) => run_moser_global(m, base),
        Stage::Conformal(c) => run_conformal(c, base),
        Stage::Radial(r) => run_radial(r, opts.resolution),
        Stage::Atlas(a) => run_atlas(a, opts.resolution),
        Stage::Milnor(m) => {
            let r = milnor_chart_check(m.m, m.n)?;
            let prefix = format!("milnor.m{}n{}.", m.m, m.n);
            let entries = milnor_checks(&r).into_iter().map(|e| rename(e, "milnor.", &prefix)).collect();
            Ok(StageOutput { entries, ..Default::default() })
        }
        Stage::Umbilic(u) => run_umbilic(u, base),
        Stage::Scp(s) => run_scp(s, base),
    }
}

fn rename(mut e: CheckEntry, from: &str, to: &str) -> CheckEntry {
    if let Some(rest) = e.name.strip_prefix(from) {
        e.name = format!("{to}{rest}");
    }
    e
}

fn csv(name: &str, t: &Table) -> Result<(String, String)> {
    Ok((name.to_string(), t.to_csv()?))
}

// ---------------------------------------------------------------- fixtures

/// Flat 2-torus neck on `[1, 2]` blending the identity into a sheared,
/// rescaled metric; the cross-section volume ratio is `lambda`.
pub fn shear_neck(lambda: f64) -> Result<NeckSpec> {
    let top = SectionMetric::Shear { dim: 2, scale: lambda.sqrt(), amplitude: 0.6, row: 0, col: 1, along: 0, period: 1.0 };
    let torus = CrossSection::FlatTorus { periods: vec![1.0, 1.0] };
    let mut n = NeckSpec::interpolating(torus, (1.0, 2.0), 0.15, SectionMetric::identity(2), top)?;
    n.section_nodes = 6;
    Ok(n)
}

fn load_neck(spec: Option<&SpecRef<NeckSpec>>, base: &Path) -> Result<NeckSpec> {
    match spec {
        Some(r) => build_neck_metric(r.load(base)?),
        None => shear_neck(2.0),
    }
}

pub fn demo_bundle() -> Result<SubmersionBundleSpec> {
    let fiber = WarpedDiscSpec::new(2, 1.0, 0.0, CapOrientation::MinCap)?;
    SubmersionBundleSpec::new(vec![2.0], vec![1.0], fiber, SubmersionBundleSpec::planar_rotation(2, 1, 0.8))
}

/// Periodic bump of unit height centred at `c` on the unit torus.
fn periodic_bump(x: &[f64], c: &[f64]) -> f64 {
    let s: f64 = x.iter().zip(c).map(|(a, b)| (std::f64::consts::TAU * (a - b)).cos() - 1.0).sum();
    (4.0 * s).exp()
}

/// `(tau, sigma)`: uniform against two bumps, both of unit mass.
pub fn two_bump_torus(n: usize) -> Result<(DensityField, DensityField)> {
    let lat = Lattice::periodic(2, n, 1.0);
    let raw = |x: &[f64]| 1.0 + 0.6 * (periodic_bump(x, &[0.3, 0.3]) + periodic_bump(x, &[0.7, 0.6]));
    // the node mean of a smooth periodic function is its mean to roundoff
    let mean = (0..lat.len()).map(|k| raw(&lat.point(&lat.multi(k)))).sum::<f64>() / lat.len() as f64;
    let tau = DensityField::from_fn(lat.clone(), 0.0, |_| 1.0)?;
    let sigma = DensityField::from_fn(lat, 0.0, move |x| raw(x) / mean)?;
    Ok((tau, sigma))
}

// ---------------------------------------------------------------- stages

fn run_cap(c: &CapStage, resolution: Option<f64>) -> Result<StageOutput> {
    let spec = WarpedDiscSpec::new(c.dim, c.eps, c.level_offset, CapOrientation::MinCap)?;
    let h = resolution.unwrap_or(c.fd_step);
    let coarse = laplacian_sweep(&spec, h, c.stride)?;
    // half the step on the coarse node set
    let fine = laplacian_sweep_within(&spec, 0.5 * h, 2 * c.stride, spec.eps - h)?;
    let order = (coarse.sup_error / fine.sup_error).log2();
    let mut entries = vec![
        CheckEntry::new("cap.laplacian_fd", "cap:laplacian-closed-form", coarse.sup_error, 1e-4, h)
            .detail("nodes", coarse.nodes as f64)
            .detail("worst_radius", coarse.worst_radius)
            .detail("half_step_error", fine.sup_error),
        CheckEntry::at_least("cap.laplacian_order", "cap:fd-second-order-convergence", order, 2.0, h),
    ];
    entries.extend(radial_geodesic_check(&spec, &OdeOptions::default())?);
    let mut t = Table::new(&["r", "F", "G", "laplacian", "gradient_sq"]);
    for k in 0..=200 {
        let r = c.eps * k as f64 / 200.0;
        let fval = spec.height(&{
            let mut x = vec![0.0; c.dim];
            x[0] = r;
            x
        });
        t.push(vec![r, spec.F.eval(r), spec.G.eval(r), spec.laplacian_of_height(r)?, spec.gradient_norm_sq(fval)?]);
    }
    Ok(StageOutput { entries, artifacts: vec![csv("cap_profile.csv", &t)?], ..Default::default() })
}

fn run_bundle(b: &BundleStage, base: &Path) -> Result<StageOutput> {
    let mut spec = match &b.spec {
        Some(r) => {
            let s = r.load(base)?;
            s.validate()?;
            s
        }
        None => demo_bundle()?,
    };
    if let Some(a) = b.modulation {
        spec.modulation = Some(FiberModulation { amplitude: a });
    }
    let mut entries = bundle_checks(&spec, b.samples, &OdeOptions::default())?;
    if spec.modulation.is_some() {
        // a rescaled fiber is no longer the cap, so only the drift certificate
        // is meaningful for the control
        entries.retain(|e| e.name == "bundle.fiber_totally_geodesic");
        entries = entries.into_iter().map(|e| rename(e, "bundle.", "bundle.control.")).collect();
    }
    Ok(StageOutput { entries, ..Default::default() })
}

/// `G^{-1}(x)` for `G(y) = int_0^y g` by bisection on adaptive quadrature.
fn cumulative_inverse(g: impl Fn(f64) -> f64 + Copy, target: f64) -> Result<f64> {
    let (mut a, mut b) = (0.0, 1.0);
    for _ in 0..80 {
        let m = 0.5 * (a + b);
        if integrate_adaptive(g, 0.0, m, 1e-15)?.0 < target {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

fn moser_local_entries(prefix: &str, out: &crate::moser::LocalMoser, res: f64) -> Vec<CheckEntry> {
    let r = &out.report;
    let mono = r.stage_min_derivative.iter().copied().fold(f64::INFINITY, f64::min);
    vec![
        CheckEntry::new(&format!("{prefix}.residual"), "moser:pushforward-matches-target", r.residual, 1e-6, res)
            .detail("mass_difference", r.mass_difference),
        CheckEntry::exceeds(&format!("{prefix}.monotone"), "moser:stages-monotone", mono, 0.0, res),
        CheckEntry::new(&format!("{prefix}.collar_identity"), "moser:identity-on-collar", r.collar_displacement, 1e-10, res),
    ]
}

fn run_moser_local(m: &MoserLocalStage, base: &Path) -> Result<StageOutput> {
    let unit = |dim: usize, n: usize| Lattice::spanning(&vec![0.0; dim], &vec![1.0; dim], &vec![n; dim]);
    let mut entries = Vec::new();
    let out = match (&m.f, &m.g) {
        (Some(fp), Some(gp)) => {
            let f = density_from_table(&Table::from_csv(&read_text(&base.join(fp))?)?, m.collar, false)?;
            let g = density_from_table(&Table::from_csv(&read_text(&base.join(gp))?)?, m.collar, false)?;
            let out = local_moser(&f, &g, &m.options)?;
            entries.extend(moser_local_entries("moser_local.input", &out, f.lattice.spacing[0]));
            out
        }
        _ => match m.fixture {
            MoserLocalFixture::Separable2d => {
                let lat = unit(2, 13)?;
                let k = |x: f64| step_derivative(x, 0.2, 0.8);
                let f = DensityField::from_fn(lat.clone(), m.collar, move |p| 1.0 + 0.5 * k(p[0]) * bump(p[1], 0.25, 0.55))?;
                let g = DensityField::from_fn(lat, m.collar, move |p| 1.0 + 0.5 * k(p[0]) * bump(p[1], 0.45, 0.75))?;
                let out = local_moser(&f, &g, &m.options)?;
                entries.extend(moser_local_entries("moser_local.separable", &out, 1.0 / 12.0));
                let x_moved = out.grid.nodes.iter().zip(&out.grid.map).map(|(x, y)| (x[0] - y[0]).abs()).fold(0.0, f64::max);
                entries.push(CheckEntry::new("moser_local.separable.x_fixed", "moser:triangular-first-stage-identity", x_moved, 1e-12, 1.0 / 12.0));
                out
            }
            MoserLocalFixture::Cumulative1d => {
                let lat = unit(1, 41)?;
                let c = 0.3;
                let w = |x: f64| bump(x, 0.2, 0.5) - bump(x, 0.5, 0.8);
                let f = DensityField::from_fn(lat.clone(), m.collar, |_| 1.0)?;
                let g = DensityField::from_fn(lat, m.collar, move |x| 1.0 + c * w(x[0]))?;
                let out = local_moser(&f, &g, &m.options)?;
                entries.extend(moser_local_entries("moser_local.cumulative", &out, 1.0 / 40.0));
                let mut dev = 0.0f64;
                for (x, y) in out.grid.nodes.iter().zip(&out.grid.map) {
                    dev = dev.max((y[0] - cumulative_inverse(move |t| 1.0 + c * w(t), x[0])?).abs());
                }
                entries.push(CheckEntry::new("moser_local.cumulative.root_finding", "moser:one-dimensional-cumulative-mass", dev, 1e-8, 1.0 / 40.0));
                out
            }
        },
    };
    let name = match (&m.f, m.fixture) {
        (Some(_), _) => "moser_local_psi.csv",
        (None, MoserLocalFixture::Separable2d) => "moser_local_separable_psi.csv",
        (None, MoserLocalFixture::Cumulative1d) => "moser_local_cumulative_psi.csv",
    };
    Ok(StageOutput { entries, artifacts: vec![csv(name, &diffeo_table(&out.grid))?], ..Default::default() })
}

fn run_moser_global(m: &MoserGlobalStage, base: &Path) -> Result<StageOutput> {
    let (tau, sigma) = match (&m.tau, &m.sigma) {
        (Some(tp), Some(sp)) => (
            density_from_table(&Table::from_csv(&read_text(&base.join(tp))?)?, 0.0, true)?,
            density_from_table(&Table::from_csv(&read_text(&base.join(sp))?)?, 0.0, true)?,
        ),
        _ => two_bump_torus(m.nodes)?,
    };
    let out = global_moser(&tau, &sigma, &m.options)?;
    let res = tau.lattice.spacing[0];
    let entries = vec![
        CheckEntry::new("moser_global.residual", "moser:global-pushforward-matches-target", out.residual, 1e-5, res)
            .detail("poisson_residual", out.poisson_residual)
            .detail("min_det_over_flow", out.min_det_over_flow),
        CheckEntry::exceeds("moser_global.det_positive", "moser:orientation-preserving", out.grid.min_det(), 0.0, res),
    ];
    let mut artifacts = vec![csv("moser_global_psi.csv", &diffeo_table(&out.grid))?];
    if m.tau.is_none() {
        artifacts.push(csv("moser_global_sigma.csv", &density_table(&sigma))?);
    }
    Ok(StageOutput { entries, artifacts, ..Default::default() })
}

fn run_conformal(c: &ConformalStage, base: &Path) -> Result<StageOutput> {
    let neck = load_neck(c.neck.as_ref(), base)?;
    let (corr, summary) = correct_neck(&neck, c.n, c.lambda)?;
    let mut t = Table::new(&["t", "corrected_laplacian", "h"]);
    for (tt, v) in &summary.scatter {
        t.push(vec![*tt, *v, corr.h.eval(*tt)]);
    }
    Ok(StageOutput {
        entries: conformal_checks(&summary, true),
        artifacts: vec![csv("conformal_scatter.csv", &t)?],
        metadata: vec![("conformal.lambda".into(), summary.lambda.into())],
    })
}

fn round_cap(orientation: CapOrientation, offset: f64) -> Result<WarpedDiscSpec> {
    use std::f64::consts::FRAC_PI_2;
    let g = SmoothProfile::new(ProfileKind::Sine { amplitude: 1.0, frequency: 1.0 }, (0.0, FRAC_PI_2));
    WarpedDiscSpec::with_profiles(3, FRAC_PI_2, offset, orientation, SmoothProfile::constant(1.0), g)
}

fn run_radial(r: &RadialStage, resolution: Option<f64>) -> Result<StageOutput> {
    let res = resolution.unwrap_or(r.resolution);
    let minus = WarpedDiscSpec::new(r.dim, r.eps, r.alpha, CapOrientation::MinCap)?;
    let plus = WarpedDiscSpec::new(r.dim, r.eps, r.beta, CapOrientation::MaxCap)?;
    let build = glue_radial(minus, plus, r.alpha, r.beta)?;
    let s = radial_samples(&build, res)?;
    let mut spec = GluedManifoldSpec::radial(build);
    let mut entries = spec.certify(&CertifyOptions { radial_resolution: res, ..Default::default() })?;
    let mut t = Table::new(&["rho", "f", "b", "b_formula", "a", "a_formula"]);
    for k in 0..s.rho.len() {
        t.push(vec![s.rho[k], s.f[k], s.b[k], s.b_formula[k], s.a[k], s.a_formula[k]]);
    }
    if r.round_regression {
        let beta = 2.0 * std::f64::consts::FRAC_PI_2.powi(2);
        let b = glue_radial(round_cap(CapOrientation::MinCap, 0.0)?, round_cap(CapOrientation::MaxCap, beta)?, 0.0, beta)?;
        let len = b.total_length();
        let dev = (1..20)
            .map(|k| {
                let (kr, kt) = warped_curvatures(&b, len * k as f64 / 20.0, 1e-3);
                (kr - 1.0).abs().max((kt - 1.0).abs())
            })
            .fold(0.0, f64::max);
        let geo = focal_geodesic_length(&b, &OdeOptions::default())?;
        entries.push(CheckEntry::new("assembly.round.sectional_curvature", "assembly:round-regression-unit-curvature", dev, 1e-3, 1e-3));
        entries.push(
            CheckEntry::new("assembly.round.focal_length", "assembly:round-regression-focal-distance-pi", (geo.length - std::f64::consts::PI).abs(), 1e-6, 0.0)
                .detail("length", geo.length),
        );
    }
    Ok(StageOutput { entries, artifacts: vec![csv("radial_profiles.csv", &t)?], ..Default::default() })
}

fn atlas_cap(orientation: CapOrientation, offset: f64, h: f64, c: f64) -> Result<SubmersionBundleSpec> {
    let fiber = WarpedDiscSpec::new(2, 0.5, offset, orientation)?;
    SubmersionBundleSpec::new(vec![TORUS_PERIOD], vec![h], fiber, SubmersionBundleSpec::planar_rotation(2, 1, c))
}

fn run_atlas(a: &AtlasStage, resolution: Option<f64>) -> Result<StageOutput> {
    let minus = atlas_cap(CapOrientation::MinCap, 0.0, 0.8, 0.3)?;
    let plus = atlas_cap(CapOrientation::MaxCap, 1.5, 1.2, -0.2)?;
    let mut levels = a.levels;
    if let Some(r) = resolution {
        levels.fd_step = r;
    }
    let gluing = TorusGluing::new(0.3, 0.4)?;
    let moser_opts = GlobalMoserOptions { steps: a.moser_steps, ..Default::default() };
    let mut metadata = Vec::new();
    let entries = match a.control {
        AtlasControl::Unfrozen => {
            let b = AtlasBuild::glue(minus, plus, gluing, 0.0, NeckBlend::Unfrozen)?;
            let jumps = b.seam_jumps(levels.fd_step)?;
            let worst = |sel: fn(&crate::assembly::atlas::AtlasSeamJump) -> f64| jumps.iter().map(sel).fold(0.0, f64::max);
            let res = levels.fd_step;
            vec![
                CheckEntry::new("atlas.unfrozen.seam.c0", "seam:metric-continuous", worst(|j| j.c0), 1e-8, res),
                CheckEntry::new("atlas.unfrozen.seam.c1", "seam:metric-c1", worst(|j| j.c1), 1e-6, res).expect(Status::Fail),
            ]
        }
        control => {
            let mut b = AtlasBuild::glue(minus, plus, gluing.with_moser(a.moser_nodes, &moser_opts)?, 0.1, NeckBlend::Frozen)?;
            let corrected = control == AtlasControl::None;
            if corrected {
                let summary = b.correct()?;
                metadata.push(("atlas.neck_lambda".to_string(), summary.lambda.into()));
            }
            let mut spec = GluedManifoldSpec::atlas(b);
            let e = spec.certify(&CertifyOptions { levels, expect_isoparametric: corrected, ..Default::default() })?;
            if corrected {
                e
            } else {
                e.into_iter().map(|e| rename(e, "atlas.", "atlas.uncorrected.")).collect()
            }
        }
    };
    Ok(StageOutput { entries, metadata, ..Default::default() })
}

fn run_umbilic(u: &UmbilicStage, base: &Path) -> Result<StageOutput> {
    let lambda = match &u.lambda {
        Some(r) => r.load(base)?,
        None => curvature_profile(u.model, u.delta),
    };
    let recon = kowalski_vanhecke_metric(&lambda, u.delta, u.dim)?;
    let errs = reconstruction_errors(&recon)?;
    let mut entries = umbilic_checks(&recon, &errs);
    let tag = entries[0].name.split('.').nth(1).unwrap_or("profile").to_string();
    if u.isometry_nodes > 0 {
        let grid = CubedSphere::new(u.dim - 1, u.isometry_nodes)?;
        let d = u.dim;
        let rot = gluing_isometry_check(&grid, &Rotation::plane(d - 1, 0, d - 1, 0.9), &recon, &recon)?;
        let squeeze: Vec<f64> = (0..d).map(|i| if i == 0 { 1.4 } else if i == d - 1 { 0.8 } else { 1.0 }).collect();
        let sq = gluing_isometry_check(&grid, &Squeeze(squeeze), &recon, &recon)?;
        entries.push(isometry_entry(&format!("umbilic.{tag}.isometry.rotation"), &rot, None));
        entries.push(isometry_entry(&format!("umbilic.{tag}.isometry.squeeze"), &sq, Some(Status::Fail)));
    }
    let mut t = Table::new(&["r", "H"]);
    for k in 0..=100 {
        let r = u.delta * k as f64 / 100.0;
        t.push(vec![r, recon.h_at(r)]);
    }
    Ok(StageOutput { entries, artifacts: vec![csv(&format!("umbilic_{tag}_h.csv"), &t)?], ..Default::default() })
}

/// The cubed sphere whose node list is exactly `nodes`.
fn sphere_grid_for(nodes: &[Vec<f64>]) -> Result<CubedSphere> {
    let dim = nodes.first().map_or(0, |n| n.len()).saturating_sub(1);
    if dim == 0 {
        return Err(IsoflowError::Config("sphere node table is empty".into()));
    }
    let per_face = nodes.len() / (2 * (dim + 1));
    let per_axis = (per_face as f64).powf(1.0 / dim as f64).round() as usize;
    let grid = CubedSphere::new(dim, per_axis)?;
    let matches = grid.len() == nodes.len()
        && nodes.iter().enumerate().all(|(k, x)| grid.point(k).iter().zip(x).all(|(a, b)| (a - b).abs() <= 1e-9));
    if !matches {
        return Err(IsoflowError::Config("nodes are not a cubed-sphere lattice in canonical order".into()));
    }
    Ok(grid)
}

fn run_scp(s: &ScpStage, base: &Path) -> Result<StageOutput> {
    let provenance = (
        "scp.isotopy_condition".to_string(),
        serde_json::Value::from("not certified: isotopy is recorded as construction provenance only"),
    );
    let Some(eta_path) = &s.eta else {
        let p = scp_pipeline(&s.options)?;
        let entries = scp_checks(&p)?;
        return Ok(StageOutput {
            entries,
            artifacts: vec![csv("scp_phi.csv", &diffeo_table(&p.phi))?, csv("scp_eta_tilde.csv", &diffeo_table(&p.eta_tilde))?],
            metadata: vec![provenance, ("scp.moser_residual".into(), p.moser.residual.into())],
        });
    };
    let eta: DiffeoGrid = diffeo_from_table(&Table::from_csv(&read_text(&base.join(eta_path))?)?)?;
    let grid = sphere_grid_for(&eta.nodes)?;
    let omega = match &s.omega {
        Some(op) => {
            let t = Table::from_csv(&read_text(&base.join(op))?)?;
            let v = t.column("value").ok_or_else(|| IsoflowError::Parse("omega table needs a `value` column".into()))?;
            let nodes: Vec<Vec<f64>> = t.rows.iter().map(|r| r[..v].to_vec()).collect();
            if sphere_grid_for(&nodes)? != grid {
                return Err(IsoflowError::Config("omega and eta are sampled on different spheres".into()));
            }
            SphereDensity::tabulated(grid, &t.rows.iter().map(|r| r[v]).collect::<Vec<_>>())?
        }
        None => SphereDensity::Uniform(1.0),
    };
    let phi = scp_gluing_build(&eta)?;
    Ok(StageOutput {
        entries: vec![scp_check_equivariance(&phi)?, scp_check_volume(&phi, &omega)?],
        artifacts: vec![csv("scp_phi.csv", &diffeo_table(&phi))?],
        metadata: vec![provenance],
    })
}

// ---------------------------------------------------------------- bundled

pub const BUNDLED: &[(&str, &str)] = &[
    ("round-sphere-n3", include_str!("../scenarios/round-sphere-n3.json")),
    ("cap-d3", include_str!("../scenarios/cap-d3.json")),
    ("bundle-cap", include_str!("../scenarios/bundle-cap.json")),
    ("moser-local", include_str!("../scenarios/moser-local.json")),
    ("moser-global-torus", include_str!("../scenarios/moser-global-torus.json")),
    ("neck-conformal", include_str!("../scenarios/neck-conformal.json")),
    ("atlas-build", include_str!("../scenarios/atlas-build.json")),
    ("uncorrected-neck", include_str!("../scenarios/uncorrected-neck.json")),
    ("milnor-chart", include_str!("../scenarios/milnor-chart.json")),
    ("umbilic", include_str!("../scenarios/umbilic.json")),
    ("scp-s3", include_str!("../scenarios/scp-s3.json")),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Every bundled scenario, in order.
pub fn run_suite(opts: &RunOptions) -> Result<Vec<RunOutput>> {
    BUNDLED.iter().map(|(_, text)| run_scenario(&parse_scenario(text)?, opts)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenarios_parse_and_validate() {
        for (name, text) in BUNDLED {
            let cfg = parse_scenario(text).unwrap();
            assert_eq!(&cfg.name, name);
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn malformed_json_is_a_parse_error() {
        let err = parse_scenario("{\"name\": \"x\", \"stages\": [").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let err = parse_scenario(r#"{"name": "x", "stages": [{"stage": "warp-drive"}]}"#).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn overrides_and_filters_apply() {
        let cfg = parse_scenario(
            r#"{"name": "m", "stages": [{"stage": "milnor", "m": 1, "n": 1}],
                "tolerances": {"milnor.m1n1.hessian_min_set": 1e-30}}"#,
        )
        .unwrap();
        let out = run_scenario(&cfg, &RunOptions::default()).unwrap();
        assert!(!out.report.find("milnor.m1n1.hessian_min_set").unwrap().passed());
        assert!(out.report.find("milnor.m1n1.chart_consistency").unwrap().passed());
        let only = RunOptions { verify: Some(vec!["milnor.m1n1.hessian".into()]), ..Default::default() };
        assert_eq!(run_scenario(&cfg, &only).unwrap().report.checks.len(), 2);
    }

    #[test]
    fn unknown_override_and_duplicates_are_config_errors() {
        let cfg = parse_scenario(r#"{"name": "m", "stages": [{"stage": "milnor", "m": 1, "n": 1}], "tolerances": {"nope": 1.0}}"#).unwrap();
        assert_eq!(run_scenario(&cfg, &RunOptions::default()).unwrap_err().exit_code(), 4);
        let cfg = parse_scenario(r#"{"name": "m", "stages": [{"stage": "milnor", "m": 1, "n": 1}, {"stage": "milnor", "m": 1, "n": 1}]}"#).unwrap();
        assert!(matches!(run_scenario(&cfg, &RunOptions::default()), Err(IsoflowError::Config(_))));
    }

    #[test]
    fn inline_and_path_specs() {
        let dir = tempfile::tempdir().unwrap();
        let neck = shear_neck(2.0).unwrap();
        std::fs::write(dir.path().join("neck.json"), serde_json::to_string(&neck).unwrap()).unwrap();
        let r: SpecRef<NeckSpec> = serde_json::from_str("\"neck.json\"").unwrap();
        assert_eq!(r.load(dir.path()).unwrap().section_nodes, 6);
        let r: SpecRef<NeckSpec> = serde_json::from_str(&serde_json::to_string(&neck).unwrap()).unwrap();
        assert!(matches!(r, SpecRef::Inline(_)));
        let missing: SpecRef<NeckSpec> = SpecRef::Path("absent.json".into());
        assert_eq!(missing.load(dir.path()).unwrap_err().exit_code(), 3);
    }
}
