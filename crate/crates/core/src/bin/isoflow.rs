use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use isoflow::profile::CurvatureModel;
use isoflow::report::{Bound, Report};
use isoflow::scenario::{
    self, AtlasControl, AtlasStage, BundleStage, CapStage, ConformalStage, MoserGlobalStage, MoserLocalStage, NeckStage,
    RadialStage, RunOptions, RunOutput, ScenarioConfig, ScpStage, SpecRef, Stage, UmbilicStage,
};
use isoflow::{IsoflowError, Result};

#[derive(Parser)]
#[command(name = "isoflow", version, about = "Build and certify cap-neck-cap metrics for Morse-Bott height functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Args, Clone)]
struct Common {
    /// Output directory for report.json and CSV artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the JSON report to this file.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Primary FD step or sampling resolution of the cap, radial and atlas stages.
    #[arg(long)]
    resolution: Option<f64>,
    #[arg(long)]
    tolerance_scale: Option<f64>,
    /// `all`, or comma-separated check-name prefixes.
    #[arg(long, alias = "check", default_value = "all")]
    verify: String,
    /// Format of the summary on stdout.
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file, a bundled scenario name, or `all`.
    Run {
        #[arg(long)]
        scenario: String,
        #[command(flatten)]
        common: Common,
    },
    /// Build and verify the manifold described by a scenario.
    Build {
        #[arg(long)]
        scenario: String,
        #[command(flatten)]
        common: Common,
    },
    /// Warped-disc cap certificates.
    Cap {
        #[arg(long, default_value_t = 3)]
        dim: usize,
        #[arg(long, default_value_t = 1.0)]
        eps: f64,
        #[arg(long, default_value_t = 0.0)]
        level_offset: f64,
        #[arg(long, default_value_t = 10)]
        stride: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Submersion-bundle cap certificates.
    Bundle {
        #[arg(long)]
        spec: Option<String>,
        #[arg(long, default_value_t = 12)]
        samples: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Product-neck certificates.
    Neck {
        #[arg(long)]
        spec: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Local Moser map between two box densities (CSV tables); `--out x.csv`
    /// names the node-map file instead of a directory.
    MoserLocal {
        #[arg(long)]
        f: Option<String>,
        #[arg(long)]
        g: Option<String>,
        #[arg(long, default_value_t = 0.1)]
        collar: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Global Moser flow between two periodic densities (CSV tables); `--out`
    /// as for moser-local.
    MoserGlobal {
        #[arg(long)]
        f: Option<String>,
        #[arg(long)]
        g: Option<String>,
        #[arg(long, default_value_t = 48)]
        nodes: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Conformal correction of an x-dependent neck.
    Conformal {
        #[arg(long)]
        neck: Option<String>,
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long)]
        lambda: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Glue caps and neck, radially or as a chart atlas.
    Glue {
        #[arg(long, value_enum, default_value = "radial")]
        mode: GlueMode,
        #[arg(long, value_enum, default_value = "none")]
        control: Control,
        #[arg(long, default_value_t = 3)]
        dim: usize,
        #[arg(long, default_value_t = 1.0)]
        eps: f64,
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
        #[arg(long, default_value_t = 3.0)]
        beta: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Re-evaluate a saved report.
    Verify {
        #[arg(long = "input")]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Pole-chart reconstruction from a principal-curvature profile.
    Umbilic {
        /// Profile JSON; overrides --model.
        #[arg(long)]
        lambda: Option<String>,
        #[arg(long, value_enum, default_value = "round")]
        model: Model,
        #[arg(long, default_value_t = 1.0)]
        delta: f64,
        #[arg(long, default_value_t = 3)]
        dim: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Antipodal gluing map on a cubed sphere.
    Scp {
        /// CSV node map of eta; the built-in S^3 pipeline when absent.
        #[arg(long)]
        eta: Option<String>,
        #[arg(long)]
        omega: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GlueMode {
    Radial,
    Atlas,
}

#[derive(Clone, Copy, ValueEnum)]
enum Control {
    None,
    Uncorrected,
    Unfrozen,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Euclidean,
    Round,
    Hyperbolic,
}

fn single(name: &str, stage: Stage) -> ScenarioConfig {
    ScenarioConfig {
        name: name.into(),
        description: String::new(),
        seed: 0,
        stages: vec![stage],
        tolerances: Default::default(),
        tolerance_scale: 1.0,
        out_dir: None,
    }
}

fn run_options(common: &Common, base: &Path) -> RunOptions {
    let verify = match common.verify.as_str() {
        "all" => None,
        list => Some(list.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()),
    };
    RunOptions {
        base_dir: base.to_path_buf(),
        resolution: common.resolution,
        tolerance_scale: common.tolerance_scale,
        verify,
        timestamp: true,
    }
}

fn summarize(report: &Report, format: Format) -> Result<()> {
    match format {
        Format::Text => {
            for c in &report.checks {
                println!("{}", c.line());
            }
        }
        Format::Json => println!("{}", report.to_json()),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(std::io::stdout());
            w.write_record(["scenario", "name", "claim", "status", "expected", "residual", "tolerance", "resolution"])?;
            for c in &report.checks {
                let expected = c.expected.map_or("PASS".to_string(), |s| s.to_string());
                w.write_record([
                    report.scenario.as_str(),
                    &c.name,
                    &c.claim,
                    &c.status.to_string(),
                    &expected,
                    &format!("{:?}", c.residual),
                    &format!("{:?}", c.tolerance),
                    &format!("{:?}", c.resolution),
                ])?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

/// Everything is computed first; outputs are written only on success.
fn finish(outputs: &[RunOutput], common: &Common, nested: bool) -> Result<bool> {
    if let Some(dir) = &common.out {
        for o in outputs {
            let d = if nested { dir.join(&o.report.scenario) } else { dir.clone() };
            o.write(&d)?;
        }
    }
    if let Some(path) = &common.report {
        let body = if outputs.len() == 1 {
            outputs[0].report.to_json()
        } else {
            serde_json::to_string_pretty(&outputs.iter().map(|o| &o.report).collect::<Vec<_>>())?
        };
        std::fs::write(path, body)?;
    }
    for o in outputs {
        summarize(&o.report, common.format)?;
    }
    Ok(outputs.iter().all(|o| o.report.all_as_expected()))
}

fn run_one(cfg: ScenarioConfig, base: &Path, common: &Common) -> Result<bool> {
    let out = scenario::run_scenario(&cfg, &run_options(common, base))?;
    finish(std::slice::from_ref(&out), common, false)
}

fn run_named(name: &str, common: &Common) -> Result<bool> {
    if name == "all" {
        let opts = run_options(common, Path::new("."));
        let outs = scenario::BUNDLED
            .iter()
            .map(|(_, text)| scenario::run_scenario(&scenario::parse_scenario(text)?, &opts))
            .collect::<Result<Vec<_>>>()?;
        return finish(&outs, common, true);
    }
    let (cfg, base) = scenario::load_scenario(name)?;
    let mut common = common.clone();
    if common.out.is_none() {
        common.out = cfg.out_dir.as_ref().map(|d| base.join(d));
    }
    run_one(cfg, &base, &common)
}

fn write_psi(out: &RunOutput, psi: Option<&Path>) -> Result<()> {
    let Some(path) = psi else { return Ok(()) };
    let (_, body) = out
        .artifacts
        .iter()
        .find(|(n, _)| n.ends_with("_psi.csv"))
        .ok_or_else(|| IsoflowError::Config("stage produced no node map".into()))?;
    std::fs::write(path, body)?;
    Ok(())
}

fn run_moser(cfg: ScenarioConfig, common: &Common) -> Result<bool> {
    let mut common = common.clone();
    let psi = common.out.take_if(|p| p.extension().is_some_and(|e| e == "csv"));
    let out = scenario::run_scenario(&cfg, &run_options(&common, Path::new(".")))?;
    write_psi(&out, psi.as_deref())?;
    finish(std::slice::from_ref(&out), &common, false)
}

fn verify_saved(input: &Path, common: &Common) -> Result<bool> {
    let text = isoflow::io::read_text(input)?;
    let mut report: Report = serde_json::from_str(&text).map_err(|e| IsoflowError::Parse(format!("{}: {e}", input.display())))?;
    if let Some(s) = common.tolerance_scale {
        for c in report.checks.iter_mut().filter(|c| c.bound == Bound::AtMost) {
            c.set_tolerance(c.tolerance * s);
        }
    }
    if let Some(prefixes) = run_options(common, Path::new(".")).verify {
        report.checks.retain(|c| prefixes.iter().any(|p| c.name.starts_with(p.as_str())));
    }
    let out = RunOutput { report, artifacts: Vec::new() };
    finish(std::slice::from_ref(&out), common, false)
}

fn dispatch(cli: Cli) -> Result<bool> {
    let here = Path::new(".");
    match cli.command {
        Command::Run { scenario, common } | Command::Build { scenario, common } => run_named(&scenario, &common),
        Command::Cap { dim, eps, level_offset, stride, common } => {
            let stage = CapStage { dim, eps, level_offset, stride, ..Default::default() };
            run_one(single("cap", Stage::Cap(stage)), here, &common)
        }
        Command::Bundle { spec, samples, common } => {
            let stage = BundleStage { spec: spec.map(SpecRef::Path), samples, modulation: None };
            run_one(single("bundle", Stage::Bundle(stage)), here, &common)
        }
        Command::Neck { spec, common } => {
            run_one(single("neck", Stage::Neck(NeckStage { spec: spec.map(SpecRef::Path) })), here, &common)
        }
        Command::MoserLocal { f, g, collar, common } => {
            let stage = MoserLocalStage { f, g, collar, ..Default::default() };
            run_moser(single("moser-local", Stage::MoserLocal(stage)), &common)
        }
        Command::MoserGlobal { f, g, nodes, common } => {
            let stage = MoserGlobalStage { tau: f, sigma: g, nodes, ..Default::default() };
            run_moser(single("moser-global", Stage::MoserGlobal(stage)), &common)
        }
        Command::Conformal { neck, n, lambda, common } => {
            let stage = ConformalStage { neck: neck.map(SpecRef::Path), n, lambda };
            run_one(single("conformal", Stage::Conformal(stage)), here, &common)
        }
        Command::Glue { mode, control, dim, eps, alpha, beta, common } => {
            let stage = match mode {
                GlueMode::Radial => Stage::Radial(RadialStage { dim, eps, alpha, beta, ..Default::default() }),
                GlueMode::Atlas => {
                    let control = match control {
                        Control::None => AtlasControl::None,
                        Control::Uncorrected => AtlasControl::Uncorrected,
                        Control::Unfrozen => AtlasControl::Unfrozen,
                    };
                    Stage::Atlas(AtlasStage { control, ..Default::default() })
                }
            };
            run_one(single("glue", stage), here, &common)
        }
        Command::Verify { input, common } => verify_saved(&input, &common),
        Command::Umbilic { lambda, model, delta, dim, common } => {
            let model = match model {
                Model::Euclidean => CurvatureModel::Euclidean,
                Model::Round => CurvatureModel::Round,
                Model::Hyperbolic => CurvatureModel::Hyperbolic,
            };
            let stage = UmbilicStage { model, lambda: lambda.map(SpecRef::Path), delta, dim, ..Default::default() };
            run_one(single("umbilic", Stage::Umbilic(stage)), here, &common)
        }
        Command::Scp { eta, omega, common } => {
            run_one(single("scp", Stage::Scp(ScpStage { eta, omega, ..Default::default() })), here, &common)
        }
    }
}

fn main() -> ExitCode {
    if let Some(n) = std::env::var("ISOFLOW_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // fails only if a pool exists already, which cannot happen this early
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
