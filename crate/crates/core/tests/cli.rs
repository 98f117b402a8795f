use std::path::Path;
use std::process::{Command, Output};

use isoflow::chart::Lattice;
use isoflow::io::{density_table, diffeo_from_table, diffeo_table, Table};
use isoflow::moser::DensityField;
use isoflow::profile::bump;
use isoflow::report::Report;
use isoflow::scenario::two_bump_torus;
use isoflow::sphere::{CubedSphere, IdentityMap};

fn isoflow(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_isoflow")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn malformed_scenario_is_exit_2_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), "{ \"name\": \"x\", \"stages\": [").unwrap();
    let o = isoflow(&["run", "--scenario", "bad.json", "--out", "out", "--report", "r.json"], dir.path());
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!dir.path().join("out").exists());
    assert!(!dir.path().join("r.json").exists());
}

#[test]
fn unknown_field_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.json"), r#"{"name": "x", "stages": [{"stage": "milnor", "m": 1, "n": 1, "k": 2}]}"#).unwrap();
    assert_eq!(code(&isoflow(&["run", "--scenario", "s.json"], dir.path())), 2);
}

#[test]
fn missing_input_is_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&isoflow(&["run", "--scenario", "nowhere.json"], dir.path())), 3);
    assert_eq!(code(&isoflow(&["moser-local", "--f", "f.csv", "--g", "g.csv"], dir.path())), 3);
}

#[test]
fn invalid_configuration_is_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let s = r#"{"name": "x", "stages": [{"stage": "milnor", "m": 1, "n": 1}], "tolerances": {"milnor.nothing": 1e-3}}"#;
    std::fs::write(dir.path().join("s.json"), s).unwrap();
    let o = isoflow(&["run", "--scenario", "s.json", "--out", "out"], dir.path());
    assert_eq!(code(&o), 4);
    assert!(!dir.path().join("out").exists());
}

#[test]
fn run_then_verify_saved_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = isoflow(&["run", "--scenario", "milnor-chart", "--out", "out", "--format", "csv"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.starts_with("scenario,name,claim,status"));
    let saved = dir.path().join("out/report.json");
    let report: Report = serde_json::from_str(&std::fs::read_to_string(&saved).unwrap()).unwrap();
    assert!(report.all_passed() && !report.checks.is_empty());

    assert_eq!(code(&isoflow(&["verify", "--input", "out/report.json"], dir.path())), 0);
    // tolerances tightened far below the residuals must flip the verdict
    assert_eq!(code(&isoflow(&["verify", "--input", "out/report.json", "--tolerance-scale", "1e-300"], dir.path())), 1);
    let o = isoflow(&["verify", "--input", "out/report.json", "--verify", "milnor.m1n1", "--format", "json"], dir.path());
    let filtered: Report = serde_json::from_slice(&o.stdout).unwrap();
    assert!(filtered.checks.iter().all(|c| c.name.starts_with("milnor.m1n1")));
    assert!(filtered.checks.len() < report.checks.len());
}

#[test]
fn moser_local_from_csv_tables() {
    let dir = tempfile::tempdir().unwrap();
    // clamped stencils of collar cells reach eight nodes inward, so the
    // perturbation starts beyond them
    let lat = Lattice::spanning(&[0.0, 0.0], &[1.0, 1.0], &[31, 31]).unwrap();
    let f = DensityField::from_fn(lat.clone(), 0.1, |_| 1.0).unwrap();
    let g = DensityField::from_fn(lat, 0.1, |p| 1.0 + 0.3 * (bump(p[0], 0.25, 0.5) - bump(p[0], 0.5, 0.75)) * bump(p[1], 0.25, 0.75))
        .unwrap();
    std::fs::write(dir.path().join("f.csv"), density_table(&f).to_csv().unwrap()).unwrap();
    std::fs::write(dir.path().join("g.csv"), density_table(&g).to_csv().unwrap()).unwrap();
    let o = isoflow(&["moser-local", "--f", "f.csv", "--g", "g.csv", "--out", "psi.csv", "--report", "r.json"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let psi = diffeo_from_table(&Table::from_csv(&std::fs::read_to_string(dir.path().join("psi.csv")).unwrap()).unwrap()).unwrap();
    assert_eq!(psi.nodes.len(), 31 * 31);
    assert!(psi.min_det() > 0.0);
    assert!(dir.path().join("r.json").exists());
}

#[test]
fn moser_global_from_csv_tables() {
    let dir = tempfile::tempdir().unwrap();
    let (tau, sigma) = two_bump_torus(48).unwrap();
    std::fs::write(dir.path().join("tau.csv"), density_table(&tau).to_csv().unwrap()).unwrap();
    std::fs::write(dir.path().join("sigma.csv"), density_table(&sigma).to_csv().unwrap()).unwrap();
    let o = isoflow(&["moser-global", "--f", "tau.csv", "--g", "sigma.csv", "--out", "psi.csv", "--format", "json"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let report: Report = serde_json::from_slice(&o.stdout).unwrap();
    assert!(report.find("moser_global.residual").unwrap().residual <= 1e-5);
    let psi = diffeo_from_table(&Table::from_csv(&std::fs::read_to_string(dir.path().join("psi.csv")).unwrap()).unwrap()).unwrap();
    assert_eq!(psi.nodes.len(), 48 * 48);
}

#[test]
fn scp_from_identity_table() {
    let dir = tempfile::tempdir().unwrap();
    let grid = CubedSphere::new(3, 5).unwrap();
    let eta = grid.sample(&IdentityMap).unwrap();
    std::fs::write(dir.path().join("eta.csv"), diffeo_table(&eta).to_csv().unwrap()).unwrap();
    let o = isoflow(&["scp", "--eta", "eta.csv", "--out", "out"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(dir.path().join("out/scp_phi.csv").exists());
}
