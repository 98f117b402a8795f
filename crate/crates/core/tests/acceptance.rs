//! Acceptance gate: one test per criterion, each printing a PASS/FAIL line.
//!
//! Oracles here are deliberately written apart from the library code they
//! judge (own quadrature, own root finding, own antipode search).

use std::time::{Duration, Instant};

use isoflow::assembly::radial::{focal_geodesic_length, glue_radial, radial_samples};
use isoflow::assembly::milnor::milnor_chart_check;
use isoflow::assembly::{CertifyOptions, GluedManifoldSpec};
use isoflow::chart::Lattice;
use isoflow::conformal::correct_neck;
use isoflow::moser::{global_moser, local_moser, DensityField, GlobalMoserOptions, LocalMoserOptions};
use isoflow::ode::OdeOptions;
use isoflow::profile::{bump, make_F, step_derivative, CurvatureModel, SmoothProfile};
use isoflow::report::Status;
use isoflow::scenario::{run_suite, shear_neck, two_bump_torus, RunOptions};
use isoflow::sphere::{CubedSphere, Rotation, SphereDensity, Squeeze};
use isoflow::umbilic::{
    curvature_profile, gluing_isometry_check, kowalski_vanhecke_metric, reconstruction_errors, scp_check_equivariance,
    scp_check_volume, scp_pipeline, ScpOptions,
};
use isoflow::warped_disc::{laplacian_sweep, laplacian_sweep_within, CapOrientation, WarpedDiscSpec};

fn verdict(n: u32, ok: bool, what: String) -> bool {
    println!("{} criterion {n}: {what}", if ok { "PASS" } else { "FAIL" });
    ok
}

fn within(t: Instant, budget: Duration) -> (bool, f64) {
    let s = t.elapsed().as_secs_f64();
    (s < budget.as_secs_f64(), s)
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = panels + panels % 2;
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n).map(|k| f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 }).sum();
    (f(a) + f(b) + inner) * h / 3.0
}

/// The three-case gradient formula, written out from `F` alone.
fn b_formula(fval: f64, alpha: f64, beta: f64, eps: f64, big_f: &SmoothProfile) -> f64 {
    let e2 = eps * eps;
    if fval <= alpha + e2 {
        let s = (fval - alpha).max(0.0);
        4.0 * s / big_f.eval(s.sqrt()).powi(2)
    } else if fval >= beta - e2 {
        let s = (beta - fval).max(0.0);
        4.0 * s / big_f.eval(s.sqrt()).powi(2)
    } else {
        1.0
    }
}

#[test]
fn criterion_01_piecewise_gradient_formula() {
    let t = Instant::now();
    let (alpha, beta, eps, res) = (0.0, 3.0, 1.0, 1e-3);
    let minus = WarpedDiscSpec::new(3, eps, alpha, CapOrientation::MinCap).unwrap();
    let plus = WarpedDiscSpec::new(3, eps, beta, CapOrientation::MaxCap).unwrap();
    let build = glue_radial(minus, plus, alpha, beta).unwrap();
    let s = radial_samples(&build, res).unwrap();
    let mut spec = GluedManifoldSpec::radial(build);
    spec.certify(&CertifyOptions { radial_resolution: res, ..Default::default() }).unwrap();
    let big_f = make_F(eps).unwrap();
    let err = s.f.iter().zip(&s.b).map(|(f, b)| (b - b_formula(*f, alpha, beta, eps, &big_f)).abs()).fold(0.0, f64::max);
    // the certified profile is the tabulated empirical b
    let cert = spec.certified_b.as_ref().unwrap();
    let cert_err = s.f.iter().map(|f| (cert.eval(*f) - b_formula(*f, alpha, beta, eps, &big_f)).abs()).fold(0.0, f64::max);
    let (fast, secs) = within(t, Duration::from_secs(10));
    let ok = err <= 1e-5 && cert_err <= 1e-5 && fast;
    assert!(verdict(1, ok, format!("sup |b - formula| = {err:.3e} (certified {cert_err:.3e}) over {} samples, {secs:.2}s", s.f.len())));
}

#[test]
fn criterion_02_cap_laplacian_against_fd() {
    let t = Instant::now();
    let spec = WarpedDiscSpec::new(3, 1.0, 0.0, CapOrientation::MinCap).unwrap();
    let h = 1e-2;
    let coarse = laplacian_sweep(&spec, h, 10).unwrap();
    let fine = laplacian_sweep_within(&spec, 0.5 * h, 20, spec.eps - h).unwrap();
    let order = (coarse.sup_error / fine.sup_error).log2();
    let (fast, secs) = within(t, Duration::from_secs(120));
    let ok = coarse.sup_error <= 1e-4 && order >= 2.0 && fast;
    assert!(verdict(
        2,
        ok,
        format!(
            "sup error {:.3e} at h = {h} over {} nodes (worst r = {:.3}), {:.3e} at h/2, order {order:.3}, {secs:.2}s",
            coarse.sup_error, coarse.nodes, coarse.worst_radius, fine.sup_error
        )
    ));
}

/// Bisection on the cumulative mass, with its own quadrature.
fn cumulative_root(density: impl Fn(f64) -> f64 + Copy, target: f64) -> f64 {
    let mass = |y: f64| simpson(density, 0.0, y, 4000);
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn criterion_03_local_moser() {
    let t = Instant::now();
    let collar = 0.1;
    let opts = LocalMoserOptions::default();

    let lat = Lattice::spanning(&[0.0, 0.0], &[1.0, 1.0], &[13, 13]).unwrap();
    let k = |x: f64| step_derivative(x, 0.2, 0.8);
    let f = DensityField::from_fn(lat.clone(), collar, move |p| 1.0 + 0.5 * k(p[0]) * bump(p[1], 0.25, 0.55)).unwrap();
    let g = DensityField::from_fn(lat, collar, move |p| 1.0 + 0.5 * k(p[0]) * bump(p[1], 0.45, 0.75)).unwrap();
    let two = local_moser(&f, &g, &opts).unwrap();
    let monotone = two.report.stage_min_derivative.iter().all(|d| *d > 0.0);
    let in_collar = |x: &[f64]| x.iter().any(|v| *v < collar || *v > 1.0 - collar);
    let collar_move = two
        .grid
        .nodes
        .iter()
        .zip(&two.grid.map)
        .filter(|(x, _)| in_collar(x))
        .map(|(x, y)| x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max);

    let lat1 = Lattice::spanning(&[0.0], &[1.0], &[41]).unwrap();
    let c = 0.3;
    let w = move |x: f64| 1.0 + c * (bump(x, 0.2, 0.5) - bump(x, 0.5, 0.8));
    let f1 = DensityField::from_fn(lat1.clone(), collar, |_| 1.0).unwrap();
    let g1 = DensityField::from_fn(lat1, collar, move |x| w(x[0])).unwrap();
    let one = local_moser(&f1, &g1, &opts).unwrap();
    let root_dev = one.grid.nodes.iter().zip(&one.grid.map).map(|(x, y)| (y[0] - cumulative_root(w, x[0])).abs()).fold(0.0, f64::max);

    let (fast, secs) = within(t, Duration::from_secs(30));
    // the collar map is the identity up to roundoff of the tabulated integrals
    let ok = two.report.residual <= 1e-6 && monotone && collar_move <= 1e-10 && root_dev <= 1e-8 && fast;
    assert!(verdict(
        3,
        ok,
        format!(
            "residual {:.3e}, stage min derivatives {:?}, collar displacement {collar_move:.1e}, 1-D root deviation {root_dev:.3e}, {secs:.2}s",
            two.report.residual, two.report.stage_min_derivative
        )
    ));
}

#[test]
fn criterion_04_global_moser_torus() {
    let t = Instant::now();
    let (tau, sigma) = two_bump_torus(48).unwrap();
    let out = global_moser(&tau, &sigma, &GlobalMoserOptions::default()).unwrap();
    let min_det = out.grid.min_det();
    let (fast, secs) = within(t, Duration::from_secs(120));
    let ok = out.residual <= 1e-5 && min_det > 0.0 && fast;
    assert!(verdict(4, ok, format!("residual {:.3e}, min det {min_det:.4}, {secs:.2}s", out.residual)));
}

#[test]
fn criterion_05_conformal_neck_correction() {
    let t = Instant::now();
    let neck = shear_neck(2.0).unwrap();
    let (_, s) = correct_neck(&neck, 3, None).unwrap();
    let (fast, secs) = within(t, Duration::from_secs(120));
    let ok = s.laplacian_spread_before > 1e-2
        && s.laplacian_spread_after <= 1e-4
        && s.target_error <= 1e-4
        && s.u_top_residual <= 1e-8
        && fast;
    assert!(verdict(
        5,
        ok,
        format!(
            "spread before {:.3e}, after {:.3e}, |Delta f - h| {:.3e}, u at top {:.1e}, {secs:.2}s",
            s.laplacian_spread_before, s.laplacian_spread_after, s.target_error, s.u_top_residual
        )
    ));
}

#[test]
fn criterion_06_focal_geodesic_length() {
    let t = Instant::now();
    let (alpha, beta, eps) = (0.0, 3.0, 1.0);
    let minus = WarpedDiscSpec::new(3, eps, alpha, CapOrientation::MinCap).unwrap();
    let plus = WarpedDiscSpec::new(3, eps, beta, CapOrientation::MaxCap).unwrap();
    let build = glue_radial(minus, plus, alpha, beta).unwrap();
    let geo = focal_geodesic_length(&build, &OdeOptions::default()).unwrap();
    let big_f = make_F(eps).unwrap();
    let delta = simpson(|r| big_f.eval(r), 0.0, eps, 20_000);
    let target = 2.0 * delta + beta - alpha - 2.0 * eps * eps;
    let err = (geo.length - target).abs();
    let (fast, secs) = within(t, Duration::from_secs(10));
    let ok = err <= 1e-6 && fast;
    assert!(verdict(6, ok, format!("length {:.12} vs 2 delta + beta - alpha - 2 eps^2 = {target:.12} (err {err:.2e}), {secs:.2}s", geo.length)));
}

#[test]
fn criterion_07_milnor_chart() {
    let t = Instant::now();
    let r = milnor_chart_check(1, 2).unwrap();
    let (fast, secs) = within(t, Duration::from_secs(60));
    let ok = r.critical_mismatches == 0
        && r.min_regular_df > 0.0
        && r.hessian_errors.0 <= 1e-6
        && r.hessian_errors.1 <= 1e-6
        && r.critical_values == (0.0, 1.0)
        && fast;
    assert!(verdict(
        7,
        ok,
        format!(
            "{} nodes, {} critical mismatches, min regular |df| {:.3e}, Hessian errors {:.1e} / {:.1e}, {secs:.2}s",
            r.nodes, r.critical_mismatches, r.min_regular_df, r.hessian_errors.0, r.hessian_errors.1
        )
    ));
}

#[test]
fn criterion_08_umbilic_reconstruction() {
    let t = Instant::now();
    let recon = kowalski_vanhecke_metric(&curvature_profile(CurvatureModel::Round, 1.0), 1.0, 3).unwrap();
    let h_err = (1..=1000)
        .map(|k| {
            let r = k as f64 / 1000.0;
            (recon.h_at(r) - (r.sin() / r).powi(2)).abs()
        })
        .fold(0.0, f64::max);
    let cap = reconstruction_errors(&recon).unwrap().round_cap.unwrap();
    let grid = CubedSphere::new(2, 8).unwrap();
    let rot = gluing_isometry_check(&grid, &Rotation::plane(2, 0, 2, 0.9), &recon, &recon).unwrap();
    let sq = gluing_isometry_check(&grid, &Squeeze(vec![1.4, 1.0, 0.8]), &recon, &recon).unwrap();
    let tol = isoflow::umbilic::ISOMETRY_TOLERANCE;
    let (fast, secs) = within(t, Duration::from_secs(30));
    let ok = h_err <= 1e-10 && cap <= 1e-8 && rot.deviation <= tol && sq.deviation > tol && fast;
    assert!(verdict(
        8,
        ok,
        format!(
            "|H - (sin r/r)^2| {h_err:.2e}, round cap {cap:.2e}, rotation {:.2e}, squeeze {:.3} (must exceed {tol:.0e}), {secs:.2}s",
            rot.deviation, sq.deviation
        )
    ));
}

/// `max |phi(-x) + phi(x)|` with antipodes found by exhaustive search.
fn antipodal_defect(nodes: &[Vec<f64>], map: &[Vec<f64>]) -> f64 {
    let d2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x + y).powi(2)).sum::<f64>();
    let mut worst = 0.0f64;
    for (i, x) in nodes.iter().enumerate() {
        let j = (0..nodes.len()).min_by(|&a, &b| d2(x, &nodes[a]).total_cmp(&d2(x, &nodes[b]))).unwrap();
        assert!(d2(x, &nodes[j]) < 1e-20, "node {i} has no antipode on the grid");
        worst = worst.max(d2(&map[i], &map[j]).sqrt());
    }
    worst
}

#[test]
fn criterion_09_scp_pipeline_s3() {
    let t = Instant::now();
    let p = scp_pipeline(&ScpOptions::default()).unwrap();
    let round = SphereDensity::Uniform(1.0);
    let equi = scp_check_equivariance(&p.phi).unwrap();
    let vol = scp_check_volume(&p.phi, &round).unwrap();
    let oracle_equi = antipodal_defect(&p.phi.nodes, &p.phi.map);
    let control_vol = scp_check_volume(&p.phi_uncorrected, &round).unwrap();
    let control_equi = scp_check_equivariance(&p.eta_tilde).unwrap();
    let (fast, secs) = within(t, Duration::from_secs(300));
    let ok = equi.residual <= 1e-8
        && oracle_equi <= 1e-8
        && vol.residual <= 1e-5
        && control_vol.status == Status::Fail
        && control_equi.status == Status::Fail
        && fast;
    assert!(verdict(
        9,
        ok,
        format!(
            "equivariance {:.2e} (exhaustive {oracle_equi:.2e}), volume {:.3e}; controls: uncorrected volume {:.3e}, unsymmetrised equivariance {:.3e}, {secs:.2}s",
            equi.residual, vol.residual, control_vol.residual, control_equi.residual
        )
    ));
}

#[test]
fn criterion_10_suite_is_deterministic() {
    let opts = RunOptions { timestamp: true, ..Default::default() };
    let first = run_suite(&opts).unwrap();
    let second = run_suite(&opts).unwrap();
    let mut differing = Vec::new();
    for (a, b) in first.iter().zip(&second) {
        let same_report = a.report.without_timestamp().to_json() == b.report.without_timestamp().to_json();
        if !same_report || a.artifacts != b.artifacts {
            differing.push(a.report.scenario.clone());
        }
    }
    let ok = first.len() == second.len() && differing.is_empty();
    assert!(verdict(10, ok, format!("{} scenarios, reports differing modulo timestamp: {differing:?}", first.len())));
}
