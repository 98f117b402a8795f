//! Pole charts rebuilt from principal-curvature profiles, and the boundary
//! isometry test for two gluing maps.

use isoflow::profile::CurvatureModel;
use isoflow::sphere::{CubedSphere, Rotation, Squeeze};
use isoflow::umbilic::{curvature_profile, gluing_isometry_check, kowalski_vanhecke_metric, reconstruction_errors, umbilic_checks};

fn main() -> isoflow::error::Result<()> {
    for (model, delta) in [(CurvatureModel::Round, 1.0), (CurvatureModel::Hyperbolic, 1.5)] {
        let recon = kowalski_vanhecke_metric(&curvature_profile(model, delta), delta, 3)?;
        for e in umbilic_checks(&recon, &reconstruction_errors(&recon)?) {
            println!("{}", e.line());
        }
    }
    let recon = kowalski_vanhecke_metric(&curvature_profile(CurvatureModel::Round, 1.0), 1.0, 3)?;
    let grid = CubedSphere::new(2, 8)?;
    let rot = gluing_isometry_check(&grid, &Rotation::plane(2, 0, 2, 0.9), &recon, &recon)?;
    let sq = gluing_isometry_check(&grid, &Squeeze(vec![1.4, 1.0, 0.8]), &recon, &recon)?;
    println!("isometry deviation: rotation {:.2e}, squeeze {:.3}", rot.deviation, sq.deviation);
    Ok(())
}
