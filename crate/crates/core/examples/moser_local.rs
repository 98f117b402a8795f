//! Local Moser map on the unit square moving a bump in the second
//! coordinate, fixed on the collar.

use isoflow::chart::Lattice;
use isoflow::moser::{local_moser, DensityField, LocalMoserOptions};
use isoflow::profile::{bump, step_derivative};

fn main() -> isoflow::error::Result<()> {
    let lat = Lattice::spanning(&[0.0, 0.0], &[1.0, 1.0], &[13, 13])?;
    let k = |x: f64| step_derivative(x, 0.2, 0.8);
    let f = DensityField::from_fn(lat.clone(), 0.1, move |p| 1.0 + 0.5 * k(p[0]) * bump(p[1], 0.25, 0.55))?;
    let g = DensityField::from_fn(lat, 0.1, move |p| 1.0 + 0.5 * k(p[0]) * bump(p[1], 0.45, 0.75))?;
    let out = local_moser(&f, &g, &LocalMoserOptions::default())?;
    let r = &out.report;
    println!("residual {:.3e}, collar displacement {:.1e}", r.residual, r.collar_displacement);
    println!("stage min derivatives {:?}", r.stage_min_derivative);
    let x = [0.5, 0.4];
    println!("psi{x:?} = {:?}", out.map.apply(&x)?);
    Ok(())
}
