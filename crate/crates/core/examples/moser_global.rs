//! Global Moser flow on the 2-torus from the uniform density to two bumps.

use isoflow::moser::{global_moser, GlobalMoserOptions};
use isoflow::scenario::two_bump_torus;

fn main() -> isoflow::error::Result<()> {
    let (tau, sigma) = two_bump_torus(48)?;
    let out = global_moser(&tau, &sigma, &GlobalMoserOptions::default())?;
    println!("residual {:.3e}, min det {:.4}, largest displacement {:.4}", out.residual, out.grid.min_det(), out.grid.max_displacement());
    Ok(())
}
