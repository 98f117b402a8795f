//! Conformal correction of an x-dependent neck: the Laplacian of the height
//! spreads across each level before, and is a function of the level after.

use isoflow::conformal::correct_neck;
use isoflow::scenario::shear_neck;

fn main() -> isoflow::error::Result<()> {
    let neck = shear_neck(2.0)?;
    let (corr, s) = correct_neck(&neck, 3, None)?;
    println!("lambda {:.6}, u at the top {:.1e}", s.lambda, s.u_top_residual);
    println!("level spread of the Laplacian: {:.3e} before, {:.3e} after", s.laplacian_spread_before, s.laplacian_spread_after);
    println!("sup |corrected Laplacian - h| = {:.2e}", s.target_error);
    println!("u(0, 0, 1.5) = {:.6}", corr.u_at(&[0.0, 0.0], 1.5));
    Ok(())
}
