//! Product neck over a flat torus whose section metric shears along the neck.

use isoflow::neck::neck_checks;
use isoflow::ode::OdeOptions;
use isoflow::scenario::shear_neck;

fn main() -> isoflow::error::Result<()> {
    let neck = shear_neck(2.0)?;
    println!("neck of length {} over a {}-torus", neck.length(), neck.section_dim());
    for e in neck_checks(&neck, &OdeOptions::default())? {
        println!("{}", e.line());
    }
    Ok(())
}
