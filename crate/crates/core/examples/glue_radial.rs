//! Cap, neck and cap glued along one arclength axis: certified gradient and
//! Laplacian profiles and the focal-to-focal geodesic.

use isoflow::assembly::radial::glue_radial;
use isoflow::assembly::{CertifyOptions, GluedManifoldSpec};
use isoflow::ode::OdeOptions;
use isoflow::warped_disc::{CapOrientation, WarpedDiscSpec};

fn main() -> isoflow::error::Result<()> {
    let minus = WarpedDiscSpec::new(3, 1.0, 0.0, CapOrientation::MinCap)?;
    let plus = WarpedDiscSpec::new(3, 1.0, 3.0, CapOrientation::MaxCap)?;
    let mut spec = GluedManifoldSpec::radial(glue_radial(minus, plus, 0.0, 3.0)?);
    for e in spec.certify(&CertifyOptions::default())? {
        println!("{}", e.line());
    }
    let b = spec.certified_b.as_ref().expect("certified");
    println!("b(0.25) = {:.6}, b(1.5) = {:.6}", b.eval(0.25), b.eval(1.5));
    println!("focal geodesic length {:.10}", spec.focal_geodesic_length(&OdeOptions::default())?);
    Ok(())
}
