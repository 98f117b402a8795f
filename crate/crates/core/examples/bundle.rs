//! Submersion-bundle cap over a circle with a rotating connection.

use isoflow::bundle::bundle_checks;
use isoflow::ode::OdeOptions;
use isoflow::scenario::demo_bundle;

fn main() -> isoflow::error::Result<()> {
    let spec = demo_bundle()?;
    println!("total dimension {}, base dimension {}", spec.total_dim(), spec.base_dim());
    for e in bundle_checks(&spec, 12, &OdeOptions::default())? {
        println!("{}", e.line());
    }
    Ok(())
}
