//! Antipodally symmetric, volume-preserving gluing map on `S^3` from a bump
//! deformation corrected by a local Moser map.

use isoflow::umbilic::{scp_checks, scp_pipeline, ScpOptions};

fn main() -> isoflow::error::Result<()> {
    let p = scp_pipeline(&ScpOptions::default())?;
    println!("{} sphere nodes, local Moser residual {:.2e}", p.grid.len(), p.moser.residual);
    for e in scp_checks(&p)? {
        println!("{}", e.line());
    }
    Ok(())
}
