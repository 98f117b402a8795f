//! Chart-atlas gluing of two bundle caps through a corrected neck, run
//! through the bundled scenario (about twenty seconds in release mode).

use isoflow::scenario::{bundled, parse_scenario, run_scenario, RunOptions};

fn main() -> isoflow::error::Result<()> {
    let cfg = parse_scenario(bundled("atlas-build").expect("bundled scenario"))?;
    let out = run_scenario(&cfg, &RunOptions::default())?;
    for e in &out.report.checks {
        println!("{}", e.line());
    }
    println!("all as expected: {}", out.report.all_as_expected());
    Ok(())
}
