//! Morse-Bott height on the Milnor-type chart model with critical sets
//! `S^m` and `S^n`.

use isoflow::assembly::milnor::{milnor_chart_check, milnor_checks};

fn main() -> isoflow::error::Result<()> {
    let r = milnor_chart_check(1, 2)?;
    println!("{} nodes, normal Hessian eigenvalues {:?} / {:?}", r.nodes, r.eigen_plus, r.eigen_minus);
    for e in milnor_checks(&r) {
        println!("{}", e.line());
    }
    Ok(())
}
