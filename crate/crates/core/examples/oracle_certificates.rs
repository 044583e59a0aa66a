//! Exhaustive certificates on a small enumerable response space.

use adpo::oracle::{run_check, Check, CheckOptions, EnumSpace};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let space = EnumSpace::new(3, 3)?;
    println!("{} responses", space.sequences().len());
    for check in Check::parse_selection("all")? {
        let c = run_check(check, &space, 0, CheckOptions::default())?;
        println!(
            "{:<18} residual {:.2e} (tol {:.0e}) {}",
            c.check,
            c.max_residual,
            c.tolerance,
            if c.pass { "pass" } else { "FAIL" }
        );
    }
    Ok(())
}
