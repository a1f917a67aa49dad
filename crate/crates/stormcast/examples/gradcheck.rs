//! Verifies every analytic gradient in the autograd engine against central
//! finite differences: each tensor op, one residual block, and a sampled
//! check of the complete network.
//!
//! Run with: `cargo run --example gradcheck`

use stormcast::model::gradient_suite;

fn main() -> stormcast::Result<()> {
    let suite = gradient_suite(0)?;
    println!(
        "{:<22} {:>7} {:>14} {:>9}",
        "check", "points", "max_rel_err", "tol"
    );
    let mut worst: f64 = 0.0;
    for (res, tol) in &suite {
        assert!(
            res.passes(*tol),
            "{} exceeded tolerance: {} > {}",
            res.name,
            res.max_rel_err,
            tol
        );
        worst = worst.max(res.max_rel_err);
        println!(
            "{:<22} {:>7} {:>14.3e} {:>9.0e}",
            res.name, res.points, res.max_rel_err, tol
        );
    }
    println!(
        "all {} checks passed; worst relative error {:.3e}",
        suite.len(),
        worst
    );
    Ok(())
}
