//! Validates the particle filter against the closed-form Kalman recursion on
//! a linear-Gaussian state space, where the exact posterior is known. The
//! filter's posterior mean should track the Kalman mean, with error shrinking
//! as the particle count grows.
//!
//! Run with `cargo run --example kalman_check`.

use graphsmc::error::Result;
use graphsmc::harness::kalman::{rmse_bound, validate_filter, LinearGaussianSpec};

fn main() -> Result<()> {
    let spec = LinearGaussianSpec::standard(100, 42);
    let bound = rmse_bound(&spec);
    println!(
        "x' = {}x + N(0, {}), y = {}x + N(0, {}), horizon {}",
        spec.a, spec.q, spec.h, spec.r, spec.horizon
    );
    println!("acceptance bound on posterior-mean RMSE: {bound:.4}\n");

    println!("particles  alpha  rmse      verdict");
    for &(k, alpha) in &[(50usize, 0.5), (200, 0.5), (1000, 0.5), (1000, 1.0)] {
        let rmse = validate_filter(&spec, k, alpha)?;
        println!(
            "{k:9}  {alpha:5}  {rmse:.6}  {}",
            if rmse <= bound { "PASS" } else { "FAIL" }
        );
    }
    Ok(())
}
