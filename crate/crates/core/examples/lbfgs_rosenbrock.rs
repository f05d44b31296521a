//! Minimizes the Rosenbrock function with the L-BFGS optimizer and prints
//! the per-iteration trace.
//!
//! cargo run --example lbfgs_rosenbrock

use battrae::optimizer::{minimize, LbfgsConfig};

fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
    let (a, b) = (x[0], x[1]);
    let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
    let g = vec![
        -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
        200.0 * (b - a * a),
    ];
    (f, g)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = LbfgsConfig {
        grad_tolerance: 1e-10,
        ..LbfgsConfig::default()
    };
    let (x, trace) = minimize(|x: &[f64]| Ok(rosenbrock(x)), vec![-1.2, 1.0], &cfg)?;
    for r in &trace.records {
        println!("{}", r.to_json_line());
    }
    println!(
        "minimum at ({:.10}, {:.10}) after {} iterations, {:?}",
        x[0],
        x[1],
        trace.iterations(),
        trace.termination
    );
    Ok(())
}
