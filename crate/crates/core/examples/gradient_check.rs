//! Compares analytic gradients with central differences on small random
//! problems, one line per parameter group.
//!
//! cargo run --release --example gradient_check [seeds]

use battrae::pipeline::{cmd_gradcheck, format_gradcheck_report, gradcheck_model, GradcheckConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seeds: u64 = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(5);
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        let cfg = GradcheckConfig {
            seed,
            ..GradcheckConfig::default()
        };
        let report = cmd_gradcheck(&cfg)?;
        println!("seed {seed}");
        print!(
            "{}",
            format_gradcheck_report(&report, Some(&gradcheck_model(&cfg)?))
        );
        worst = worst.max(report.max_relative_error());
    }
    println!("max relative error over {seeds} seeds: {worst:.3e}");
    Ok(())
}
