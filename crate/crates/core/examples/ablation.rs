//! The eight planner variants (current or conditional variance, fixed or
//! windowed candidates, decreasing or increasing β) on the same fields.
//!
//! ```text
//! cargo run --release --example ablation -- 4
//! ```

use hotspot::bench::{run_matrix, ExperimentMatrix, Preset, RunConfig};

fn main() -> hotspot::Result<()> {
    let mut config = RunConfig::default();
    config.bench.environments = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    config.bench.trials = 3;
    let matrix = ExperimentMatrix::from_config(&config, Preset::Ablation);
    let result = run_matrix(&config, &matrix)?;
    println!("{:<8} {:>16} {:>8}", "variant", "point %", "images");
    for a in &result.aggregate {
        println!("{:<8} {:>8.2} ± {:<5.2} {:>8.1}", a.strategy, a.point_mean, a.point_std, a.images);
    }
    Ok(())
}
