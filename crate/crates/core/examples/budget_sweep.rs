//! Point metric of the windowed CPV planner as the flight budget grows.
//!
//! ```text
//! cargo run --release --example budget_sweep
//! ```

use hotspot::bench::{run_matrix, ExperimentMatrix, Preset, RunConfig};

fn main() -> hotspot::Result<()> {
    let mut config = RunConfig::default();
    config.bench.environments = 5;
    config.bench.trials = 2;
    let matrix = ExperimentMatrix::from_config(&config, Preset::BudgetSweep);
    let result = run_matrix(&config, &matrix)?;
    for a in &result.aggregate {
        let bar = "#".repeat((a.point_mean / 2.0).round() as usize);
        println!("B = {:>5}  {:>6.2}%  {bar}", a.budget, a.point_mean);
    }
    Ok(())
}
