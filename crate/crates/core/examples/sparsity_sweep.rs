//! Exact against sparse inference with a 646-pixel camera: per-update time
//! as images accumulate, and the resulting point metric.
//!
//! ```text
//! cargo run --release --example sparsity_sweep
//! ```

use hotspot::bench::{run_matrix, update_timing, ExperimentMatrix, Preset, RunConfig};

fn main() -> hotspot::Result<()> {
    let mut config = RunConfig::default();
    config.bench.environments = 3;
    config.bench.trials = 2;
    let scenario = config.sparsity_scenario();
    let grid = scenario.build_grid()?;
    let field = scenario.environment(0)?;
    let inducing = [0, 200, 400];

    let timing = update_timing(&grid, &field, &scenario.gp, &inducing, 15, 1)?;
    println!("{:>3} {:>12} {:>12} {:>12}", "k", "exact ms", "S=200 ms", "S=400 ms");
    for k in 1..=15 {
        let at = |s| timing.iter().find(|p| p.s == s && p.k == k).map_or(f64::NAN, |p| p.update_ms);
        println!("{k:>3} {:>12.2} {:>12.2} {:>12.2}", at(0), at(200), at(400));
    }

    let matrix = ExperimentMatrix::from_config(&scenario, Preset::SparsitySweep);
    for a in &run_matrix(&scenario, &matrix)?.aggregate {
        let label = if a.s == 0 { "exact".to_string() } else { format!("S={}", a.s) };
        println!("{label:<6} point {:>6.2}% ± {:.2}", a.point_mean, a.point_std);
    }
    Ok(())
}
