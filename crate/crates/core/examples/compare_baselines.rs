//! Windowed CPV planner against lawnmower, gradient ascent (each at every
//! altitude), variance reduction, mutual information and block UCL.
//!
//! ```text
//! cargo run --release --example compare_baselines
//! ```

use hotspot::bench::{run_matrix, ExperimentMatrix, Preset, RunConfig};

fn main() -> hotspot::Result<()> {
    let mut config = RunConfig::default();
    config.bench.environments = 4;
    config.bench.trials = 3;
    let matrix = ExperimentMatrix::from_config(&config, Preset::Compare);
    let result = run_matrix(&config, &matrix)?;
    let mut rows = result.aggregate.clone();
    rows.sort_by(|a, b| b.point_mean.total_cmp(&a.point_mean));
    for a in &rows {
        println!("{:<20} point {:>6.2}%  arm {:>6.2}%  images {:>5.1}", a.strategy, a.point_mean, a.arm_mean, a.images);
    }
    Ok(())
}
