//! One episode of the windowed CPV planner on a random desk-scale field,
//! printed step by step.
//!
//! ```text
//! cargo run --release --example single_episode -- 3
//! ```

use hotspot::bench::{Experiment, ExperimentMatrix, Preset, RunConfig};

fn main() -> hotspot::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut config = RunConfig::default();
    config.bench.environments = 1;
    config.bench.env_seed = seed;
    let matrix = ExperimentMatrix::from_config(&config, Preset::Single);
    let exp = Experiment::prepare(&config, &matrix)?;

    let trace = exp.episode(0, matrix.trial_seed, "dcpv++", config.planner.budget, matrix.sparsity[0])?;
    trace.write_step_log(std::io::stdout().lock())?;
    eprintln!(
        "{} images, cost {:.2} of {}; x_alg = ({:.2}, {:.2}); point {:.2}%, arm {:.2}%",
        trace.images(),
        trace.total_cost(&exp.grid),
        trace.budget,
        trace.x_alg.x,
        trace.x_alg.y,
        trace.point_metric,
        trace.arm_metric
    );
    Ok(())
}
