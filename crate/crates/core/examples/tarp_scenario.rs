//! Three tarps of intensity 1, 2 and 3 on a 30 m plot, loaded from a grid
//! file and searched with the fitted model in `tarp.toml`.
//!
//! ```text
//! cargo run --release --example tarp_scenario
//! ```

use std::path::Path;

use hotspot::bench::{load_config, Experiment, ExperimentMatrix, Preset};

fn main() -> hotspot::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/tarp.toml");
    let config = load_config(&path)?;
    let matrix = ExperimentMatrix::from_config(&config, Preset::Single);
    let exp = Experiment::prepare(&config, &matrix)?;

    let mut hits = 0;
    for t in 0..config.bench.trials as u64 {
        let trace = exp.episode(0, matrix.trial_seed + t, "planner", config.planner.budget, matrix.sparsity[0])?;
        let arm = exp.grid.arm(trace.alg_arm);
        println!(
            "trial {t}: {:>2} images, x_alg ({:>5.2}, {:>5.2}) from arm at {:.0} m, point {:.1}%",
            trace.images(),
            trace.x_alg.x,
            trace.x_alg.y,
            arm.position.z,
            trace.point_metric
        );
        if trace.point_metric >= 100.0 - 1e-9 {
            hits += 1;
        }
    }
    println!("{hits}/{} runs located the red tarp", config.bench.trials);
    Ok(())
}
