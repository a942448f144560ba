//! Fits kernel and per-level noise hyperparameters by marginal likelihood
//! from a full boustrophedon survey at every altitude, then prints a `[gp]`
//! section ready to paste into a config.
//!
//! ```text
//! cargo run --release --example fit_hyperparams -- crates/core/examples/tarp.toml
//! ```

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hotspot::baselines::serpentine;
use hotspot::bench::{load_config, RunConfig};
use hotspot::gp::{fit_hyperparams, FitOptions, LabeledTrainingSet};
use hotspot::sensing::take_image;

/// Points kept per level; the fit is cubic in the total.
const PER_LEVEL: usize = 150;

fn main() -> hotspot::Result<()> {
    let config = match std::env::args().nth(1) {
        Some(path) => load_config(path.as_ref())?,
        None => RunConfig::default(),
    };
    let grid = config.build_grid()?;
    let field = config.environment(config.bench.env_seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.bench.trial_seed);

    let mut data = LabeledTrainingSet::default();
    for level in 0..grid.levels().len() {
        let mut level_points = LabeledTrainingSet::default();
        for id in serpentine(&grid, level) {
            let b = take_image(&field, grid.arm(id), &grid, &mut rng);
            for (p, y) in b.pixel_locations.iter().zip(&b.values) {
                level_points.push(*p, *y, level);
            }
        }
        let keep = PER_LEVEL.min(level_points.len());
        for i in sample(&mut rng, level_points.len(), keep) {
            data.push(level_points.points[i], level_points.values[i], level);
        }
        println!(
            "# level {level}: {} images, {} pixels, kept {keep}",
            grid.level_arms(level).len(),
            level_points.len()
        );
    }

    let h = fit_hyperparams(&data, &FitOptions::default())?;
    println!("[gp]");
    println!("length_scale = {:.3}", h.length_scale);
    println!("signal_variance = {:.3}", h.signal_variance);
    let noise: Vec<String> = h.noise_variances.iter().map(|v| format!("{v:.4}")).collect();
    println!("noise_variances = [{}]", noise.join(", "));
    Ok(())
}
