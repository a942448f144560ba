use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use hotspot::bench::{
    self, load_config, run_matrix, write_aggregate, write_rows, write_timing, AggregateResult, Experiment,
    ExperimentMatrix, Preset, RunConfig,
};
use hotspot::field::generate_random_field;
use hotspot::{Error, Result};

#[derive(Parser)]
#[command(name = "hotspot", version, about = "Multi-altitude hotspot search experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the field seed (gen-field) or the first environment seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output file. Summaries and timing series go next to it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Log progress; `run` also dumps the GP state per step.
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random field as a grid file.
    GenField,
    /// One episode with the `[planner]` settings (or the first listed strategy).
    Run,
    /// The eight planner variants.
    Ablation,
    /// The windowed CPV planner against the baselines.
    Compare,
    /// The planner over budgets 50..200.
    BudgetSweep,
    /// Exact against sparse inference on large images.
    SparsitySweep,
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    out.with_file_name(format!("{stem}_{suffix}.csv"))
}

fn print_summary(rows: &[AggregateResult]) {
    println!(
        "{:<22} {:>7} {:>5} {:>4} {:>16} {:>16} {:>7} {:>10}",
        "strategy", "budget", "S", "n", "point", "arm", "images", "gp ms"
    );
    for r in rows {
        println!(
            "{:<22} {:>7} {:>5} {:>4} {:>8.2} ± {:<5.2} {:>8.2} ± {:<5.2} {:>7.1} {:>10.1}",
            r.strategy, r.budget, r.s, r.samples, r.point_mean, r.point_std, r.arm_mean, r.arm_std, r.images, r.gp_time_ms
        );
        if r.failures > 0 {
            println!("{:<22} {} failed cells", "", r.failures);
        }
    }
}

fn emit_matrix(out: Option<&Path>, result: &bench::MatrixResult) -> Result<()> {
    match out {
        Some(path) => {
            write_rows(std::fs::File::create(path)?, &result.rows)?;
            write_aggregate(std::fs::File::create(sibling(path, "summary"))?, &result.aggregate)?;
        }
        None => write_rows(std::io::stdout().lock(), &result.rows)?,
    }
    print_summary(&result.aggregate);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(w) = cli.workers {
        config.bench.workers = w;
    }
    if let Some(s) = cli.seed {
        config.field.seed = s;
        config.bench.env_seed = s;
    }
    config.validate()?;
    let out = cli.out.clone().or_else(|| config.bench.output.clone());

    match cli.command {
        Command::GenField => {
            let field = generate_random_field(&config.field)?;
            let path = out.unwrap_or_else(|| PathBuf::from(format!("field_{}.grid", config.field.seed)));
            field.write_grid(&path, 0.1)?;
            let (x, f) = field.global_optimum(hotspot::planner::OPTIMUM_RESOLUTION)?;
            println!("wrote {} (max {f:.3} at {:.1},{:.1})", path.display(), x.x, x.y);
        }
        Command::Run => {
            config.bench.environments = 1;
            let matrix = ExperimentMatrix::from_config(&config, Preset::Single);
            let exp = Experiment::prepare(&config, &matrix)?;
            let strategy = &matrix.strategies[0];
            let dump = cli.verbose.then(|| {
                out.as_deref()
                    .map(|p| p.with_extension("gp"))
                    .unwrap_or_else(|| PathBuf::from("gp_steps"))
            });
            let trace = exp.episode_with_dump(
                0,
                matrix.trial_seed,
                strategy,
                matrix.budgets[0],
                matrix.sparsity[0],
                dump.as_deref(),
            )?;
            match &out {
                Some(path) => trace.write_step_log(std::fs::File::create(path)?)?,
                None => trace.write_step_log(std::io::stdout().lock())?,
            }
            let mut err = std::io::stderr().lock();
            writeln!(
                err,
                "{}: {} images, spent {:.2}/{}, x_alg=({:.2},{:.2}) point {:.2}% arm {:.2}%",
                trace.strategy,
                trace.images(),
                trace.total_cost(&exp.grid),
                trace.budget,
                trace.x_alg.x,
                trace.x_alg.y,
                trace.point_metric,
                trace.arm_metric
            )?;
        }
        Command::Ablation | Command::Compare | Command::BudgetSweep => {
            let preset = match cli.command {
                Command::Ablation => Preset::Ablation,
                Command::Compare => Preset::Compare,
                _ => Preset::BudgetSweep,
            };
            let matrix = ExperimentMatrix::from_config(&config, preset);
            log::info!("{} cells", matrix.cells());
            emit_matrix(out.as_deref(), &run_matrix(&config, &matrix)?)?;
        }
        Command::SparsitySweep => {
            let (result, timing) = bench::sparsity_sweep(&config)?;
            emit_matrix(out.as_deref(), &result)?;
            match &out {
                Some(path) => write_timing(std::fs::File::create(sibling(path, "timing"))?, &timing)?,
                None => write_timing(std::io::stderr().lock(), &timing)?,
            }
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .parse_default_env()
        .init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(match e {
            Error::ConfigParse { .. } | Error::UnknownStrategy { .. } | Error::InvalidConfig(_) => 2,
            _ => 1,
        });
    }
}
