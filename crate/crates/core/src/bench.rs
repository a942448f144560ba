//! Seeded Monte Carlo experiments: configuration, matrix runner, aggregation
//! and CSV output.
//!
//! A run is described by one TOML file with a section per module. Every
//! matrix cell `(environment, trial, strategy, budget, S)` runs one episode
//! with its own RNG stream, so results do not depend on worker count or
//! execution order.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineConfig, BaselineKind};
use crate::error::{Error, Result};
use crate::field::{generate_random_field, load_field_from_grid, FieldConfig, ScalarField};
use crate::geom::Extent;
use crate::gp::{
    select_inducing_points, write_debug_csv, ExactGp, GpBackend, Hyperparams, InducingRule, SparseGp,
};
use crate::planner::{
    random_start, run_strategy, BetaForm, BetaSchedule, Choice, EpisodeLimits, EpisodeTrace,
    Inference, MetricOracle, PlanState, Planner, PlannerConfig, Scenario, Strategy, VarianceMode,
    Window,
};
use crate::sensing::{take_image, AltitudeLevel, ArmGrid, NoiseModel, TestLayout};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSpec {
    pub altitude: f64,
    pub footprint_side: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensingConfig {
    /// Lowest altitude first.
    pub levels: Vec<LevelSpec>,
    pub noise: NoiseModel,
    pub pixels_x: usize,
    pub pixels_y: usize,
    pub layout: TestLayout,
}

impl Default for SensingConfig {
    fn default() -> Self {
        Self {
            levels: vec![
                LevelSpec { altitude: 10.0, footprint_side: 1.0 },
                LevelSpec { altitude: 40.0, footprint_side: 4.0 },
                LevelSpec { altitude: 70.0, footprint_side: 7.0 },
            ],
            noise: NoiseModel::default(),
            pixels_x: 3,
            pixels_y: 3,
            layout: TestLayout::PixelCenters,
        }
    }
}

impl SensingConfig {
    pub fn altitude_levels(&self) -> Vec<AltitudeLevel> {
        self.levels
            .iter()
            .map(|l| AltitudeLevel::new(l.altitude, l.footprint_side, &self.noise))
            .collect()
    }

    pub fn build_grid(&self, extent: Extent) -> Result<ArmGrid> {
        self.noise.validate()?;
        ArmGrid::build(extent, &self.altitude_levels(), self.pixels_x, self.pixels_y, self.layout)
    }
}

/// Parameters shared by every baseline built from a strategy name.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineParams {
    pub block_growth: f64,
    pub gradient_tolerance: f64,
    pub ucl_beta: BetaSchedule,
}

impl Default for BaselineParams {
    fn default() -> Self {
        let b = BaselineConfig::new(BaselineKind::BlockUcl);
        Self {
            block_growth: b.block_growth,
            gradient_tolerance: b.gradient_tolerance,
            ucl_beta: b.ucl_beta,
        }
    }
}

/// Experiment matrix settings. Empty lists are filled in by the preset of
/// the command being run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub environments: usize,
    pub env_seed: u64,
    pub trials: usize,
    pub trial_seed: u64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub strategies: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub budgets: Vec<f64>,
    /// Inducing-point counts; `0` means exact inference.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub sparsity: Vec<usize>,
    pub workers: usize,
    /// Use this grid file for every environment instead of random fields.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field_file: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            environments: 20,
            env_seed: 0,
            trials: 5,
            trial_seed: 1000,
            strategies: Vec::new(),
            budgets: Vec::new(),
            sparsity: Vec::new(),
            workers: 1,
            field_file: None,
            output: None,
        }
    }
}

/// The large-image scenario used to compare exact and sparse inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SparsityConfig {
    pub pixels_x: usize,
    pub pixels_y: usize,
    /// Test points sit on a grid with this cell size.
    pub cell: f64,
    pub budget: f64,
    pub inducing: Vec<usize>,
    /// Images fed to each backend for the timing series.
    pub timing_steps: usize,
}

impl Default for SparsityConfig {
    fn default() -> Self {
        Self {
            pixels_x: 19,
            pixels_y: 34,
            cell: 1.0,
            budget: 20.0,
            inducing: vec![200, 400],
            timing_steps: 15,
        }
    }
}

/// Everything a command needs, one section per module.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub field: FieldConfig,
    pub sensing: SensingConfig,
    pub gp: Hyperparams,
    pub planner: PlannerConfig,
    pub baselines: BaselineParams,
    pub bench: BenchConfig,
    pub sparsity: SparsityConfig,
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::ConfigParse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        if self.bench.field_file.is_none() {
            self.field.validate()?;
        }
        self.gp.validate()?;
        self.planner.validate()?;
        if self.bench.environments == 0 || self.bench.trials == 0 {
            return Err(Error::InvalidConfig("environments and trials must be >= 1".into()));
        }
        if self.bench.workers == 0 {
            return Err(Error::InvalidConfig("workers must be >= 1".into()));
        }
        if self.sensing.levels.is_empty() {
            return Err(Error::InvalidConfig("sensing needs at least one level".into()));
        }
        for name in &self.bench.strategies {
            StrategySpec::parse(name, self).map_err(|e| match e {
                Error::UnknownStrategy { name, .. } => Error::UnknownStrategy {
                    key: "bench.strategies".into(),
                    name,
                },
                other => other,
            })?;
        }
        if let Some(b) = self.bench.budgets.iter().find(|b| !(**b > 0.0)) {
            return Err(Error::InvalidConfig(format!("budgets must be positive, got {b}")));
        }
        Ok(())
    }

    /// Field extent: the grid file's, else the generator's.
    pub fn extent(&self) -> Result<Extent> {
        match &self.bench.field_file {
            Some(path) => Ok(load_field_from_grid(path)?.extent()),
            None => Extent::new(self.field.width, self.field.height),
        }
    }

    pub fn build_grid(&self) -> Result<ArmGrid> {
        self.sensing.build_grid(self.extent()?)
    }

    /// The environment for `env_seed`.
    pub fn environment(&self, env_seed: u64) -> Result<ScalarField> {
        match &self.bench.field_file {
            Some(path) => load_field_from_grid(path),
            None => generate_random_field(&FieldConfig {
                seed: env_seed,
                ..self.field.clone()
            }),
        }
    }

    /// Copy with the sensing model switched to the large-image scenario.
    pub fn sparsity_scenario(&self) -> Self {
        let mut c = self.clone();
        c.sensing.pixels_x = self.sparsity.pixels_x;
        c.sensing.pixels_y = self.sparsity.pixels_y;
        c.sensing.layout = TestLayout::Grid { cell: self.sparsity.cell };
        c
    }
}

/// Reads a config file. A relative `bench.field_file` is taken relative to
/// the config file's directory.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut config: RunConfig = toml::from_str(&text).map_err(|e| Error::ConfigParse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if let (Some(file), Some(dir)) = (&config.bench.field_file, path.parent()) {
        if file.is_relative() {
            config.bench.field_file = Some(dir.join(file));
        }
    }
    config.validate()?;
    Ok(config)
}

pub fn emit_config(config: &RunConfig, path: &Path) -> Result<()> {
    std::fs::write(path, config.to_toml())?;
    Ok(())
}

/// A strategy resolved from its name.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StrategySpec {
    Planner(PlannerConfig),
    Baseline(BaselineConfig),
}

impl StrategySpec {
    /// Accepts `planner` (the `[planner]` section as written), the ablation
    /// labels `cv--` … `dcpv++`, and baseline names with an optional
    /// `@level` suffix.
    pub fn parse(name: &str, config: &RunConfig) -> Result<Self> {
        let unknown = || Error::UnknownStrategy {
            key: "strategy".into(),
            name: name.to_string(),
        };
        if name == "planner" {
            return Ok(Self::Planner(config.planner));
        }
        if let Some(variant) = parse_variant(name, &config.planner) {
            return Ok(Self::Planner(variant));
        }
        let (kind_name, level) = match name.split_once('@') {
            Some((k, l)) => (k, Some(l.parse::<usize>().map_err(|_| unknown())?)),
            None => (name, None),
        };
        let kind = match kind_name {
            "boustrophedon" => BaselineKind::Boustrophedon,
            "gradient_ascent" => BaselineKind::GradientAscent,
            "variance_reduction" => BaselineKind::VarianceReduction,
            "mutual_information" => BaselineKind::MutualInformation,
            "block_ucl" => BaselineKind::BlockUcl,
            _ => return Err(unknown()),
        };
        let p = &config.baselines;
        let b = BaselineConfig {
            kind,
            fixed_level: level,
            block_growth: p.block_growth,
            gradient_tolerance: p.gradient_tolerance,
            ucl_beta: p.ucl_beta,
        };
        b.validate()?;
        if let Some(l) = level {
            if l >= config.sensing.levels.len() {
                return Err(Error::InvalidConfig(format!("{name}: level {l} does not exist")));
            }
        }
        Ok(Self::Baseline(b))
    }

    fn columns(&self) -> (String, String, String) {
        match self {
            Self::Planner(c) => (c.variance_mode.to_string(), c.window.to_string(), c.beta.form().to_string()),
            Self::Baseline(_) => ("na".into(), "na".into(), "na".into()),
        }
    }

    fn build(&self, grid: &ArmGrid, limits: &EpisodeLimits) -> Result<Box<dyn Strategy + Send>> {
        match self {
            Self::Planner(c) => Ok(Box::new(Planner::new(PlannerConfig {
                budget: limits.budget,
                inference: limits.inference,
                ..*c
            })?)),
            Self::Baseline(b) => b.build(grid),
        }
    }
}

fn parse_variant(name: &str, base: &PlannerConfig) -> Option<PlannerConfig> {
    let (rest, form) = if let Some(r) = name.strip_suffix("--") {
        (r, BetaForm::Decreasing)
    } else {
        (name.strip_suffix("++")?, BetaForm::Increasing)
    };
    let (windowed, mode) = match rest {
        "cv" => (false, VarianceMode::Current),
        "dcv" => (true, VarianceMode::Current),
        "cpv" => (false, VarianceMode::Cpv),
        "dcpv" => (true, VarianceMode::Cpv),
        _ => return None,
    };
    let radius = match base.window {
        Window::Radius(r) => r,
        Window::Off => 1,
    };
    Some(PlannerConfig {
        variance_mode: mode,
        window: if windowed { Window::Radius(radius) } else { Window::Off },
        beta: BetaSchedule::preset(mode, form),
        ..*base
    })
}

/// The eight planner variants, current-variance first.
pub fn ablation_strategies() -> Vec<String> {
    ["cv--", "cv++", "dcv--", "dcv++", "cpv--", "cpv++", "dcpv--", "dcpv++"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

/// The windowed CPV planner against every baseline, fixed-level ones at each level.
pub fn comparison_strategies(levels: usize) -> Vec<String> {
    let mut out = vec!["dcpv++".to_string()];
    for kind in ["boustrophedon", "gradient_ascent"] {
        out.extend((0..levels).map(|l| format!("{kind}@{l}")));
    }
    out.extend(["variance_reduction", "mutual_information", "block_ucl"].map(String::from));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Single,
    Ablation,
    Compare,
    BudgetSweep,
    SparsitySweep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentMatrix {
    pub environments: usize,
    pub env_seed: u64,
    pub trials: usize,
    pub trial_seed: u64,
    pub strategies: Vec<String>,
    pub budgets: Vec<f64>,
    pub sparsity: Vec<usize>,
    pub workers: usize,
}

impl ExperimentMatrix {
    /// The matrix for `preset`; lists given in `[bench]` take precedence.
    pub fn from_config(config: &RunConfig, preset: Preset) -> Self {
        let b = &config.bench;
        let s = vec![config.planner.inference.inducing_count()];
        let (strategies, budgets, sparsity) = match preset {
            Preset::Single => (vec!["planner".to_string()], vec![config.planner.budget], s),
            Preset::Ablation => (ablation_strategies(), vec![config.planner.budget], s),
            Preset::Compare => (
                comparison_strategies(config.sensing.levels.len()),
                vec![config.planner.budget],
                s,
            ),
            Preset::BudgetSweep => (vec!["dcpv++".to_string()], vec![50.0, 100.0, 150.0, 200.0], s),
            Preset::SparsitySweep => {
                let mut s = vec![0];
                s.extend(&config.sparsity.inducing);
                (vec!["dcpv++".to_string()], vec![config.sparsity.budget], s)
            }
        };
        fn pick<T: Clone>(given: &[T], preset: Vec<T>) -> Vec<T> {
            if given.is_empty() {
                preset
            } else {
                given.to_vec()
            }
        }
        Self {
            environments: b.environments,
            env_seed: b.env_seed,
            trials: b.trials,
            trial_seed: b.trial_seed,
            strategies: pick(&b.strategies, strategies),
            budgets: pick(&b.budgets, budgets),
            sparsity: pick(&b.sparsity, sparsity),
            workers: b.workers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.environments == 0 || self.trials == 0 || self.workers == 0 {
            return Err(Error::InvalidConfig("environments, trials and workers must be >= 1".into()));
        }
        if self.strategies.is_empty() || self.budgets.is_empty() || self.sparsity.is_empty() {
            return Err(Error::InvalidConfig("matrix axes must not be empty".into()));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.environments * self.trials * self.strategies.len() * self.budgets.len() * self.sparsity.len()
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub env_seed: u64,
    pub trial_seed: u64,
    pub strategy: String,
    pub variance_mode: String,
    pub window: String,
    pub beta_form: String,
    pub budget: f64,
    #[serde(rename = "S")]
    pub s: usize,
    pub images: usize,
    pub point_metric: f64,
    pub arm_metric: f64,
    pub gp_time_ms: f64,
    #[serde(skip)]
    pub error: Option<String>,
    /// GP update time per image, milliseconds.
    #[serde(skip)]
    pub update_ms: Vec<f64>,
}

impl CellResult {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// Per `(strategy, budget, S)` summary with sample (n−1) standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateResult {
    pub strategy: String,
    pub budget: f64,
    #[serde(rename = "S")]
    pub s: usize,
    pub samples: usize,
    pub failures: usize,
    pub point_mean: f64,
    pub point_std: f64,
    pub arm_mean: f64,
    pub arm_std: f64,
    pub gp_time_ms: f64,
    pub images: f64,
}

/// Mean and sample standard deviation; `(NaN, NaN)` for no data, `σ = 0` for one sample.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Groups rows by `(strategy, budget, S)` in order of first appearance.
pub fn aggregate(rows: &[CellResult]) -> Vec<AggregateResult> {
    let mut order: Vec<(String, u64, usize)> = Vec::new();
    let mut groups: HashMap<(String, u64, usize), Vec<&CellResult>> = HashMap::new();
    for r in rows {
        let key = (r.strategy.clone(), r.budget.to_bits(), r.s);
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let ok: Vec<&&CellResult> = g.iter().filter(|r| !r.failed()).collect();
            let col = |f: fn(&CellResult) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<_>>();
            let (point_mean, point_std) = mean_std(&col(|r| r.point_metric));
            let (arm_mean, arm_std) = mean_std(&col(|r| r.arm_metric));
            AggregateResult {
                strategy: key.0,
                budget: f64::from_bits(key.1),
                s: key.2,
                samples: ok.len(),
                failures: g.len() - ok.len(),
                point_mean,
                point_std,
                arm_mean,
                arm_std,
                gp_time_ms: mean_std(&col(|r| r.gp_time_ms)).0,
                images: mean_std(&col(|r| r.images as f64)).0,
            }
        })
        .collect()
}

pub fn write_rows<W: Write>(out: W, rows: &[CellResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(CSV_COLUMNS)?;
    }
    w.flush()?;
    Ok(())
}

pub const CSV_COLUMNS: [&str; 12] = [
    "env_seed",
    "trial_seed",
    "strategy",
    "variance_mode",
    "window",
    "beta_form",
    "budget",
    "S",
    "images",
    "point_metric",
    "arm_metric",
    "gp_time_ms",
];

pub fn write_aggregate<W: Write>(out: W, rows: &[AggregateResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv(path: &Path, rows: &[CellResult]) -> Result<()> {
    write_rows(std::fs::File::create(path)?, rows)
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Seed shared by every strategy for one `(environment, trial)` pair.
pub fn trial_key(env_seed: u64, trial_seed: u64) -> u64 {
    splitmix(splitmix(env_seed) ^ trial_seed)
}

/// Start position stream: depends only on the trial, so all strategies of a
/// trial leave from the same place.
pub fn start_rng(env_seed: u64, trial_seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(trial_key(env_seed, trial_seed))
}

/// Episode stream for one strategy within a trial.
pub fn strategy_rng(env_seed: u64, trial_seed: u64, strategy: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(trial_key(env_seed, trial_seed));
    rng.set_stream(fnv1a(strategy) | 1);
    rng
}

fn inference_for(s: usize) -> Inference {
    if s == 0 {
        Inference::Exact
    } else {
        Inference::Sparse { inducing: s }
    }
}

/// One prepared environment.
pub struct Environment {
    pub seed: u64,
    pub field: ScalarField,
    pub oracle: MetricOracle,
}

/// Grid and environments shared by all cells of a matrix.
pub struct Experiment {
    pub config: RunConfig,
    pub grid: ArmGrid,
    pub environments: Vec<Environment>,
}

impl Experiment {
    pub fn prepare(config: &RunConfig, matrix: &ExperimentMatrix) -> Result<Self> {
        config.validate()?;
        matrix.validate()?;
        for name in &matrix.strategies {
            StrategySpec::parse(name, config)?;
        }
        let grid = config.build_grid()?;
        let environments = (0..matrix.environments as u64)
            .map(|e| {
                let seed = matrix.env_seed + e;
                let field = config.environment(seed)?;
                let oracle = MetricOracle::new(&field, &grid)?;
                Ok(Environment { seed, field, oracle })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: config.clone(),
            grid,
            environments,
        })
    }

    /// Runs one episode of `strategy` in environment `env`.
    pub fn episode(&self, env: usize, trial_seed: u64, strategy: &str, budget: f64, s: usize) -> Result<EpisodeTrace> {
        self.episode_with_dump(env, trial_seed, strategy, budget, s, None)
    }

    /// [`Experiment::episode`], optionally writing a GP snapshot CSV per
    /// step into `dump_dir`.
    pub fn episode_with_dump(
        &self,
        env: usize,
        trial_seed: u64,
        strategy: &str,
        budget: f64,
        s: usize,
        dump_dir: Option<&Path>,
    ) -> Result<EpisodeTrace> {
        let env = &self.environments[env];
        let spec = StrategySpec::parse(strategy, &self.config)?;
        let limits = EpisodeLimits {
            budget,
            sensing_time: self.config.planner.sensing_time,
            inference: inference_for(s),
        };
        let mut strat = spec.build(&self.grid, &limits)?;
        if let Some(dir) = dump_dir {
            std::fs::create_dir_all(dir)?;
            strat = Box::new(GpDump {
                inner: strat,
                dir: dir.to_path_buf(),
            });
        }
        let start = random_start(&self.grid, &mut start_rng(env.seed, trial_seed));
        let mut rng = strategy_rng(env.seed, trial_seed, strategy);
        let scenario = Scenario {
            field: &env.field,
            grid: &self.grid,
            hyper: &self.config.gp,
            oracle: &env.oracle,
        };
        run_strategy(strat.as_mut(), scenario, &limits, start, &mut rng)
    }

    fn cell(&self, env: usize, trial_seed: u64, strategy: &str, budget: f64, s: usize) -> CellResult {
        let (variance_mode, window, beta_form) = StrategySpec::parse(strategy, &self.config)
            .map(|spec| spec.columns())
            .unwrap_or_default();
        let mut row = CellResult {
            env_seed: self.environments[env].seed,
            trial_seed,
            strategy: strategy.to_string(),
            variance_mode,
            window,
            beta_form,
            budget,
            s,
            images: 0,
            point_metric: f64::NAN,
            arm_metric: f64::NAN,
            gp_time_ms: f64::NAN,
            error: None,
            update_ms: Vec::new(),
        };
        match self.episode(env, trial_seed, strategy, budget, s) {
            Ok(trace) => {
                row.images = trace.images();
                row.point_metric = trace.point_metric;
                row.arm_metric = trace.arm_metric;
                row.gp_time_ms = trace.gp_time_ms;
                row.update_ms = trace.steps.iter().map(|st| st.update_ms).collect();
            }
            Err(e) => {
                log::warn!("cell env={} trial={trial_seed} {strategy} failed: {e}", row.env_seed);
                row.error = Some(e.to_string());
            }
        }
        row
    }
}

/// Writes `gp_step_<k>.csv` with the posterior the wrapped strategy sees
/// before choosing image `k`.
struct GpDump {
    inner: Box<dyn Strategy + Send>,
    dir: PathBuf,
}

impl Strategy for GpDump {
    fn name(&self) -> String {
        self.inner.name()
    }

    fn next_arm(&mut self, state: &PlanState<'_>, rng: &mut dyn RngCore) -> Result<Choice> {
        let path = self.dir.join(format!("gp_step_{:03}.csv", state.k));
        write_debug_csv(std::fs::File::create(path)?, state.gp)?;
        self.inner.next_arm(state, rng)
    }
}

/// Rows and their per-`(strategy, budget, S)` summary.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixResult {
    pub rows: Vec<CellResult>,
    pub aggregate: Vec<AggregateResult>,
}

impl MatrixResult {
    pub fn find(&self, strategy: &str) -> Option<&AggregateResult> {
        self.aggregate.iter().find(|a| a.strategy == strategy)
    }
}

/// Runs every cell of `matrix` on `matrix.workers` threads. Episode errors
/// become failure rows; only invalid configurations abort.
pub fn run_matrix(config: &RunConfig, matrix: &ExperimentMatrix) -> Result<MatrixResult> {
    let exp = Experiment::prepare(config, matrix)?;
    let mut cells = Vec::with_capacity(matrix.cells());
    for env in 0..matrix.environments {
        for t in 0..matrix.trials as u64 {
            for strategy in &matrix.strategies {
                for &budget in &matrix.budgets {
                    for &s in &matrix.sparsity {
                        cells.push((env, matrix.trial_seed + t, strategy.as_str(), budget, s));
                    }
                }
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(matrix.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let clock = Instant::now();
    let rows: Vec<CellResult> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(env, trial, strategy, budget, s)| exp.cell(env, trial, strategy, budget, s))
            .collect()
    });
    log::info!("{} cells in {:.1}s", rows.len(), clock.elapsed().as_secs_f64());
    let aggregate = aggregate(&rows);
    Ok(MatrixResult { rows, aggregate })
}

/// Mean GP update time of the `k`-th image for one inference setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimingPoint {
    #[serde(rename = "S")]
    pub s: usize,
    pub k: usize,
    /// Training points after this image.
    pub n: usize,
    pub update_ms: f64,
}

/// Feeds the same `steps` random images to each backend and times every
/// update. `S = 0` is exact inference.
pub fn update_timing(
    grid: &ArmGrid,
    field: &ScalarField,
    hyper: &Hyperparams,
    inducing: &[usize],
    steps: usize,
    seed: u64,
) -> Result<Vec<TimingPoint>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batches: Vec<_> = (0..steps)
        .map(|_| {
            let arm = random_start(grid, &mut rng);
            let id = grid.arms().iter().position(|a| a.position == arm).expect("start is an arm");
            take_image(field, grid.arm(id), grid, &mut rng)
        })
        .collect();
    let mut out = Vec::new();
    for &s in inducing {
        let test = grid.test_points().to_vec();
        let mut gp: Box<dyn GpBackend> = if s == 0 {
            Box::new(ExactGp::with_capacity(test, hyper.clone(), steps * grid.pixels_per_image()))
        } else {
            let z = select_inducing_points(&grid.extent(), &[], s, InducingRule::Lattice)?;
            Box::new(SparseGp::new(test, z, hyper.clone())?)
        };
        for (k, b) in batches.iter().enumerate() {
            let noise = hyper.noise_variances.get(grid.arm(b.arm_id).level).copied().unwrap_or(b.noise_variance);
            let clock = Instant::now();
            gp.add_batch(&b.pixel_locations, &b.values, noise)?;
            out.push(TimingPoint {
                s,
                k: k + 1,
                n: gp.len(),
                update_ms: clock.elapsed().as_secs_f64() * 1e3,
            });
        }
    }
    Ok(out)
}

pub fn write_timing<W: Write>(out: W, points: &[TimingPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

/// Matrix over exact and sparse inference in the large-image scenario, plus
/// an update-time series for each setting.
pub fn sparsity_sweep(config: &RunConfig) -> Result<(MatrixResult, Vec<TimingPoint>)> {
    let scenario = config.sparsity_scenario();
    let matrix = ExperimentMatrix::from_config(&scenario, Preset::SparsitySweep);
    let result = run_matrix(&scenario, &matrix)?;
    let grid = scenario.build_grid()?;
    let field = scenario.environment(matrix.env_seed)?;
    let timing = update_timing(
        &grid,
        &field,
        &scenario.gp,
        &matrix.sparsity,
        scenario.sparsity.timing_steps,
        matrix.trial_seed,
    )?;
    Ok((result, timing))
}
