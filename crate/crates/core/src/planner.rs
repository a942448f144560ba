//! Budgeted multi-fidelity GP-UCB planning over the arm grid.
//!
//! One episode flies from a start position, picks arms by
//! `μ̄ᵢ + β(k)·σ̄ᵢ`, takes an image at each, and finally reports the test
//! point with the highest posterior mean. The loop itself is shared with
//! the baselines through [`Strategy`].

use std::fmt;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::geom::{Point2, Point3};
use crate::gp::{
    conditional_predictive_variance, posterior, select_inducing_points, BlockTracker, ExactGp, GpBackend,
    Hyperparams, InducingRule, SparseGp, TrainingSet,
};
use crate::sensing::{take_image, travel_time, ArmGrid, MeasurementBatch};

/// Resolution of the brute-force optimum used by the point metric.
pub const OPTIMUM_RESOLUTION: f64 = 0.1;

/// Relative tolerance under which two scores count as tied.
const SCORE_TIE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    /// Posterior variance at the arm's test points.
    Current,
    /// Conditional predictive variance: the variance left after one more
    /// look from the arm.
    Cpv,
}

impl fmt::Display for VarianceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VarianceMode::Current => "current",
            VarianceMode::Cpv => "cpv",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaForm {
    Decreasing,
    Increasing,
}

impl fmt::Display for BetaForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BetaForm::Decreasing => "decreasing",
            BetaForm::Increasing => "increasing",
        })
    }
}

/// `β(k) = γ·e^{λk} + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaSchedule {
    pub gamma: f64,
    pub lambda: f64,
    pub offset: f64,
}

impl BetaSchedule {
    pub const fn new(gamma: f64, lambda: f64, offset: f64) -> Self {
        Self { gamma, lambda, offset }
    }

    /// The four schedules used by the ablation, tuned per variance mode.
    pub fn preset(mode: VarianceMode, form: BetaForm) -> Self {
        match (mode, form) {
            (VarianceMode::Current, BetaForm::Decreasing) => Self::new(1.5, -0.05, 0.0),
            (VarianceMode::Cpv, BetaForm::Decreasing) => Self::new(10.0, -0.05, 0.0),
            (VarianceMode::Current, BetaForm::Increasing) => Self::new(-0.5, -0.05, 0.5),
            (VarianceMode::Cpv, BetaForm::Increasing) => Self::new(-10.0, -0.05, 10.0),
        }
    }

    pub fn form(&self) -> BetaForm {
        if self.gamma * self.lambda > 0.0 {
            BetaForm::Increasing
        } else {
            BetaForm::Decreasing
        }
    }

    /// Rejects schedules that go negative for some `k ≥ 1`.
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.lambda.is_finite() && self.offset.is_finite()) {
            return Err(Error::InvalidConfig("beta parameters must be finite".into()));
        }
        let at_one = self.gamma * self.lambda.exp() + self.offset;
        let lowest = if self.lambda < 0.0 {
            at_one.min(self.offset)
        } else if self.lambda > 0.0 && self.gamma < 0.0 {
            f64::NEG_INFINITY
        } else {
            at_one
        };
        if lowest < -1e-12 {
            return Err(Error::InvalidConfig(format!(
                "beta schedule {}·exp({}·k) + {} becomes negative",
                self.gamma, self.lambda, self.offset
            )));
        }
        Ok(())
    }
}

pub fn beta(k: usize, schedule: &BetaSchedule) -> f64 {
    schedule.gamma * (schedule.lambda * k as f64).exp() + schedule.offset
}

/// Restriction of the next-arm candidates around the current arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "WindowRepr", into = "WindowRepr")]
pub enum Window {
    Off,
    /// Radius in lattice steps.
    Radius(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum WindowRepr {
    Radius(u64),
    Word(String),
}

impl TryFrom<WindowRepr> for Window {
    type Error = String;

    fn try_from(r: WindowRepr) -> std::result::Result<Self, String> {
        match r {
            WindowRepr::Radius(n) => Ok(Window::Radius(n as usize)),
            WindowRepr::Word(w) if w == "off" => Ok(Window::Off),
            WindowRepr::Word(w) => Err(format!("window must be \"off\" or a radius, got {w:?}")),
        }
    }
}

impl From<Window> for WindowRepr {
    fn from(w: Window) -> Self {
        match w {
            Window::Off => WindowRepr::Word("off".into()),
            Window::Radius(r) => WindowRepr::Radius(r as u64),
        }
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Window::Off => f.write_str("off"),
            Window::Radius(r) => write!(f, "{r}"),
        }
    }
}

/// Which GP solver backs an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Inference {
    Exact,
    /// FITC with `inducing` points on a lattice over the extent.
    Sparse { inducing: usize },
}

impl Inference {
    /// `0` for exact inference, else the inducing-point count.
    pub fn inducing_count(&self) -> usize {
        match self {
            Inference::Exact => 0,
            Inference::Sparse { inducing } => *inducing,
        }
    }

    /// Fresh backend over the grid's test points.
    pub fn backend(
        &self,
        grid: &ArmGrid,
        hyper: &Hyperparams,
        expected_points: usize,
    ) -> Result<Box<dyn GpBackend>> {
        let test = grid.test_points().to_vec();
        Ok(match self {
            Inference::Exact => Box::new(ExactGp::with_capacity(
                test,
                hyper.clone(),
                expected_points.min(8192),
            )),
            Inference::Sparse { inducing } => {
                let z = select_inducing_points(&grid.extent(), &[], *inducing, InducingRule::Lattice)?;
                Box::new(SparseGp::new(test, z, hyper.clone())?)
            }
        })
    }
}

/// Budget and sensing cost shared by every strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeLimits {
    /// Total time budget `B`, seconds.
    pub budget: f64,
    /// Time to take one image `T_S`, seconds.
    pub sensing_time: f64,
    pub inference: Inference,
}

impl Default for EpisodeLimits {
    fn default() -> Self {
        Self {
            budget: 100.0,
            sensing_time: 2.0,
            inference: Inference::Exact,
        }
    }
}

impl EpisodeLimits {
    pub fn validate(&self) -> Result<()> {
        if !(self.budget > 0.0) || !self.budget.is_finite() {
            return Err(Error::InvalidConfig(format!("budget must be positive, got {}", self.budget)));
        }
        if !(self.sensing_time >= 0.0) || !self.sensing_time.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "sensing time must be non-negative, got {}",
                self.sensing_time
            )));
        }
        if self.inference == (Inference::Sparse { inducing: 0 }) {
            return Err(Error::InvalidConfig("sparse inference needs inducing > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    pub variance_mode: VarianceMode,
    pub window: Window,
    pub beta: BetaSchedule,
    pub inference: Inference,
    pub sensing_time: f64,
    pub budget: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self::variant(VarianceMode::Cpv, Window::Radius(1), BetaForm::Increasing)
    }
}

impl PlannerConfig {
    /// One cell of the ablation matrix with default budget and inference.
    pub fn variant(mode: VarianceMode, window: Window, form: BetaForm) -> Self {
        let limits = EpisodeLimits::default();
        Self {
            variance_mode: mode,
            window,
            beta: BetaSchedule::preset(mode, form),
            inference: limits.inference,
            sensing_time: limits.sensing_time,
            budget: limits.budget,
        }
    }

    pub fn limits(&self) -> EpisodeLimits {
        EpisodeLimits {
            budget: self.budget,
            sensing_time: self.sensing_time,
            inference: self.inference,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.beta.validate()?;
        self.limits().validate()
    }

    /// Short label such as `dcpv++` (window, variance mode, β form).
    pub fn label(&self) -> String {
        format!(
            "{}{}{}",
            if self.window == Window::Off { "" } else { "d" },
            match self.variance_mode {
                VarianceMode::Current => "cv",
                VarianceMode::Cpv => "cpv",
            },
            match self.beta.form() {
                BetaForm::Decreasing => "--",
                BetaForm::Increasing => "++",
            }
        )
    }
}

/// Time spent against a fixed budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetLedger {
    budget: f64,
    spent: f64,
}

impl BudgetLedger {
    pub fn new(budget: f64) -> Self {
        Self { budget, spent: 0.0 }
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn spent(&self) -> f64 {
        self.spent
    }

    pub fn remaining(&self) -> f64 {
        self.budget - self.spent
    }

    /// Charges `cost` if it fits; otherwise leaves the ledger untouched.
    pub fn try_spend(&mut self, cost: f64) -> bool {
        if self.spent + cost <= self.budget {
            self.spent += cost;
            true
        } else {
            false
        }
    }
}

/// Arms reachable from `current` under `window`.
///
/// Same level: Chebyshev lattice distance at most `r`. Adjacent levels:
/// arms whose nadir is within `r` times the larger of the two spacings of
/// the current nadir, per axis.
pub fn candidate_arms(grid: &ArmGrid, current: usize, window: Window) -> Vec<usize> {
    let r = match window {
        Window::Off => return (0..grid.len()).collect(),
        Window::Radius(r) => r,
    };
    let arm = grid.arm(current);
    let mut out = Vec::new();
    for level in arm.level.saturating_sub(1)..=(arm.level + 1).min(grid.levels().len() - 1) {
        if level == arm.level {
            let ri = r as isize;
            for dr in -ri..=ri {
                for dc in -ri..=ri {
                    if let Some(id) = grid.arm_at(level, arm.col as isize + dc, arm.row as isize + dr) {
                        out.push(id);
                    }
                }
            }
        } else {
            let reach = r as f64 * grid.spacing(level).max(grid.spacing(arm.level)) + 1e-9;
            for id in grid.level_arms(level) {
                let p = grid.arm(id).position;
                if (p.x - arm.position.x).abs() <= reach && (p.y - arm.position.y).abs() <= reach {
                    out.push(id);
                }
            }
        }
    }
    out.sort_unstable();
    out
}

/// Per-arm aggregate of the posterior at its test points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmScore {
    pub arm: usize,
    /// `μ̄ᵢ = Σ μ_l / Lᵢ`.
    pub mean: f64,
    /// `σ̄ᵢ = sqrt(Σ σ_l²) / Lᵢ`.
    pub sigma: f64,
    pub score: f64,
}

fn aggregate(arm: usize, mean: impl Iterator<Item = f64>, var: &[f64], beta: f64) -> ArmScore {
    let l = var.len() as f64;
    let mean = mean.sum::<f64>() / l;
    let sigma = var.iter().sum::<f64>().max(0.0).sqrt() / l;
    ArmScore {
        arm,
        mean,
        sigma,
        score: mean + beta * sigma,
    }
}

/// Scores `arms` from a live backend. Conditioned blocks are cached in
/// `tracker` between calls.
pub fn score_arms(
    gp: &dyn GpBackend,
    grid: &ArmGrid,
    arms: &[usize],
    mode: VarianceMode,
    beta: f64,
    tracker: &mut BlockTracker,
) -> Result<Vec<ArmScore>> {
    let mu = gp.mean();
    arms.iter()
        .map(|&id| {
            let idx = &grid.arm(id).test_indices;
            let var = match mode {
                VarianceMode::Current => idx.iter().map(|&i| gp.variance()[i]).collect(),
                VarianceMode::Cpv => tracker.cpv(gp, id, idx, model_noise(grid, gp.hyper(), id))?,
            };
            Ok(aggregate(id, idx.iter().map(|&i| mu[i]), &var, beta))
        })
        .collect()
}

/// Scores every arm from scratch with the one-shot solvers.
pub fn arm_scores(
    train: &TrainingSet,
    grid: &ArmGrid,
    hyper: &Hyperparams,
    mode: VarianceMode,
    beta: f64,
) -> Result<Vec<ArmScore>> {
    let post = posterior(train, grid.test_points(), hyper)?;
    grid.arms()
        .iter()
        .map(|arm| {
            let var = match mode {
                VarianceMode::Current => arm.test_indices.iter().map(|&i| post.variance[i]).collect(),
                VarianceMode::Cpv => conditional_predictive_variance(train, arm, grid, hyper)?,
            };
            Ok(aggregate(arm.id, arm.test_indices.iter().map(|&i| post.mean[i]), &var, beta))
        })
        .collect()
}

/// The noise the model assumes for a look from `arm`.
pub fn model_noise(grid: &ArmGrid, hyper: &Hyperparams, arm: usize) -> f64 {
    hyper
        .noise_variances
        .get(grid.arm(arm).level)
        .copied()
        .unwrap_or_else(|| grid.arm_noise(arm))
}

/// Argmax of `value` over `candidates`; ties go to the shorter flight, then
/// the lower arm id.
pub fn select_best(
    grid: &ArmGrid,
    from: &Point3,
    candidates: impl IntoIterator<Item = (usize, f64)>,
) -> Option<usize> {
    let mut best: Option<(usize, f64, f64)> = None;
    for (id, v) in candidates {
        let t = travel_time(from, &grid.arm(id).position);
        let better = match best {
            None => true,
            Some((bid, bv, bt)) => {
                let tol = SCORE_TIE * bv.abs().max(v.abs()).max(1.0);
                if v > bv + tol {
                    true
                } else if v >= bv - tol {
                    t < bt || (t == bt && id < bid)
                } else {
                    false
                }
            }
        };
        if better {
            best = Some((id, v, t));
        }
    }
    best.map(|(id, _, _)| id)
}

/// Closest arm to `from` among `arms` by flight time, lowest id on ties.
pub fn nearest_arm(grid: &ArmGrid, from: &Point3, arms: impl IntoIterator<Item = usize>) -> Option<usize> {
    select_best(grid, from, arms.into_iter().map(|id| (id, 0.0)))
}

/// What a strategy sees before choosing the next arm.
pub struct PlanState<'a> {
    pub grid: &'a ArmGrid,
    pub gp: &'a dyn GpBackend,
    pub position: Point3,
    /// Arm the vehicle sits at; `None` before the first image.
    pub current: Option<usize>,
    /// 1-based index of the image about to be taken.
    pub k: usize,
    pub last_batch: Option<&'a MeasurementBatch>,
    pub visited: &'a [usize],
}

/// A strategy's pick, with the planner's score terms when it has them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Choice {
    pub arm: usize,
    pub beta: Option<f64>,
    pub score: Option<f64>,
}

impl Choice {
    pub fn arm(arm: usize) -> Self {
        Self { arm, beta: None, score: None }
    }
}

/// A policy mapping the current state to the next arm.
pub trait Strategy {
    fn name(&self) -> String;

    fn next_arm(&mut self, state: &PlanState<'_>, rng: &mut dyn RngCore) -> Result<Choice>;
}

/// Multi-fidelity GP-UCB.
#[derive(Debug, Clone)]
pub struct Planner {
    pub config: PlannerConfig,
    tracker: BlockTracker,
}

impl Planner {
    pub fn new(config: PlannerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            tracker: BlockTracker::new(),
        })
    }
}

impl Strategy for Planner {
    fn name(&self) -> String {
        self.config.label()
    }

    fn next_arm(&mut self, state: &PlanState<'_>, _rng: &mut dyn RngCore) -> Result<Choice> {
        let Some(current) = state.current else {
            self.tracker = BlockTracker::new();
            let arm = nearest_arm(state.grid, &state.position, 0..state.grid.len())
                .ok_or_else(|| Error::InvalidConfig("arm grid is empty".into()))?;
            return Ok(Choice::arm(arm));
        };
        let b = beta(state.k, &self.config.beta);
        let candidates = candidate_arms(state.grid, current, self.config.window);
        let scores = score_arms(
            state.gp,
            state.grid,
            &candidates,
            self.config.variance_mode,
            b,
            &mut self.tracker,
        )?;
        let arm = select_best(state.grid, &state.position, scores.iter().map(|s| (s.arm, s.score)))
            .expect("candidate set contains the current arm");
        let score = scores.iter().find(|s| s.arm == arm).map(|s| s.score);
        Ok(Choice {
            arm,
            beta: Some(b),
            score,
        })
    }
}

/// Precomputed ground truth for the two metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricOracle {
    pub x_opt: Point2,
    pub f_opt: f64,
    /// True field value at each test point.
    pub truth: Vec<f64>,
    /// Arm maximizing the true average over its test points, and that average.
    pub best_arm: usize,
    pub best_arm_mean: f64,
}

impl MetricOracle {
    pub fn new(field: &ScalarField, grid: &ArmGrid) -> Result<Self> {
        let (x_opt, f_opt) = field.global_optimum(OPTIMUM_RESOLUTION)?;
        if !(f_opt > 0.0) {
            return Err(Error::InvalidConfig("field optimum must be positive".into()));
        }
        let truth: Vec<f64> = grid.test_points().iter().map(|p| field.value(p)).collect();
        let (best_arm, best_arm_mean) = argmax_arm_mean(grid, &truth);
        Ok(Self {
            x_opt,
            f_opt,
            truth,
            best_arm,
            best_arm_mean,
        })
    }

    pub fn point_metric(&self, field: &ScalarField, x_alg: &Point2) -> f64 {
        100.0 * field.value(x_alg) / self.f_opt
    }

    pub fn arm_metric(&self, grid: &ArmGrid, chosen_arm: usize) -> f64 {
        100.0 * arm_mean(grid, chosen_arm, &self.truth) / self.best_arm_mean
    }
}

/// Average of `values` over the arm's test points.
pub fn arm_mean(grid: &ArmGrid, arm: usize, values: &[f64]) -> f64 {
    let idx = &grid.arm(arm).test_indices;
    idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64
}

/// Arm with the largest average of `values` over its test points, lowest id
/// on ties.
pub fn argmax_arm_mean(grid: &ArmGrid, values: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for arm in grid.arms() {
        let m = arm_mean(grid, arm.id, values);
        if m > best.1 {
            best = (arm.id, m);
        }
    }
    best
}

/// `100·f(x_alg)/f(x_opt)` with the optimum found on a 0.1 m lattice.
pub fn point_metric(field: &ScalarField, x_alg: &Point2) -> Result<f64> {
    let (_, f_opt) = field.global_optimum(OPTIMUM_RESOLUTION)?;
    if !(f_opt > 0.0) {
        return Err(Error::InvalidConfig("field optimum must be positive".into()));
    }
    Ok(100.0 * field.value(x_alg) / f_opt)
}

/// True-field average over the chosen arm's test points relative to the best arm.
pub fn arm_metric(field: &ScalarField, grid: &ArmGrid, chosen_arm: usize) -> Result<f64> {
    Ok(MetricOracle::new(field, grid)?.arm_metric(grid, chosen_arm))
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub arm: usize,
    /// `NaN` for strategies without a β term.
    pub beta: f64,
    pub score: f64,
    /// Budget spent after this image.
    pub spent: f64,
    /// Flight plus sensing time charged for this step.
    pub cost: f64,
    /// GP update plus scoring for this step.
    pub gp_time_ms: f64,
    /// GP update alone.
    pub update_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub strategy: String,
    pub start: Point3,
    pub budget: f64,
    pub sensing_time: f64,
    pub steps: Vec<StepRecord>,
    pub measurements: usize,
    pub x_alg: Point2,
    pub alg_arm: usize,
    pub point_metric: f64,
    pub arm_metric: f64,
    /// Whole episode, seconds.
    pub wall_time: f64,
    /// Sum of the per-step GP time, milliseconds.
    pub gp_time_ms: f64,
}

impl EpisodeTrace {
    pub fn images(&self) -> usize {
        self.steps.len()
    }

    pub fn visited(&self) -> impl Iterator<Item = usize> + '_ {
        self.steps.iter().map(|s| s.arm)
    }

    /// Recomputes `Σ (T_T + T_S)` from the visit sequence.
    pub fn total_cost(&self, grid: &ArmGrid) -> f64 {
        let mut pos = self.start;
        let mut total = 0.0;
        for s in &self.steps {
            let next = grid.arm(s.arm).position;
            total += travel_time(&pos, &next) + self.sensing_time;
            pos = next;
        }
        total
    }

    /// Writes `k,arm,beta,score,spent,gp_time_ms` rows.
    pub fn write_step_log<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "arm", "beta", "score", "spent", "gp_time_ms"])?;
        for s in &self.steps {
            w.write_record(&[
                s.k.to_string(),
                s.arm.to_string(),
                s.beta.to_string(),
                s.score.to_string(),
                s.spent.to_string(),
                s.gp_time_ms.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Everything that stays fixed across the episodes of one environment.
#[derive(Clone, Copy)]
pub struct Scenario<'a> {
    pub field: &'a ScalarField,
    pub grid: &'a ArmGrid,
    pub hyper: &'a Hyperparams,
    pub oracle: &'a MetricOracle,
}

/// A uniformly random lowest-level arm position.
pub fn random_start<R: Rng + ?Sized>(grid: &ArmGrid, rng: &mut R) -> Point3 {
    let arms = grid.level_arms(0);
    grid.arm(rng.random_range(arms)).position
}

/// Runs `strategy` from `start` until it picks an arm the budget cannot pay for.
pub fn run_strategy(
    strategy: &mut dyn Strategy,
    scenario: Scenario<'_>,
    limits: &EpisodeLimits,
    start: Point3,
    rng: &mut dyn RngCore,
) -> Result<EpisodeTrace> {
    limits.validate()?;
    let clock = Instant::now();
    let Scenario { field, grid, hyper, oracle } = scenario;
    let max_images = if limits.sensing_time > 0.0 {
        (limits.budget / limits.sensing_time).floor() as usize + 1
    } else {
        64
    };
    let mut gp = limits
        .inference
        .backend(grid, hyper, max_images.saturating_mul(grid.pixels_per_image()))?;
    let mut ledger = BudgetLedger::new(limits.budget);
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut visited: Vec<usize> = Vec::new();
    let mut position = start;
    let mut current = None;
    let mut last_batch: Option<MeasurementBatch> = None;
    let mut pending_ms = 0.0;

    loop {
        let k = steps.len() + 1;
        let choose = Instant::now();
        let choice = {
            let state = PlanState {
                grid,
                gp: gp.as_ref(),
                position,
                current,
                k,
                last_batch: last_batch.as_ref(),
                visited: &visited,
            };
            strategy.next_arm(&state, rng)?
        };
        pending_ms += choose.elapsed().as_secs_f64() * 1e3;
        if choice.arm >= grid.len() {
            return Err(Error::InvalidConfig(format!("strategy chose unknown arm {}", choice.arm)));
        }
        let target = grid.arm(choice.arm);
        let cost = travel_time(&position, &target.position) + limits.sensing_time;
        if !ledger.try_spend(cost) {
            break;
        }
        position = target.position;
        current = Some(choice.arm);
        let batch = take_image(field, target, grid, rng);
        let update = Instant::now();
        gp.add_batch(&batch.pixel_locations, &batch.values, model_noise(grid, hyper, choice.arm))?;
        let update_ms = update.elapsed().as_secs_f64() * 1e3;
        let gp_ms = pending_ms + update_ms;
        pending_ms = 0.0;
        steps.push(StepRecord {
            k,
            arm: choice.arm,
            beta: choice.beta.unwrap_or(f64::NAN),
            score: choice.score.unwrap_or(f64::NAN),
            spent: ledger.spent(),
            cost,
            gp_time_ms: gp_ms,
            update_ms,
        });
        visited.push(choice.arm);
        last_batch = Some(batch);
    }

    let mean = gp.mean();
    let x_alg = grid.test_points()[argmax(mean)];
    let (alg_arm, _) = argmax_arm_mean(grid, mean);
    let gp_time_ms = steps.iter().map(|s| s.gp_time_ms).sum();
    Ok(EpisodeTrace {
        strategy: strategy.name(),
        start,
        budget: limits.budget,
        sensing_time: limits.sensing_time,
        measurements: gp.len(),
        x_alg,
        alg_arm,
        point_metric: oracle.point_metric(field, &x_alg),
        arm_metric: oracle.arm_metric(grid, alg_arm),
        steps,
        wall_time: clock.elapsed().as_secs_f64(),
        gp_time_ms,
    })
}

/// One planner episode from a random lowest-level start drawn from `rng`.
pub fn run_episode<R: RngCore>(
    field: &ScalarField,
    grid: &ArmGrid,
    hyper: &Hyperparams,
    config: &PlannerConfig,
    rng: &mut R,
) -> Result<EpisodeTrace> {
    let oracle = MetricOracle::new(field, grid)?;
    let mut planner = Planner::new(*config)?;
    let start = random_start(grid, rng);
    let scenario = Scenario {
        field,
        grid,
        hyper,
        oracle: &oracle,
    };
    run_strategy(&mut planner, scenario, &config.limits(), start, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Extent;
    use crate::sensing::{build_arm_grid, AltitudeLevel, NoiseModel};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn levels() -> Vec<AltitudeLevel> {
        let n = NoiseModel::default();
        vec![
            AltitudeLevel::new(10.0, 1.0, &n),
            AltitudeLevel::new(40.0, 4.0, &n),
            AltitudeLevel::new(70.0, 7.0, &n),
        ]
    }

    fn grid() -> ArmGrid {
        build_arm_grid(Extent::new(20.0, 20.0).unwrap(), &levels(), 3).unwrap()
    }

    #[test]
    fn beta_schedules() {
        let s = BetaSchedule::new(1.5, -0.05, 0.0);
        assert!((beta(0, &s) - 1.5).abs() < 1e-15);
        assert!(beta(2000, &s) < 1e-12);
        assert_eq!(s.form(), BetaForm::Decreasing);
        let up = BetaSchedule::new(-10.0, -0.05, 10.0);
        assert!((beta(2000, &up) - 10.0).abs() < 1e-9);
        assert_eq!(up.form(), BetaForm::Increasing);
        assert!(BetaSchedule::new(-1.0, -0.05, 0.5).validate().is_err());
        assert!(BetaSchedule::new(-1.0, 0.05, 100.0).validate().is_err());
        for mode in [VarianceMode::Current, VarianceMode::Cpv] {
            for form in [BetaForm::Decreasing, BetaForm::Increasing] {
                let p = BetaSchedule::preset(mode, form);
                assert!(p.validate().is_ok());
                assert_eq!(p.form(), form);
            }
        }
    }

    #[test]
    fn ledger_refuses_overrun() {
        let mut l = BudgetLedger::new(5.0);
        assert!(l.try_spend(3.0));
        assert!(!l.try_spend(2.5));
        assert!(l.try_spend(2.0));
        assert_eq!(l.spent(), 5.0);
        assert_eq!(l.remaining(), 0.0);
    }

    #[test]
    fn window_counts() {
        let g = grid();
        assert_eq!(candidate_arms(&g, 0, Window::Off).len(), g.len());
        // Interior lowest-level arm at (5, 5): 9 same-level arms plus the
        // middle-level arms within 4 m per axis.
        let id = g.arm_at(0, 5, 5).unwrap();
        let c = candidate_arms(&g, id, Window::Radius(1));
        let same = c.iter().filter(|&&a| g.arm(a).level == 0).count();
        let up = c.iter().filter(|&&a| g.arm(a).level == 1).count();
        assert_eq!(same, 9);
        assert!(up >= 1);
        assert!(c.iter().all(|&a| g.arm(a).level <= 1));
        assert!(c.contains(&id));
        // Corner.
        let corner = candidate_arms(&g, 0, Window::Radius(1));
        assert_eq!(corner.iter().filter(|&&a| g.arm(a).level == 0).count(), 4);
    }

    #[test]
    fn window_is_symmetric_between_adjacent_levels() {
        let g = grid();
        for a in 0..g.len() {
            for b in candidate_arms(&g, a, Window::Radius(1)) {
                assert!(candidate_arms(&g, b, Window::Radius(1)).contains(&a));
            }
        }
    }

    #[test]
    fn ties_prefer_short_flight_then_low_id() {
        let g = grid();
        let from = g.arm(5).position;
        let pick = select_best(&g, &from, [(0, 1.0), (5, 1.0), (6, 1.0)]).unwrap();
        assert_eq!(pick, 5);
        let pick = select_best(&g, &from, [(4, 1.0), (6, 1.0)]).unwrap();
        assert_eq!(pick, 4);
        let pick = select_best(&g, &from, [(4, 1.0), (100, 2.0)]).unwrap();
        assert_eq!(pick, 100);
    }

    #[test]
    fn prior_scores_are_uniform_in_current_mode() {
        let g = grid();
        let h = Hyperparams::default();
        let s = arm_scores(&TrainingSet::new(), &g, &h, VarianceMode::Current, 2.0).unwrap();
        for a in &s {
            let l = g.arm(a.arm).test_indices.len() as f64;
            assert!((a.score - 2.0 * (h.signal_variance * l).sqrt() / l).abs() < 1e-12);
        }
    }

    #[test]
    fn backend_scores_match_one_shot_scores() {
        let g = grid();
        let h = Hyperparams::default();
        let field = ScalarField::constant(g.extent(), 3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut gp = Inference::Exact.backend(&g, &h, 0).unwrap();
        let mut train = TrainingSet::new();
        for id in [3, 77, 402, 430] {
            let b = take_image(&field, g.arm(id), &g, &mut rng);
            gp.add_batch(&b.pixel_locations, &b.values, model_noise(&g, &h, id)).unwrap();
            for (p, y) in b.pixel_locations.iter().zip(&b.values) {
                train.push(*p, *y, model_noise(&g, &h, id));
            }
        }
        let all: Vec<usize> = (0..g.len()).collect();
        for mode in [VarianceMode::Current, VarianceMode::Cpv] {
            let a = score_arms(gp.as_ref(), &g, &all, mode, 3.0, &mut BlockTracker::new()).unwrap();
            let b = arm_scores(&train, &g, &h, mode, 3.0).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x.score - y.score).abs() < 1e-7, "{x:?} {y:?}");
            }
        }
    }

    #[test]
    fn budget_of_one_image() {
        let g = grid();
        let h = Hyperparams::default();
        let field = ScalarField::constant(g.extent(), 1.0).unwrap();
        let oracle = MetricOracle::new(&field, &g).unwrap();
        let scenario = Scenario {
            field: &field,
            grid: &g,
            hyper: &h,
            oracle: &oracle,
        };
        let start = g.arm(0).position;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let limits = EpisodeLimits {
            budget: 2.0,
            ..EpisodeLimits::default()
        };
        let mut p = Planner::new(PlannerConfig::default()).unwrap();
        let t = run_strategy(&mut p, scenario, &limits, start, &mut rng).unwrap();
        assert_eq!(t.images(), 1);
        assert_eq!(t.point_metric, 100.0);
        assert_eq!(t.arm_metric, 100.0);

        let tight = EpisodeLimits {
            budget: 1.0,
            ..EpisodeLimits::default()
        };
        let t = run_strategy(&mut p, scenario, &tight, start, &mut rng).unwrap();
        assert_eq!(t.images(), 0);
        assert_eq!(t.x_alg, g.test_points()[0]);
    }

    #[test]
    fn episodes_are_deterministic_and_within_budget() {
        let g = grid();
        let h = Hyperparams::default();
        let cfg = crate::field::FieldConfig { seed: 2, ..Default::default() };
        let field = crate::field::generate_random_field(&cfg).unwrap();
        let config = PlannerConfig::default();
        let a = run_episode(&field, &g, &h, &config, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = run_episode(&field, &g, &h, &config, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.visited().collect::<Vec<_>>(), b.visited().collect::<Vec<_>>());
        assert_eq!(a.x_alg, b.x_alg);
        assert!(a.total_cost(&g) <= config.budget);
        assert!(a.images() > 10);
        assert!(a.point_metric >= 0.0 && a.point_metric <= 100.0 + 1e-9);
    }
}
