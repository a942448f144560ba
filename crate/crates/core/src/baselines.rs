//! Comparison strategies run through the same episode loop as the planner.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::BlockTracker;
use crate::planner::{
    beta, model_noise, nearest_arm, score_arms, select_best, BetaSchedule, Choice, PlanState,
    Strategy, VarianceMode,
};
use crate::sensing::ArmGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Boustrophedon,
    GradientAscent,
    VarianceReduction,
    MutualInformation,
    BlockUcl,
}

impl BaselineKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BaselineKind::Boustrophedon => "boustrophedon",
            BaselineKind::GradientAscent => "gradient_ascent",
            BaselineKind::VarianceReduction => "variance_reduction",
            BaselineKind::MutualInformation => "mutual_information",
            BaselineKind::BlockUcl => "block_ucl",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    /// Level index; required by boustrophedon and gradient ascent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_level: Option<usize>,
    /// Block length growth factor for block UCL.
    #[serde(default = "default_growth")]
    pub block_growth: f64,
    /// Gradient norm below which gradient ascent stays put.
    #[serde(default = "default_gradient_tolerance")]
    pub gradient_tolerance: f64,
    /// β schedule of the block UCL index.
    #[serde(default = "default_ucl_beta")]
    pub ucl_beta: BetaSchedule,
}

fn default_growth() -> f64 {
    2.0
}

fn default_gradient_tolerance() -> f64 {
    1e-3
}

fn default_ucl_beta() -> BetaSchedule {
    BetaSchedule::preset(VarianceMode::Current, crate::planner::BetaForm::Increasing)
}

impl BaselineConfig {
    pub fn new(kind: BaselineKind) -> Self {
        Self {
            kind,
            fixed_level: None,
            block_growth: default_growth(),
            gradient_tolerance: default_gradient_tolerance(),
            ucl_beta: default_ucl_beta(),
        }
    }

    pub fn at_level(kind: BaselineKind, level: usize) -> Self {
        Self {
            fixed_level: Some(level),
            ..Self::new(kind)
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            BaselineKind::Boustrophedon | BaselineKind::GradientAscent if self.fixed_level.is_none() => {
                Err(Error::InvalidConfig(format!("{} needs fixed_level", self.kind.as_str())))
            }
            BaselineKind::BlockUcl if !(self.block_growth >= 1.0) => Err(Error::InvalidConfig(format!(
                "block_growth must be >= 1, got {}",
                self.block_growth
            ))),
            _ => self.ucl_beta.validate(),
        }
    }

    /// `kind` or `kind@level`.
    pub fn label(&self) -> String {
        match self.fixed_level {
            Some(l) => format!("{}@{l}", self.kind.as_str()),
            None => self.kind.as_str().to_string(),
        }
    }

    /// Builds the strategy, checking the level against `grid`.
    pub fn build(&self, grid: &ArmGrid) -> Result<Box<dyn Strategy + Send>> {
        self.validate()?;
        if let Some(l) = self.fixed_level {
            if l >= grid.levels().len() {
                return Err(Error::InvalidConfig(format!(
                    "fixed_level {l} out of range for {} levels",
                    grid.levels().len()
                )));
            }
        }
        let level = self.fixed_level.unwrap_or(0);
        Ok(match self.kind {
            BaselineKind::Boustrophedon => Box::new(Boustrophedon::new(grid, level)),
            BaselineKind::GradientAscent => Box::new(GradientAscent {
                level,
                tolerance: self.gradient_tolerance,
            }),
            BaselineKind::VarianceReduction => Box::new(VarianceReduction::default()),
            BaselineKind::MutualInformation => Box::new(MutualInformation::default()),
            BaselineKind::BlockUcl => Box::new(BlockUcl::new(self.block_growth, self.ucl_beta)),
        })
    }
}

/// Serpentine sweep of one level.
#[derive(Debug, Clone)]
pub struct Boustrophedon {
    level: usize,
    order: Vec<usize>,
    next: usize,
}

impl Boustrophedon {
    pub fn new(grid: &ArmGrid, level: usize) -> Self {
        Self {
            level,
            order: serpentine(grid, level),
            next: 0,
        }
    }
}

/// Row-major sweep of `level`, reversing direction on every other row.
pub fn serpentine(grid: &ArmGrid, level: usize) -> Vec<usize> {
    let (cols, rows) = grid.level_dims(level);
    let mut out = Vec::with_capacity(cols * rows);
    for r in 0..rows {
        for i in 0..cols {
            let c = if r % 2 == 0 { i } else { cols - 1 - i };
            out.push(grid.arm_at(level, c as isize, r as isize).expect("inside lattice"));
        }
    }
    out
}

impl Strategy for Boustrophedon {
    fn name(&self) -> String {
        format!("boustrophedon@{}", self.level)
    }

    fn next_arm(&mut self, _state: &PlanState<'_>, _rng: &mut dyn RngCore) -> Result<Choice> {
        // After a full sweep, start over.
        let arm = self.order[self.next % self.order.len()];
        self.next += 1;
        Ok(Choice::arm(arm))
    }
}

/// Least-squares plane `z = a + b·x + c·y`; `None` when the points do not
/// span two dimensions.
pub fn plane_gradient(points: &[crate::geom::Point2], values: &[f64]) -> Option<(f64, f64)> {
    let n = points.len() as f64;
    if points.len() < 3 {
        return None;
    }
    let mx = points.iter().map(|p| p.x).sum::<f64>() / n;
    let my = points.iter().map(|p| p.y).sum::<f64>() / n;
    let mz = values.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy, mut sxz, mut syz) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (p, z) in points.iter().zip(values) {
        let (dx, dy, dz) = (p.x - mx, p.y - my, z - mz);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
        sxz += dx * dz;
        syz += dy * dz;
    }
    let det = sxx * syy - sxy * sxy;
    if det <= 1e-12 * (sxx * syy).max(f64::MIN_POSITIVE) || sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(((syy * sxz - sxy * syz) / det, (sxx * syz - sxy * sxz) / det))
}

/// Hill climbing on one level using the plane fitted to the latest image.
#[derive(Debug, Clone)]
pub struct GradientAscent {
    level: usize,
    tolerance: f64,
}

impl Strategy for GradientAscent {
    fn name(&self) -> String {
        format!("gradient_ascent@{}", self.level)
    }

    fn next_arm(&mut self, state: &PlanState<'_>, rng: &mut dyn RngCore) -> Result<Choice> {
        let grid = state.grid;
        let (Some(current), Some(batch)) = (state.current, state.last_batch) else {
            let arm = nearest_arm(grid, &state.position, grid.level_arms(self.level))
                .expect("level is non-empty");
            return Ok(Choice::arm(arm));
        };
        let arm = grid.arm(current);
        let mut neighbors = Vec::with_capacity(8);
        for dr in -1..=1isize {
            for dc in -1..=1isize {
                if (dc, dr) == (0, 0) {
                    continue;
                }
                if let Some(id) = grid.arm_at(self.level, arm.col as isize + dc, arm.row as isize + dr) {
                    neighbors.push((id, dc as f64, dr as f64));
                }
            }
        }
        if neighbors.is_empty() {
            return Ok(Choice::arm(current));
        }
        let Some((gx, gy)) = plane_gradient(&batch.pixel_locations, &batch.values) else {
            let (id, _, _) = neighbors[rng.random_range(0..neighbors.len())];
            return Ok(Choice::arm(id));
        };
        let norm = (gx * gx + gy * gy).sqrt();
        if norm < self.tolerance {
            return Ok(Choice::arm(current));
        }
        let aligned = neighbors
            .iter()
            .map(|&(id, dc, dr)| (id, (dc * gx + dr * gy) / (norm * (dc * dc + dr * dr).sqrt())));
        Ok(Choice::arm(
            select_best(grid, &state.position, aligned).expect("non-empty neighbors"),
        ))
    }
}

/// Pure exploration: the arm with the largest conditional predictive σ̄.
#[derive(Debug, Clone, Default)]
pub struct VarianceReduction {
    tracker: BlockTracker,
}

impl Strategy for VarianceReduction {
    fn name(&self) -> String {
        "variance_reduction".into()
    }

    fn next_arm(&mut self, state: &PlanState<'_>, _rng: &mut dyn RngCore) -> Result<Choice> {
        let grid = state.grid;
        if state.current.is_none() {
            self.tracker = BlockTracker::new();
            return Ok(Choice::arm(nearest_arm(grid, &state.position, 0..grid.len()).expect("arms")));
        }
        let all: Vec<usize> = (0..grid.len()).collect();
        let scores = score_arms(state.gp, grid, &all, VarianceMode::Cpv, 0.0, &mut self.tracker)?;
        let arm = select_best(grid, &state.position, scores.iter().map(|s| (s.arm, s.sigma)))
            .expect("arms");
        Ok(Choice::arm(arm))
    }
}

/// Greedy information gain `½·log det(I + P_I / σ²)` of one more image.
#[derive(Debug, Clone, Default)]
pub struct MutualInformation {
    tracker: BlockTracker,
}

impl Strategy for MutualInformation {
    fn name(&self) -> String {
        "mutual_information".into()
    }

    fn next_arm(&mut self, state: &PlanState<'_>, _rng: &mut dyn RngCore) -> Result<Choice> {
        let grid = state.grid;
        if state.current.is_none() {
            self.tracker = BlockTracker::new();
            return Ok(Choice::arm(nearest_arm(grid, &state.position, 0..grid.len()).expect("arms")));
        }
        let gains = grid
            .arms()
            .iter()
            .map(|a| {
                let noise = model_noise(grid, state.gp.hyper(), a.id);
                let g = self.tracker.information_gain(state.gp, a.id, &a.test_indices, noise)?;
                Ok((a.id, g))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Choice::arm(select_best(grid, &state.position, gains).expect("arms")))
    }
}

/// UCL index reselected only at the end of geometrically growing blocks.
#[derive(Debug, Clone)]
pub struct BlockUcl {
    growth: f64,
    schedule: BetaSchedule,
    block: u32,
    remaining: usize,
    arm: Option<usize>,
}

impl BlockUcl {
    pub fn new(growth: f64, schedule: BetaSchedule) -> Self {
        Self {
            growth,
            schedule,
            block: 0,
            remaining: 0,
            arm: None,
        }
    }

    /// Images spent on block `b`: `⌈g^b⌉`.
    pub fn block_length(growth: f64, b: u32) -> usize {
        growth.powi(b as i32).ceil() as usize
    }
}

impl Strategy for BlockUcl {
    fn name(&self) -> String {
        "block_ucl".into()
    }

    fn next_arm(&mut self, state: &PlanState<'_>, _rng: &mut dyn RngCore) -> Result<Choice> {
        let grid = state.grid;
        if let (Some(arm), true) = (self.arm, self.remaining > 0) {
            self.remaining -= 1;
            return Ok(Choice::arm(arm));
        }
        let b = beta(state.k, &self.schedule);
        let (arm, score) = if state.current.is_none() {
            (nearest_arm(grid, &state.position, 0..grid.len()).expect("arms"), None)
        } else {
            let all: Vec<usize> = (0..grid.len()).collect();
            let scores = score_arms(state.gp, grid, &all, VarianceMode::Current, b, &mut BlockTracker::new())?;
            let arm = select_best(grid, &state.position, scores.iter().map(|s| (s.arm, s.score)))
                .expect("arms");
            (arm, Some(scores[arm].score))
        };
        self.remaining = Self::block_length(self.growth, self.block) - 1;
        self.block += 1;
        self.arm = Some(arm);
        Ok(Choice {
            arm,
            beta: Some(b),
            score,
        })
    }
}
