//! Offline hyperparameter fitting by log marginal likelihood.

use crate::error::{Error, Result};
use crate::geom::Point2;

use super::{linalg, Hyperparams, TrainingSet};

/// Training data whose rows remember which altitude level produced them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledTrainingSet {
    pub points: Vec<Point2>,
    pub values: Vec<f64>,
    pub levels: Vec<usize>,
}

impl LabeledTrainingSet {
    pub fn push(&mut self, p: Point2, y: f64, level: usize) {
        self.points.push(p);
        self.values.push(y);
        self.levels.push(level);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn with_noise(&self, noise: &[f64]) -> TrainingSet {
        TrainingSet {
            points: self.points.clone(),
            values: self.values.clone(),
            noise: self.levels.iter().map(|&l| noise[l]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Initial length scales; one coordinate search is run from each.
    pub initial_length_scales: Vec<f64>,
    /// Initial step in log space.
    pub initial_step: f64,
    /// Search stops once the step falls below this.
    pub tolerance: f64,
    pub max_evaluations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            initial_length_scales: vec![0.5, 2.0, 8.0],
            initial_step: 1.0,
            tolerance: 1e-3,
            max_evaluations: 2_000,
        }
    }
}

const SIGNAL_FLOOR: f64 = 1e-6;
const NOISE_FLOOR: f64 = 1e-6;
const LOG_BOUNDS: [(f64, f64); 3] = [
    (-4.605_170_185_988_091, 6.907_755_278_982_137), // ℓ ∈ [1e-2, 1e3]
    (-13.815_510_557_964_274, 18.420_680_743_952_367), // σ_f² ∈ [1e-6, 1e8]
    (-13.815_510_557_964_274, 18.420_680_743_952_367), // σ² ∈ [1e-6, 1e8]
];

/// `log p(y | X, θ)` for the heteroscedastic zero-mean model.
pub fn log_marginal_likelihood(train: &TrainingSet, hyper: &Hyperparams) -> Result<f64> {
    let n = train.len();
    let mut k = vec![0.0; n * n];
    for j in 0..n {
        for i in j..n {
            k[j * n + i] = super::se_kernel(&train.points[i], &train.points[j], hyper);
        }
        k[j * n + j] += train.noise[j] + hyper.jitter();
    }
    linalg::cholesky_in_place(&mut k, n, n)?;
    let mut alpha = train.values.clone();
    linalg::solve_lower_in_place(&k, n, n, &mut alpha, n, 1);
    Ok(-0.5 * linalg::dot(&alpha, &alpha)
        - linalg::half_log_det(&k, n, n)
        - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// Pool-adjacent-violators: the least-squares non-decreasing fit.
fn isotonic(values: &mut [f64]) {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values.iter() {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (b, nb) = blocks[blocks.len() - 1];
            let (a, na) = blocks[blocks.len() - 2];
            if a <= b {
                break;
            }
            blocks.pop();
            let last = blocks.last_mut().expect("two blocks");
            *last = ((a * na as f64 + b * nb as f64) / (na + nb) as f64, na + nb);
        }
    }
    let mut i = 0;
    for (v, k) in blocks {
        for x in &mut values[i..i + k] {
            *x = v;
        }
        i += k;
    }
}

fn decode(theta: &[f64]) -> Hyperparams {
    Hyperparams {
        length_scale: theta[0].exp(),
        signal_variance: theta[1].exp().max(SIGNAL_FLOOR),
        noise_variances: theta[2..].iter().map(|v| v.exp().max(NOISE_FLOOR)).collect(),
    }
}

fn project(theta: &mut [f64]) {
    for (i, t) in theta.iter_mut().enumerate() {
        let (lo, hi) = LOG_BOUNDS[i.min(2)];
        *t = t.clamp(lo, hi);
    }
    isotonic(&mut theta[2..]);
}

/// Maximizes the log marginal likelihood over `(log ℓ, log σ_f², log σ²_level…)`
/// with a multi-start coordinate search. Noise variances are kept
/// non-decreasing in level order by isotonic projection after every move.
pub fn fit_hyperparams(data: &LabeledTrainingSet, options: &FitOptions) -> Result<Hyperparams> {
    if data.len() < 3 {
        return Err(Error::InvalidConfig("fitting needs at least 3 observations".into()));
    }
    if data.values.len() != data.len() || data.levels.len() != data.len() {
        return Err(Error::InvalidConfig("labeled training set columns differ in length".into()));
    }
    let levels = data.levels.iter().max().map_or(0, |m| m + 1);
    for l in 0..levels {
        if !data.levels.contains(&l) {
            return Err(Error::InvalidConfig(format!("no observations for level {l}")));
        }
    }
    let n = data.len() as f64;
    let mean = data.values.iter().sum::<f64>() / n;
    let second = data.values.iter().map(|y| y * y).sum::<f64>() / n;
    let spread = data.values.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
    let signal0 = second.max(SIGNAL_FLOOR);
    let noise0 = (0.1 * spread).max(NOISE_FLOOR);

    let objective = |theta: &[f64]| -> f64 {
        let h = decode(theta);
        let t = data.with_noise(&h.noise_variances);
        log_marginal_likelihood(&t, &h).unwrap_or(f64::NEG_INFINITY)
    };

    let mut best: Option<(f64, Vec<f64>)> = None;
    for &ell in &options.initial_length_scales {
        let mut theta = vec![ell.ln(), signal0.ln()];
        theta.extend(std::iter::repeat_n(noise0.ln(), levels));
        project(&mut theta);
        let mut value = objective(&theta);
        let mut step = options.initial_step;
        let mut evaluations = 1;
        while step >= options.tolerance && evaluations < options.max_evaluations {
            let mut improved = false;
            for i in 0..theta.len() {
                for dir in [1.0, -1.0] {
                    let mut cand = theta.clone();
                    cand[i] += dir * step;
                    project(&mut cand);
                    let v = objective(&cand);
                    evaluations += 1;
                    if v > value {
                        theta = cand;
                        value = v;
                        improved = true;
                        break;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        if best.as_ref().is_none_or(|(bv, _)| value > *bv) {
            best = Some((value, theta));
        }
    }
    let (value, theta) = best.expect("at least one start");
    if !value.is_finite() {
        return Err(Error::NotPositiveDefinite { size: data.len() });
    }
    Ok(decode(&theta))
}
