//! Heteroscedastic Gaussian-process inference.
//!
//! Zero prior mean, squared-exponential kernel, and a diagonal noise matrix
//! whose entries depend on the altitude each measurement was taken from.
//! [`posterior`] and [`sparse_posterior`] are pure one-shot solvers;
//! [`ExactGp`] and [`SparseGp`] keep factorizations across sensing steps.

mod exact;
mod fit;
pub mod linalg;
mod sparse;
mod tracker;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point2;
use crate::sensing::{Arm, ArmGrid, MeasurementBatch};

pub use exact::ExactGp;
pub use fit::{fit_hyperparams, log_marginal_likelihood, FitOptions, LabeledTrainingSet};
pub use sparse::{select_inducing_points, sparse_posterior, InducingRule, SparseGp};
pub use tracker::BlockTracker;

/// Relative diagonal jitter added to every Gram matrix (`JITTER · σ_f²`).
pub const JITTER: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    pub length_scale: f64,
    pub signal_variance: f64,
    /// One measurement variance per altitude level, lowest level first.
    pub noise_variances: Vec<f64>,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            length_scale: 2.0,
            signal_variance: 100.0,
            noise_variances: vec![1.0, 2.5, 4.0],
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.length_scale > 0.0 && self.signal_variance > 0.0) {
            return Err(Error::InvalidConfig(
                "length scale and signal variance must be positive".into(),
            ));
        }
        if self.noise_variances.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidConfig("noise variances must be positive".into()));
        }
        if self.noise_variances.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidConfig(
                "noise variances must not decrease with altitude".into(),
            ));
        }
        Ok(())
    }

    pub fn jitter(&self) -> f64 {
        JITTER * self.signal_variance
    }
}

/// Squared-exponential covariance `σ_f² · exp(−‖x − x'‖² / (2ℓ²))`.
#[inline]
pub fn se_kernel(a: &Point2, b: &Point2, hyper: &Hyperparams) -> f64 {
    hyper.signal_variance * (-a.dist_sq(b) / (2.0 * hyper.length_scale * hyper.length_scale)).exp()
}

/// Observed pixel locations, values and per-point noise variances.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingSet {
    pub points: Vec<Point2>,
    pub values: Vec<f64>,
    pub noise: Vec<f64>,
}

impl TrainingSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, p: Point2, y: f64, noise: f64) {
        self.points.push(p);
        self.values.push(y);
        self.noise.push(noise);
    }

    pub fn extend_batch(&mut self, batch: &MeasurementBatch) {
        for (p, y) in batch.pixel_locations.iter().zip(&batch.values) {
            self.push(*p, *y, batch.noise_variance);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.points.len() || self.noise.len() != self.points.len() {
            return Err(Error::InvalidConfig("training set columns differ in length".into()));
        }
        if self.noise.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidConfig("noise variances must be non-negative".into()));
        }
        Ok(())
    }
}

/// Posterior mean and marginal variance at a list of test points.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Prior covariance `K(X*_I, X*_I)`, column-major.
fn prior_block(test: &[Point2], indices: &[usize], hyper: &Hyperparams) -> Vec<f64> {
    let l = indices.len();
    let mut out = vec![0.0; l * l];
    for b in 0..l {
        for a in b..l {
            let v = se_kernel(&test[indices[a]], &test[indices[b]], hyper);
            out[b * l + a] = v;
            out[a * l + b] = v;
        }
    }
    out
}

/// Dense column-major `K(X, X) + Q + jitter`.
fn noisy_gram(train: &TrainingSet, hyper: &Hyperparams) -> Vec<f64> {
    let n = train.len();
    let mut k = vec![0.0; n * n];
    for j in 0..n {
        for i in j..n {
            let v = se_kernel(&train.points[i], &train.points[j], hyper);
            k[j * n + i] = v;
            k[i * n + j] = v;
        }
        k[j * n + j] += train.noise[j] + hyper.jitter();
    }
    k
}

/// Exact posterior at `test_points` via a Cholesky factorization of
/// `K(X, X) + Q(X)`.
pub fn posterior(train: &TrainingSet, test_points: &[Point2], hyper: &Hyperparams) -> Result<Posterior> {
    train.validate()?;
    if test_points.is_empty() {
        return Err(Error::InvalidConfig("posterior needs at least one test point".into()));
    }
    let n = train.len();
    let t = test_points.len();
    if n == 0 {
        return Ok(Posterior {
            mean: vec![0.0; t],
            variance: vec![hyper.signal_variance; t],
        });
    }
    let mut l = noisy_gram(train, hyper);
    linalg::cholesky_in_place(&mut l, n, n)?;
    let mut alpha = train.values.clone();
    linalg::solve_lower_in_place(&l, n, n, &mut alpha, n, 1);
    // V = L⁻¹ K(X, X*), one column per test point.
    let mut v = vec![0.0; n * t];
    for (c, x) in test_points.iter().enumerate() {
        for (r, p) in train.points.iter().enumerate() {
            v[c * n + r] = se_kernel(p, x, hyper);
        }
    }
    linalg::solve_lower_in_place(&l, n, n, &mut v, n, t);
    let mut mean = Vec::with_capacity(t);
    let mut variance = Vec::with_capacity(t);
    for c in 0..t {
        let col = &v[c * n..(c + 1) * n];
        mean.push(linalg::dot(col, &alpha));
        variance.push((hyper.signal_variance - linalg::dot(col, col)).max(0.0));
    }
    Ok(Posterior { mean, variance })
}

/// Posterior variance at the arm's test points after additionally observing
/// each of them once at the arm's noise level. Existing rows keep their own
/// noise; the augmented system is factorized directly.
pub fn conditional_predictive_variance(
    train: &TrainingSet,
    arm: &Arm,
    grid: &ArmGrid,
    hyper: &Hyperparams,
) -> Result<Vec<f64>> {
    let noise = hyper
        .noise_variances
        .get(arm.level)
        .copied()
        .unwrap_or_else(|| grid.arm_noise(arm.id));
    let targets: Vec<Point2> = arm.test_indices.iter().map(|&i| grid.test_points()[i]).collect();
    cpv_at(train, &targets, noise, hyper)
}

/// [`conditional_predictive_variance`] for an explicit point list and noise.
pub fn cpv_at(train: &TrainingSet, targets: &[Point2], noise: f64, hyper: &Hyperparams) -> Result<Vec<f64>> {
    let mut augmented = train.clone();
    for p in targets {
        // Values do not enter the variance.
        augmented.push(*p, 0.0, noise);
    }
    Ok(posterior(&augmented, targets, hyper)?.variance)
}

/// Diagonal of `P − P (P + σ² I)⁻¹ P` for a posterior covariance block `P`
/// (column-major `l×l`): the variance left after one more look at every
/// point of the block with noise `σ²`.
pub fn conditioned_block_variance(block: &[f64], l: usize, noise: f64, jitter: f64) -> Result<Vec<f64>> {
    let mut a = block.to_vec();
    for i in 0..l {
        a[i * l + i] += noise + jitter;
    }
    linalg::cholesky_in_place(&mut a, l, l)?;
    let mut g = block.to_vec();
    linalg::solve_lower_in_place(&a, l, l, &mut g, l, l);
    Ok((0..l)
        .map(|c| {
            let col = &g[c * l..(c + 1) * l];
            (block[c * l + c] - linalg::dot(col, col)).max(0.0)
        })
        .collect())
}

/// `½ · log det(I + P / σ²)` for a covariance block.
pub fn information_gain(block: &[f64], l: usize, noise: f64) -> Result<f64> {
    if !noise.is_finite() {
        return Ok(0.0);
    }
    let mut a: Vec<f64> = block.iter().map(|v| v / noise).collect();
    for i in 0..l {
        a[i * l + i] += 1.0;
    }
    linalg::cholesky_in_place(&mut a, l, l)?;
    Ok(linalg::half_log_det(&a, l, l).max(0.0))
}

/// Incrementally updated posterior over a fixed set of test points.
pub trait GpBackend: Send {
    /// Appends one batch of measurements and refreshes the posterior.
    fn add_batch(&mut self, points: &[Point2], values: &[f64], noise: f64) -> Result<()>;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn hyper(&self) -> &Hyperparams;

    fn test_points(&self) -> &[Point2];

    /// Posterior mean at every test point.
    fn mean(&self) -> &[f64];

    /// Posterior marginal variance at every test point.
    fn variance(&self) -> &[f64];

    /// Posterior covariance among `indices`, column-major.
    fn covariance_block(&self, indices: &[usize]) -> Vec<f64>;

    /// Conditional predictive variance at `indices` for a look with `noise`.
    fn cpv(&self, indices: &[usize], noise: f64) -> Result<Vec<f64>> {
        let block = self.covariance_block(indices);
        conditioned_block_variance(&block, indices.len(), noise, self.hyper().jitter())
    }

    /// Training data seen so far.
    fn training(&self) -> &TrainingSet;

    /// Factor of the covariance change caused by the most recent batch, when
    /// the backend can express it as `P_new = P_old − RᵀR`.
    fn last_downdate(&self) -> Option<Downdate<'_>> {
        None
    }
}

/// `R` of a rank-`rows` covariance downdate; one column per test point.
#[derive(Debug, Clone, Copy)]
pub struct Downdate<'a> {
    pub rows: usize,
    data: &'a [f64],
    stride: usize,
    offset: usize,
}

impl Downdate<'_> {
    /// `R[row, test_index]`.
    #[inline]
    pub fn get(&self, row: usize, test_index: usize) -> f64 {
        self.data[test_index * self.stride + self.offset + row]
    }
}

/// Writes one `x,y,value,noise,mean,variance` snapshot: training rows first
/// (mean/variance empty), then test rows (value/noise empty).
pub fn write_debug_csv<W: Write>(out: W, gp: &dyn GpBackend) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["kind", "x", "y", "value", "noise", "mean", "variance"])?;
    let t = gp.training();
    for i in 0..t.len() {
        w.write_record(&[
            "train".to_string(),
            t.points[i].x.to_string(),
            t.points[i].y.to_string(),
            t.values[i].to_string(),
            t.noise[i].to_string(),
            String::new(),
            String::new(),
        ])?;
    }
    for (i, p) in gp.test_points().iter().enumerate() {
        w.write_record(&[
            "test".to_string(),
            p.x.to_string(),
            p.y.to_string(),
            String::new(),
            String::new(),
            gp.mean()[i].to_string(),
            gp.variance()[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
