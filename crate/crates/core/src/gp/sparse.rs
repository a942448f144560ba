//! FITC sparse approximation through a fixed set of inducing points.
//!
//! With `Lᵤ = chol(K_uu)`, `v_j = Lᵤ⁻¹ k_u(x_j)` and the exact diagonal
//! correction `Λ_j = σ_f² − ‖v_j‖² + σ²_j`, the state keeps
//! `A = I + Σ v_j v_jᵀ / Λ_j` and `b = Σ v_j y_j / Λ_j`. Each measurement
//! touches only the `S×S` system, so the cost of a batch is linear in the
//! number of points it contains.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Extent, Point2};

use super::linalg::{self, gemm};
use super::{se_kernel, GpBackend, Hyperparams, Posterior, TrainingSet};

#[derive(Debug, Clone)]
pub struct SparseGp {
    hyper: Hyperparams,
    test: Vec<Point2>,
    train: TrainingSet,
    inducing: Vec<Point2>,
    /// chol(K_uu + adaptive jitter), `S×S`.
    lu: Vec<f64>,
    /// `Lᵤ⁻¹ K(Z, X*)`, `S × |X*|`.
    w_test: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    /// `chol(A)⁻¹ W*`, refreshed after every batch.
    c_test: Vec<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl SparseGp {
    pub fn new(test: Vec<Point2>, inducing: Vec<Point2>, hyper: Hyperparams) -> Result<Self> {
        let s = inducing.len();
        if s == 0 {
            return Err(Error::InvalidConfig("sparse GP needs at least one inducing point".into()));
        }
        let t = test.len();
        let lu = inducing_factor(&inducing, &hyper)?;
        let mut w_test = vec![0.0; s * t];
        for (c, x) in test.iter().enumerate() {
            for (r, z) in inducing.iter().enumerate() {
                w_test[c * s + r] = se_kernel(z, x, &hyper);
            }
        }
        linalg::solve_lower_in_place(&lu, s, s, &mut w_test, s, t);
        let mut a = vec![0.0; s * s];
        for i in 0..s {
            a[i * s + i] = 1.0;
        }
        let mut gp = Self {
            mean: vec![0.0; t],
            var: vec![hyper.signal_variance; t],
            c_test: w_test.clone(),
            hyper,
            test,
            train: TrainingSet::new(),
            inducing,
            lu,
            w_test,
            a,
            b: vec![0.0; s],
        };
        gp.refresh()?;
        Ok(gp)
    }

    pub fn inducing(&self) -> &[Point2] {
        &self.inducing
    }

    /// Appends points with individual noise variances.
    pub fn add_points(&mut self, points: &[Point2], values: &[f64], noise: &[f64]) -> Result<()> {
        if points.len() != values.len() || points.len() != noise.len() {
            return Err(Error::InvalidConfig("batch columns differ in length".into()));
        }
        let m = points.len();
        if m == 0 {
            return Ok(());
        }
        let s = self.inducing.len();
        let h = &self.hyper;
        let mut v = vec![0.0; s * m];
        for (c, x) in points.iter().enumerate() {
            for (r, z) in self.inducing.iter().enumerate() {
                v[c * s + r] = se_kernel(z, x, h);
            }
        }
        linalg::solve_lower_in_place(&self.lu, s, s, &mut v, s, m);
        for c in 0..m {
            let col = &mut v[c * s..(c + 1) * s];
            let q = linalg::dot(col, col);
            let floor = noise[c] + h.jitter();
            let lambda = (h.signal_variance - q + floor).max(floor);
            let w = values[c] / lambda;
            for (bi, vi) in self.b.iter_mut().zip(col.iter()) {
                *bi += vi * w;
            }
            let scale = lambda.sqrt().recip();
            col.iter_mut().for_each(|x| *x *= scale);
        }
        gemm(s, m, s, 1.0, &v, (1, s), &v, (s, 1), 1.0, &mut self.a, (1, s));
        for (p, (y, nz)) in points.iter().zip(values.iter().zip(noise)) {
            self.train.push(*p, *y, *nz);
        }
        self.refresh()
    }

    fn refresh(&mut self) -> Result<()> {
        let s = self.inducing.len();
        let t = self.test.len();
        let mut la = self.a.clone();
        linalg::cholesky_in_place(&mut la, s, s)?;
        let mut beta = self.b.clone();
        linalg::solve_lower_in_place(&la, s, s, &mut beta, s, 1);
        linalg::solve_upper_transposed(&la, s, s, &mut beta);
        self.c_test.copy_from_slice(&self.w_test);
        linalg::solve_lower_in_place(&la, s, s, &mut self.c_test, s, t);
        for c in 0..t {
            let w = &self.w_test[c * s..(c + 1) * s];
            let ct = &self.c_test[c * s..(c + 1) * s];
            self.mean[c] = linalg::dot(w, &beta);
            self.var[c] =
                (self.hyper.signal_variance - linalg::dot(w, w) + linalg::dot(ct, ct)).max(0.0);
        }
        Ok(())
    }
}

/// Cholesky factor of `K_uu`, with the smallest diagonal jitter (none, then
/// `1e-10·σ_f²` stepping up by 10× to `1e-6·σ_f²`) that keeps it positive
/// definite.
fn inducing_factor(inducing: &[Point2], hyper: &Hyperparams) -> Result<Vec<f64>> {
    let s = inducing.len();
    let mut gram = vec![0.0; s * s];
    for j in 0..s {
        for i in 0..s {
            gram[j * s + i] = se_kernel(&inducing[i], &inducing[j], hyper);
        }
    }
    let mut scale = 0.0;
    loop {
        let mut lu = gram.clone();
        for j in 0..s {
            lu[j * s + j] += scale * hyper.signal_variance;
        }
        match linalg::cholesky_in_place(&mut lu, s, s) {
            Ok(()) => return Ok(lu),
            Err(e) if scale >= 1e-6 => return Err(e),
            Err(_) if scale == 0.0 => scale = 1e-10,
            Err(_) => scale *= 10.0,
        }
    }
}

impl GpBackend for SparseGp {
    fn add_batch(&mut self, points: &[Point2], values: &[f64], noise: f64) -> Result<()> {
        let noise = vec![noise; points.len()];
        self.add_points(points, values, &noise)
    }

    fn len(&self) -> usize {
        self.train.len()
    }

    fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    fn test_points(&self) -> &[Point2] {
        &self.test
    }

    fn mean(&self) -> &[f64] {
        &self.mean
    }

    fn variance(&self) -> &[f64] {
        &self.var
    }

    fn covariance_block(&self, indices: &[usize]) -> Vec<f64> {
        let s = self.inducing.len();
        let l = indices.len();
        let mut out = super::prior_block(&self.test, indices, &self.hyper);
        let mut w = Vec::with_capacity(s * l);
        let mut c = Vec::with_capacity(s * l);
        for &i in indices {
            w.extend_from_slice(&self.w_test[i * s..(i + 1) * s]);
            c.extend_from_slice(&self.c_test[i * s..(i + 1) * s]);
        }
        gemm(l, s, l, -1.0, &w, (s, 1), &w, (1, s), 1.0, &mut out, (1, l));
        gemm(l, s, l, 1.0, &c, (s, 1), &c, (1, s), 1.0, &mut out, (1, l));
        out
    }

    fn training(&self) -> &TrainingSet {
        &self.train
    }
}

/// One-shot FITC posterior.
pub fn sparse_posterior(
    train: &TrainingSet,
    test_points: &[Point2],
    inducing: &[Point2],
    hyper: &Hyperparams,
) -> Result<Posterior> {
    train.validate()?;
    let mut gp = SparseGp::new(test_points.to_vec(), inducing.to_vec(), hyper.clone())?;
    gp.add_points(&train.points, &train.values, &train.noise)?;
    Ok(Posterior {
        mean: gp.mean,
        variance: gp.var,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InducingRule {
    /// Cell-centered lattice over the extent with about `S` points.
    Lattice,
    /// Lloyd's k-means on the training locations, seeded.
    KMeans { seed: u64 },
}

/// Chooses `s` inducing locations by `rule`.
pub fn select_inducing_points(
    extent: &Extent,
    training: &[Point2],
    s: usize,
    rule: InducingRule,
) -> Result<Vec<Point2>> {
    if s == 0 {
        return Err(Error::InvalidConfig("need at least one inducing point".into()));
    }
    match rule {
        InducingRule::Lattice => {
            let aspect = extent.width / extent.height;
            let nx = ((s as f64 * aspect).sqrt().round() as usize).max(1);
            let ny = ((s as f64 / nx as f64).round() as usize).max(1);
            let (dx, dy) = (extent.width / nx as f64, extent.height / ny as f64);
            let mut out = Vec::with_capacity(nx * ny);
            for j in 0..ny {
                for i in 0..nx {
                    out.push(Point2::new(
                        extent.min.x + (i as f64 + 0.5) * dx,
                        extent.min.y + (j as f64 + 0.5) * dy,
                    ));
                }
            }
            Ok(out)
        }
        InducingRule::KMeans { seed } => Ok(kmeans(training, s, seed)),
    }
}

fn kmeans(points: &[Point2], s: usize, seed: u64) -> Vec<Point2> {
    let mut distinct: Vec<Point2> = Vec::new();
    for p in points {
        if !distinct.iter().any(|q| q.dist_sq(p) == 0.0) {
            distinct.push(*p);
        }
    }
    if s >= distinct.len() {
        return distinct;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    distinct.shuffle(&mut rng);
    let mut centers: Vec<Point2> = distinct[..s].to_vec();
    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..50 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = (0..s)
                .min_by(|&a, &b| p.dist_sq(&centers[a]).total_cmp(&p.dist_sq(&centers[b])))
                .expect("s >= 1");
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![(0.0, 0.0, 0usize); s];
        for (p, &c) in points.iter().zip(&assign) {
            sums[c].0 += p.x;
            sums[c].1 += p.y;
            sums[c].2 += 1;
        }
        for (c, (sx, sy, k)) in sums.into_iter().enumerate() {
            if k > 0 {
                centers[c] = Point2::new(sx / k as f64, sy / k as f64);
            }
        }
        if !changed {
            break;
        }
    }
    centers
}
