use crate::error::{Error, Result};
use crate::geom::Point2;

use super::linalg::{self, gemm};
use super::{se_kernel, Downdate, GpBackend, Hyperparams, TrainingSet};

/// Exact GP whose Cholesky factor grows by one block per image.
///
/// Besides the factor `L` of `K(X, X) + Q`, the state keeps
/// `V = L⁻¹ K(X, X*)` for the fixed test set, so a new batch of `m` points
/// costs `O(m·n² + m·n·|X*|)` instead of a full refactorization.
#[derive(Debug, Clone)]
pub struct ExactGp {
    hyper: Hyperparams,
    test: Vec<Point2>,
    train: TrainingSet,
    cap: usize,
    /// `cap × cap`, column-major, lower triangle valid for the leading `n`.
    chol: Vec<f64>,
    /// `L⁻¹ y`.
    alpha: Vec<f64>,
    /// `cap × |X*|`, column-major, leading `n` rows valid.
    proj: Vec<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
    last_batch: usize,
}

impl ExactGp {
    pub fn new(test: Vec<Point2>, hyper: Hyperparams) -> Self {
        Self::with_capacity(test, hyper, 0)
    }

    /// Pre-sizes storage for `capacity` training points.
    pub fn with_capacity(test: Vec<Point2>, hyper: Hyperparams, capacity: usize) -> Self {
        let t = test.len();
        Self {
            mean: vec![0.0; t],
            var: vec![hyper.signal_variance; t],
            hyper,
            test,
            train: TrainingSet::new(),
            cap: capacity,
            chol: vec![0.0; capacity * capacity],
            alpha: Vec::new(),
            proj: vec![0.0; capacity * t],
            last_batch: 0,
        }
    }

    fn grow(&mut self, needed: usize) {
        let new_cap = needed.max(self.cap + self.cap / 2);
        let n = self.train.len();
        let t = self.test.len();
        let mut chol = vec![0.0; new_cap * new_cap];
        for j in 0..n {
            chol[j * new_cap..j * new_cap + n].copy_from_slice(&self.chol[j * self.cap..j * self.cap + n]);
        }
        let mut proj = vec![0.0; new_cap * t];
        for c in 0..t {
            proj[c * new_cap..c * new_cap + n].copy_from_slice(&self.proj[c * self.cap..c * self.cap + n]);
        }
        self.chol = chol;
        self.proj = proj;
        self.cap = new_cap;
    }

    /// Lower Cholesky factor of `K(X, X) + Q`, as a dense column-major copy.
    pub fn cholesky_factor(&self) -> Vec<f64> {
        let n = self.train.len();
        let mut out = vec![0.0; n * n];
        for j in 0..n {
            for i in j..n {
                out[j * n + i] = self.chol[j * self.cap + i];
            }
        }
        out
    }
}

impl GpBackend for ExactGp {
    fn add_batch(&mut self, points: &[Point2], values: &[f64], noise: f64) -> Result<()> {
        if points.len() != values.len() {
            return Err(Error::InvalidConfig("batch points and values differ in length".into()));
        }
        let m = points.len();
        if m == 0 {
            return Ok(());
        }
        let n = self.train.len();
        if n + m > self.cap {
            self.grow(n + m);
        }
        let cap = self.cap;
        let t = self.test.len();
        let h = &self.hyper;

        // Cross block K(X_old, X_new), turned into L21ᵀ = L11⁻¹ K(X_old, X_new).
        let mut cross = vec![0.0; n * m];
        for (c, q) in points.iter().enumerate() {
            for (r, p) in self.train.points.iter().enumerate() {
                cross[c * n + r] = se_kernel(p, q, h);
            }
        }
        if n > 0 {
            linalg::solve_lower_in_place(&self.chol, cap, n, &mut cross, n, m);
        }

        // Schur complement of the new block.
        let mut schur = vec![0.0; m * m];
        for j in 0..m {
            for i in 0..m {
                schur[j * m + i] = se_kernel(&points[i], &points[j], h);
            }
            schur[j * m + j] += noise + h.jitter();
        }
        if n > 0 {
            gemm(m, n, m, -1.0, &cross, (n, 1), &cross, (1, n), 1.0, &mut schur, (1, m));
        }
        linalg::cholesky_in_place(&mut schur, m, m)?;

        for j in 0..n {
            for i in 0..m {
                self.chol[j * cap + n + i] = cross[i * n + j];
            }
        }
        for j in 0..m {
            for i in j..m {
                self.chol[(n + j) * cap + n + i] = schur[j * m + i];
            }
        }

        // α for the new rows.
        let mut alpha_new: Vec<f64> = (0..m)
            .map(|i| values[i] - linalg::dot(&cross[i * n..(i + 1) * n], &self.alpha))
            .collect();
        linalg::solve_lower_in_place(&schur, m, m, &mut alpha_new, m, 1);

        // New rows of V: L22⁻¹ (K(X_new, X*) − L21 V_old).
        for (c, x) in self.test.iter().enumerate() {
            for (i, q) in points.iter().enumerate() {
                self.proj[c * cap + n + i] = se_kernel(q, x, h);
            }
        }
        if n > 0 && t > 0 {
            assert!(self.proj.len() >= (t - 1) * cap + n + m);
            let base = self.proj.as_mut_ptr();
            // SAFETY: reads rows 0..n and writes rows n..n+m of each column;
            // the ranges are disjoint and bounded by the assert.
            unsafe {
                matrixmultiply::dgemm(
                    m,
                    n,
                    t,
                    -1.0,
                    cross.as_ptr(),
                    n as isize,
                    1,
                    base,
                    1,
                    cap as isize,
                    1.0,
                    base.add(n),
                    1,
                    cap as isize,
                );
            }
        }
        if t > 0 {
            linalg::solve_lower_in_place(&schur, m, m, &mut self.proj[n..], cap, t);
        }
        for c in 0..t {
            let rows = &self.proj[c * cap + n..c * cap + n + m];
            self.mean[c] += linalg::dot(rows, &alpha_new);
            self.var[c] = (self.var[c] - linalg::dot(rows, rows)).max(0.0);
        }

        self.alpha.extend_from_slice(&alpha_new);
        self.last_batch = m;
        for (p, y) in points.iter().zip(values) {
            self.train.push(*p, *y, noise);
        }
        Ok(())
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
        let l = indices.len();
        let n = self.train.len();
        let mut out = super::prior_block(&self.test, indices, &self.hyper);
        if n > 0 {
            let mut v = Vec::with_capacity(n * l);
            for &i in indices {
                v.extend_from_slice(&self.proj[i * self.cap..i * self.cap + n]);
            }
            gemm(l, n, l, -1.0, &v, (n, 1), &v, (1, n), 1.0, &mut out, (1, l));
        }
        out
    }

    fn training(&self) -> &TrainingSet {
        &self.train
    }

    fn last_downdate(&self) -> Option<Downdate<'_>> {
        let n = self.train.len();
        (self.last_batch > 0).then(|| Downdate {
            rows: self.last_batch,
            data: &self.proj,
            stride: self.cap,
            offset: n - self.last_batch,
        })
    }
}
