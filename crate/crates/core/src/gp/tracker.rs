//! Per-arm conditioned covariance kept current across sensing steps.
//!
//! With `A = P + s·I` for a posterior block `P` and look noise `s`, the
//! conditional predictive variance is `s − s²·diag(A⁻¹)` and the information
//! gain of the look is `½(log det A − L log s)`. The tracker stores `A⁻¹` and
//! `log det A` for every block it has been asked about and applies each
//! rank-`m` downdate `P ← P − RᵀR` with Woodbury and the determinant lemma,
//! so a step costs `O(m·L²)` per block instead of a fresh `O(L³)` solve.

use crate::error::Result;

use super::linalg::{self, gemm};
use super::GpBackend;

#[derive(Debug, Clone)]
struct Entry {
    indices: Vec<usize>,
    /// Look noise including jitter.
    noise: f64,
    /// `A⁻¹`, full symmetric, column-major.
    inv: Vec<f64>,
    log_det: f64,
}

impl Entry {
    fn build(gp: &dyn GpBackend, indices: &[usize], noise: f64) -> Result<Self> {
        let l = indices.len();
        let mut a = gp.covariance_block(indices);
        for i in 0..l {
            a[i * l + i] += noise;
        }
        linalg::cholesky_in_place(&mut a, l, l)?;
        let log_det = 2.0 * linalg::half_log_det(&a, l, l);
        let mut x = vec![0.0; l * l];
        for i in 0..l {
            x[i * l + i] = 1.0;
        }
        linalg::solve_lower_in_place(&a, l, l, &mut x, l, l);
        let mut inv = vec![0.0; l * l];
        gemm(l, l, l, 1.0, &x, (l, 1), &x, (1, l), 0.0, &mut inv, (1, l));
        Ok(Self {
            indices: indices.to_vec(),
            noise,
            inv,
            log_det,
        })
    }

    /// Applies `A ← A − RᵀR`; `false` if the update lost definiteness.
    fn downdate(&mut self, r: &super::Downdate<'_>) -> bool {
        let l = self.indices.len();
        let m = r.rows;
        // Rᵀ restricted to the block, l×m.
        let mut rt = vec![0.0; l * m];
        for row in 0..m {
            for (c, &i) in self.indices.iter().enumerate() {
                rt[row * l + c] = r.get(row, i);
            }
        }
        // G = A⁻¹ Rᵀ, S = I − R G.
        let mut g = vec![0.0; l * m];
        gemm(l, l, m, 1.0, &self.inv, (1, l), &rt, (1, l), 0.0, &mut g, (1, l));
        let mut s = vec![0.0; m * m];
        for i in 0..m {
            s[i * m + i] = 1.0;
        }
        gemm(m, l, m, -1.0, &rt, (l, 1), &g, (1, l), 1.0, &mut s, (1, m));
        if linalg::cholesky_in_place(&mut s, m, m).is_err() {
            return false;
        }
        // A⁻¹ += G S⁻¹ Gᵀ = HᵀH with H = L_S⁻¹ Gᵀ.
        let mut h = vec![0.0; m * l];
        for c in 0..l {
            for row in 0..m {
                h[c * m + row] = g[row * l + c];
            }
        }
        linalg::solve_lower_in_place(&s, m, m, &mut h, m, l);
        gemm(l, m, l, 1.0, &h, (m, 1), &h, (1, m), 1.0, &mut self.inv, (1, l));
        self.log_det += 2.0 * linalg::half_log_det(&s, m, m);
        true
    }

    fn cpv(&self) -> Vec<f64> {
        let l = self.indices.len();
        let s = self.noise;
        (0..l).map(|i| (s - s * s * self.inv[i * l + i]).max(0.0)).collect()
    }

    fn information_gain(&self) -> f64 {
        (0.5 * (self.log_det - self.indices.len() as f64 * self.noise.ln())).max(0.0)
    }
}

/// Cache of conditioned blocks, keyed by a caller-chosen id (usually the arm id).
///
/// Backends without [`GpBackend::last_downdate`] fall back to direct solves.
#[derive(Debug, Clone, Default)]
pub struct BlockTracker {
    entries: Vec<Option<Entry>>,
    seen: usize,
}

impl BlockTracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Brings every cached block up to date with `gp`.
    fn sync(&mut self, gp: &dyn GpBackend) {
        let n = gp.len();
        if n == self.seen {
            return;
        }
        match gp.last_downdate() {
            Some(d) if self.seen + d.rows == n => {
                for slot in &mut self.entries {
                    if let Some(e) = slot {
                        if !e.downdate(&d) {
                            *slot = None;
                        }
                    }
                }
            }
            _ => self.entries.clear(),
        }
        self.seen = n;
    }

    fn entry(&mut self, gp: &dyn GpBackend, key: usize, indices: &[usize], noise: f64) -> Result<&Entry> {
        self.sync(gp);
        if key >= self.entries.len() {
            self.entries.resize(key + 1, None);
        }
        let s = noise + gp.hyper().jitter();
        let stale = match &self.entries[key] {
            Some(e) => e.indices != indices || e.noise != s,
            None => true,
        };
        if stale {
            self.entries[key] = Some(Entry::build(gp, indices, s)?);
        }
        Ok(self.entries[key].as_ref().expect("entry just filled"))
    }

    fn cacheable(gp: &dyn GpBackend) -> bool {
        gp.is_empty() || gp.last_downdate().is_some()
    }

    /// Conditional predictive variance at `indices` for a look with `noise`.
    pub fn cpv(&mut self, gp: &dyn GpBackend, key: usize, indices: &[usize], noise: f64) -> Result<Vec<f64>> {
        if !Self::cacheable(gp) {
            return gp.cpv(indices, noise);
        }
        Ok(self.entry(gp, key, indices, noise)?.cpv())
    }

    /// `½ log det(I + P/σ²)` for the block at `indices`.
    pub fn information_gain(&mut self, gp: &dyn GpBackend, key: usize, indices: &[usize], noise: f64) -> Result<f64> {
        if !Self::cacheable(gp) {
            let l = indices.len();
            let block = gp.covariance_block(indices);
            return super::information_gain(&block, l, noise + gp.hyper().jitter());
        }
        Ok(self.entry(gp, key, indices, noise)?.information_gain())
    }
}
