//! Column-major dense kernels used by the GP solvers.
//!
//! Matrices are `&[f64]` slices with an explicit leading dimension `ld`:
//! element `(i, j)` lives at `j * ld + i`. Blocked variants push the bulk of
//! the work through `matrixmultiply::dgemm`.

use crate::error::{Error, Result};

const BLOCK: usize = 64;

/// `C[m×n] = alpha · A[m×k] · B[k×n] + beta · C` with arbitrary strides.
///
/// Strides are `(row stride, column stride)` in elements.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    beta: f64,
    c: &mut [f64],
    c_strides: (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, (rs, cs): (usize, usize)| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs + (cols - 1) * cs + 1
        }
    };
    assert!(a.len() >= last(m, k, a_strides), "gemm: A too short");
    assert!(b.len() >= last(k, n, b_strides), "gemm: B too short");
    assert!(c.len() >= last(m, n, c_strides), "gemm: C too short");
    // SAFETY: the asserts above bound every element matrixmultiply touches,
    // and `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            c_strides.0 as isize,
            c_strides.1 as isize,
        );
    }
}

fn chol_unblocked(a: &mut [f64], n: usize, ld: usize, offset: usize) -> Result<()> {
    for j in 0..n {
        let cj = (offset + j) * ld + offset;
        let mut d = a[cj + j];
        for p in 0..j {
            let v = a[(offset + p) * ld + offset + j];
            d -= v * v;
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { size: n });
        }
        let ljj = d.sqrt();
        a[cj + j] = ljj;
        for i in j + 1..n {
            let mut s = a[cj + i];
            for p in 0..j {
                let cp = (offset + p) * ld + offset;
                s -= a[cp + i] * a[cp + j];
            }
            a[cj + i] = s / ljj;
        }
    }
    Ok(())
}

/// In-place lower Cholesky of the leading `n×n` block. Only the lower
/// triangle is referenced; the strict upper triangle is left unspecified.
pub fn cholesky_in_place(a: &mut [f64], n: usize, ld: usize) -> Result<()> {
    let mut k0 = 0;
    while k0 < n {
        let kb = BLOCK.min(n - k0);
        chol_unblocked(a, kb, ld, k0).map_err(|_| Error::NotPositiveDefinite { size: n })?;
        let rest = n - k0 - kb;
        if rest > 0 {
            // Panel: A21 ← A21 · L11⁻ᵀ, one column at a time.
            for j in 0..kb {
                let col_j = (k0 + j) * ld;
                let ljj = a[col_j + k0 + j];
                for p in 0..j {
                    let col_p = (k0 + p) * ld;
                    let ljp = a[col_p + k0 + j];
                    if ljp != 0.0 {
                        for i in k0 + kb..n {
                            a[col_j + i] -= a[col_p + i] * ljp;
                        }
                    }
                }
                for i in k0 + kb..n {
                    a[col_j + i] /= ljj;
                }
            }
            // Trailing update: A22 ← A22 − A21 · A21ᵀ.
            let (head, tail) = a.split_at_mut((k0 + kb) * ld);
            let panel = &head[k0 * ld + k0 + kb..];
            let trailing = &mut tail[k0 + kb..];
            gemm(rest, kb, rest, -1.0, panel, (1, ld), panel, (ld, 1), 1.0, trailing, (1, ld));
        }
        k0 += kb;
    }
    Ok(())
}

/// Solves `L · X = B` in place, with `L` the lower `n×n` factor (leading
/// dimension `ld_l`) and `B` an `n×m` block (leading dimension `ld_b`).
pub fn solve_lower_in_place(l: &[f64], ld_l: usize, n: usize, b: &mut [f64], ld_b: usize, m: usize) {
    let mut i0 = 0;
    while i0 < n {
        let ib = BLOCK.min(n - i0);
        if i0 > 0 && m > 0 {
            // B[i0.., :] -= L[i0.., 0..i0] · X[0..i0, :]
            assert!(b.len() >= (m - 1) * ld_b + i0 + ib && l.len() >= (i0 - 1) * ld_l + i0 + ib);
            let base = b.as_mut_ptr();
            // SAFETY: rows 0..i0 (read) and rows i0..i0+ib (written) of every
            // column are disjoint, and the assert bounds both ranges.
            unsafe {
                matrixmultiply::dgemm(
                    ib,
                    i0,
                    m,
                    -1.0,
                    l.as_ptr().add(i0),
                    1,
                    ld_l as isize,
                    base,
                    1,
                    ld_b as isize,
                    1.0,
                    base.add(i0),
                    1,
                    ld_b as isize,
                );
            }
        }
        for c in 0..m {
            let col = c * ld_b;
            for i in i0..i0 + ib {
                let mut s = b[col + i];
                for p in i0..i {
                    s -= l[p * ld_l + i] * b[col + p];
                }
                b[col + i] = s / l[i * ld_l + i];
            }
        }
        i0 += ib;
    }
}

/// Solves `Lᵀ · x = b` in place for a single vector.
pub fn solve_upper_transposed(l: &[f64], ld: usize, n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let col = i * ld;
        let mut s = b[i];
        for p in i + 1..n {
            s -= l[col + p] * b[p];
        }
        b[i] = s / l[col + i];
    }
}

/// `Σ log L_ii` of a Cholesky factor, i.e. half the log-determinant.
pub fn half_log_det(l: &[f64], ld: usize, n: usize) -> f64 {
    (0..n).map(|i| l[i * ld + i].ln()).sum()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
