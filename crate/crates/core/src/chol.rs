//! Dense Cholesky factorization `A = RᵀR` with upper-triangular `R`, triangular
//! solves, and block-recursive insertion/removal of a row/column.
//!
//! Insertion and removal follow the block formulas for a partitioned factor:
//!
//! ```text
//! insert at p:  S11 = R11            S22 = chol(K22 − S12ᵀS12)
//!               S12 = R11ᵀ \ K12     S23 = S22ᵀ \ (K23 − S12ᵀS13)
//!               S13 = R13            S33 = chol(R33ᵀR33 − S23ᵀS23)
//!
//! remove p:     S11 = R11,  S13 = R13,  S33 = chol(R23ᵀR23 + R33ᵀR33)
//! ```
//!
//! Appending (`p = n`) leaves no trailing block, so it costs one triangular
//! solve of size `n`. Removing position 0 refactorizes everything else.

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, Matrix};

/// Pivots below this trigger the jitter retry.
pub const PIVOT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CholFactor {
    r: Matrix,
    /// Diagonal jitter applied when a pivot drops below [`PIVOT_FLOOR`].
    jitter: f64,
}

impl CholFactor {
    pub fn empty() -> Self {
        Self::empty_with_jitter(0.0)
    }

    pub fn empty_with_jitter(jitter: f64) -> Self {
        Self {
            r: Matrix::zeros(0, 0),
            jitter,
        }
    }

    pub fn factorize(a: &Matrix) -> Result<Self> {
        Self::factorize_with_jitter(a, 0.0)
    }

    /// Factorizes `a`; if any pivot falls below [`PIVOT_FLOOR`] and `jitter > 0`,
    /// retries once with `jitter` added to every diagonal entry.
    pub fn factorize_with_jitter(a: &Matrix, jitter: f64) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch {
                expected: a.rows(),
                found: a.cols(),
            });
        }
        let r = chol_upper(a, 0.0, jitter > 0.0).or_else(|e| {
            if jitter > 0.0 {
                chol_upper(a, jitter, false)
            } else {
                Err(e)
            }
        })?;
        Ok(Self { r, jitter })
    }

    pub fn n(&self) -> usize {
        self.r.rows()
    }

    pub fn r(&self) -> &Matrix {
        &self.r
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `RᵀR`.
    pub fn reconstruct(&self) -> Matrix {
        self.r.transpose().matmul(&self.r)
    }

    /// `log|A| = 2 Σ log r_ii`.
    pub fn log_det(&self) -> f64 {
        (0..self.n()).map(|i| self.r[(i, i)].ln()).sum::<f64>() * 2.0
    }

    /// Solves `Rᵀ y = b` (forward substitution).
    pub fn solve_lower(&self, b: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n(), b.len())?;
        Ok(forward_sub(&self.r, b, self.n()))
    }

    /// Solves `R x = y` (back substitution).
    pub fn solve_upper(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n(), y.len())?;
        let n = self.n();
        let mut x = y.to_vec();
        for i in (0..n).rev() {
            let row = self.r.row(i);
            let s = dot(&row[i + 1..], &x[i + 1..]);
            x[i] = (x[i] - s) / row[i];
        }
        Ok(x)
    }

    /// Solves `(RᵀR) x = b` as `R \ (Rᵀ \ b)`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let y = self.solve_lower(b)?;
        self.solve_upper(&y)
    }

    /// Factor of the matrix obtained by inserting a row/column at `position`.
    ///
    /// `new_col` holds the off-diagonal entries of the new column in the
    /// *current* index order (length `n`), `new_diag` its diagonal entry.
    pub fn insert(&self, new_col: &[f64], new_diag: f64, position: usize) -> Result<CholFactor> {
        let n = self.n();
        check_dim(n, new_col.len())?;
        if position > n {
            return Err(Error::OutOfBounds {
                index: position,
                len: n + 1,
            });
        }
        let p = position;
        let m = n - p;

        // S12 = R11ᵀ \ K12
        let s12 = forward_sub(&self.r, &new_col[..p], p);

        // S22 = chol(K22 − S12ᵀS12)
        let pivot = new_diag - dot(&s12, &s12);
        let s22 = self.pivot_sqrt(pivot, p)?;

        // S23 = S22ᵀ \ (K23 − S12ᵀS13), S13 = R[0..p, p..n]
        let mut s23 = new_col[p..].to_vec();
        for (i, s) in s12.iter().enumerate() {
            let row = &self.r.row(i)[p..];
            for (t, rij) in s23.iter_mut().zip(row) {
                *t -= s * rij;
            }
        }
        for t in &mut s23 {
            *t /= s22;
        }

        // S33 = chol(R33ᵀR33 − S23ᵀS23)
        let s33 = if m > 0 {
            let r33 = self.r.block(p, n, p, n);
            let mut k33 = r33.transpose().matmul(&r33);
            for i in 0..m {
                for j in 0..m {
                    k33[(i, j)] -= s23[i] * s23[j];
                }
            }
            Some(self.refactorize(&k33, p + 1)?)
        } else {
            None
        };

        let mut s = Matrix::zeros(n + 1, n + 1);
        for i in 0..p {
            let src = self.r.row(i);
            let dst = s.row_mut(i);
            dst[i..p].copy_from_slice(&src[i..p]);
            dst[p] = s12[i];
            dst[p + 1..].copy_from_slice(&src[p..]);
        }
        s[(p, p)] = s22;
        s.row_mut(p)[p + 1..].copy_from_slice(&s23);
        if let Some(s33) = s33 {
            for i in 0..m {
                s.row_mut(p + 1 + i)[p + 1 + i..].copy_from_slice(&s33.row(i)[i..]);
            }
        }
        Ok(CholFactor {
            r: s,
            jitter: self.jitter,
        })
    }

    /// Appends a row/column at the end; the cheap path used for online inclusion.
    pub fn append(&self, new_col: &[f64], new_diag: f64) -> Result<CholFactor> {
        self.insert(new_col, new_diag, self.n())
    }

    /// [`append`](Self::append) without copying the factor. On error the
    /// factor is unchanged.
    pub fn append_in_place(&mut self, new_col: &[f64], new_diag: f64) -> Result<()> {
        let n = self.n();
        check_dim(n, new_col.len())?;
        let s12 = forward_sub(&self.r, new_col, n);
        let s22 = self.pivot_sqrt(new_diag - dot(&s12, &s12), n)?;
        self.r.grow_square();
        for (i, s) in s12.iter().enumerate() {
            self.r[(i, n)] = *s;
        }
        self.r[(n, n)] = s22;
        Ok(())
    }

    /// Capacity for a factor of order `n`, so later in-place appends up to
    /// that size do not reallocate.
    pub fn reserve(&mut self, n: usize) {
        self.r.reserve_square(n);
    }

    /// Factor of the matrix with row/column `position` deleted.
    pub fn remove(&self, position: usize) -> Result<CholFactor> {
        let n = self.n();
        if position >= n {
            return Err(Error::OutOfBounds {
                index: position,
                len: n,
            });
        }
        let p = position;
        let m = n - p - 1;

        // S33 = chol(R23ᵀR23 + R33ᵀR33)
        let s33 = if m > 0 {
            let r23 = &self.r.row(p)[p + 1..];
            let r33 = self.r.block(p + 1, n, p + 1, n);
            let mut k33 = r33.transpose().matmul(&r33);
            for i in 0..m {
                for j in 0..m {
                    k33[(i, j)] += r23[i] * r23[j];
                }
            }
            Some(self.refactorize(&k33, p)?)
        } else {
            None
        };

        let mut s = Matrix::zeros(n - 1, n - 1);
        for i in 0..p {
            let src = self.r.row(i);
            let dst = s.row_mut(i);
            dst[i..p].copy_from_slice(&src[i..p]);
            dst[p..].copy_from_slice(&src[p + 1..]);
        }
        if let Some(s33) = s33 {
            for i in 0..m {
                s.row_mut(p + i)[p + i..].copy_from_slice(&s33.row(i)[i..]);
            }
        }
        Ok(CholFactor {
            r: s,
            jitter: self.jitter,
        })
    }

    fn pivot_sqrt(&self, pivot: f64, index: usize) -> Result<f64> {
        if pivot >= PIVOT_FLOOR || (pivot > 0.0 && self.jitter == 0.0) {
            return Ok(pivot.sqrt());
        }
        let bumped = pivot + self.jitter;
        if self.jitter > 0.0 && bumped > 0.0 {
            Ok(bumped.sqrt())
        } else {
            Err(Error::NotPositiveDefinite {
                index,
                pivot: bumped,
            })
        }
    }

    fn refactorize(&self, a: &Matrix, offset: usize) -> Result<Matrix> {
        let out = if self.jitter > 0.0 {
            chol_upper(a, 0.0, true).or_else(|_| chol_upper(a, self.jitter, false))
        } else {
            chol_upper(a, 0.0, false)
        };
        out.map_err(|e| match e {
            Error::NotPositiveDefinite { index, pivot } => Error::NotPositiveDefinite {
                index: index + offset,
                pivot,
            },
            other => other,
        })
    }
}

/// Solves `Rᵀ y = b` using the leading `k × k` block of upper-triangular `r`.
fn forward_sub(r: &Matrix, b: &[f64], k: usize) -> Vec<f64> {
    let mut y = b[..k].to_vec();
    for i in 0..k {
        let yi = y[i] / r[(i, i)];
        y[i] = yi;
        let row = &r.row(i)[i + 1..k];
        for (t, rij) in y[i + 1..].iter_mut().zip(row) {
            *t -= rij * yi;
        }
    }
    y
}

/// Upper Cholesky factor of `a + jitter·I`.
///
/// With `strict`, pivots below [`PIVOT_FLOOR`] are reported as failures so the
/// caller can retry with jitter; otherwise only non-positive pivots fail.
fn chol_upper(a: &Matrix, jitter: f64, strict: bool) -> Result<Matrix> {
    let n = a.rows();
    // Lower factor L = Rᵀ kept row-major so inner products run over contiguous rows.
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let lj = l.row(j)[..j].to_vec();
        let pivot = a[(j, j)] + jitter - dot(&lj, &lj);
        if pivot <= 0.0 || (strict && pivot < PIVOT_FLOOR) || !pivot.is_finite() {
            return Err(Error::NotPositiveDefinite { index: j, pivot });
        }
        let d = pivot.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let s = dot(&l.row(i)[..j], &lj);
            l[(i, j)] = (a[(i, j)] - s) / d;
        }
    }
    Ok(l.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize, seed: u64) -> Matrix {
        // xorshift keeps this test module free of RNG dependencies
        let mut s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
        let mut next = || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let m = Matrix::from_fn(n, n, |_, _| next());
        m.transpose().matmul(&m).add(&Matrix::identity(n))
    }

    #[test]
    fn scalar_and_identity() {
        let f = CholFactor::factorize(&Matrix::from_rows(&[[4.0]])).unwrap();
        assert_eq!(f.r()[(0, 0)], 2.0);
        assert_eq!(f.solve(&[8.0]).unwrap(), vec![2.0]);

        let f = CholFactor::factorize(&Matrix::identity(3)).unwrap();
        assert_eq!(f.r(), &Matrix::identity(3));
        assert_eq!(f.solve(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn reconstructs_random_spd() {
        let a = spd(5, 3);
        let f = CholFactor::factorize(&a).unwrap();
        assert!(f.reconstruct().rel_frobenius_err(&a) < 1e-10);
        for i in 0..5 {
            assert!(f.r()[(i, i)] > 0.0);
            for j in 0..i {
                assert_eq!(f.r()[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn rejects_indefinite() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]);
        assert!(matches!(
            CholFactor::factorize(&a),
            Err(Error::NotPositiveDefinite { index: 1, .. })
        ));
    }

    #[test]
    fn jitter_rescues_singular() {
        let a = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]);
        assert!(CholFactor::factorize(&a).is_err());
        let f = CholFactor::factorize_with_jitter(&a, 1e-10).unwrap();
        assert!(f.reconstruct().max_abs_diff(&a) < 1e-9);
    }

    #[test]
    fn insert_into_empty() {
        let f = CholFactor::empty().insert(&[], 9.0, 0).unwrap();
        assert_eq!(f.r(), &Matrix::from_rows(&[[3.0]]));
    }

    #[test]
    fn remove_to_empty() {
        let f = CholFactor::factorize(&Matrix::from_rows(&[[4.0]])).unwrap();
        assert_eq!(f.remove(0).unwrap().n(), 0);
    }

    #[test]
    fn bounds_and_dims() {
        let f = CholFactor::factorize(&Matrix::identity(2)).unwrap();
        assert!(matches!(f.remove(2), Err(Error::OutOfBounds { .. })));
        assert!(matches!(f.insert(&[0.0, 0.0], 1.0, 3), Err(Error::OutOfBounds { .. })));
        assert!(matches!(f.insert(&[0.0], 1.0, 0), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(f.solve(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn insert_near_duplicate_reports_pd_failure() {
        let f = CholFactor::factorize(&Matrix::identity(2)).unwrap();
        // new column equal to an existing one: Schur complement is zero
        assert!(matches!(
            f.insert(&[1.0, 0.0], 1.0, 2),
            Err(Error::NotPositiveDefinite { index: 2, .. })
        ));
    }

    #[test]
    fn in_place_append_matches_copying_append() {
        let a = spd(6, 11);
        let mut f = CholFactor::empty();
        f.reserve(6);
        for k in 0..6 {
            let col: Vec<f64> = (0..k).map(|i| a[(i, k)]).collect();
            let copied = f.append(&col, a[(k, k)]).unwrap();
            f.append_in_place(&col, a[(k, k)]).unwrap();
            assert_eq!(f, copied);
        }
        assert!(f.reconstruct().rel_frobenius_err(&a) < 1e-14);

        let before = f.clone();
        assert!(f.append_in_place(&[0.0; 6], -1.0).is_err());
        assert!(f.append_in_place(&[0.0; 2], 1.0).is_err());
        assert_eq!(f, before);
    }
}
