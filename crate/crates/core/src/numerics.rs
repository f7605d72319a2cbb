//! Dense symmetric-positive-definite linear algebra for Gram matrices.

use thiserror::Error;

use crate::scalar::Real;

/// Jitter values tried in order when factorising a kernel matrix.
pub const DEFAULT_JITTER_LADDER: [f64; 4] = [0.0, 1e-9, 1e-7, 1e-5];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("matrix is not positive definite (largest jitter tried: {max_jitter:e})")]
    NotPositiveDefinite { max_jitter: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix contains non-finite entries")]
    NonFinite,
}

/// Row-major dense square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Real> SquareMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    /// Builds from row-major entries; `data.len()` must be a perfect square.
    pub fn from_row_major(n: usize, data: Vec<T>) -> Result<Self, NumericsError> {
        if data.len() != n * n {
            return Err(NumericsError::DimensionMismatch {
                expected: n * n,
                got: data.len(),
            });
        }
        Ok(Self { n, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, NumericsError> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            if r.len() != n {
                return Err(NumericsError::DimensionMismatch {
                    expected: n,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { n, data })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.n, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Self) -> Result<Self, NumericsError> {
        if other.n != self.n {
            return Err(NumericsError::DimensionMismatch {
                expected: self.n,
                got: other.n,
            });
        }
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[T]) -> Result<Vec<T>, NumericsError> {
        if v.len() != self.n {
            return Err(NumericsError::DimensionMismatch {
                expected: self.n,
                got: v.len(),
            });
        }
        Ok((0..self.n)
            .map(|i| self.row(i).iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect())
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// (A + Aᵀ)/2
    pub fn symmetrized(&self) -> Self {
        let half = T::lit(0.5);
        Self::from_fn(self.n, |i, j| (self[(i, j)] + self[(j, i)]) * half)
    }

    pub fn add_diagonal(&mut self, v: T) {
        for i in 0..self.n {
            self.data[i * self.n + i] += v;
        }
    }
}

impl<T> std::ops::Index<(usize, usize)> for SquareMatrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.n + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for SquareMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.n + j]
    }
}

/// Lower-triangular Cholesky factor together with the diagonal jitter it needed.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor<T> {
    l: SquareMatrix<T>,
    jitter_used: T,
}

impl<T: Real> CholeskyFactor<T> {
    pub fn lower(&self) -> &SquareMatrix<T> {
        &self.l
    }

    pub fn jitter_used(&self) -> T {
        self.jitter_used
    }

    pub fn dim(&self) -> usize {
        self.l.n
    }

    /// L·Lᵀ
    pub fn reconstruct(&self) -> SquareMatrix<T> {
        let n = self.l.n;
        SquareMatrix::from_fn(n, |i, j| {
            let m = i.min(j);
            (0..=m).map(|k| self.l[(i, k)] * self.l[(j, k)]).sum()
        })
    }

    /// Solves L·z = b in place.
    pub fn solve_lower_in_place(&self, b: &mut [T]) {
        let n = self.l.n;
        for i in 0..n {
            let row = self.l.row(i);
            let mut s = b[i];
            for k in 0..i {
                s -= row[k] * b[k];
            }
            b[i] = s / row[i];
        }
    }

    /// Solves Lᵀ·x = z in place.
    pub fn solve_upper_in_place(&self, b: &mut [T]) {
        let n = self.l.n;
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.l[(k, i)] * b[k];
            }
            b[i] = s / self.l[(i, i)];
        }
    }

    /// Full inverse (L·Lᵀ)⁻¹, column by column.
    pub fn inverse(&self) -> SquareMatrix<T> {
        let n = self.l.n;
        let mut inv = SquareMatrix::zeros(n);
        let mut col = vec![T::zero(); n];
        for j in 0..n {
            col.iter_mut().for_each(|c| *c = T::zero());
            col[j] = T::one();
            self.solve_lower_in_place(&mut col);
            self.solve_upper_in_place(&mut col);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv.symmetrized()
    }
}

fn try_factor<T: Real>(a: &SquareMatrix<T>, jitter: T) -> Option<SquareMatrix<T>> {
    let n = a.n;
    let mut l = SquareMatrix::zeros(n);
    for j in 0..n {
        let mut d = a[(j, j)] + jitter;
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > T::zero()) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

/// Cholesky factorisation with a jitter ladder.
///
/// The input is symmetrised first. Each ladder entry is tried in order and the first
/// successful factorisation is returned.
pub fn cholesky<T: Real>(
    a: &SquareMatrix<T>,
    jitter_ladder: &[T],
) -> Result<CholeskyFactor<T>, NumericsError> {
    if !a.is_finite() {
        return Err(NumericsError::NonFinite);
    }
    let sym = a.symmetrized();
    for &jitter in jitter_ladder {
        if let Some(l) = try_factor(&sym, jitter) {
            return Ok(CholeskyFactor {
                l,
                jitter_used: jitter,
            });
        }
    }
    Err(NumericsError::NotPositiveDefinite {
        max_jitter: jitter_ladder
            .last()
            .map(|j| j.to_f64_lossy())
            .unwrap_or(0.0),
    })
}

/// [`cholesky`] with [`DEFAULT_JITTER_LADDER`].
pub fn cholesky_default<T: Real>(a: &SquareMatrix<T>) -> Result<CholeskyFactor<T>, NumericsError> {
    let ladder = DEFAULT_JITTER_LADDER.map(T::lit);
    cholesky(a, &ladder)
}

/// Solves (L·Lᵀ)x = b.
pub fn solve_chol<T: Real>(f: &CholeskyFactor<T>, b: &[T]) -> Result<Vec<T>, NumericsError> {
    if b.len() != f.dim() {
        return Err(NumericsError::DimensionMismatch {
            expected: f.dim(),
            got: b.len(),
        });
    }
    let mut x = b.to_vec();
    f.solve_lower_in_place(&mut x);
    f.solve_upper_in_place(&mut x);
    Ok(x)
}

/// log det(L·Lᵀ) = 2 Σ log L_ii
pub fn log_det<T: Real>(f: &CholeskyFactor<T>) -> T {
    let two = T::lit(2.0);
    two * (0..f.dim()).map(|i| f.l[(i, i)].ln()).sum::<T>()
}
