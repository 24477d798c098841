//! Dense and sparse linear algebra shared by the reduction pipeline.
//!
//! Small dense work goes through nalgebra. Large thin SVDs and the sparse LU
//! used by full-order Newton solves are delegated to faer (built without its
//! rayon feature, so every result is independent of the thread count).

use faer::sparse::{SparseColMat, Triplet};
use faer::prelude::*;
use faer::{Mat, MatRef};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

/// Applies the canonical Poisson tensor `J = [[0, I], [-I, 0]]` to `g`.
pub fn apply_poisson<T: Scalar>(g: &DVector<T>) -> DVector<T> {
    let dim = g.len();
    assert!(dim % 2 == 0, "phase-space vector must have even length");
    let n = dim / 2;
    DVector::from_fn(dim, |i, _| if i < n { g[n + i] } else { -g[i - n] })
}

/// Applies `J` to every column of `m`.
pub fn apply_poisson_cols<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    let dim = m.nrows();
    assert!(dim % 2 == 0, "phase-space matrix must have an even row count");
    let n = dim / 2;
    DMatrix::from_fn(dim, m.ncols(), |i, j| {
        if i < n {
            m[(n + i, j)]
        } else {
            -m[(i - n, j)]
        }
    })
}

/// Dense `J_{2n}`. Only used by diagnostics and tests; solvers apply `J` implicitly.
pub fn poisson_matrix<T: Scalar>(n: usize) -> DMatrix<T> {
    DMatrix::from_fn(2 * n, 2 * n, |i, j| {
        if i < n && j == i + n {
            T::one()
        } else if i >= n && j + n == i {
            -T::one()
        } else {
            T::zero()
        }
    })
}

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix<T> {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    /// Builds the matrix from `(row, col, value)` entries; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, entries: &[(usize, usize, T)]) -> Self {
        let mut sorted: Vec<(usize, usize, T)> = entries.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<T> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        let entries: Vec<_> = (0..n).map(|i| (i, i, T::one())).collect();
        Self::from_triplets(n, n, &entries)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[range.clone()], &self.values[range])
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&c, &v)| (i, c, v))
        })
    }

    pub fn scaled(&self, factor: T) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= factor);
        out
    }

    pub fn mul_vec(&self, x: &DVector<T>) -> DVector<T> {
        assert_eq!(x.len(), self.ncols);
        DVector::from_fn(self.nrows, |i, _| {
            let (cols, vals) = self.row(i);
            cols.iter()
                .zip(vals)
                .fold(T::zero(), |acc, (&c, &v)| acc + v * x[c])
        })
    }

    pub fn mul_dense(&self, x: &DMatrix<T>) -> DMatrix<T> {
        assert_eq!(x.nrows(), self.ncols);
        let mut out = DMatrix::zeros(self.nrows, x.ncols());
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for j in 0..x.ncols() {
                let mut acc = T::zero();
                for (&c, &v) in cols.iter().zip(vals) {
                    acc += v * x[(c, j)];
                }
                out[(i, j)] = acc;
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        let mut out = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            out[(i, j)] += v;
        }
        out
    }
}

/// Solves `A x = b` for a sparse square `A` given as triplets (duplicates summed).
pub fn sparse_solve<T: Scalar>(
    n: usize,
    entries: &[(usize, usize, T)],
    rhs: &DVector<T>,
) -> Result<DVector<T>> {
    let triplets: Vec<Triplet<usize, usize, T>> = entries
        .iter()
        .map(|&(r, c, v)| Triplet::new(r, c, v))
        .collect();
    let a = SparseColMat::<usize, T>::try_new_from_triplets(n, n, &triplets)
        .map_err(|e| Error::InvalidArgument(format!("sparse assembly: {e:?}")))?;
    let lu = a
        .sp_lu()
        .map_err(|e| Error::Singular(format!("sparse LU: {e:?}")))?;
    let mut x = Col::<T>::from_fn(n, |i| rhs[i]);
    lu.solve_in_place(x.as_mat_mut());
    let out = DVector::from_fn(n, |i, _| x[i]);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("sparse LU produced non-finite values".into()));
    }
    Ok(out)
}

pub(crate) fn to_faer<T: Scalar>(m: &DMatrix<T>) -> Mat<T> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

pub(crate) fn from_faer<T: Scalar>(m: MatRef<'_, T>) -> DMatrix<T> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Left singular vectors and singular values of a (possibly very wide) matrix.
#[derive(Clone, Debug)]
pub struct LeftSvd<T: Scalar> {
    /// `rows × min(rows, cols)`, columns ordered by decreasing singular value.
    pub u: DMatrix<T>,
    pub sigma: DVector<T>,
}

impl<T: Scalar> LeftSvd<T> {
    /// Number of singular values above `max(rows, cols) * eps * sigma_1`.
    pub fn numerical_rank(&self, rows: usize, cols: usize) -> usize {
        numerical_rank(&self.sigma, rows, cols)
    }
}

pub fn numerical_rank<T: Scalar>(sigma: &DVector<T>, rows: usize, cols: usize) -> usize {
    if sigma.is_empty() || sigma[0] <= T::zero() {
        return 0;
    }
    let tol = sigma[0] * T::default_epsilon() * lit::<T>(rows.max(cols) as f64);
    sigma.iter().filter(|&&s| s > tol).count()
}

/// Thin SVD keeping only the left factor.
///
/// Matrices with many more columns than rows are first compressed by a QR
/// factorization of the transpose, `M^T = Q R`, so that only the square
/// factor `R^T` is decomposed.
pub fn left_svd<T: Scalar>(m: &DMatrix<T>) -> Result<LeftSvd<T>> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok(LeftSvd {
            u: DMatrix::zeros(rows, 0),
            sigma: DVector::zeros(0),
        });
    }
    let work = if cols > 2 * rows {
        let mt = Mat::<T>::from_fn(cols, rows, |i, j| m[(j, i)]);
        let qr = mt.qr();
        let r = qr.thin_R();
        Mat::<T>::from_fn(rows, rows, |i, j| r[(j, i)])
    } else {
        to_faer(m)
    };
    let svd = work
        .thin_svd()
        .map_err(|e| Error::Singular(format!("SVD did not converge: {e:?}")))?;
    let k = rows.min(work.ncols());
    let s = svd.S().column_vector();
    let u = svd.U();
    Ok(LeftSvd {
        u: DMatrix::from_fn(rows, k, |i, j| u[(i, j)]),
        sigma: DVector::from_fn(k, |i, _| s[i]),
    })
}

/// Full thin SVD `M = U diag(sigma) V^T` for small dense matrices.
pub(crate) fn thin_svd<T: Scalar>(m: &DMatrix<T>) -> Result<(DMatrix<T>, DVector<T>, DMatrix<T>)> {
    let f = to_faer(m);
    let svd = f
        .thin_svd()
        .map_err(|e| Error::Singular(format!("SVD did not converge: {e:?}")))?;
    let s = svd.S().column_vector();
    let k = m.nrows().min(m.ncols());
    Ok((
        from_faer(svd.U()),
        DVector::from_fn(k, |i, _| s[i]),
        from_faer(svd.V()),
    ))
}

pub fn singular_values<T: Scalar>(m: &DMatrix<T>) -> Result<DVector<T>> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(DVector::zeros(0));
    }
    let s = to_faer(m)
        .singular_values()
        .map_err(|e| Error::Singular(format!("SVD did not converge: {e:?}")))?;
    Ok(DVector::from_vec(s))
}

/// 2-norm condition number of a square matrix (infinite when singular).
pub fn condition_number<T: Scalar>(m: &DMatrix<T>) -> T {
    match singular_values(m) {
        Ok(s) if !s.is_empty() => {
            let smin = s[s.len() - 1];
            if smin > T::zero() {
                s[0] / smin
            } else {
                T::max_value().unwrap_or_else(|| lit(f64::MAX))
            }
        }
        _ => T::max_value().unwrap_or_else(|| lit(f64::MAX)),
    }
}

/// Rows `idx` of `m`.
pub fn select_rows<T: Scalar>(m: &DMatrix<T>, idx: &[usize]) -> DMatrix<T> {
    DMatrix::from_fn(idx.len(), m.ncols(), |i, j| m[(idx[i], j)])
}

/// Squared Frobenius norm.
pub fn frob2<T: Scalar>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, &v| acc + v * v)
}
