//! Full-order Hamiltonian systems.
//!
//! A model describes `H(y, eta) = ½ yᵀ L y + yᵀ f + g0 + cᵀ G(y, eta)` on the
//! canonical phase space `y = (q, p)`. The nonlinear part is exposed row by
//! row: row `i` of `G` depends only on the state entries listed in
//! `sparsity(i)`, and all per-row callbacks receive those entries gathered
//! into a short local slice. Hyper-reduced evaluation relies on this to touch
//! only the selected rows.

mod nls;
mod shift;
mod swe;

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;
use crate::scalar::{as_f64, Scalar};

pub use nls::{Nls1d, Nls1dConfig};
pub use shift::ShiftedModel;
pub use swe::{Swe2d, Swe2dConfig};

/// Axis-aligned parameter box `[lo_1, hi_1] × … × [lo_p, hi_p]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamBox {
    pub bounds: Vec<(f64, f64)>,
}

impl ParamBox {
    pub fn new(bounds: Vec<(f64, f64)>) -> Self {
        Self { bounds }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn contains<T: Scalar>(&self, eta: &[T]) -> bool {
        eta.len() == self.bounds.len()
            && eta.iter().zip(&self.bounds).all(|(&v, &(lo, hi))| {
                let v = as_f64(v);
                v >= lo && v <= hi
            })
    }

    /// Tensor grid with `per_dim` equispaced points per direction, first coordinate fastest.
    pub fn grid(&self, per_dim: usize) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = self
            .bounds
            .iter()
            .map(|&(lo, hi)| {
                if per_dim <= 1 {
                    vec![0.5 * (lo + hi)]
                } else {
                    (0..per_dim)
                        .map(|i| lo + (hi - lo) * i as f64 / (per_dim - 1) as f64)
                        .collect()
                }
            })
            .collect();
        let mut out = vec![vec![]];
        for axis in &axes {
            let mut next = Vec::with_capacity(out.len() * axis.len());
            for &v in axis {
                for prefix in &out {
                    let mut p: Vec<f64> = prefix.clone();
                    p.push(v);
                    next.push(p);
                }
            }
            out = next;
        }
        // Reorder so the first coordinate varies fastest.
        out.sort_by(|a, b| {
            a.iter()
                .rev()
                .zip(b.iter().rev())
                .map(|(x, y)| x.partial_cmp(y).unwrap())
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        out
    }
}

/// A Hamiltonian system with a row-separable nonlinear part.
///
/// Implementations are immutable and may be shared across threads.
pub trait HamiltonianModel<T: Scalar>: Send + Sync {
    /// Half phase-space dimension `n`.
    fn half_dim(&self) -> usize;

    /// Number of terms `d` of the nonlinear decomposition.
    fn num_terms(&self) -> usize;

    fn param_box(&self) -> &ParamBox;

    /// Weights `c` of the decomposition `cᵀ G`.
    fn weights(&self) -> &DVector<T>;

    /// Columns of the Jacobian of `G` that may be nonzero in row `row`.
    fn sparsity(&self, row: usize) -> &[usize];

    /// Quadratic part `L(eta)`, symmetric positive semi-definite.
    fn quadratic_op(&self, eta: &[T]) -> CsrMatrix<T>;

    /// Linear part `f(eta)`.
    fn linear_term(&self, eta: &[T]) -> DVector<T>;

    /// Constant part `g0(eta)`.
    fn constant_term(&self, eta: &[T]) -> T;

    /// `G_row` evaluated on the gathered entries `local = y[sparsity(row)]`.
    fn term(&self, row: usize, local: &[T], eta: &[T]) -> T;

    /// Gradient of `G_row` with respect to `local`, written into `out`.
    fn term_gradient(&self, row: usize, local: &[T], eta: &[T], out: &mut [T]);

    /// Hessian of `G_row` with respect to `local`, row-major `s × s` into `out`.
    fn term_hessian(&self, row: usize, local: &[T], eta: &[T], out: &mut [T]);

    /// Initial state `y⁰(eta)`.
    fn initial_state(&self, eta: &[T]) -> DVector<T>;

    fn dim(&self) -> usize {
        2 * self.half_dim()
    }

    /// Maximum number of nonzeros per Jacobian row among the first and last `n` columns.
    fn sparsity_split(&self) -> (usize, usize) {
        let n = self.half_dim();
        (0..self.num_terms()).fold((0, 0), |(s1, s2), i| {
            let cols = self.sparsity(i);
            let a = cols.iter().filter(|&&c| c < n).count();
            (s1.max(a), s2.max(cols.len() - a))
        })
    }
}

/// Logs a warning when `eta` lies outside the model's parameter box.
pub fn check_param<T: Scalar, M: HamiltonianModel<T> + ?Sized>(model: &M, eta: &[T]) {
    if !model.param_box().contains(eta) {
        log::warn!(
            "parameter {:?} outside the parameter box {:?}",
            eta.iter().map(|&v| as_f64(v)).collect::<Vec<_>>(),
            model.param_box().bounds
        );
    }
}

fn check_state<T: Scalar, M: HamiltonianModel<T> + ?Sized>(model: &M, y: &DVector<T>) -> Result<()> {
    if y.len() != model.dim() {
        return Err(Error::dims("state vector", model.dim(), y.len()));
    }
    Ok(())
}

fn check_rows<T: Scalar, M: HamiltonianModel<T> + ?Sized>(model: &M, rows: &[usize]) -> Result<()> {
    let d = model.num_terms();
    match rows.iter().find(|&&r| r >= d) {
        Some(&r) => Err(Error::IndexOutOfRange { index: r, len: d }),
        None => Ok(()),
    }
}

/// Gathers `y[cols]` into `buf`.
#[inline]
pub(crate) fn gather<T: Scalar>(y: &[T], cols: &[usize], buf: &mut Vec<T>) {
    buf.clear();
    buf.extend(cols.iter().map(|&c| y[c]));
}

/// `H(y, eta)`.
pub fn eval_hamiltonian<T: Scalar, M: HamiltonianModel<T> + ?Sized>(
    model: &M,
    y: &DVector<T>,
    eta: &[T],
) -> Result<T> {
    check_state(model, y)?;
    check_param(model, eta);
    let l = model.quadratic_op(eta);
    let f = model.linear_term(eta);
    let quad = y.dot(&l.mul_vec(y)) * crate::scalar::lit::<T>(0.5);
    let g = eval_g(model, y, eta, None)?;
    Ok(quad + y.dot(&f) + model.constant_term(eta) + model.weights().dot(&g))
}

/// `∇H(y, eta) = L y + f + J_Gᵀ c`.
pub fn eval_gradient<T: Scalar, M: HamiltonianModel<T> + ?Sized>(
    model: &M,
    y: &DVector<T>,
    eta: &[T],
) -> Result<DVector<T>> {
    check_state(model, y)?;
    let mut grad = model.quadratic_op(eta).mul_vec(y) + model.linear_term(eta);
    let c = model.weights();
    let ys = y.as_slice();
    let mut local = Vec::new();
    let mut g = Vec::new();
    for i in 0..model.num_terms() {
        let cols = model.sparsity(i);
        gather(ys, cols, &mut local);
        g.resize(cols.len(), T::zero());
        model.term_gradient(i, &local, eta, &mut g);
        for (&col, &v) in cols.iter().zip(&g) {
            grad[col] += c[i] * v;
        }
    }
    Ok(grad)
}

/// `G(y, eta)` restricted to `rows` (all rows when `None`).
pub fn eval_g<T: Scalar, M: HamiltonianModel<T> + ?Sized>(
    model: &M,
    y: &DVector<T>,
    eta: &[T],
    rows: Option<&[usize]>,
) -> Result<DVector<T>> {
    check_state(model, y)?;
    let ys = y.as_slice();
    let mut local = Vec::new();
    let mut eval = |i: usize| {
        gather(ys, model.sparsity(i), &mut local);
        model.term(i, &local, eta)
    };
    match rows {
        Some(rows) => {
            check_rows(model, rows)?;
            Ok(DVector::from_iterator(rows.len(), rows.iter().map(|&i| eval(i))))
        }
        None => Ok(DVector::from_iterator(
            model.num_terms(),
            (0..model.num_terms()).map(eval),
        )),
    }
}

/// One sparse row of the Jacobian of `G`.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianRow<T> {
    pub row: usize,
    pub cols: Vec<usize>,
    pub values: Vec<T>,
}

/// Rows `rows` of the Jacobian `J_G(y, eta)`.
pub fn eval_jac_rows<T: Scalar, M: HamiltonianModel<T> + ?Sized>(
    model: &M,
    y: &DVector<T>,
    eta: &[T],
    rows: &[usize],
) -> Result<Vec<JacobianRow<T>>> {
    check_state(model, y)?;
    check_rows(model, rows)?;
    let ys = y.as_slice();
    let mut local = Vec::new();
    Ok(rows
        .iter()
        .map(|&i| {
            let cols = model.sparsity(i);
            gather(ys, cols, &mut local);
            let mut values = vec![T::zero(); cols.len()];
            model.term_gradient(i, &local, eta, &mut values);
            JacobianRow {
                row: i,
                cols: cols.to_vec(),
                values,
            }
        })
        .collect())
}

/// Hessian of `H` as `(row, col, value)` entries (duplicates not merged).
pub fn eval_hessian_triplets<T: Scalar, M: HamiltonianModel<T> + ?Sized>(
    model: &M,
    y: &DVector<T>,
    eta: &[T],
) -> Result<Vec<(usize, usize, T)>> {
    check_state(model, y)?;
    let mut entries: Vec<(usize, usize, T)> = model.quadratic_op(eta).triplets().collect();
    let c = model.weights();
    let ys = y.as_slice();
    let mut local = Vec::new();
    let mut h = Vec::new();
    for i in 0..model.num_terms() {
        let cols = model.sparsity(i);
        let s = cols.len();
        gather(ys, cols, &mut local);
        h.resize(s * s, T::zero());
        model.term_hessian(i, &local, eta, &mut h);
        for a in 0..s {
            for b in 0..s {
                let v = h[a * s + b];
                if v != T::zero() {
                    entries.push((cols[a], cols[b], c[i] * v));
                }
            }
        }
    }
    Ok(entries)
}

/// Hessian of `H` assembled as a sparse matrix.
pub fn eval_hessian<T: Scalar, M: HamiltonianModel<T> + ?Sized>(
    model: &M,
    y: &DVector<T>,
    eta: &[T],
) -> Result<CsrMatrix<T>> {
    let n = model.dim();
    Ok(CsrMatrix::from_triplets(n, n, &eval_hessian_triplets(model, y, eta)?))
}

/// Counts per-row evaluations of a wrapped model.
///
/// Used to verify that hyper-reduced code paths touch only the rows they are
/// supposed to. Counters are owned by the wrapper, never by the inner model.
pub struct Counted<M> {
    inner: M,
    terms: AtomicUsize,
    gradients: AtomicUsize,
    hessians: AtomicUsize,
}

/// Snapshot of the counters of a [`Counted`] model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RowCounts {
    pub terms: usize,
    pub gradients: usize,
    pub hessians: usize,
}

impl<M> Counted<M> {
    pub fn new(inner: M) -> Self {
        Self {
            inner,
            terms: AtomicUsize::new(0),
            gradients: AtomicUsize::new(0),
            hessians: AtomicUsize::new(0),
        }
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }

    pub fn counts(&self) -> RowCounts {
        RowCounts {
            terms: self.terms.load(Ordering::Relaxed),
            gradients: self.gradients.load(Ordering::Relaxed),
            hessians: self.hessians.load(Ordering::Relaxed),
        }
    }

    pub fn reset(&self) {
        self.terms.store(0, Ordering::Relaxed);
        self.gradients.store(0, Ordering::Relaxed);
        self.hessians.store(0, Ordering::Relaxed);
    }
}

impl<T: Scalar, M: HamiltonianModel<T>> HamiltonianModel<T> for Counted<M> {
    fn half_dim(&self) -> usize {
        self.inner.half_dim()
    }
    fn num_terms(&self) -> usize {
        self.inner.num_terms()
    }
    fn param_box(&self) -> &ParamBox {
        self.inner.param_box()
    }
    fn weights(&self) -> &DVector<T> {
        self.inner.weights()
    }
    fn sparsity(&self, row: usize) -> &[usize] {
        self.inner.sparsity(row)
    }
    fn quadratic_op(&self, eta: &[T]) -> CsrMatrix<T> {
        self.inner.quadratic_op(eta)
    }
    fn linear_term(&self, eta: &[T]) -> DVector<T> {
        self.inner.linear_term(eta)
    }
    fn constant_term(&self, eta: &[T]) -> T {
        self.inner.constant_term(eta)
    }
    fn term(&self, row: usize, local: &[T], eta: &[T]) -> T {
        self.terms.fetch_add(1, Ordering::Relaxed);
        self.inner.term(row, local, eta)
    }
    fn term_gradient(&self, row: usize, local: &[T], eta: &[T], out: &mut [T]) {
        self.gradients.fetch_add(1, Ordering::Relaxed);
        self.inner.term_gradient(row, local, eta, out)
    }
    fn term_hessian(&self, row: usize, local: &[T], eta: &[T], out: &mut [T]) {
        self.hessians.fetch_add(1, Ordering::Relaxed);
        self.inner.term_hessian(row, local, eta, out)
    }
    fn initial_state(&self, eta: &[T]) -> DVector<T> {
        self.inner.initial_state(eta)
    }
}

impl<T: Scalar, M: HamiltonianModel<T> + ?Sized> HamiltonianModel<T> for &M {
    fn half_dim(&self) -> usize {
        (**self).half_dim()
    }
    fn num_terms(&self) -> usize {
        (**self).num_terms()
    }
    fn param_box(&self) -> &ParamBox {
        (**self).param_box()
    }
    fn weights(&self) -> &DVector<T> {
        (**self).weights()
    }
    fn sparsity(&self, row: usize) -> &[usize] {
        (**self).sparsity(row)
    }
    fn quadratic_op(&self, eta: &[T]) -> CsrMatrix<T> {
        (**self).quadratic_op(eta)
    }
    fn linear_term(&self, eta: &[T]) -> DVector<T> {
        (**self).linear_term(eta)
    }
    fn constant_term(&self, eta: &[T]) -> T {
        (**self).constant_term(eta)
    }
    fn term(&self, row: usize, local: &[T], eta: &[T]) -> T {
        (**self).term(row, local, eta)
    }
    fn term_gradient(&self, row: usize, local: &[T], eta: &[T], out: &mut [T]) {
        (**self).term_gradient(row, local, eta, out)
    }
    fn term_hessian(&self, row: usize, local: &[T], eta: &[T], out: &mut [T]) {
        (**self).term_hessian(row, local, eta, out)
    }
    fn initial_state(&self, eta: &[T]) -> DVector<T> {
        (**self).initial_state(eta)
    }
}
