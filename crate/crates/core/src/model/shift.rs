//! Model expressed in the shifted variable `y_s = y - y0`.

use nalgebra::DVector;

use super::{gather, eval_g, HamiltonianModel, ParamBox};
use crate::linalg::CsrMatrix;
use crate::scalar::{lit, Scalar};

/// `H_s(y_s) = H(y_s + y0)` written in the same row-separable form.
///
/// `f_s = f + L y0`, `g0_s = g0 + ½ y0ᵀ L y0 + y0ᵀ f + cᵀ G(y0)` and
/// `G_s(y_s)_i = G(y_s + y0)_i - G(y0)_i`, so `G_s(0) = 0` exactly. Each shifted
/// row is evaluated from the same gathered entries as the original row, which
/// keeps hyper-reduced evaluation local.
#[derive(Clone, Debug)]
pub struct ShiftedModel<M, T: Scalar> {
    inner: M,
    y0: DVector<T>,
}

impl<T: Scalar, M: HamiltonianModel<T>> ShiftedModel<M, T> {
    pub fn new(inner: M, y0: DVector<T>) -> Self {
        assert_eq!(y0.len(), inner.dim(), "shift vector has the wrong length");
        assert!(y0.iter().all(|v| v.is_finite()), "shift vector must be finite");
        Self { inner, y0 }
    }

    /// Shifts by the model's own initial state at `eta`.
    pub fn at_initial_state(inner: M, eta: &[T]) -> Self {
        let y0 = inner.initial_state(eta);
        Self::new(inner, y0)
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }

    pub fn offset(&self) -> &DVector<T> {
        &self.y0
    }

    /// Maps a shifted state back to the original variable.
    pub fn unshift(&self, ys: &DVector<T>) -> DVector<T> {
        ys + &self.y0
    }

    pub fn shift(&self, y: &DVector<T>) -> DVector<T> {
        y - &self.y0
    }

    fn shifted_local(&self, row: usize, local: &[T]) -> (Vec<T>, Vec<T>) {
        let mut base = Vec::new();
        gather(self.y0.as_slice(), self.inner.sparsity(row), &mut base);
        let moved = local.iter().zip(&base).map(|(&a, &b)| a + b).collect();
        (moved, base)
    }
}

impl<T: Scalar, M: HamiltonianModel<T>> HamiltonianModel<T> for ShiftedModel<M, T> {
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
        self.inner.linear_term(eta) + self.inner.quadratic_op(eta).mul_vec(&self.y0)
    }

    fn constant_term(&self, eta: &[T]) -> T {
        let l = self.inner.quadratic_op(eta);
        let f = self.inner.linear_term(eta);
        let g = eval_g(&self.inner, &self.y0, eta, None).expect("shift vector length checked");
        self.inner.constant_term(eta)
            + lit::<T>(0.5) * self.y0.dot(&l.mul_vec(&self.y0))
            + self.y0.dot(&f)
            + self.inner.weights().dot(&g)
    }

    fn term(&self, row: usize, local: &[T], eta: &[T]) -> T {
        let (moved, base) = self.shifted_local(row, local);
        self.inner.term(row, &moved, eta) - self.inner.term(row, &base, eta)
    }

    fn term_gradient(&self, row: usize, local: &[T], eta: &[T], out: &mut [T]) {
        let (moved, _) = self.shifted_local(row, local);
        self.inner.term_gradient(row, &moved, eta, out)
    }

    fn term_hessian(&self, row: usize, local: &[T], eta: &[T], out: &mut [T]) {
        let (moved, _) = self.shifted_local(row, local);
        self.inner.term_hessian(row, &moved, eta, out)
    }

    /// The shifted initial state is zero.
    fn initial_state(&self, _eta: &[T]) -> DVector<T> {
        DVector::zeros(self.inner.dim())
    }
}
