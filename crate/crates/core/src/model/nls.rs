//! One-dimensional cubic nonlinear Schrödinger equation, periodic in space.
//!
//! State `y = (q, p)` with `u = q + i p`, parameter `eta = (ε)`. The energy is
//! `-½ qᵀ Dxx q - ½ pᵀ Dxx p - (ε/4) Σ (q_i² + p_i²)²` with the periodic
//! three-point Laplacian `Dxx`.

use nalgebra::DVector;

use super::{HamiltonianModel, ParamBox};
use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;
use crate::scalar::{lit, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct Nls1dConfig {
    pub n: usize,
    /// Domain half-width is `π / l`.
    pub l: f64,
}

impl Nls1dConfig {
    pub fn full_scale() -> Self {
        Self { n: 2048, l: 0.11 }
    }

    pub fn desk() -> Self {
        Self { n: 512, l: 0.11 }
    }
}

#[derive(Clone, Debug)]
pub struct Nls1d<T: Scalar> {
    cfg: Nls1dConfig,
    half_width: f64,
    dx: f64,
    c: DVector<T>,
    sparsity: Vec<[usize; 2]>,
    laplacian: CsrMatrix<T>,
    param_box: ParamBox,
}

impl<T: Scalar> Nls1d<T> {
    pub fn new(cfg: &Nls1dConfig) -> Result<Self> {
        if cfg.n < 3 {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least 3 points, got {}",
                cfg.n
            )));
        }
        if !(cfg.l > 0.0) {
            return Err(Error::InvalidArgument("l must be positive".into()));
        }
        let n = cfg.n;
        let half_width = std::f64::consts::PI / cfg.l;
        let dx = 2.0 * half_width / n as f64;
        let inv = 1.0 / (dx * dx);
        // -Dxx on both q and p.
        let mut entries = Vec::with_capacity(6 * n);
        for block in [0, n] {
            for i in 0..n {
                entries.push((block + i, block + i, lit::<T>(2.0 * inv)));
                entries.push((block + i, block + (i + 1) % n, lit::<T>(-inv)));
                entries.push((block + i, block + (i + n - 1) % n, lit::<T>(-inv)));
            }
        }
        Ok(Self {
            half_width,
            dx,
            c: DVector::from_element(n, T::one()),
            sparsity: (0..n).map(|i| [i, n + i]).collect(),
            laplacian: CsrMatrix::from_triplets(2 * n, 2 * n, &entries),
            param_box: ParamBox::new(vec![(0.9, 1.1)]),
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &Nls1dConfig {
        &self.cfg
    }

    pub fn spacing(&self) -> f64 {
        self.dx
    }

    pub fn node(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.dx
    }
}

impl<T: Scalar> HamiltonianModel<T> for Nls1d<T> {
    fn half_dim(&self) -> usize {
        self.cfg.n
    }

    fn num_terms(&self) -> usize {
        self.cfg.n
    }

    fn param_box(&self) -> &ParamBox {
        &self.param_box
    }

    fn weights(&self) -> &DVector<T> {
        &self.c
    }

    fn sparsity(&self, row: usize) -> &[usize] {
        &self.sparsity[row]
    }

    fn quadratic_op(&self, _eta: &[T]) -> CsrMatrix<T> {
        self.laplacian.clone()
    }

    fn linear_term(&self, _eta: &[T]) -> DVector<T> {
        DVector::zeros(2 * self.cfg.n)
    }

    fn constant_term(&self, _eta: &[T]) -> T {
        T::zero()
    }

    fn term(&self, _row: usize, local: &[T], eta: &[T]) -> T {
        let r = local[0] * local[0] + local[1] * local[1];
        -eta[0] * lit::<T>(0.25) * r * r
    }

    fn term_gradient(&self, _row: usize, local: &[T], eta: &[T], out: &mut [T]) {
        let (q, p) = (local[0], local[1]);
        let r = q * q + p * p;
        out[0] = -eta[0] * r * q;
        out[1] = -eta[0] * r * p;
    }

    fn term_hessian(&self, _row: usize, local: &[T], eta: &[T], out: &mut [T]) {
        let (q, p) = (local[0], local[1]);
        let eps = eta[0];
        let three = lit::<T>(3.0);
        let two = lit::<T>(2.0);
        out[0] = -eps * (three * q * q + p * p);
        out[1] = -eps * two * q * p;
        out[2] = out[1];
        out[3] = -eps * (q * q + three * p * p);
    }

    fn initial_state(&self, _eta: &[T]) -> DVector<T> {
        let n = self.cfg.n;
        let s2 = std::f64::consts::SQRT_2;
        DVector::from_fn(2 * n, |k, _| {
            let x = self.node(k % n);
            let amp = s2 / x.cosh();
            lit(if k < n { amp * (x / 2.0).cos() } else { amp * (x / 2.0).sin() })
        })
    }
}
