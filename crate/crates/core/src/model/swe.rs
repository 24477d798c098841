//! Two-dimensional shallow water equations on a periodic rectangle.
//!
//! State `y = (χ, Φ)` with free-surface height `χ` and velocity potential `Φ`,
//! parameter `eta = (β, γ)`. The energy
//! `(γ/2) Σ χ_i² + (γ/2) Σ χ_i [(D₁Φ)_i² + (D₂Φ)_i²]` uses centered periodic
//! differences; the second sum is the nonlinear decomposition with `c = 1`.

use nalgebra::DVector;

use super::{HamiltonianModel, ParamBox};
use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;
use crate::scalar::{lit, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct Swe2dConfig {
    pub lx1: f64,
    pub lx2: f64,
    pub nx1: usize,
    pub nx2: usize,
}

impl Swe2dConfig {
    /// 50 × 50 grid on `[-2, 2]²`.
    pub fn full_scale() -> Self {
        Self::desk_with_grid(50, 50)
    }

    /// 16 × 16 grid on `[-2, 2]²`.
    pub fn desk() -> Self {
        Self::desk_with_grid(16, 16)
    }

    pub fn desk_with_grid(nx1: usize, nx2: usize) -> Self {
        Self {
            lx1: 2.0,
            lx2: 2.0,
            nx1,
            nx2,
        }
    }
}

/// Local column layout of one Jacobian row.
const CHI: usize = 0;
const E1: usize = 1;
const W1: usize = 2;
const E2: usize = 3;
const W2: usize = 4;

#[derive(Clone, Debug)]
pub struct Swe2d<T: Scalar> {
    cfg: Swe2dConfig,
    dx1: T,
    dx2: T,
    c: DVector<T>,
    sparsity: Vec<[usize; 5]>,
    param_box: ParamBox,
}

impl<T: Scalar> Swe2d<T> {
    pub fn new(cfg: &Swe2dConfig) -> Result<Self> {
        if cfg.nx1 < 3 || cfg.nx2 < 3 {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least 3 points per direction, got {} × {}",
                cfg.nx1, cfg.nx2
            )));
        }
        if !(cfg.lx1 > 0.0 && cfg.lx2 > 0.0) {
            return Err(Error::InvalidArgument("domain half-widths must be positive".into()));
        }
        let (nx1, nx2) = (cfg.nx1, cfg.nx2);
        let n = nx1 * nx2;
        let sparsity = (0..n)
            .map(|p| {
                let (i, j) = (p % nx1, p / nx1);
                let at = |i: usize, j: usize| n + i + nx1 * j;
                [
                    p,
                    at((i + 1) % nx1, j),
                    at((i + nx1 - 1) % nx1, j),
                    at(i, (j + 1) % nx2),
                    at(i, (j + nx2 - 1) % nx2),
                ]
            })
            .collect();
        Ok(Self {
            dx1: lit(2.0 * cfg.lx1 / nx1 as f64),
            dx2: lit(2.0 * cfg.lx2 / nx2 as f64),
            c: DVector::from_element(n, T::one()),
            sparsity,
            param_box: ParamBox::new(vec![(1.1, 1.7), (0.7, 1.3)]),
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &Swe2dConfig {
        &self.cfg
    }

    pub fn spacing(&self) -> (T, T) {
        (self.dx1, self.dx2)
    }

    /// Grid coordinates of unknown `p`.
    pub fn node(&self, p: usize) -> (f64, f64) {
        let (i, j) = (p % self.cfg.nx1, p / self.cfg.nx1);
        let dx1 = 2.0 * self.cfg.lx1 / self.cfg.nx1 as f64;
        let dx2 = 2.0 * self.cfg.lx2 / self.cfg.nx2 as f64;
        (-self.cfg.lx1 + i as f64 * dx1, -self.cfg.lx2 + j as f64 * dx2)
    }

    /// Centered periodic first differences `(D₁Φ, D₂Φ)` of a grid field.
    pub fn first_differences(&self, phi: &[T]) -> (Vec<T>, Vec<T>) {
        let n = self.c.len();
        let two = lit::<T>(2.0);
        let mut d1 = Vec::with_capacity(n);
        let mut d2 = Vec::with_capacity(n);
        for cols in &self.sparsity {
            let v = |k: usize| phi[cols[k] - n];
            d1.push((v(E1) - v(W1)) / (two * self.dx1));
            d2.push((v(E2) - v(W2)) / (two * self.dx2));
        }
        (d1, d2)
    }

    fn derivs(&self, local: &[T]) -> (T, T) {
        let two = lit::<T>(2.0);
        (
            (local[E1] - local[W1]) / (two * self.dx1),
            (local[E2] - local[W2]) / (two * self.dx2),
        )
    }
}

impl<T: Scalar> HamiltonianModel<T> for Swe2d<T> {
    fn half_dim(&self) -> usize {
        self.c.len()
    }

    fn num_terms(&self) -> usize {
        self.c.len()
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

    fn quadratic_op(&self, eta: &[T]) -> CsrMatrix<T> {
        let n = self.c.len();
        let gamma = eta[1];
        let entries: Vec<_> = (0..n).map(|i| (i, i, gamma)).collect();
        CsrMatrix::from_triplets(2 * n, 2 * n, &entries)
    }

    fn linear_term(&self, _eta: &[T]) -> DVector<T> {
        DVector::zeros(2 * self.c.len())
    }

    fn constant_term(&self, _eta: &[T]) -> T {
        T::zero()
    }

    fn term(&self, _row: usize, local: &[T], eta: &[T]) -> T {
        let (a, b) = self.derivs(local);
        eta[1] * lit::<T>(0.5) * local[CHI] * (a * a + b * b)
    }

    fn term_gradient(&self, _row: usize, local: &[T], eta: &[T], out: &mut [T]) {
        let gamma = eta[1];
        let two = lit::<T>(2.0);
        let (a, b) = self.derivs(local);
        let chi = local[CHI];
        out[CHI] = gamma * lit::<T>(0.5) * (a * a + b * b);
        let g1 = gamma * chi * a / (two * self.dx1);
        let g2 = gamma * chi * b / (two * self.dx2);
        out[E1] = g1;
        out[W1] = -g1;
        out[E2] = g2;
        out[W2] = -g2;
    }

    fn term_hessian(&self, _row: usize, local: &[T], eta: &[T], out: &mut [T]) {
        let gamma = eta[1];
        let two = lit::<T>(2.0);
        let (a, b) = self.derivs(local);
        let chi = local[CHI];
        out.iter_mut().for_each(|v| *v = T::zero());
        let mut set = |r: usize, c: usize, v: T| {
            out[r * 5 + c] = v;
            out[c * 5 + r] = v;
        };
        let x1 = gamma * a / (two * self.dx1);
        let x2 = gamma * b / (two * self.dx2);
        set(CHI, E1, x1);
        set(CHI, W1, -x1);
        set(CHI, E2, x2);
        set(CHI, W2, -x2);
        let h1 = gamma * chi / (lit::<T>(4.0) * self.dx1 * self.dx1);
        let h2 = gamma * chi / (lit::<T>(4.0) * self.dx2 * self.dx2);
        set(E1, E1, h1);
        set(W1, W1, h1);
        set(E1, W1, -h1);
        set(E2, E2, h2);
        set(W2, W2, h2);
        set(E2, W2, -h2);
    }

    fn initial_state(&self, eta: &[T]) -> DVector<T> {
        let n = self.c.len();
        let beta = eta[0];
        DVector::from_fn(2 * n, |p, _| {
            if p < n {
                let (x1, x2) = self.node(p);
                T::one() + lit::<T>(0.5) * (-beta * lit::<T>(x1 * x1 + x2 * x2)).exp()
            } else {
                T::zero()
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testing::*;
    use crate::model::{eval_g, eval_gradient, eval_hamiltonian, eval_jac_rows};
    use nalgebra::DMatrix;

    fn model(nx: usize) -> Swe2d<f64> {
        Swe2d::new(&Swe2dConfig::desk_with_grid(nx, nx)).unwrap()
    }

    /// Dense periodic centered difference along one axis.
    fn dense_diff(nx1: usize, nx2: usize, dx: f64, axis: usize) -> DMatrix<f64> {
        let n = nx1 * nx2;
        let mut d = DMatrix::zeros(n, n);
        for j in 0..nx2 {
            for i in 0..nx1 {
                let p = i + nx1 * j;
                let (e, w) = if axis == 0 {
                    ((i + 1) % nx1 + nx1 * j, (i + nx1 - 1) % nx1 + nx1 * j)
                } else {
                    (i + nx1 * ((j + 1) % nx2), i + nx1 * ((j + nx2 - 1) % nx2))
                };
                d[(p, e)] += 1.0 / (2.0 * dx);
                d[(p, w)] -= 1.0 / (2.0 * dx);
            }
        }
        d
    }

    #[test]
    fn full_scale_grid_spacing() {
        let m = Swe2d::<f64>::new(&Swe2dConfig::full_scale()).unwrap();
        assert!((m.spacing().0 - 0.08).abs() < 1e-15);
        assert_eq!(m.dim(), 5000);
    }

    #[test]
    fn rejects_tiny_grids() {
        assert!(Swe2d::<f64>::new(&Swe2dConfig::desk_with_grid(2, 8)).is_err());
        assert!(Swe2d::<f64>::new(&Swe2dConfig { lx1: -1.0, ..Swe2dConfig::desk() }).is_err());
    }

    #[test]
    fn difference_of_constant_vanishes() {
        let m = model(16);
        let (d1, d2) = m.first_differences(&vec![3.25; 256]);
        assert!(d1.iter().chain(&d2).all(|&v| v == 0.0));
    }

    #[test]
    fn difference_is_second_order() {
        let err = |nx: usize| {
            let m = model(nx);
            let phi: Vec<f64> = (0..nx * nx)
                .map(|p| (std::f64::consts::PI * m.node(p).0 / 2.0).sin())
                .collect();
            let (d1, _) = m.first_differences(&phi);
            (0..nx * nx)
                .map(|p| {
                    let exact = std::f64::consts::FRAC_PI_2 * (std::f64::consts::PI * m.node(p).0 / 2.0).cos();
                    (d1[p] - exact).abs()
                })
                .fold(0.0, f64::max)
        };
        let ratio = err(16) / err(32);
        assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn zero_potential_gives_zero_terms() {
        let m = model(8);
        let eta = [1.4, 1.0];
        let g = eval_g(&m, &m.initial_state(&eta), &eta, None).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sparsity_split_is_one_and_four() {
        assert_eq!(model(5).sparsity_split(), (1, 4));
    }

    #[test]
    fn sparsity_matches_finite_difference_detection() {
        let m = model(4);
        let eta = [1.3, 1.1];
        let y = random_state(m.dim(), 1.0, 11) + m.initial_state(&eta);
        let rows: Vec<usize> = (0..m.num_terms()).collect();
        let jac = eval_jac_rows(&m, &y, &eta, &rows).unwrap();
        for row in &jac {
            let mut detected = vec![];
            for col in 0..m.dim() {
                let mut yp = y.clone();
                yp[col] += 1e-3;
                let diff = eval_g(&m, &yp, &eta, Some(&[row.row])).unwrap()[0]
                    - eval_g(&m, &y, &eta, Some(&[row.row])).unwrap()[0];
                if diff != 0.0 {
                    detected.push(col);
                }
            }
            let mut listed = row.cols.clone();
            listed.sort();
            assert_eq!(detected, listed);
        }
    }

    #[test]
    fn gradient_matches_dense_oracle() {
        let m = model(4);
        let (n, dx) = (16, 1.0);
        let eta = [1.2, 0.8];
        let y = random_state(2 * n, 1.0, 5);
        let (chi, phi) = (y.rows(0, n).into_owned(), y.rows(n, n).into_owned());
        let d1 = dense_diff(4, 4, dx, 0);
        let d2 = dense_diff(4, 4, dx, 1);
        let (a, b) = (&d1 * &phi, &d2 * &phi);
        // Dense J_G with c = 1: ∂G/∂χ = diag(...), ∂G/∂Φ = γ diag(χ)(diag(a) D₁ + diag(b) D₂).
        let mut jac = DMatrix::zeros(n, 2 * n);
        for i in 0..n {
            jac[(i, i)] = 0.5 * eta[1] * (a[i] * a[i] + b[i] * b[i]);
            for k in 0..n {
                jac[(i, n + k)] = eta[1] * chi[i] * (a[i] * d1[(i, k)] + b[i] * d2[(i, k)]);
            }
        }
        let mut l = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            l[(i, i)] = eta[1];
        }
        let oracle = &l * &y + jac.transpose() * DVector::from_element(n, 1.0);
        let ours = eval_gradient(&m, &y, &eta).unwrap();
        assert!((ours - oracle).amax() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences_at_random_states() {
        let m = model(5);
        for seed in 0..100 {
            let eta = [1.1 + 0.006 * seed as f64, 0.7 + 0.006 * seed as f64];
            let y = random_state(m.dim(), 1.0, seed) + m.initial_state(&eta);
            let fd = fd_gradient(|v| eval_hamiltonian(&m, v, &eta).unwrap(), &y, 1e-6);
            let g = eval_gradient(&m, &y, &eta).unwrap();
            assert!(rel_err(&g, &fd) < 1e-6, "seed {seed}: {}", rel_err(&g, &fd));
        }
    }
}
