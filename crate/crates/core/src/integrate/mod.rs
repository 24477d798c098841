//! Implicit midpoint (IMR) and average vector field (AVF) time stepping.
//!
//! Both schemes are applied to any [`HamiltonianFlow`]: full-order systems
//! with sparse Hessians as well as reduced and hyper-reduced systems with
//! small dense Hessians. Each step solves its nonlinear equation with Newton's
//! method, starting from the previous state.

mod quadrature;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{apply_poisson, apply_poisson_cols, sparse_solve, CsrMatrix};
use crate::model::{check_param, eval_g, eval_hessian_triplets, gather, HamiltonianModel};
use crate::scalar::{as_f64, lit, Scalar};

pub use quadrature::QuadratureRule;

/// Hessian of a flow's energy.
#[derive(Clone, Debug)]
pub enum Hessian<T> {
    Dense(DMatrix<T>),
    /// `(row, col, value)` entries; duplicates are summed.
    Sparse { dim: usize, entries: Vec<(usize, usize, T)> },
}

/// A canonical Hamiltonian system `ẏ = J ∇H(y)` with the parameter bound.
pub trait HamiltonianFlow<T: Scalar> {
    fn dim(&self) -> usize;
    fn energy(&self, y: &DVector<T>) -> Result<T>;
    fn gradient(&self, y: &DVector<T>) -> Result<DVector<T>>;
    fn hessian(&self, y: &DVector<T>) -> Result<Hessian<T>>;

    /// Vector field `J ∇H(y)`.
    fn rhs(&self, y: &DVector<T>) -> Result<DVector<T>> {
        Ok(apply_poisson(&self.gradient(y)?))
    }
}

impl<T: Scalar, F: HamiltonianFlow<T> + ?Sized> HamiltonianFlow<T> for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn energy(&self, y: &DVector<T>) -> Result<T> {
        (**self).energy(y)
    }
    fn gradient(&self, y: &DVector<T>) -> Result<DVector<T>> {
        (**self).gradient(y)
    }
    fn hessian(&self, y: &DVector<T>) -> Result<Hessian<T>> {
        (**self).hessian(y)
    }
}

/// Full-order system of a model at a fixed parameter.
pub struct FullOrderSystem<M, T: Scalar> {
    model: M,
    eta: Vec<T>,
    l: CsrMatrix<T>,
    f: DVector<T>,
    g0: T,
}

impl<T: Scalar, M: HamiltonianModel<T>> FullOrderSystem<M, T> {
    pub fn new(model: M, eta: &[T]) -> Self {
        check_param(&model, eta);
        Self {
            l: model.quadratic_op(eta),
            f: model.linear_term(eta),
            g0: model.constant_term(eta),
            eta: eta.to_vec(),
            model,
        }
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn eta(&self) -> &[T] {
        &self.eta
    }

    fn check(&self, y: &DVector<T>) -> Result<()> {
        if y.len() != self.model.dim() {
            return Err(Error::dims("state vector", self.model.dim(), y.len()));
        }
        Ok(())
    }
}

impl<T: Scalar, M: HamiltonianModel<T>> HamiltonianFlow<T> for FullOrderSystem<M, T> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn energy(&self, y: &DVector<T>) -> Result<T> {
        self.check(y)?;
        let g = eval_g(&self.model, y, &self.eta, None)?;
        Ok(lit::<T>(0.5) * y.dot(&self.l.mul_vec(y)) + y.dot(&self.f) + self.g0 + self.model.weights().dot(&g))
    }

    fn gradient(&self, y: &DVector<T>) -> Result<DVector<T>> {
        self.check(y)?;
        let mut grad = self.l.mul_vec(y) + &self.f;
        let c = self.model.weights();
        let ys = y.as_slice();
        let (mut local, mut g) = (Vec::new(), Vec::new());
        for i in 0..self.model.num_terms() {
            let cols = self.model.sparsity(i);
            gather(ys, cols, &mut local);
            g.resize(cols.len(), T::zero());
            self.model.term_gradient(i, &local, &self.eta, &mut g);
            for (&col, &v) in cols.iter().zip(&g) {
                grad[col] += c[i] * v;
            }
        }
        Ok(grad)
    }

    fn hessian(&self, y: &DVector<T>) -> Result<Hessian<T>> {
        Ok(Hessian::Sparse {
            dim: self.dim(),
            entries: eval_hessian_triplets(&self.model, y, &self.eta)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JacobianMode {
    Analytic,
    FiniteDifference,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonConfig {
    /// Threshold on the 2-norm of the residual.
    pub tol: f64,
    pub max_iter: usize,
    pub jacobian: JacobianMode,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 50,
            jacobian: JacobianMode::Analytic,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidArgument(
                "Newton tolerance must be positive and max_iter at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Imr,
    Avf,
}

/// Newton statistics of one time step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Accumulates `scale · J H` into a Newton Jacobian, keeping the sparse or dense form.
enum JacobianAccumulator<T> {
    Empty,
    Dense(DMatrix<T>),
    Sparse { dim: usize, entries: Vec<(usize, usize, T)> },
}

impl<T: Scalar> JacobianAccumulator<T> {
    fn add_scaled_poisson(&mut self, h: Hessian<T>, scale: T) {
        match h {
            Hessian::Dense(m) => {
                let jm = apply_poisson_cols(&m) * scale;
                *self = match std::mem::replace(self, JacobianAccumulator::Empty) {
                    JacobianAccumulator::Empty => JacobianAccumulator::Dense(jm),
                    JacobianAccumulator::Dense(acc) => JacobianAccumulator::Dense(acc + jm),
                    JacobianAccumulator::Sparse { dim, entries } => {
                        let mut acc = CsrMatrix::from_triplets(dim, dim, &entries).to_dense();
                        acc += jm;
                        JacobianAccumulator::Dense(acc)
                    }
                };
            }
            Hessian::Sparse { dim, entries } => {
                let n = dim / 2;
                let mapped = entries.into_iter().map(|(r, c, v)| {
                    if r >= n {
                        (r - n, c, v * scale)
                    } else {
                        (r + n, c, -v * scale)
                    }
                });
                match self {
                    JacobianAccumulator::Empty => {
                        *self = JacobianAccumulator::Sparse {
                            dim,
                            entries: mapped.collect(),
                        }
                    }
                    JacobianAccumulator::Sparse { entries: acc, .. } => acc.extend(mapped),
                    JacobianAccumulator::Dense(acc) => {
                        for (r, c, v) in mapped {
                            acc[(r, c)] += v;
                        }
                    }
                }
            }
        }
    }

    /// Solves `(I - A) x = rhs` where `A` is the accumulated matrix.
    fn solve_identity_minus(self, rhs: &DVector<T>) -> Result<DVector<T>> {
        let dim = rhs.len();
        match self {
            JacobianAccumulator::Empty => Ok(rhs.clone()),
            JacobianAccumulator::Dense(a) => {
                let m = DMatrix::identity(dim, dim) - a;
                m.lu()
                    .solve(rhs)
                    .ok_or_else(|| Error::Singular("Newton Jacobian".into()))
            }
            JacobianAccumulator::Sparse { entries, .. } => {
                let mut all: Vec<(usize, usize, T)> = entries.into_iter().map(|(r, c, v)| (r, c, -v)).collect();
                all.extend((0..dim).map(|i| (i, i, T::one())));
                sparse_solve(dim, &all, rhs)
            }
        }
    }
}

fn check_step<T: Scalar, F: HamiltonianFlow<T> + ?Sized>(flow: &F, y: &DVector<T>, dt: T) -> Result<()> {
    if y.len() != flow.dim() {
        return Err(Error::dims("state vector", flow.dim(), y.len()));
    }
    if dt < T::zero() || !dt.is_finite() {
        return Err(Error::InvalidArgument("time step must be finite and non-negative".into()));
    }
    Ok(())
}

/// Newton iteration for `F(x) = 0` starting at `x0`.
fn newton<T: Scalar>(
    x0: &DVector<T>,
    cfg: &NewtonConfig,
    residual: impl Fn(&DVector<T>) -> Result<DVector<T>>,
    jacobian: impl Fn(&DVector<T>) -> Result<JacobianAccumulator<T>>,
) -> Result<(DVector<T>, StepStats)> {
    cfg.validate()?;
    let tol: T = lit(cfg.tol);
    let mut x = x0.clone();
    let mut r = residual(&x)?;
    let mut norm = r.norm();
    let mut it = 0;
    while !(norm <= tol) {
        if it == cfg.max_iter || !norm.is_finite() {
            return Err(Error::NewtonDivergence {
                iterations: it,
                residual: as_f64(norm),
            });
        }
        let dx = match cfg.jacobian {
            JacobianMode::Analytic => jacobian(&x)?.solve_identity_minus(&r)?,
            JacobianMode::FiniteDifference => fd_jacobian(&x, &r, &residual)?
                .lu()
                .solve(&r)
                .ok_or_else(|| Error::Singular("finite-difference Newton Jacobian".into()))?,
        };
        x -= dx;
        r = residual(&x)?;
        norm = r.norm();
        it += 1;
    }
    Ok((
        x,
        StepStats {
            iterations: it,
            residual: as_f64(norm),
        },
    ))
}

fn fd_jacobian<T: Scalar>(
    x: &DVector<T>,
    r0: &DVector<T>,
    residual: &impl Fn(&DVector<T>) -> Result<DVector<T>>,
) -> Result<DMatrix<T>> {
    let dim = x.len();
    let root_eps = T::default_epsilon().sqrt();
    let mut jac = DMatrix::zeros(dim, dim);
    let mut xp = x.clone();
    for j in 0..dim {
        let h = root_eps * T::one().max(x[j].abs());
        xp[j] = x[j] + h;
        let col = (residual(&xp)? - r0) / h;
        jac.set_column(j, &col);
        xp[j] = x[j];
    }
    Ok(jac)
}

/// One implicit midpoint step: `y⁺ = y + Δt J ∇H((y + y⁺)/2)`.
pub fn step_imr<T: Scalar, F: HamiltonianFlow<T> + ?Sized>(
    flow: &F,
    y: &DVector<T>,
    dt: T,
    cfg: &NewtonConfig,
) -> Result<(DVector<T>, StepStats)> {
    check_step(flow, y, dt)?;
    let half = lit::<T>(0.5);
    newton(
        y,
        cfg,
        |x| {
            let mid = (x + y) * half;
            Ok(x - y - apply_poisson(&flow.gradient(&mid)?) * dt)
        },
        |x| {
            let mid = (x + y) * half;
            let mut acc = JacobianAccumulator::Empty;
            acc.add_scaled_poisson(flow.hessian(&mid)?, dt * half);
            Ok(acc)
        },
    )
}

/// One AVF step: `y⁺ = y + Δt J ∫₀¹ ∇H(ξ y⁺ + (1 - ξ) y) dξ`, integral by `quad`.
pub fn step_avf<T: Scalar, F: HamiltonianFlow<T> + ?Sized>(
    flow: &F,
    y: &DVector<T>,
    dt: T,
    cfg: &NewtonConfig,
    quad: &QuadratureRule<T>,
) -> Result<(DVector<T>, StepStats)> {
    check_step(flow, y, dt)?;
    if quad.is_empty() {
        return Err(Error::InvalidArgument("empty quadrature rule".into()));
    }
    let point = |x: &DVector<T>, xi: T| x * xi + y * (T::one() - xi);
    newton(
        y,
        cfg,
        |x| {
            let mut avg = DVector::zeros(y.len());
            for (&xi, &w) in quad.nodes.iter().zip(&quad.weights) {
                avg += flow.gradient(&point(x, xi))? * w;
            }
            Ok(x - y - apply_poisson(&avg) * dt)
        },
        |x| {
            let mut acc = JacobianAccumulator::Empty;
            for (&xi, &w) in quad.nodes.iter().zip(&quad.weights) {
                acc.add_scaled_poisson(flow.hessian(&point(x, xi))?, dt * w * xi);
            }
            Ok(acc)
        },
    )
}

/// Scheme, Newton settings and AVF quadrature.
#[derive(Clone, Debug)]
pub struct Integrator<T> {
    pub scheme: Scheme,
    pub newton: NewtonConfig,
    pub quadrature: QuadratureRule<T>,
}

impl<T: Scalar> Integrator<T> {
    /// Newton defaults and three-point Gauss–Legendre quadrature.
    pub fn new(scheme: Scheme) -> Self {
        Self {
            scheme,
            newton: NewtonConfig::default(),
            quadrature: QuadratureRule::gauss_legendre(3).expect("three points"),
        }
    }

    pub fn step<F: HamiltonianFlow<T> + ?Sized>(
        &self,
        flow: &F,
        y: &DVector<T>,
        dt: T,
    ) -> Result<(DVector<T>, StepStats)> {
        match self.scheme {
            Scheme::Imr => step_imr(flow, y, dt, &self.newton),
            Scheme::Avf => step_avf(flow, y, dt, &self.newton, &self.quadrature),
        }
    }
}

/// States `y⁰, …, y^{n_t}` and per-step Newton statistics.
#[derive(Clone, Debug)]
pub struct Trajectory<T: Scalar> {
    pub states: Vec<DVector<T>>,
    pub stats: Vec<StepStats>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> &DVector<T> {
        self.states.last().expect("trajectory holds the initial state")
    }

    pub fn newton_iterations(&self) -> usize {
        self.stats.iter().map(|s| s.iterations).sum()
    }

    /// States as columns of a matrix.
    pub fn to_matrix(&self) -> DMatrix<T> {
        DMatrix::from_columns(&self.states)
    }
}

/// Integrates `n_steps` steps from `y0`, calling `on_step(j, y^j)` after each new state.
///
/// A failing step or callback aborts the run with the step index attached.
pub fn integrate_trajectory<T: Scalar, F: HamiltonianFlow<T> + ?Sized>(
    flow: &F,
    y0: &DVector<T>,
    dt: T,
    n_steps: usize,
    integrator: &Integrator<T>,
    mut on_step: impl FnMut(usize, &DVector<T>) -> Result<()>,
) -> Result<Trajectory<T>> {
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut stats = Vec::with_capacity(n_steps);
    states.push(y0.clone());
    for j in 1..=n_steps {
        let (next, st) = integrator
            .step(flow, &states[j - 1], dt)
            .map_err(|e| e.at_step(j))?;
        on_step(j, &next).map_err(|e| e.at_step(j))?;
        states.push(next);
        stats.push(st);
    }
    Ok(Trajectory { states, stats })
}
