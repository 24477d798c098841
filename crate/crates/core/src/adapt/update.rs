//! Rank-r corrections of the DEIM basis on the sampled rows.
//!
//! With `C = (PᵀU)⁻¹PᵀF` and `R = UC − F` on a window `F`, the correction
//! `U ← U + S a bᵀ` minimizes `‖SᵀR + a bᵀC‖_F` over rank-r pairs. `b` solves
//! `C (SᵀR)ᵀ(SᵀR) Cᵀ b = λ CCᵀ b` and `a_i = −SᵀR Cᵀ b_i / ‖Cᵀ b_i‖²`.

use nalgebra::{DMatrix, DVector};

use crate::deim::{deim_indices_greedy, DeimProjector};
use crate::error::{Error, Result};
use crate::linalg::{frob2, numerical_rank, select_rows, singular_values, thin_svd};
use crate::scalar::{as_f64, eps_tol, Scalar};

/// How many eigenpairs of the update problem are kept.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RankPolicy {
    /// At most `r`, capped at the numerical rank.
    Fixed(usize),
    /// Singular values of `SᵀRCᵀL⁻ᵀ` above `τ_r` times the largest.
    Tolerance(f64),
}

impl RankPolicy {
    /// Every nonzero direction.
    pub fn full() -> Self {
        RankPolicy::Fixed(usize::MAX)
    }

    pub(crate) fn select<T: Scalar>(&self, sigma: &DVector<T>, rows: usize, cols: usize) -> usize {
        let rbar = numerical_rank(sigma, rows, cols);
        match *self {
            RankPolicy::Fixed(r) => r.min(rbar),
            RankPolicy::Tolerance(tau) => {
                if rbar == 0 {
                    return 0;
                }
                let cut = tau * as_f64(sigma[0]);
                sigma.iter().take(rbar).filter(|&&s| as_f64(s) > cut).count()
            }
        }
    }
}

/// Factorization used for the generalized eigenproblem.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FactorPath {
    /// Cholesky of `CCᵀ`.
    Cholesky,
    /// Column-pivoted QR of `Cᵀ`, for rank-deficient or ill-conditioned `C`.
    PivotedQr,
}

impl FactorPath {
    pub fn as_str(&self) -> &'static str {
        match self {
            FactorPath::Cholesky => "cholesky",
            FactorPath::PivotedQr => "pivoted-qr",
        }
    }
}

/// Above this condition number of `CCᵀ` the QR path is taken.
pub const CHOLESKY_CONDITION_LIMIT: f64 = 1e12;

/// Solution `(a, b, λ)` of the rank-r update problem.
#[derive(Clone, Debug)]
pub struct RankUpdate<T: Scalar> {
    /// `m_s × r`.
    pub a: DMatrix<T>,
    /// `m × r`.
    pub b: DMatrix<T>,
    /// Generalized eigenvalues, decreasing.
    pub lambda: Vec<T>,
    pub path: FactorPath,
}

impl<T: Scalar> RankUpdate<T> {
    pub fn rank(&self) -> usize {
        self.lambda.len()
    }

    pub fn lambda_sum(&self) -> T {
        self.lambda.iter().fold(T::zero(), |acc, &l| acc + l)
    }

    /// `a bᵀ`, the correction of the sampled rows of `U`.
    pub fn correction(&self) -> DMatrix<T> {
        &self.a * self.b.transpose()
    }

    fn empty(ms: usize, m: usize, path: FactorPath) -> Self {
        Self {
            a: DMatrix::zeros(ms, 0),
            b: DMatrix::zeros(m, 0),
            lambda: Vec::new(),
            path,
        }
    }
}

/// Condition number of `CCᵀ`, infinite when `C` lacks full row rank.
pub fn gram_condition<T: Scalar>(c: &DMatrix<T>) -> Result<f64> {
    if c.nrows() > c.ncols() {
        return Ok(f64::INFINITY);
    }
    let s = singular_values(c)?;
    match (s.iter().next(), s.iter().last()) {
        (Some(&hi), Some(&lo)) if lo > T::zero() => Ok((as_f64(hi) / as_f64(lo)).powi(2)),
        _ => Ok(f64::INFINITY),
    }
}

/// Best rank-r correction for the sampled residual `str_ = SᵀR` and coefficients `c = C`.
pub fn solve_rank_r_update<T: Scalar>(
    str_: &DMatrix<T>,
    c: &DMatrix<T>,
    policy: RankPolicy,
) -> Result<RankUpdate<T>> {
    let (ms, wbar) = str_.shape();
    let m = c.nrows();
    if c.ncols() != wbar {
        return Err(Error::dims("window columns of C", wbar, c.ncols()));
    }
    let path = if gram_condition(c)? > CHOLESKY_CONDITION_LIMIT {
        FactorPath::PivotedQr
    } else {
        FactorPath::Cholesky
    };
    if ms == 0 || m == 0 || frob2(str_) == T::zero() {
        return Ok(RankUpdate::empty(ms, m, path));
    }
    let x = str_ * c.transpose();
    // `mt` has orthonormal-equivalent scaling: M = SᵀR Cᵀ F⁻ᵀ for a factor F Fᵀ = CCᵀ.
    let (mt, back): (DMatrix<T>, Box<dyn Fn(&DVector<T>) -> Result<DVector<T>>>) = match path {
        FactorPath::Cholesky => {
            let chol = (c * c.transpose())
                .cholesky()
                .ok_or_else(|| Error::Singular("CCᵀ is not positive definite".into()))?;
            let l = chol.l();
            let y = l
                .solve_lower_triangular(&x.transpose())
                .ok_or_else(|| Error::Singular("Cholesky factor of CCᵀ".into()))?;
            let lt = l.transpose();
            (
                y.transpose(),
                Box::new(move |v: &DVector<T>| {
                    lt.solve_upper_triangular(v)
                        .ok_or_else(|| Error::Singular("Cholesky factor of CCᵀ".into()))
                }),
            )
        }
        FactorPath::PivotedQr => {
            let qr = c.transpose().col_piv_qr();
            let (q, r) = (qr.q(), qr.r());
            let mut perm = DMatrix::<T>::identity(m, m);
            qr.p().permute_columns(&mut perm);
            let diag = DVector::from_iterator(r.nrows().min(m), (0..r.nrows().min(m)).map(|i| r[(i, i)].abs()));
            let cut = diag[0] * eps_tol::<T>(1e-10, 1e3);
            let rank = diag.iter().take_while(|&&v| v > cut).count();
            if rank == 0 {
                return Ok(RankUpdate::empty(ms, m, path));
            }
            let r11 = r.view((0, 0), (rank, rank)).into_owned();
            let qq = q.columns(0, rank).into_owned();
            (
                str_ * qq,
                Box::new(move |v: &DVector<T>| {
                    let y = r11
                        .solve_upper_triangular(v)
                        .ok_or_else(|| Error::Singular("pivoted QR factor of Cᵀ".into()))?;
                    let mut full = DVector::zeros(m);
                    full.rows_mut(0, rank).copy_from(&y);
                    Ok(&perm * full)
                }),
            )
        }
    };
    let (_, sigma, v) = thin_svd(&mt)?;
    let r = policy.select(&sigma, mt.nrows(), mt.ncols());
    let mut a = DMatrix::zeros(ms, r);
    let mut b = DMatrix::zeros(m, r);
    let mut lambda = Vec::with_capacity(r);
    for i in 0..r {
        let bi = back(&v.column(i).into_owned())?;
        let ctb = c.tr_mul(&bi);
        let scale = ctb.norm_squared();
        if scale == T::zero() {
            return Err(Error::Singular("Cᵀb vanished".into()));
        }
        a.set_column(i, &(-(&x * &bi) / scale));
        b.set_column(i, &bi);
        lambda.push(sigma[i] * sigma[i]);
    }
    Ok(RankUpdate { a, b, lambda, path })
}

/// `C = (PᵀU)⁻¹PᵀF` and the residual rows `R[rows] = U[rows]C − F[rows]`.
#[derive(Clone, Debug)]
pub struct WindowResidual<T: Scalar> {
    pub coefficients: DMatrix<T>,
    pub rows: Vec<usize>,
    pub residual: DMatrix<T>,
}

impl<T: Scalar> WindowResidual<T> {
    pub fn norm(&self) -> T {
        frob2(&self.residual).sqrt()
    }

    /// Restriction to a subset of the stored rows.
    pub fn restrict(&self, rows: &[usize]) -> Result<Self> {
        let at = positions(&self.rows, rows)?;
        Ok(Self {
            coefficients: self.coefficients.clone(),
            rows: rows.to_vec(),
            residual: select_rows(&self.residual, &at),
        })
    }
}

pub(crate) fn positions(have: &[usize], want: &[usize]) -> Result<Vec<usize>> {
    want.iter()
        .map(|w| {
            have.iter()
                .position(|h| h == w)
                .ok_or(Error::IndexOutOfRange { index: *w, len: have.len() })
        })
        .collect()
}

/// Residual rows from snapshot rows: `f_interp = PᵀF` and `f_rows = F[rows]`.
pub fn compute_window_residual<T: Scalar>(
    projector: &DeimProjector<T>,
    f_interp: &DMatrix<T>,
    f_rows: &DMatrix<T>,
    rows: &[usize],
) -> Result<WindowResidual<T>> {
    if f_interp.nrows() != projector.m() {
        return Err(Error::dims("interpolated window rows", projector.m(), f_interp.nrows()));
    }
    if f_rows.nrows() != rows.len() || f_rows.ncols() != f_interp.ncols() {
        return Err(Error::dims("window residual rows", rows.len(), f_rows.nrows()));
    }
    if let Some(&r) = rows.iter().find(|&&r| r >= projector.d()) {
        return Err(Error::IndexOutOfRange { index: r, len: projector.d() });
    }
    let coefficients = projector.solve(f_interp)?;
    let residual = select_rows(projector.basis(), rows) * &coefficients - f_rows;
    Ok(WindowResidual {
        coefficients,
        rows: rows.to_vec(),
        residual,
    })
}

/// What happened to the projector in [`apply_rank_update`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateOutcome {
    /// Rank-0 update; projector untouched.
    Skipped,
    /// New basis with freshly selected greedy indices.
    Updated,
    /// Greedy selection on the new basis failed; previous indices kept.
    KeptIndices,
    /// The new basis was singular on every index set tried; update discarded.
    Rejected,
}

impl UpdateOutcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            UpdateOutcome::Skipped => "skipped",
            UpdateOutcome::Updated => "updated",
            UpdateOutcome::KeptIndices => "kept-indices",
            UpdateOutcome::Rejected => "rejected",
        }
    }
}

/// Result of one basis adaptation.
#[derive(Clone, Debug)]
pub struct BasisUpdate<T: Scalar> {
    pub projector: DeimProjector<T>,
    pub update: RankUpdate<T>,
    pub outcome: UpdateOutcome,
    /// `‖SᵀR‖_F` before the correction.
    pub sampled_before: T,
    /// `‖Sᵀ(U_{j+1}C − F)‖_F`.
    pub sampled_after: T,
}

/// Applies the optimal rank-r correction on the sampled rows and reselects indices.
///
/// `residual.rows` is the sampling set. Rows of `U` outside it are copied unchanged.
pub fn apply_rank_update<T: Scalar>(
    projector: &DeimProjector<T>,
    residual: &WindowResidual<T>,
    policy: RankPolicy,
    c: &DVector<T>,
) -> Result<BasisUpdate<T>> {
    let update = solve_rank_r_update(&residual.residual, &residual.coefficients, policy)?;
    let sampled_before = residual.norm();
    if update.rank() == 0 {
        return Ok(BasisUpdate {
            projector: projector.clone(),
            update,
            outcome: UpdateOutcome::Skipped,
            sampled_before,
            sampled_after: sampled_before,
        });
    }
    let ab = update.correction();
    let sampled_after = frob2(&(&residual.residual + &ab * &residual.coefficients)).sqrt();
    let mut u = projector.basis().clone();
    for (l, &s) in residual.rows.iter().enumerate() {
        let mut row = u.row_mut(s);
        row += ab.row(l);
    }
    let (projector, outcome) = match deim_indices_greedy(&u).and_then(|beta| DeimProjector::new(u.clone(), beta, c)) {
        Ok(p) => (p, UpdateOutcome::Updated),
        Err(e) => {
            log::warn!("greedy selection on the adapted DEIM basis failed ({e}); keeping previous indices");
            match DeimProjector::new(u, projector.indices().to_vec(), c) {
                Ok(p) => (p, UpdateOutcome::KeptIndices),
                Err(e) => {
                    log::warn!("adapted DEIM basis is singular ({e}); update discarded");
                    (projector.clone(), UpdateOutcome::Rejected)
                }
            }
        }
    };
    Ok(BasisUpdate {
        projector,
        update,
        outcome,
        sampled_before,
        sampled_after,
    })
}

/// `ℂ`-free objective value `‖SᵀR + a bᵀ C‖_F²` for diagnostics.
pub fn update_objective<T: Scalar>(str_: &DMatrix<T>, c: &DMatrix<T>, update: &RankUpdate<T>) -> T {
    frob2(&(str_ + update.correction() * c))
}
