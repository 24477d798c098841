//! Orthosymplectic reduced bases and the Galerkin reduced-order model.
//!
//! A basis `A ∈ R^{2n×2k}` with `AᵀA = I` and `AᵀJA = J` turns the full system
//! into the Hamiltonian system `ż = J ∇H_r(z)` with `H_r(z) = H(Az)`.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::integrate::{HamiltonianFlow, Hessian};
use crate::linalg::{left_svd, poisson_matrix, select_rows};
use crate::model::{check_param, HamiltonianModel};
use crate::scalar::{as_f64, eps_tol, lit, Scalar};

/// Where a snapshot came from.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotLabel {
    pub time: f64,
    pub eta: Vec<f64>,
}

/// Full-order states stored as columns, with one label per column.
#[derive(Clone, Debug)]
pub struct SnapshotSet<T: Scalar> {
    pub states: DMatrix<T>,
    pub labels: Vec<SnapshotLabel>,
}

impl<T: Scalar> SnapshotSet<T> {
    pub fn new(states: DMatrix<T>, labels: Vec<SnapshotLabel>) -> Result<Self> {
        if states.ncols() != labels.len() {
            return Err(Error::dims("snapshot labels", states.ncols(), labels.len()));
        }
        Ok(Self { states, labels })
    }

    /// Concatenates sets column-wise.
    pub fn concat(sets: &[SnapshotSet<T>]) -> Result<Self> {
        let rows = sets.first().map_or(0, |s| s.states.nrows());
        if let Some(bad) = sets.iter().find(|s| s.states.nrows() != rows) {
            return Err(Error::dims("snapshot rows", rows, bad.states.nrows()));
        }
        let cols: usize = sets.iter().map(|s| s.states.ncols()).sum();
        let mut states = DMatrix::zeros(rows, cols);
        let mut labels = Vec::with_capacity(cols);
        let mut at = 0;
        for s in sets {
            states.columns_mut(at, s.states.ncols()).copy_from(&s.states);
            at += s.states.ncols();
            labels.extend(s.labels.iter().cloned());
        }
        Ok(Self { states, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BasisKind {
    ComplexSvd,
    CotangentLift,
    /// Supplied directly, e.g. a square canonical basis.
    Given,
}

/// Measured orthosymplecticity residuals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BasisCertificate {
    /// `‖AᵀA - I‖_max`.
    pub orthonormality: f64,
    /// `‖AᵀJA - J‖_max`.
    pub symplecticity: f64,
}

/// An orthosymplectic matrix `A ∈ R^{2n×2k}`.
#[derive(Clone, Debug)]
pub struct SymplecticBasis<T: Scalar> {
    a: DMatrix<T>,
    kind: BasisKind,
    singular_values: DVector<T>,
}

/// `𝕁 (u; v) = (-v; u)`, the action of `Jᵀ` on a phase-space vector.
fn rotate<T: Scalar>(x: &DVector<T>) -> DVector<T> {
    let n = x.len() / 2;
    DVector::from_fn(2 * n, |i, _| if i < n { -x[n + i] } else { x[i - n] })
}

impl<T: Scalar> SymplecticBasis<T> {
    /// Wraps `a` after checking the invariants to the certification tolerance.
    pub fn from_matrix(a: DMatrix<T>, kind: BasisKind) -> Result<Self> {
        let basis = Self {
            a,
            kind,
            singular_values: DVector::zeros(0),
        };
        basis.certify()?;
        Ok(basis)
    }

    /// The `2n × 2n` identity, a trivially orthosymplectic basis.
    pub fn identity(n: usize) -> Self {
        Self {
            a: DMatrix::identity(2 * n, 2 * n),
            kind: BasisKind::Given,
            singular_values: DVector::zeros(0),
        }
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    /// Reduced half dimension `k`.
    pub fn k(&self) -> usize {
        self.a.ncols() / 2
    }

    pub fn full_dim(&self) -> usize {
        self.a.nrows()
    }

    /// Singular values of the snapshot matrix the basis was built from.
    pub fn singular_values(&self) -> &DVector<T> {
        &self.singular_values
    }

    pub fn residuals(&self) -> BasisCertificate {
        let k2 = self.a.ncols();
        let ata = self.a.transpose() * &self.a;
        let orth = (ata - DMatrix::<T>::identity(k2, k2)).amax();
        let ja = crate::linalg::apply_poisson_cols(&self.a);
        let symp = (self.a.transpose() * ja - poisson_matrix::<T>(k2 / 2)).amax();
        BasisCertificate {
            orthonormality: as_f64(orth),
            symplecticity: as_f64(symp),
        }
    }

    /// Checks both invariants; the tolerance is `1e-12` in double precision.
    pub fn certify(&self) -> Result<BasisCertificate> {
        if self.a.nrows() % 2 != 0 || self.a.ncols() % 2 != 0 || self.a.ncols() > self.a.nrows() {
            return Err(Error::Certification(format!(
                "basis shape {}×{} is not 2n×2k with k ≤ n",
                self.a.nrows(),
                self.a.ncols()
            )));
        }
        let cert = self.residuals();
        let tol = as_f64(certification_tol::<T>());
        if !(cert.orthonormality <= tol && cert.symplecticity <= tol) {
            return Err(Error::Certification(format!(
                "orthonormality residual {:e}, symplecticity residual {:e}, tolerance {:e}",
                cert.orthonormality, cert.symplecticity, tol
            )));
        }
        Ok(cert)
    }

    /// `z = Aᵀ y`.
    pub fn project(&self, y: &DVector<T>) -> DVector<T> {
        self.a.tr_mul(y)
    }

    /// `y = A z`.
    pub fn lift(&self, z: &DVector<T>) -> DVector<T> {
        &self.a * z
    }
}

pub(crate) fn certification_tol<T: Scalar>() -> T {
    eps_tol(1e-12, 1e3)
}

fn split_qp<T: Scalar>(snapshots: &DMatrix<T>) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let rows = snapshots.nrows();
    if rows == 0 || rows % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "snapshot rows must be a positive even number, got {rows}"
        )));
    }
    if snapshots.ncols() == 0 || snapshots.iter().all(|v| *v == T::zero()) {
        return Err(Error::RankDeficient {
            requested: 1,
            attainable: 0,
        });
    }
    let n = rows / 2;
    Ok((
        snapshots.rows(0, n).into_owned(),
        snapshots.rows(n, n).into_owned(),
    ))
}

/// Complex SVD basis from snapshots `[Q; P]`.
///
/// The complex matrix `Q + iP` is handled through its real embedding
/// `[[Q, -P], [P, Q]]`, whose left singular vectors come in pairs `(a, 𝕁a)`
/// sharing one singular value. Pairs are extracted in order of decreasing
/// singular value with a symplectic Gram–Schmidt sweep, giving
/// `A = [a_1 … a_k, 𝕁a_1 … 𝕁a_k] = [[Φ_re, -Φ_im], [Φ_im, Φ_re]]`.
pub fn complex_svd_basis<T: Scalar>(snapshots: &DMatrix<T>, k: usize) -> Result<SymplecticBasis<T>> {
    let (q, p) = split_qp(snapshots)?;
    let (n, ns) = (q.nrows(), q.ncols());
    let mut embed = DMatrix::zeros(2 * n, 2 * ns);
    embed.view_mut((0, 0), (n, ns)).copy_from(&q);
    embed.view_mut((n, 0), (n, ns)).copy_from(&p);
    embed.view_mut((0, ns), (n, ns)).copy_from(&(-&p));
    embed.view_mut((n, ns), (n, ns)).copy_from(&q);
    let svd = left_svd(&embed)?;
    let attainable = svd.numerical_rank(2 * n, 2 * ns) / 2;
    if k == 0 || k > attainable {
        return Err(Error::RankDeficient {
            requested: k,
            attainable,
        });
    }
    let mut pairs: Vec<DVector<T>> = Vec::with_capacity(k);
    let drop_tol = lit::<T>(1e-6);
    for j in 0..svd.u.ncols() {
        if pairs.len() == k {
            break;
        }
        let mut v = svd.u.column(j).into_owned();
        // Two sweeps keep the result orthogonal to working precision.
        for _ in 0..2 {
            for a in &pairs {
                let ja = rotate(a);
                v -= a * a.dot(&v);
                v -= &ja * ja.dot(&v);
            }
        }
        let norm = v.norm();
        if norm > drop_tol {
            pairs.push(v / norm);
        }
    }
    if pairs.len() < k {
        return Err(Error::RankDeficient {
            requested: k,
            attainable: pairs.len(),
        });
    }
    let mut a = DMatrix::zeros(2 * n, 2 * k);
    for (i, v) in pairs.iter().enumerate() {
        a.set_column(i, v);
        a.set_column(k + i, &rotate(v));
    }
    // Each complex singular value appears twice in the embedding.
    let sigma = DVector::from_iterator(
        svd.sigma.len() / 2,
        svd.sigma.iter().step_by(2).copied(),
    );
    let basis = SymplecticBasis {
        a,
        kind: BasisKind::ComplexSvd,
        singular_values: sigma,
    };
    basis.certify()?;
    Ok(basis)
}

/// Cotangent lift basis `A = diag(Φ, Φ)` with `Φ` the dominant left singular
/// vectors of `[Q, P]`.
pub fn cotangent_lift_basis<T: Scalar>(snapshots: &DMatrix<T>, k: usize) -> Result<SymplecticBasis<T>> {
    let (q, p) = split_qp(snapshots)?;
    let (n, ns) = (q.nrows(), q.ncols());
    let mut stacked = DMatrix::zeros(n, 2 * ns);
    stacked.columns_mut(0, ns).copy_from(&q);
    stacked.columns_mut(ns, ns).copy_from(&p);
    let svd = left_svd(&stacked)?;
    let attainable = svd.numerical_rank(n, 2 * ns);
    if k == 0 || k > attainable {
        return Err(Error::RankDeficient {
            requested: k,
            attainable,
        });
    }
    let mut a = DMatrix::zeros(2 * n, 2 * k);
    a.view_mut((0, 0), (n, k)).copy_from(&svd.u.columns(0, k));
    a.view_mut((n, k), (n, k)).copy_from(&svd.u.columns(0, k));
    let basis = SymplecticBasis {
        a,
        kind: BasisKind::CotangentLift,
        singular_values: svd.sigma,
    };
    basis.certify()?;
    Ok(basis)
}

/// `z⁰ = Aᵀ y⁰`.
pub fn project_initial<T: Scalar>(basis: &SymplecticBasis<T>, y0: &DVector<T>) -> Result<DVector<T>> {
    if y0.len() != basis.full_dim() {
        return Err(Error::dims("initial state", basis.full_dim(), y0.len()));
    }
    Ok(basis.project(y0))
}

/// Per-call row evaluation counts of a reduced or hyper-reduced model.
#[derive(Debug, Default)]
pub struct EvalCounters {
    terms: AtomicUsize,
    gradients: AtomicUsize,
    hessians: AtomicUsize,
}

/// Plain copy of [`EvalCounters`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalCounts {
    /// Rows of `G` evaluated.
    pub terms: usize,
    /// Rows of the Jacobian of `G` evaluated.
    pub gradients: usize,
    /// Rows of the Hessian of `G` evaluated.
    pub hessians: usize,
}

impl EvalCounts {
    pub fn total(&self) -> usize {
        self.terms + self.gradients + self.hessians
    }
}

impl std::ops::Add for EvalCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            terms: self.terms + o.terms,
            gradients: self.gradients + o.gradients,
            hessians: self.hessians + o.hessians,
        }
    }
}

impl std::ops::Sub for EvalCounts {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self {
            terms: self.terms - o.terms,
            gradients: self.gradients - o.gradients,
            hessians: self.hessians - o.hessians,
        }
    }
}

impl EvalCounters {
    pub fn snapshot(&self) -> EvalCounts {
        EvalCounts {
            terms: self.terms.load(Ordering::Relaxed),
            gradients: self.gradients.load(Ordering::Relaxed),
            hessians: self.hessians.load(Ordering::Relaxed),
        }
    }

    fn add(&self, which: &AtomicUsize, count: usize) {
        which.fetch_add(count, Ordering::Relaxed);
    }
}

/// A weighted selection of rows of `G` composed with the basis: the map
/// `z ↦ Σ_ℓ w_ℓ G_{r_ℓ}(A z)` together with its gradient and Hessian in `z`.
///
/// For each selected row the rows of `A` at its sparsity columns are cached, so
/// evaluation costs `O(s · 2k)` per row and never forms `A z`.
#[derive(Debug)]
pub(crate) struct TermSet<T: Scalar> {
    rows: Vec<usize>,
    blocks: Vec<DMatrix<T>>,
    weights: DVector<T>,
    counters: EvalCounters,
}

impl<T: Scalar> TermSet<T> {
    pub(crate) fn new<M: HamiltonianModel<T> + ?Sized>(
        model: &M,
        a: &DMatrix<T>,
        rows: &[usize],
        weights: DVector<T>,
    ) -> Self {
        let blocks = rows
            .iter()
            .map(|&r| select_rows(a, model.sparsity(r)))
            .collect();
        Self {
            rows: rows.to_vec(),
            blocks,
            weights,
            counters: EvalCounters::default(),
        }
    }

    pub(crate) fn counts(&self) -> EvalCounts {
        self.counters.snapshot()
    }

    fn locals<'a>(&'a self, z: &'a DVector<T>) -> impl Iterator<Item = (usize, &'a DMatrix<T>, DVector<T>, T)> + 'a {
        self.rows
            .iter()
            .zip(&self.blocks)
            .zip(self.weights.iter())
            .map(move |((&r, b), &w)| (r, b, b * z, w))
    }

    /// Values `G_{r_ℓ}(A z)` of the selected rows.
    pub(crate) fn values<M: HamiltonianModel<T> + ?Sized>(&self, model: &M, z: &DVector<T>, eta: &[T]) -> DVector<T> {
        self.counters.add(&self.counters.terms, self.rows.len());
        DVector::from_iterator(
            self.rows.len(),
            self.locals(z).map(|(r, _, local, _)| model.term(r, local.as_slice(), eta)),
        )
    }

    pub(crate) fn energy<M: HamiltonianModel<T> + ?Sized>(&self, model: &M, z: &DVector<T>, eta: &[T]) -> T {
        self.weights.dot(&self.values(model, z, eta))
    }

    pub(crate) fn gradient<M: HamiltonianModel<T> + ?Sized>(&self, model: &M, z: &DVector<T>, eta: &[T]) -> DVector<T> {
        self.counters.add(&self.counters.gradients, self.rows.len());
        let mut out = DVector::zeros(z.len());
        let mut g = Vec::new();
        for (r, b, local, w) in self.locals(z) {
            g.clear();
            g.resize(local.len(), T::zero());
            model.term_gradient(r, local.as_slice(), eta, &mut g);
            out += b.tr_mul(&DVector::from_column_slice(&g)) * w;
        }
        out
    }

    pub(crate) fn hessian<M: HamiltonianModel<T> + ?Sized>(&self, model: &M, z: &DVector<T>, eta: &[T]) -> DMatrix<T> {
        self.counters.add(&self.counters.hessians, self.rows.len());
        let k2 = z.len();
        let mut out = DMatrix::zeros(k2, k2);
        let mut h = Vec::new();
        for (r, b, local, w) in self.locals(z) {
            let s = local.len();
            h.clear();
            h.resize(s * s, T::zero());
            model.term_hessian(r, local.as_slice(), eta, &mut h);
            let hm = DMatrix::from_row_slice(s, s, &h);
            out += b.tr_mul(&(hm * b)) * w;
        }
        out
    }
}

/// Galerkin reduced model `ż = J (L_r z + f_r + Aᵀ J_G(Az)ᵀ c)` at a fixed parameter.
#[derive(Debug)]
pub struct ReducedModel<M, T: Scalar> {
    model: M,
    eta: Vec<T>,
    basis: SymplecticBasis<T>,
    l_r: DMatrix<T>,
    f_r: DVector<T>,
    g0: T,
    terms: TermSet<T>,
}

/// Builds the reduced model of `model` at `eta` on a certified basis.
pub fn assemble_rom<T: Scalar, M: HamiltonianModel<T>>(
    model: M,
    basis: &SymplecticBasis<T>,
    eta: &[T],
) -> Result<ReducedModel<M, T>> {
    if basis.full_dim() != model.dim() {
        return Err(Error::dims("basis rows", model.dim(), basis.full_dim()));
    }
    basis.certify()?;
    check_param(&model, eta);
    let a = basis.matrix();
    let l = model.quadratic_op(eta);
    let la = l.mul_dense(a);
    let mut l_r = a.tr_mul(&la);
    // Symmetrize away round-off.
    l_r = (&l_r + l_r.transpose()) * lit::<T>(0.5);
    let f_r = a.tr_mul(&model.linear_term(eta));
    let all: Vec<usize> = (0..model.num_terms()).collect();
    let terms = TermSet::new(&model, a, &all, model.weights().clone());
    Ok(ReducedModel {
        g0: model.constant_term(eta),
        eta: eta.to_vec(),
        basis: basis.clone(),
        l_r,
        f_r,
        terms,
        model,
    })
}

impl<T: Scalar, M: HamiltonianModel<T>> ReducedModel<M, T> {
    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn eta(&self) -> &[T] {
        &self.eta
    }

    pub fn basis(&self) -> &SymplecticBasis<T> {
        &self.basis
    }

    pub fn reduced_quadratic(&self) -> &DMatrix<T> {
        &self.l_r
    }

    pub fn reduced_linear(&self) -> &DVector<T> {
        &self.f_r
    }

    pub fn constant(&self) -> T {
        self.g0
    }

    /// `½ zᵀ L_r z + zᵀ f_r + g0`.
    pub fn quadratic_energy(&self, z: &DVector<T>) -> T {
        lit::<T>(0.5) * z.dot(&(&self.l_r * z)) + z.dot(&self.f_r) + self.g0
    }

    pub fn quadratic_gradient(&self, z: &DVector<T>) -> DVector<T> {
        &self.l_r * z + &self.f_r
    }

    /// Row evaluations of `G` and its derivatives so far.
    pub fn counts(&self) -> EvalCounts {
        self.terms.counts()
    }

    fn check(&self, z: &DVector<T>) -> Result<()> {
        if z.len() != self.l_r.nrows() {
            return Err(Error::dims("reduced state", self.l_r.nrows(), z.len()));
        }
        Ok(())
    }
}

impl<T: Scalar, M: HamiltonianModel<T>> HamiltonianFlow<T> for ReducedModel<M, T> {
    fn dim(&self) -> usize {
        self.l_r.nrows()
    }

    fn energy(&self, z: &DVector<T>) -> Result<T> {
        self.check(z)?;
        Ok(self.quadratic_energy(z) + self.terms.energy(&self.model, z, &self.eta))
    }

    fn gradient(&self, z: &DVector<T>) -> Result<DVector<T>> {
        self.check(z)?;
        Ok(self.quadratic_gradient(z) + self.terms.gradient(&self.model, z, &self.eta))
    }

    fn hessian(&self, z: &DVector<T>) -> Result<Hessian<T>> {
        self.check(z)?;
        Ok(Hessian::Dense(&self.l_r + self.terms.hessian(&self.model, z, &self.eta)))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::integrate::{integrate_trajectory, FullOrderSystem, Integrator, Scheme};
    use crate::model::testing::*;
    use crate::model::{eval_hamiltonian, Nls1d, Nls1dConfig, ShiftedModel, Swe2d, Swe2dConfig};
    use nalgebra::Complex;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| 2.0 * rng.random::<f64>() - 1.0)
    }

    /// Random snapshots of decaying importance, `rows` even.
    pub fn decaying_snapshots(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut m = random_matrix(rows, cols, seed);
        for (j, mut c) in m.column_iter_mut().enumerate() {
            c *= 0.7f64.powi(j as i32);
        }
        m
    }

    fn complex_tail(y: &DMatrix<f64>, k: usize) -> f64 {
        let n = y.nrows() / 2;
        let z = DMatrix::from_fn(n, y.ncols(), |i, j| Complex::new(y[(i, j)], y[(n + i, j)]));
        let s = z.svd(false, false).singular_values;
        let mut s: Vec<f64> = s.iter().copied().collect();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        s[k..].iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn projection_error(basis: &SymplecticBasis<f64>, y: &DMatrix<f64>) -> f64 {
        let a = basis.matrix();
        (y - a * a.tr_mul(y)).norm()
    }

    #[test]
    fn single_canonical_pair_is_reproduced() {
        let n = 5;
        let mut y = DMatrix::zeros(2 * n, 3);
        y[(0, 0)] = 1.0;
        y[(n, 1)] = 2.0;
        y[(0, 2)] = -1.0;
        y[(n, 2)] = 0.5;
        let b = complex_svd_basis(&y, 1).unwrap();
        assert!(projection_error(&b, &y) < 1e-14);
        assert!(complex_svd_basis(&y, 2).is_err());
    }

    #[test]
    fn complex_svd_error_matches_complex_tail() {
        let y = decaying_snapshots(40, 12, 7);
        for k in [1, 3, 6] {
            let b = complex_svd_basis(&y, k).unwrap();
            let cert = b.certify().unwrap();
            assert!(cert.orthonormality <= 1e-12 && cert.symplecticity <= 1e-12);
            let tail = complex_tail(&y, k);
            assert!((projection_error(&b, &y) - tail).abs() < 1e-10 * (1.0 + tail), "k {k}");
        }
    }

    #[test]
    fn wide_snapshots_take_the_compressed_path() {
        let y = decaying_snapshots(12, 40, 3);
        let b = complex_svd_basis(&y, 4).unwrap();
        let tail = complex_tail(&y, 4);
        assert!((projection_error(&b, &y) - tail).abs() < 1e-10 * (1.0 + tail));
    }

    #[test]
    fn rank_error_names_attainable_rank() {
        let mut y = DMatrix::zeros(10, 2);
        y[(1, 0)] = 1.0;
        y[(7, 1)] = 1.0;
        match complex_svd_basis(&y, 4) {
            Err(Error::RankDeficient { requested: 4, attainable: 2 }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(complex_svd_basis(&DMatrix::<f64>::zeros(10, 3), 1).is_err());
    }

    #[test]
    fn cotangent_lift_reproduces_single_q_direction() {
        let n = 6;
        let v = DVector::from_fn(n, |i, _| i as f64 + 1.0);
        let mut y = DMatrix::zeros(2 * n, 3);
        for j in 0..3 {
            y.view_mut((0, j), (n, 1)).copy_from(&(&v * (j as f64 + 1.0)));
        }
        let b = cotangent_lift_basis(&y, 1).unwrap();
        let phi = b.matrix().view((0, 0), (n, 1)).into_owned();
        let unit = &v / v.norm();
        assert!((phi.column(0).dot(&unit).abs() - 1.0).abs() < 1e-14);
        assert!(projection_error(&b, &y) < 1e-13);
    }

    #[test]
    fn cotangent_lift_error_matches_stacked_tail() {
        let y = decaying_snapshots(30, 10, 2);
        let n = 15;
        let mut stacked = DMatrix::zeros(n, 20);
        stacked.columns_mut(0, 10).copy_from(&y.rows(0, n));
        stacked.columns_mut(10, 10).copy_from(&y.rows(n, n));
        let mut s: Vec<f64> = stacked.svd(false, false).singular_values.iter().copied().collect();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for k in [2, 5] {
            let b = cotangent_lift_basis(&y, k).unwrap();
            let tail = s[k..].iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((projection_error(&b, &y) - tail).abs() < 1e-10 * (1.0 + tail));
        }
    }

    #[test]
    fn poisson_commutes_with_basis() {
        let b = complex_svd_basis(&decaying_snapshots(20, 8, 1), 3).unwrap();
        let a = b.matrix();
        for seed in 0..5 {
            let v = random_state(20, 1.0, seed);
            let lhs = a.tr_mul(&crate::linalg::apply_poisson(&v));
            let rhs = crate::linalg::apply_poisson(&a.tr_mul(&v));
            assert!((lhs - rhs).amax() < 1e-13);
        }
    }

    #[test]
    fn projected_initial_state() {
        let y = decaying_snapshots(16, 6, 4);
        let b = complex_svd_basis(&y, 3).unwrap();
        assert!(project_initial(&b, &DVector::zeros(16)).unwrap().iter().all(|&v| v == 0.0));
        let inside = b.lift(&random_state(6, 1.0, 2));
        let z = project_initial(&b, &inside).unwrap();
        assert!((b.lift(&z) - &inside).norm() < 1e-14);
        let y0 = random_state(16, 1.0, 3);
        let a = b.matrix();
        let oracle = a * (a.transpose() * a).try_inverse().unwrap() * a.transpose() * &y0;
        let z = project_initial(&b, &y0).unwrap();
        assert!(((&y0 - b.lift(&z)).norm() - (&y0 - oracle).norm()).abs() < 1e-13);
        assert!(project_initial(&b, &DVector::zeros(15)).is_err());
    }

    fn nls_setup(n: usize) -> (Nls1d<f64>, SymplecticBasis<f64>) {
        let m = Nls1d::new(&Nls1dConfig { n, l: 0.11 }).unwrap();
        let y = decaying_snapshots(2 * n, 8, 5);
        let b = complex_svd_basis(&y, 4).unwrap();
        (m, b)
    }

    #[test]
    fn reduced_energy_is_full_energy_on_the_subspace() {
        let (m, b) = nls_setup(12);
        let rom = assemble_rom(&m, &b, &[1.0]).unwrap();
        let z = random_state(8, 1.0, 1);
        let h = eval_hamiltonian(&m, &b.lift(&z), &[1.0]).unwrap();
        assert!((rom.energy(&z).unwrap() - h).abs() < 1e-12 * h.abs().max(1.0));
        let sym = (rom.reduced_quadratic() - rom.reduced_quadratic().transpose()).amax();
        assert_eq!(sym, 0.0);
    }

    #[test]
    fn reduced_rhs_is_poisson_times_fd_gradient() {
        let m = Swe2d::<f64>::new(&Swe2dConfig::desk_with_grid(4, 4)).unwrap();
        let eta = [1.4, 1.0];
        let s = ShiftedModel::at_initial_state(&m, &eta);
        let b = complex_svd_basis(&decaying_snapshots(32, 10, 9), 5).unwrap();
        let rom = assemble_rom(&s, &b, &eta).unwrap();
        for seed in 0..10 {
            let z = random_state(10, 0.5, seed);
            let fd = fd_gradient(|v| rom.energy(v).unwrap(), &z, 1e-6);
            let rhs = rom.rhs(&z).unwrap();
            assert!(rel_err(&rhs, &crate::linalg::apply_poisson(&fd)) < 1e-6);
        }
    }

    #[test]
    fn reduced_hessian_matches_fd_of_gradient() {
        let (m, b) = nls_setup(10);
        let rom = assemble_rom(&m, &b, &[1.0]).unwrap();
        let z = random_state(8, 1.0, 4);
        let Hessian::Dense(h) = rom.hessian(&z).unwrap() else { panic!() };
        for j in 0..8 {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[j] += 1e-6;
            zm[j] -= 1e-6;
            let col = (rom.gradient(&zp).unwrap() - rom.gradient(&zm).unwrap()) / 2e-6;
            assert!((col - h.column(j)).norm() < 1e-6 * (1.0 + h.column(j).norm()));
        }
    }

    #[test]
    fn square_basis_reproduces_full_trajectory() {
        let m = Nls1d::<f64>::new(&Nls1dConfig { n: 16, l: 0.11 }).unwrap();
        let s = ShiftedModel::at_initial_state(&m, &[1.0]);
        let b = SymplecticBasis::identity(16);
        let rom = assemble_rom(&s, &b, &[1.0]).unwrap();
        let fom = FullOrderSystem::new(&s, &[1.0]);
        let int = Integrator::new(Scheme::Avf);
        let zero = DVector::zeros(32);
        let a = integrate_trajectory(&fom, &zero, 0.01, 30, &int, |_, _| Ok(())).unwrap();
        let r = integrate_trajectory(&rom, &zero, 0.01, 30, &int, |_, _| Ok(())).unwrap();
        for (y, z) in a.states.iter().zip(&r.states) {
            assert!((y - b.lift(z)).amax() <= 1e-10);
        }
    }

    #[test]
    fn shifted_pipeline_starts_at_zero() {
        let m = Nls1d::<f64>::new(&Nls1dConfig { n: 16, l: 0.11 }).unwrap();
        let eta = [1.02];
        let s = ShiftedModel::at_initial_state(&m, &eta);
        let (_, b) = nls_setup(16);
        let rom = assemble_rom(&s, &b, &eta).unwrap();
        let z0 = project_initial(&b, &s.initial_state(&eta)).unwrap();
        assert!(z0.iter().all(|&v| v == 0.0));
        let h0 = eval_hamiltonian(&m, &m.initial_state(&eta), &eta).unwrap();
        assert!((rom.energy(&z0).unwrap() - h0).abs() <= 1e-13 * h0.abs());
    }

    #[test]
    fn certification_rejects_non_symplectic_matrices() {
        let mut a = DMatrix::<f64>::zeros(4, 2);
        a[(0, 0)] = 1.0;
        a[(1, 1)] = 1.0;
        assert!(matches!(
            SymplecticBasis::from_matrix(a, BasisKind::Given),
            Err(Error::Certification(_))
        ));
    }
}
