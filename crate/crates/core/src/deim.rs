//! Gradient-preserving DEIM on the reduced Jacobian.
//!
//! The nonlinear energy `cᵀ G(Az)` is replaced by `wᵀ G_β(Az)` with
//! `w = (PᵀU)⁻ᵀ Uᵀ c`, where `U` is a POD basis of reduced-Jacobian snapshots
//! `J_G(AAᵀy) A` and `β` are greedy interpolation indices. The hyper-reduced
//! vector field is the exact gradient of that scalar, so the reduced system
//! stays Hamiltonian.

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::error::{Error, Result};
use crate::integrate::{HamiltonianFlow, Hessian};
use crate::linalg::{condition_number, frob2, left_svd, numerical_rank, select_rows, singular_values};
use crate::model::{gather, HamiltonianModel};
use crate::reduce::{EvalCounts, ReducedModel, SnapshotLabel, SymplecticBasis, TermSet};
use crate::scalar::{as_f64, Scalar};

/// Rows `rows` of the reduced Jacobian `J_G(A z) A`, evaluated without forming `A z`.
pub fn reduced_jacobian_rows<T: Scalar, M: HamiltonianModel<T> + ?Sized>(
    model: &M,
    a: &DMatrix<T>,
    z: &DVector<T>,
    eta: &[T],
    rows: &[usize],
) -> Result<DMatrix<T>> {
    if a.nrows() != model.dim() || a.ncols() != z.len() {
        return Err(Error::dims("reduced Jacobian basis", model.dim(), a.nrows()));
    }
    let d = model.num_terms();
    let mut out = DMatrix::zeros(rows.len(), a.ncols());
    let mut g = Vec::new();
    for (k, &r) in rows.iter().enumerate() {
        if r >= d {
            return Err(Error::IndexOutOfRange { index: r, len: d });
        }
        let cols = model.sparsity(r);
        let block = select_rows(a, cols);
        let local = &block * z;
        g.clear();
        g.resize(cols.len(), T::zero());
        model.term_gradient(r, local.as_slice(), eta, &mut g);
        out.row_mut(k).copy_from(&block.tr_mul(&DVector::from_column_slice(&g)).transpose());
    }
    Ok(out)
}

/// `M_J = [J_G(AAᵀy¹)A, J_G(AAᵀy²)A, …]`, one `d × 2k` block per state.
#[derive(Clone, Debug)]
pub struct JacobianSnapshotMatrix<T: Scalar> {
    pub matrix: DMatrix<T>,
    /// One label per block.
    pub labels: Vec<SnapshotLabel>,
    pub block_cols: usize,
}

impl<T: Scalar> JacobianSnapshotMatrix<T> {
    pub fn num_blocks(&self) -> usize {
        self.labels.len()
    }

    pub fn concat(parts: &[JacobianSnapshotMatrix<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("no Jacobian snapshots".into()))?;
        let (rows, block_cols) = (first.matrix.nrows(), first.block_cols);
        let cols: usize = parts.iter().map(|p| p.matrix.ncols()).sum();
        let mut matrix = DMatrix::zeros(rows, cols);
        let mut labels = Vec::new();
        let mut at = 0;
        for p in parts {
            if p.matrix.nrows() != rows || p.block_cols != block_cols {
                return Err(Error::dims("Jacobian snapshot blocks", rows, p.matrix.nrows()));
            }
            matrix.columns_mut(at, p.matrix.ncols()).copy_from(&p.matrix);
            at += p.matrix.ncols();
            labels.extend(p.labels.iter().cloned());
        }
        Ok(Self {
            matrix,
            labels,
            block_cols,
        })
    }
}

/// Reduced-Jacobian snapshots of full states (columns of `states`) at one parameter.
pub fn collect_jacobian_snapshots<T: Scalar, M: HamiltonianModel<T> + ?Sized>(
    model: &M,
    basis: &SymplecticBasis<T>,
    states: &DMatrix<T>,
    labels: &[SnapshotLabel],
    eta: &[T],
) -> Result<JacobianSnapshotMatrix<T>> {
    let a = basis.matrix();
    if states.nrows() != model.dim() || a.nrows() != model.dim() {
        return Err(Error::dims("snapshot state", model.dim(), states.nrows()));
    }
    if labels.len() != states.ncols() {
        return Err(Error::dims("snapshot labels", states.ncols(), labels.len()));
    }
    let (d, k2) = (model.num_terms(), a.ncols());
    let mut matrix = DMatrix::zeros(d, k2 * states.ncols());
    let mut local = Vec::new();
    let mut g = Vec::new();
    for (j, y) in states.column_iter().enumerate() {
        let yp = a * a.tr_mul(&y);
        let ys = yp.as_slice();
        let mut block = matrix.columns_mut(j * k2, k2);
        for i in 0..d {
            let cols = model.sparsity(i);
            gather(ys, cols, &mut local);
            g.clear();
            g.resize(cols.len(), T::zero());
            model.term_gradient(i, &local, eta, &mut g);
            for (&c, &v) in cols.iter().zip(&g) {
                if v != T::zero() {
                    for l in 0..k2 {
                        block[(i, l)] += v * a[(c, l)];
                    }
                }
            }
        }
    }
    Ok(JacobianSnapshotMatrix {
        matrix,
        labels: labels.to_vec(),
        block_cols: k2,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PodMode {
    /// Exactly `m` modes.
    Fixed(usize),
    /// Smallest `m` with `Σ_{ℓ≤m} σ_ℓ² ≥ (1 - τ) Σ σ_ℓ²`.
    Energy(f64),
    /// Exactly `m` modes; past the numerical rank the trailing left singular
    /// vectors complete an orthonormal basis.
    Complete(usize),
}

#[derive(Clone, Debug)]
pub struct PodBasis<T: Scalar> {
    /// `d × m`, orthonormal columns.
    pub u: DMatrix<T>,
    /// Full singular spectrum of the snapshot matrix.
    pub sigma: DVector<T>,
}

/// Leading left singular vectors of `m`.
pub fn pod_basis<T: Scalar>(m: &DMatrix<T>, mode: PodMode) -> Result<PodBasis<T>> {
    let svd = left_svd(m)?;
    let rank = numerical_rank(&svd.sigma, m.nrows(), m.ncols());
    let size = match mode {
        PodMode::Fixed(size) => size,
        PodMode::Complete(size) => {
            if size == 0 || size > svd.u.ncols() {
                return Err(Error::RankDeficient {
                    requested: size,
                    attainable: svd.u.ncols(),
                });
            }
            if size > rank {
                log::warn!("POD basis of size {size} exceeds the numerical rank {rank}; completing with trailing modes");
            }
            return Ok(PodBasis {
                u: svd.u.columns(0, size).into_owned(),
                sigma: svd.sigma,
            });
        }
        PodMode::Energy(tau) => {
            if !(0.0..1.0).contains(&tau) {
                return Err(Error::InvalidArgument(format!("energy tolerance {tau} outside [0, 1)")));
            }
            let energy: Vec<f64> = svd.sigma.iter().map(|&s| as_f64(s * s)).collect();
            let total: f64 = energy.iter().sum();
            let mut acc = 0.0;
            let mut size = energy.len();
            for (i, e) in energy.iter().enumerate() {
                acc += e;
                if acc >= (1.0 - tau) * total {
                    size = i + 1;
                    break;
                }
            }
            size.min(rank.max(1))
        }
    };
    if size == 0 || size > rank {
        return Err(Error::RankDeficient {
            requested: size,
            attainable: rank,
        });
    }
    Ok(PodBasis {
        u: svd.u.columns(0, size).into_owned(),
        sigma: svd.sigma,
    })
}

/// Index of the largest `|v_i|` not in `taken`; ties go to the smallest index.
pub(crate) fn argmax_abs_excluding<T: Scalar>(v: &DVector<T>, taken: &[usize]) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, &x) in v.iter().enumerate() {
        if taken.contains(&i) {
            continue;
        }
        let a = x.abs();
        if best.is_none_or(|(_, b)| a > b) {
            best = Some((i, a));
        }
    }
    best.map(|(i, _)| i)
}

/// Greedy DEIM interpolation indices of a full-column-rank `U`.
pub fn deim_indices_greedy<T: Scalar>(u: &DMatrix<T>) -> Result<Vec<usize>> {
    let (d, m) = u.shape();
    if m == 0 || m > d {
        return Err(Error::InvalidArgument(format!("DEIM basis shape {d}×{m}")));
    }
    let mut beta: Vec<usize> = Vec::with_capacity(m);
    for j in 0..m {
        let col = u.column(j).into_owned();
        let residual = if j == 0 {
            col
        } else {
            let basis = u.columns(0, j).into_owned();
            let ptu = select_rows(&basis, &beta);
            let rhs = DVector::from_iterator(j, beta.iter().map(|&b| col[b]));
            let coef = ptu
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Singular(format!("interpolation system at step {j}")))?;
            col - basis * coef
        };
        let next = argmax_abs_excluding(&residual, &beta).expect("m ≤ d leaves a free index");
        if residual[next] == T::zero() {
            return Err(Error::Singular(format!("DEIM residual vanishes at step {j}")));
        }
        beta.push(next);
    }
    Ok(beta)
}

/// The oblique projector `ℙ = U (PᵀU)⁻¹ Pᵀ` with cached factorization and weights.
#[derive(Clone, Debug)]
pub struct DeimProjector<T: Scalar> {
    u: DMatrix<T>,
    beta: Vec<usize>,
    lu: LU<T, Dyn, Dyn>,
    w: DVector<T>,
}

impl<T: Scalar> DeimProjector<T> {
    /// Factorizes `PᵀU` and precomputes `w = (PᵀU)⁻ᵀ Uᵀ c`.
    pub fn new(u: DMatrix<T>, beta: Vec<usize>, c: &DVector<T>) -> Result<Self> {
        let (d, m) = u.shape();
        if beta.len() != m {
            return Err(Error::dims("interpolation indices", m, beta.len()));
        }
        if c.len() != d {
            return Err(Error::dims("decomposition weights", d, c.len()));
        }
        if let Some(&b) = beta.iter().find(|&&b| b >= d) {
            return Err(Error::IndexOutOfRange { index: b, len: d });
        }
        let mut sorted = beta.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|p| p[0] == p[1]) {
            return Err(Error::InvalidArgument("duplicate interpolation indices".into()));
        }
        let ptu = select_rows(&u, &beta);
        let lu = ptu.clone().lu();
        if !lu.is_invertible() {
            return Err(Error::Singular("PᵀU".into()));
        }
        let w = ptu
            .transpose()
            .lu()
            .solve(&u.tr_mul(c))
            .ok_or_else(|| Error::Singular("(PᵀU)ᵀ".into()))?;
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("PᵀU produced non-finite weights".into()));
        }
        Ok(Self { u, beta, lu, w })
    }

    /// POD basis plus greedy indices.
    pub fn from_basis(u: DMatrix<T>, c: &DVector<T>) -> Result<Self> {
        let beta = deim_indices_greedy(&u)?;
        Self::new(u, beta, c)
    }

    /// Re-orthonormalizes `U` and reselects indices; the span is unchanged.
    pub fn reorthonormalized(&self, c: &DVector<T>) -> Result<Self> {
        let q = self.u.clone().qr().q();
        Self::from_basis(q, c)
    }

    pub fn basis(&self) -> &DMatrix<T> {
        &self.u
    }

    pub fn indices(&self) -> &[usize] {
        &self.beta
    }

    pub fn weights(&self) -> &DVector<T> {
        &self.w
    }

    pub fn m(&self) -> usize {
        self.beta.len()
    }

    pub fn d(&self) -> usize {
        self.u.nrows()
    }

    /// `Pᵀ U`.
    pub fn interpolation_matrix(&self) -> DMatrix<T> {
        select_rows(&self.u, &self.beta)
    }

    /// `(PᵀU)⁻¹ X` for a matrix of sampled rows.
    pub fn solve(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        self.lu.solve(x).ok_or_else(|| Error::Singular("PᵀU".into()))
    }

    /// `ℙ x`.
    pub fn apply(&self, x: &DVector<T>) -> Result<DVector<T>> {
        let sampled = DVector::from_iterator(self.m(), self.beta.iter().map(|&b| x[b]));
        let coef = self.lu.solve(&sampled).ok_or_else(|| Error::Singular("PᵀU".into()))?;
        Ok(&self.u * coef)
    }

    /// `ℙ X` column by column.
    pub fn apply_cols(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        Ok(&self.u * self.solve(&select_rows(x, &self.beta))?)
    }

    /// Dense `ℙ`; diagnostics only.
    pub fn dense(&self) -> Result<DMatrix<T>> {
        let d = self.d();
        let mut pt = DMatrix::zeros(self.m(), d);
        for (i, &b) in self.beta.iter().enumerate() {
            pt[(i, b)] = T::one();
        }
        Ok(&self.u * self.solve(&pt)?)
    }

    /// `‖(PᵀU)⁻¹‖₂`.
    pub fn inverse_norm(&self) -> T {
        let s = singular_values(&self.interpolation_matrix()).unwrap_or_else(|_| DVector::zeros(0));
        match s.iter().last() {
            Some(&smin) if smin > T::zero() => T::one() / smin,
            _ => T::max_value().unwrap_or_else(T::one),
        }
    }

    /// 2-norm condition number of `PᵀU`.
    pub fn condition(&self) -> T {
        condition_number(&self.interpolation_matrix())
    }
}

/// Frobenius norm of `(I - ℙ) M`.
pub fn deim_residual<T: Scalar>(projector: &DeimProjector<T>, m: &DMatrix<T>) -> Result<T> {
    Ok(frob2(&(m - projector.apply_cols(m)?)).sqrt())
}

/// Reduced model with the nonlinear energy replaced by `wᵀ G_β(Az)`.
#[derive(Debug)]
pub struct HyperReducedModel<'r, M, T: Scalar> {
    rom: &'r ReducedModel<M, T>,
    projector: DeimProjector<T>,
    terms: TermSet<T>,
}

impl<'r, T: Scalar, M: HamiltonianModel<T>> HyperReducedModel<'r, M, T> {
    pub fn new(rom: &'r ReducedModel<M, T>, projector: DeimProjector<T>) -> Result<Self> {
        if projector.d() != rom.model().num_terms() {
            return Err(Error::dims("DEIM basis rows", rom.model().num_terms(), projector.d()));
        }
        let terms = TermSet::new(
            rom.model(),
            rom.basis().matrix(),
            projector.indices(),
            projector.weights().clone(),
        );
        Ok(Self { rom, projector, terms })
    }

    pub fn rom(&self) -> &'r ReducedModel<M, T> {
        self.rom
    }

    pub fn projector(&self) -> &DeimProjector<T> {
        &self.projector
    }

    pub fn into_projector(self) -> DeimProjector<T> {
        self.projector
    }

    /// Row evaluations of `G` and its derivatives made by this model.
    pub fn counts(&self) -> EvalCounts {
        self.terms.counts()
    }

    /// `wᵀ G_β(Az)`.
    pub fn nonlinear_energy(&self, z: &DVector<T>) -> T {
        self.terms.energy(self.rom.model(), z, self.rom.eta())
    }

    /// `Aᵀ (rows β of J_G(Az))ᵀ w`.
    pub fn nonlinear_gradient(&self, z: &DVector<T>) -> DVector<T> {
        self.terms.gradient(self.rom.model(), z, self.rom.eta())
    }

    /// `H_hr(z) = ½ zᵀ L_r z + zᵀ f_r + g0 + wᵀ G_β(Az)`.
    pub fn hamiltonian(&self, z: &DVector<T>) -> T {
        self.rom.quadratic_energy(z) + self.nonlinear_energy(z)
    }

    fn check(&self, z: &DVector<T>) -> Result<()> {
        if z.len() != self.rom.dim() {
            return Err(Error::dims("reduced state", self.rom.dim(), z.len()));
        }
        Ok(())
    }
}

impl<T: Scalar, M: HamiltonianModel<T>> HamiltonianFlow<T> for HyperReducedModel<'_, M, T> {
    fn dim(&self) -> usize {
        self.rom.dim()
    }

    fn energy(&self, z: &DVector<T>) -> Result<T> {
        self.check(z)?;
        Ok(self.hamiltonian(z))
    }

    fn gradient(&self, z: &DVector<T>) -> Result<DVector<T>> {
        self.check(z)?;
        Ok(self.rom.quadratic_gradient(z) + self.nonlinear_gradient(z))
    }

    fn hessian(&self, z: &DVector<T>) -> Result<Hessian<T>> {
        self.check(z)?;
        let h = self.terms.hessian(self.rom.model(), z, self.rom.eta());
        Ok(Hessian::Dense(self.rom.reduced_quadratic() + h))
    }
}

impl<T: Scalar, M: HamiltonianModel<T>> ReducedModel<M, T> {
    /// `cᵀ G(Az)`.
    pub fn nonlinear_energy(&self, z: &DVector<T>) -> Result<T> {
        Ok(self.energy(z)? - self.quadratic_energy(z))
    }
}
