//! Online adaptive DEIM.
//!
//! The hyper-reduced system is integrated with a DEIM pair `(U_j, P_j)` that
//! is corrected every `δ` steps from reduced-Jacobian snapshots of the last `w`
//! reduced states. Sampling rows are reselected every `γ` steps. Each local
//! system is an ordinary [`HyperReducedModel`], so it stays Hamiltonian.

mod sampling;
mod update;

use std::collections::VecDeque;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use sampling::{
    adapt_sampling, row_space_basis, sampling_count, sampling_scores, top_rows, SamplingPolicy, SamplingSet,
    SamplingStrategy,
};
pub use update::{
    apply_rank_update, compute_window_residual, gram_condition, solve_rank_r_update, update_objective, BasisUpdate,
    FactorPath, RankPolicy, RankUpdate, UpdateOutcome, WindowResidual, CHOLESKY_CONDITION_LIMIT,
};

use crate::deim::{collect_jacobian_snapshots, pod_basis, reduced_jacobian_rows, DeimProjector, HyperReducedModel, PodMode};
use crate::error::{Error, Result};
use crate::integrate::{integrate_trajectory, FullOrderSystem, Integrator, StepStats, Trajectory};
use crate::linalg::{frob2, select_rows};
use crate::model::HamiltonianModel;
use crate::reduce::{EvalCounts, ReducedModel, SnapshotLabel};
use crate::scalar::{as_f64, Scalar};

/// Condition number of `PᵀU` above which a warning is logged.
pub const CONDITION_WARNING: f64 = 1e8;

/// Schedule and policies of an adaptive run.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptConfig {
    /// Warm-up steps `δ0`; the first adaptation happens at step `δ0`.
    pub delta0: usize,
    /// Steps between basis updates `δ`.
    pub delta: usize,
    /// Window length `w`.
    pub window: usize,
    /// Steps between sampling updates `γ`, a multiple of `δ`.
    pub gamma: usize,
    pub rank: RankPolicy,
    pub sampling: SamplingPolicy,
    pub strategy: SamplingStrategy,
    /// DEIM size `m`.
    pub m: usize,
}

impl AdaptConfig {
    /// The settings used for the NLS experiments: `δ0 = δ = γ = 5`, `w = 1`,
    /// full-rank updates and `τ_s = 1e-10`.
    pub fn nls_default(m: usize) -> Self {
        Self {
            delta0: 5,
            delta: 5,
            window: 1,
            gamma: 5,
            rank: RankPolicy::Tolerance(1e-12),
            sampling: SamplingPolicy::Tolerance(1e-10),
            strategy: SamplingStrategy::Projection,
            m,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.delta0 == 0 || self.delta == 0 || self.gamma == 0 {
            return bad("delta0, delta and gamma must be at least 1".into());
        }
        if self.gamma % self.delta != 0 {
            return bad(format!("gamma ({}) must be a multiple of delta ({})", self.gamma, self.delta));
        }
        if self.window == 0 || self.window >= self.delta0 {
            return bad(format!("window ({}) must satisfy 1 <= window < delta0 ({})", self.window, self.delta0));
        }
        if self.m == 0 {
            return bad("m must be at least 1".into());
        }
        if let SamplingPolicy::Fixed(ms) = self.sampling {
            if ms < self.m {
                return bad(format!("sampling size m_s ({ms}) must be at least m ({})", self.m));
            }
        }
        if let SamplingPolicy::Tolerance(t) = self.sampling {
            if !(t >= 0.0) {
                return bad(format!("sampling tolerance ({t}) must be nonnegative"));
            }
        }
        if let RankPolicy::Tolerance(t) = self.rank {
            if !(t >= 0.0) {
                return bad(format!("rank tolerance ({t}) must be nonnegative"));
            }
        }
        Ok(())
    }

    /// Whether a basis update runs after computing step `tau` of `n_t`.
    ///
    /// Updates whose new basis would be used for fewer than `δ` steps are skipped.
    pub fn is_update_step(&self, tau: usize, n_t: usize) -> bool {
        tau >= self.delta0 && (tau - self.delta0) % self.delta == 0 && tau + self.delta <= n_t
    }

    /// Whether the sampling set is recomputed before the update at step `tau`.
    pub fn is_sampling_step(&self, tau: usize) -> bool {
        tau >= self.delta0 && (tau - self.delta0) % self.gamma == 0
    }
}

/// The last `w` reduced states.
#[derive(Clone, Debug)]
pub struct WindowBuffer<T: Scalar> {
    capacity: usize,
    states: VecDeque<DVector<T>>,
}

impl<T: Scalar> WindowBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            states: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, z: DVector<T>) {
        if self.states.len() == self.capacity {
            self.states.pop_front();
        }
        self.states.push_back(z);
    }

    pub fn is_full(&self) -> bool {
        self.states.len() == self.capacity
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Oldest first.
    pub fn states(&self) -> impl Iterator<Item = &DVector<T>> {
        self.states.iter()
    }

    /// Rows `rows` of `F = [J_G(Az¹)A, …, J_G(Az^w)A]`, shape `|rows| × 2k·w`.
    pub fn jacobian_rows<M: HamiltonianModel<T> + ?Sized>(
        &self,
        model: &M,
        a: &DMatrix<T>,
        eta: &[T],
        rows: &[usize],
    ) -> Result<DMatrix<T>> {
        let k2 = a.ncols();
        let mut f = DMatrix::zeros(rows.len(), k2 * self.states.len());
        for (l, z) in self.states.iter().enumerate() {
            f.columns_mut(l * k2, k2)
                .copy_from(&reduced_jacobian_rows(model, a, z, eta, rows)?);
        }
        Ok(f)
    }
}

/// Diagnostics of one adaptation.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateRecord {
    /// Update index `j`.
    pub j: usize,
    /// Time step after which the update ran.
    pub step: usize,
    pub rank: usize,
    pub sampling_size: usize,
    pub sampling_updated: bool,
    /// `‖SᵀR‖_F` before and after the correction.
    pub residual_before: f64,
    pub residual_after: f64,
    /// `‖U_{j+1}C_j − F_j‖_F` over all rows, known only when the sampling set was refreshed.
    pub full_residual_after: Option<f64>,
    pub lambda_sum: f64,
    pub path: FactorPath,
    pub outcome: UpdateOutcome,
    /// Condition number of `PᵀU` after the update.
    pub condition: f64,
    /// Rows of the reduced Jacobian evaluated for this update.
    pub jacobian_rows: usize,
    pub seconds: f64,
}

/// Bookkeeping of an adaptive run.
#[derive(Clone, Debug, Default)]
pub struct AdaptReport {
    pub updates: Vec<UpdateRecord>,
    /// Full-order warm-up steps, charged to the offline phase.
    pub warmup_steps: usize,
    pub offline_seconds: f64,
    pub online_seconds: f64,
    /// Reduced-Jacobian rows evaluated for the initial DEIM basis.
    pub offline_rows: usize,
    /// Row evaluations of the hyper-reduced systems.
    pub hrom_counts: EvalCounts,
    /// Reduced-Jacobian rows evaluated by basis updates, sampling steps excluded.
    pub basis_rows: usize,
    /// Reduced-Jacobian rows evaluated on sampling steps.
    pub sampling_rows: usize,
    pub newton_iterations: usize,
}

/// Output of [`gp_adeim_run`].
#[derive(Clone, Debug)]
pub struct AdaptiveRun<T: Scalar> {
    /// Reduced states `z⁰, …, z^{n_t}`.
    pub trajectory: Trajectory<T>,
    pub report: AdaptReport,
    pub initial_projector: DeimProjector<T>,
    pub final_projector: DeimProjector<T>,
    /// The full-order warm-up states `y⁰, …, y^{δ0}` when the warm-up built `U_0`.
    pub warmup: Option<Trajectory<T>>,
}

/// Initial DEIM pair from the reduced-Jacobian snapshots of a full-order warm-up
/// `y⁰, …, y^{δ0}` at the ROM parameter.
pub fn warm_up_projector<T: Scalar, M: HamiltonianModel<T>>(
    rom: &ReducedModel<M, T>,
    integrator: &Integrator<T>,
    dt: T,
    delta0: usize,
    m: usize,
) -> Result<(DeimProjector<T>, Trajectory<T>)> {
    let model = rom.model();
    let eta = rom.eta();
    let fom = FullOrderSystem::new(model, eta);
    let y0 = model.initial_state(eta);
    let traj = integrate_trajectory(&fom, &y0, dt, delta0, integrator, |_, _| Ok(()))?;
    let eta64: Vec<f64> = eta.iter().map(|&e| as_f64(e)).collect();
    let labels: Vec<SnapshotLabel> = (0..traj.len())
        .map(|l| SnapshotLabel {
            time: l as f64 * as_f64(dt),
            eta: eta64.clone(),
        })
        .collect();
    let mj = collect_jacobian_snapshots(model, rom.basis(), &traj.to_matrix(), &labels, eta)?;
    let u = pod_basis(&mj.matrix, PodMode::Fixed(m))?.u;
    Ok((DeimProjector::from_basis(u, model.weights())?, traj))
}

fn adaptation_error(step: usize, e: Error) -> Error {
    Error::Adaptation {
        step,
        source: Box::new(e),
    }
}

/// Rows of `a` and `b` merged, sorted and deduplicated.
fn union(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = a.iter().chain(b).copied().collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// One adaptation: optional sampling refresh followed by a basis update.
struct Adapter<'a, T: Scalar, M> {
    rom: &'a ReducedModel<M, T>,
    config: &'a AdaptConfig,
    rng: ChaCha8Rng,
    sampling: Option<SamplingSet>,
}

impl<T: Scalar, M: HamiltonianModel<T>> Adapter<'_, T, M> {
    fn run(
        &mut self,
        j: usize,
        tau: usize,
        window: &WindowBuffer<T>,
        projector: &DeimProjector<T>,
        report: &mut AdaptReport,
    ) -> Result<DeimProjector<T>> {
        let start = Instant::now();
        let model = self.rom.model();
        let a = self.rom.basis().matrix();
        let eta = self.rom.eta();
        let beta = projector.indices();
        let refresh = self.config.is_sampling_step(tau) || self.sampling.is_none();
        let (residual, rows, full_residual) = if refresh {
            let all: Vec<usize> = (0..projector.d()).collect();
            let f = window.jacobian_rows(model, a, eta, &all)?;
            let full = compute_window_residual(projector, &select_rows(&f, beta), &f, &all)?;
            let set = adapt_sampling(
                &full.residual,
                &full.coefficients,
                self.config.m,
                self.config.sampling,
                self.config.strategy,
                &mut self.rng,
            )?;
            let restricted = full.restrict(set.indices())?;
            self.sampling = Some(set);
            report.sampling_rows += all.len() * window.len();
            (restricted, all.len() * window.len(), Some(full.residual))
        } else {
            let set = self.sampling.as_ref().expect("sampling set initialized");
            let rows = union(beta, set.indices());
            let f = window.jacobian_rows(model, a, eta, &rows)?;
            let at_beta = update::positions(&rows, beta)?;
            let at_s = update::positions(&rows, set.indices())?;
            let res = compute_window_residual(
                projector,
                &select_rows(&f, &at_beta),
                &select_rows(&f, &at_s),
                set.indices(),
            )?;
            report.basis_rows += rows.len() * window.len();
            (res, rows.len() * window.len(), None)
        };
        let out = apply_rank_update(projector, &residual, self.config.rank, model.weights())?;
        let full_residual_after = full_residual.map(|mut r| {
            if !matches!(out.outcome, UpdateOutcome::Skipped | UpdateOutcome::Rejected) {
                let ab = out.update.correction() * &residual.coefficients;
                for (l, &s) in residual.rows.iter().enumerate() {
                    let mut row = r.row_mut(s);
                    row += ab.row(l);
                }
            }
            as_f64(frob2(&r).sqrt())
        });
        let condition = as_f64(out.projector.condition());
        if condition > CONDITION_WARNING {
            log::warn!("update {j} at step {tau}: cond(PᵀU) = {condition:.3e}");
        }
        let record = UpdateRecord {
            j,
            step: tau,
            rank: out.update.rank(),
            sampling_size: residual.rows.len(),
            sampling_updated: refresh,
            residual_before: as_f64(out.sampled_before),
            residual_after: as_f64(out.sampled_after),
            full_residual_after,
            lambda_sum: as_f64(out.update.lambda_sum()),
            path: out.update.path,
            outcome: out.outcome,
            condition,
            jacobian_rows: rows,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::debug!("{record:?}");
        report.updates.push(record);
        Ok(out.projector)
    }
}

/// Adaptive hyper-reduced run over `n_t` steps at the ROM parameter.
///
/// Without `initial`, the DEIM pair comes from a `δ0`-step full-order warm-up.
/// The reduced trajectory always starts from `z⁰ = Aᵀy⁰`.
pub fn gp_adeim_run<T: Scalar, M: HamiltonianModel<T>>(
    rom: &ReducedModel<M, T>,
    config: &AdaptConfig,
    integrator: &Integrator<T>,
    dt: T,
    n_t: usize,
    initial: Option<DeimProjector<T>>,
) -> Result<AdaptiveRun<T>> {
    config.validate()?;
    let d = rom.model().num_terms();
    if config.m > d {
        return Err(Error::InvalidArgument(format!("m ({}) exceeds the number of terms ({d})", config.m)));
    }
    let mut report = AdaptReport::default();
    let offline = Instant::now();
    let (projector, warmup) = match initial {
        Some(p) => (p, None),
        None => {
            let (p, traj) = warm_up_projector(rom, integrator, dt, config.delta0, config.m)?;
            report.warmup_steps = config.delta0;
            report.offline_rows = d * traj.len();
            (p, Some(traj))
        }
    };
    if projector.m() != config.m || projector.d() != d {
        return Err(Error::dims("initial DEIM basis", config.m, projector.m()));
    }
    report.offline_seconds = offline.elapsed().as_secs_f64();

    let online = Instant::now();
    let seed = match config.strategy {
        SamplingStrategy::Random(s) => s,
        _ => 0,
    };
    let mut adapter = Adapter {
        rom,
        config,
        rng: ChaCha8Rng::seed_from_u64(seed),
        sampling: None,
    };
    let initial_projector = projector.clone();
    let y0 = rom.model().initial_state(rom.eta());
    let z0 = rom.basis().project(&y0);
    let mut states = Vec::with_capacity(n_t + 1);
    let mut stats: Vec<StepStats> = Vec::with_capacity(n_t);
    let mut window = WindowBuffer::new(config.window);
    window.push(z0.clone());
    states.push(z0);
    let mut hrom = HyperReducedModel::new(rom, projector)?;
    let mut j = 0;
    for tau in 1..=n_t {
        let (next, st) = integrator
            .step(&hrom, &states[tau - 1], dt)
            .map_err(|e| e.at_step(tau))?;
        window.push(next.clone());
        states.push(next);
        stats.push(st);
        if config.is_update_step(tau, n_t) {
            report.hrom_counts = report.hrom_counts + hrom.counts();
            let current = hrom.into_projector();
            let next = adapter
                .run(j, tau, &window, &current, &mut report)
                .map_err(|e| adaptation_error(tau, e))?;
            hrom = HyperReducedModel::new(rom, next)?;
            j += 1;
        }
    }
    report.hrom_counts = report.hrom_counts + hrom.counts();
    report.online_seconds = online.elapsed().as_secs_f64();
    let trajectory = Trajectory { states, stats };
    report.newton_iterations = trajectory.newton_iterations();
    Ok(AdaptiveRun {
        trajectory,
        report,
        initial_projector,
        final_projector: hrom.into_projector(),
        warmup,
    })
}
