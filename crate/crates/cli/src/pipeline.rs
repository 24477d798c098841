//! The `snapshots`, `build`, `run` and `report` steps.
//!
//! Artifacts live under the output directory:
//!
//! ```text
//! snapshots/param_NNN.gphr       shifted FOM states per training parameter
//! build/basis.gphr               orthosymplectic basis A
//! build/deim_basis.gphr          DEIM basis U of the largest size
//! build/deim_indices.gphr        greedy indices β (nested in m)
//! build/jacobian_snapshots.gphr  M_J, when requested
//! build/state_spectrum.csv       singular values of the state snapshots
//! build/spectrum.csv             singular values of M_J
//! runs/<mode>/errors.csv, counters.csv, timings.csv
//! runs/<mode>/<run>/hamiltonian.csv, adapt_log.csv, trajectory.gphr
//! report/errors.csv, drift.csv, summary.md
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use gpdeim_core::adapt::{gp_adeim_run, AdaptReport};
use gpdeim_core::deim::{
    collect_jacobian_snapshots, deim_indices_greedy, pod_basis, DeimProjector, HyperReducedModel, JacobianSnapshotMatrix,
    PodMode,
};
use gpdeim_core::integrate::{integrate_trajectory, FullOrderSystem, Integrator, Trajectory};
use gpdeim_core::metrics::{
    deim_gap_series, fmt_f64, hamiltonian_series, rel_errors_with_offset, singular_spectrum, write_adapt_csv,
    write_errors_csv, write_hamiltonian_csv, write_spectrum_csv, write_timings_csv, RunReport, ERRORS_HEADER,
};
use gpdeim_core::model::{Counted, HamiltonianModel, Nls1d, ShiftedModel, Swe2d};
use gpdeim_core::reduce::{
    assemble_rom, complex_svd_basis, cotangent_lift_basis, BasisCertificate, BasisKind, EvalCounts, ReducedModel,
    SnapshotLabel, SnapshotSet, SymplecticBasis,
};

use crate::config::{BasisName, InitName, Mode, ProblemSection, RunConfig};
use crate::container::{read_matrix, write_matrix, ColumnLabel, Metadata};
use crate::CliError;

type Model = dyn HamiltonianModel<f64>;
type Shifted<'a> = ShiftedModel<&'a Model, f64>;

pub const MODES: [Mode; 4] = [Mode::Fom, Mode::Rom, Mode::Hrom, Mode::HromAdaptive];

/// File locations under an output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn snapshot(&self, i: usize) -> PathBuf {
        self.root.join("snapshots").join(format!("param_{i:03}.gphr"))
    }

    pub fn build_dir(&self) -> PathBuf {
        self.root.join("build")
    }

    pub fn basis(&self) -> PathBuf {
        self.build_dir().join("basis.gphr")
    }

    pub fn deim_basis(&self) -> PathBuf {
        self.build_dir().join("deim_basis.gphr")
    }

    pub fn deim_indices(&self) -> PathBuf {
        self.build_dir().join("deim_indices.gphr")
    }

    pub fn jacobian_snapshots(&self) -> PathBuf {
        self.build_dir().join("jacobian_snapshots.gphr")
    }

    pub fn state_spectrum(&self) -> PathBuf {
        self.build_dir().join("state_spectrum.csv")
    }

    pub fn spectrum(&self) -> PathBuf {
        self.build_dir().join("spectrum.csv")
    }

    pub fn run_dir(&self, mode: Mode) -> PathBuf {
        self.root.join("runs").join(mode.as_str())
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}

pub fn build_model(problem: &ProblemSection) -> Result<Box<Model>, CliError> {
    Ok(match problem {
        ProblemSection::Swe2d { .. } => Box::new(Swe2d::<f64>::new(&problem.swe().unwrap())?),
        ProblemSection::Nls1d { .. } => Box::new(Nls1d::<f64>::new(&problem.nls().unwrap())?),
    })
}

fn metadata(cfg: &RunConfig, kind: &str) -> Metadata {
    Metadata {
        kind: kind.into(),
        config_hash: cfg.hash(),
        ..Default::default()
    }
}

fn require(paths: &[PathBuf], mode: &str) -> Result<(), CliError> {
    let missing: Vec<String> = paths.iter().filter(|p| !p.exists()).map(|p| p.display().to_string()).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(CliError::Artifact(format!("{mode} needs {}", missing.join(", "))))
    }
}

fn numerical(context: String) -> impl FnOnce(gpdeim_core::Error) -> CliError {
    move |e| CliError::Numerical(format!("{context}: {e}"))
}

/// Shifted full-order trajectory from `y_s = 0`.
fn shifted_fom<'a>(
    model: &'a Model,
    eta: &[f64],
    integrator: &Integrator<f64>,
    dt: f64,
    n_t: usize,
) -> Result<(Shifted<'a>, Trajectory<f64>), gpdeim_core::Error> {
    let shifted = ShiftedModel::at_initial_state(model, eta);
    let sys = FullOrderSystem::new(&shifted, eta);
    let traj = integrate_trajectory(&sys, &DVector::zeros(model.dim()), dt, n_t, integrator, |_, _| Ok(()))?;
    Ok((shifted, traj))
}

/// Runs the FOM on every training parameter and stores the shifted states.
pub fn snapshots(cfg: &RunConfig) -> Result<Vec<SnapshotSet<f64>>, CliError> {
    let layout = Layout::new(&cfg.run.output);
    let model = build_model(&cfg.problem)?;
    let integrator = cfg.time.integrator()?;
    let (dt, n_t) = (cfg.time.dt, cfg.time.steps());
    let stride = cfg.reduction.snapshot_stride;
    let training = cfg.training();
    log::info!("snapshots: {} training parameters, {n_t} steps", training.len());
    training
        .par_iter()
        .enumerate()
        .map(|(i, eta)| {
            let (_, traj) = shifted_fom(model.as_ref(), eta, &integrator, dt, n_t)
                .map_err(numerical(format!("training parameter {i} {eta:?}")))?;
            let cols: Vec<usize> = (0..=n_t).step_by(stride).collect();
            let states = DMatrix::from_fn(model.dim(), cols.len(), |r, c| traj.states[cols[c]][r]);
            let labels: Vec<SnapshotLabel> = cols
                .iter()
                .map(|&j| SnapshotLabel {
                    time: j as f64 * dt,
                    eta: eta.clone(),
                })
                .collect();
            let mut meta = metadata(cfg, "states");
            meta.labels = labels.iter().map(ColumnLabel::from).collect();
            write_matrix(&layout.snapshot(i), &states, &meta)?;
            Ok(SnapshotSet::new(states, labels)?)
        })
        .collect()
}

fn read_snapshots(cfg: &RunConfig, layout: &Layout) -> Result<Vec<SnapshotSet<f64>>, CliError> {
    let training = cfg.training();
    let paths: Vec<PathBuf> = (0..training.len()).map(|i| layout.snapshot(i)).collect();
    require(&paths, "build")?;
    training
        .iter()
        .zip(&paths)
        .map(|(eta, path)| {
            let (states, meta) = read_matrix(path)?;
            if meta.labels.iter().any(|l| &l.eta != eta) {
                return Err(CliError::Artifact(format!(
                    "{} was generated for another training grid; rerun snapshots",
                    path.display()
                )));
            }
            let labels = meta.labels.iter().map(SnapshotLabel::from).collect();
            Ok(SnapshotSet::new(states, labels)?)
        })
        .collect()
}

/// Offline products of [`build`].
#[derive(Clone, Debug)]
pub struct BuildOutput {
    pub basis: SymplecticBasis<f64>,
    pub certificate: BasisCertificate,
    pub deim_basis: DMatrix<f64>,
    pub indices: Vec<usize>,
    pub jacobian_snapshots: JacobianSnapshotMatrix<f64>,
    pub jacobian_spectrum: Vec<f64>,
}

/// Orthosymplectic basis, Jacobian snapshots and DEIM pair from stored snapshots.
pub fn build(cfg: &RunConfig) -> Result<BuildOutput, CliError> {
    let layout = Layout::new(&cfg.run.output);
    let sets = read_snapshots(cfg, &layout)?;
    let model = build_model(&cfg.problem)?;
    let all = SnapshotSet::concat(&sets)?;
    let k = cfg.reduction.k;
    let basis = match cfg.reduction.basis {
        BasisName::ComplexSvd => complex_svd_basis(&all.states, k)?,
        BasisName::CotangentLift => cotangent_lift_basis(&all.states, k)?,
        BasisName::Identity => {
            if k != model.half_dim() {
                return Err(CliError::Validation(format!(
                    "reduction.k ({k}) must equal the half dimension {} for reduction.basis = identity",
                    model.half_dim()
                )));
            }
            SymplecticBasis::identity(k)
        }
    };
    let certificate = basis.certify().map_err(CliError::from_core)?;
    let mut meta = metadata(cfg, "basis");
    meta.extra.insert("basis".into(), format!("{:?}", basis.kind()));
    meta.extra.insert("k".into(), k.to_string());
    meta.extra.insert("orthonormality".into(), fmt_f64(certificate.orthonormality));
    meta.extra.insert("symplecticity".into(), fmt_f64(certificate.symplecticity));
    write_matrix(&layout.basis(), basis.matrix(), &meta)?;
    let state_sigma: Vec<f64> = if basis.singular_values().is_empty() {
        singular_spectrum(&all.states)?
    } else {
        basis.singular_values().iter().copied().collect()
    };
    write_spectrum_csv(fs::File::create(layout.state_spectrum())?, &state_sigma)?;

    let every = cfg.deim.snapshot_stride / cfg.reduction.snapshot_stride;
    let parts: Vec<JacobianSnapshotMatrix<f64>> = sets
        .par_iter()
        .enumerate()
        .map(|(i, set)| {
            let eta = &set.labels[0].eta;
            let shifted = ShiftedModel::at_initial_state(model.as_ref(), eta);
            let cols: Vec<usize> = (0..set.len()).step_by(every).collect();
            let states = DMatrix::from_fn(model.dim(), cols.len(), |r, c| set.states[(r, cols[c])]);
            let labels: Vec<SnapshotLabel> = cols.iter().map(|&c| set.labels[c].clone()).collect();
            collect_jacobian_snapshots(&shifted, &basis, &states, &labels, eta)
                .map_err(numerical(format!("Jacobian snapshots of training parameter {i}")))
        })
        .collect::<Result<_, _>>()?;
    let mj = JacobianSnapshotMatrix::concat(&parts)?;
    let d = model.num_terms();
    let mode = match (cfg.deim.m.iter().max(), cfg.deim.energy_tol) {
        (Some(&m), _) if m > d => {
            return Err(CliError::Validation(format!("deim.m ({m}) exceeds the number of terms ({d})")));
        }
        (Some(&m), _) => PodMode::Complete(m),
        (None, Some(tol)) => PodMode::Energy(tol),
        (None, None) => PodMode::Complete(d.min(mj.matrix.ncols())),
    };
    let pod = pod_basis(&mj.matrix, mode)?;
    let indices = deim_indices_greedy(&pod.u)?;
    let projector = DeimProjector::new(pod.u.clone(), indices.clone(), model.weights())
        .map_err(numerical("DEIM projector of the stored basis".into()))?;
    let mut meta = metadata(cfg, "deim_basis");
    meta.extra.insert("m".into(), pod.u.ncols().to_string());
    meta.extra.insert("condition".into(), fmt_f64(projector.condition()));
    write_matrix(&layout.deim_basis(), &pod.u, &meta)?;
    let beta = DMatrix::from_iterator(indices.len(), 1, indices.iter().map(|&i| i as f64));
    write_matrix(&layout.deim_indices(), &beta, &metadata(cfg, "deim_indices"))?;
    let jacobian_spectrum: Vec<f64> = pod.sigma.iter().copied().collect();
    write_spectrum_csv(fs::File::create(layout.spectrum())?, &jacobian_spectrum)?;
    if cfg.deim.store_snapshots {
        let mut meta = metadata(cfg, "jacobian_snapshots");
        meta.extra.insert("block_cols".into(), mj.block_cols.to_string());
        write_matrix(&layout.jacobian_snapshots(), &mj.matrix, &meta)?;
    }
    log::info!(
        "build: 2k = {}, M_J {}x{}, m = {}, residuals {:.2e}/{:.2e}",
        2 * k,
        mj.matrix.nrows(),
        mj.matrix.ncols(),
        pod.u.ncols(),
        certificate.orthonormality,
        certificate.symplecticity
    );
    Ok(BuildOutput {
        basis,
        certificate,
        deim_basis: pod.u,
        indices,
        jacobian_snapshots: mj,
        jacobian_spectrum,
    })
}

fn load_basis(layout: &Layout) -> Result<SymplecticBasis<f64>, CliError> {
    let (a, meta) = read_matrix(&layout.basis())?;
    let kind = match meta.extra.get("basis").map(String::as_str) {
        Some("ComplexSvd") => BasisKind::ComplexSvd,
        Some("CotangentLift") => BasisKind::CotangentLift,
        _ => BasisKind::Given,
    };
    Ok(SymplecticBasis::from_matrix(a, kind)?)
}

fn load_deim(layout: &Layout) -> Result<(DMatrix<f64>, Vec<usize>), CliError> {
    let (u, _) = read_matrix(&layout.deim_basis())?;
    let (beta, _) = read_matrix(&layout.deim_indices())?;
    if beta.nrows() != u.ncols() {
        return Err(CliError::Artifact(format!(
            "{} holds {} indices for {} basis columns",
            layout.deim_indices().display(),
            beta.nrows(),
            u.ncols()
        )));
    }
    Ok((u, beta.iter().map(|&b| b as usize).collect()))
}

/// Leading `m` columns and indices of the stored DEIM pair.
fn stored_projector(u: &DMatrix<f64>, beta: &[usize], m: usize, c: &DVector<f64>) -> Result<DeimProjector<f64>, CliError> {
    if m > u.ncols() {
        return Err(CliError::Validation(format!(
            "deim.m ({m}) exceeds the stored DEIM basis size {}; rerun build",
            u.ncols()
        )));
    }
    Ok(DeimProjector::new(u.columns(0, m).into_owned(), beta[..m].to_vec(), c)?)
}

/// Everything [`run`] produced, in deterministic order.
#[derive(Clone, Debug, Default)]
pub struct RunOutput {
    pub reports: Vec<RunReport>,
    /// Reduced states (full states for `fom`) per run.
    pub trajectories: Vec<Vec<DVector<f64>>>,
    /// Adaptive bookkeeping, `hrom-adaptive` only.
    pub adaptive: Vec<AdaptReport>,
}

struct Reference<'a> {
    shifted: Shifted<'a>,
    eta: Vec<f64>,
    full: Vec<DVector<f64>>,
    shifted_states: Vec<DVector<f64>>,
    counts: EvalCounts,
    seconds: f64,
    newton: usize,
}

fn reference<'a>(model: &'a Model, eta: &[f64], cfg: &RunConfig, i: usize) -> Result<Reference<'a>, CliError> {
    let integrator = cfg.time.integrator()?;
    let start = Instant::now();
    let shifted = ShiftedModel::at_initial_state(model, eta);
    let counted = Counted::new(shifted.clone());
    let sys = FullOrderSystem::new(&counted, eta);
    let traj = integrate_trajectory(&sys, &DVector::zeros(model.dim()), cfg.time.dt, cfg.time.steps(), &integrator, |_, _| {
        Ok(())
    })
    .map_err(numerical(format!("FOM at test parameter {i} {eta:?}")))?;
    let rc = counted.counts();
    Ok(Reference {
        full: traj.states.iter().map(|y| shifted.unshift(y)).collect(),
        eta: eta.to_vec(),
        counts: EvalCounts {
            terms: rc.terms,
            gradients: rc.gradients,
            hessians: rc.hessians,
        },
        seconds: start.elapsed().as_secs_f64(),
        newton: traj.newton_iterations(),
        shifted_states: traj.states,
        shifted,
    })
}

fn base_report(label: String, mode: Mode, m: usize, cfg: &RunConfig) -> RunReport {
    RunReport {
        label,
        mode: mode.as_str().into(),
        m,
        times: (0..=cfg.time.steps()).map(|j| j as f64 * cfg.time.dt).collect(),
        ..Default::default()
    }
}

fn lifted_norms(a: &DMatrix<f64>, offset: &DVector<f64>, states: &[DVector<f64>]) -> Vec<f64> {
    states.iter().map(|z| (a * z + offset).norm()).collect()
}

fn fill_counts(report: &mut RunReport, c: EvalCounts) {
    report.term_rows = c.terms;
    report.jacobian_rows = c.gradients;
    report.hessian_rows = c.hessians;
}

/// Runs the configured mode at every test parameter and writes its reports.
pub fn run(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let layout = Layout::new(&cfg.run.output);
    let mode = cfg.run.mode;
    let model = build_model(&cfg.problem)?;
    let model: &Model = model.as_ref();
    let basis = match mode {
        Mode::Fom => None,
        _ => {
            require(&[layout.basis()], mode.as_str())?;
            Some(load_basis(&layout)?)
        }
    };
    let needs_deim = mode == Mode::Hrom || (mode == Mode::HromAdaptive && cfg.adapt.init == InitName::Training);
    let deim = if needs_deim || (matches!(mode, Mode::Hrom | Mode::HromAdaptive) && cfg.deim.m.is_empty()) {
        require(&[layout.deim_basis(), layout.deim_indices()], mode.as_str())?;
        Some(load_deim(&layout)?)
    } else {
        None
    };
    let sizes: Vec<usize> = match (&deim, cfg.deim.m.is_empty()) {
        (_, false) => cfg.deim.m.clone(),
        (Some((u, _)), true) => vec![u.ncols()],
        (None, true) => vec![0],
    };
    let references: Vec<Reference> = cfg
        .run
        .test
        .par_iter()
        .enumerate()
        .map(|(i, eta)| reference(model, eta, cfg, i))
        .collect::<Result<_, _>>()?;

    let jobs: Vec<(usize, usize)> = match mode {
        Mode::Hrom | Mode::HromAdaptive => (0..references.len())
            .flat_map(|i| sizes.iter().map(move |&m| (i, m)))
            .collect(),
        _ => (0..references.len()).map(|i| (i, 0)).collect(),
    };
    let results: Vec<(RunReport, Vec<DVector<f64>>, Option<AdaptReport>)> = jobs
        .par_iter()
        .map(|&(i, m)| {
            let r = &references[i];
            let label = if m == 0 { format!("p{i}") } else { format!("p{i}_m{m}") };
            match (mode, &basis) {
                (Mode::Fom, _) => fom_job(cfg, r, label),
                (_, Some(basis)) => reduced_job(cfg, r, basis, deim.as_ref(), label, m),
                _ => unreachable!("reduced modes load a basis"),
            }
        })
        .collect::<Result<_, _>>()?;

    let mut out = RunOutput::default();
    for (report, states, adaptive) in results {
        report.validate()?;
        out.reports.push(report);
        out.trajectories.push(states);
        if let Some(a) = adaptive {
            out.adaptive.push(a);
        }
    }
    write_run(cfg, &layout, &out)?;
    Ok(out)
}

type JobResult = Result<(RunReport, Vec<DVector<f64>>, Option<AdaptReport>), CliError>;

fn fom_job(cfg: &RunConfig, r: &Reference, label: String) -> JobResult {
    let mut report = base_report(label, Mode::Fom, 0, cfg);
    let sys = FullOrderSystem::new(&r.shifted, &r.eta);
    report.hamiltonian = hamiltonian_series(&sys, &r.shifted_states)?;
    report.state_norms = r.full.iter().map(|y| y.norm()).collect();
    fill_counts(&mut report, r.counts);
    report.newton_iterations = r.newton;
    report.online_seconds = r.seconds;
    Ok((report, r.full.clone(), None))
}

fn reduced_job(
    cfg: &RunConfig,
    r: &Reference,
    basis: &SymplecticBasis<f64>,
    deim: Option<&(DMatrix<f64>, Vec<usize>)>,
    label: String,
    m: usize,
) -> JobResult {
    let mode = cfg.run.mode;
    let integrator = cfg.time.integrator()?;
    let (dt, n_t) = (cfg.time.dt, cfg.time.steps());
    let context = format!("{} run {label}", mode.as_str());
    let start = Instant::now();
    let rom: ReducedModel<Shifted, f64> = assemble_rom(r.shifted.clone(), basis, &r.eta)?;
    let a = basis.matrix();
    let offset = r.shifted.offset();
    let z0 = DVector::zeros(2 * basis.k());
    let mut report = base_report(label, mode, m, cfg);
    let mut adaptive = None;
    let states = match mode {
        Mode::Rom => {
            report.offline_seconds = start.elapsed().as_secs_f64();
            let online = Instant::now();
            let traj = integrate_trajectory(&rom, &z0, dt, n_t, &integrator, |_, _| Ok(())).map_err(numerical(context))?;
            report.online_seconds = online.elapsed().as_secs_f64();
            fill_counts(&mut report, rom.counts());
            report.newton_iterations = traj.newton_iterations();
            report.hamiltonian = hamiltonian_series(&rom, &traj.states)?;
            traj.states
        }
        Mode::Hrom => {
            let (u, beta) = deim.expect("hrom loads the DEIM basis");
            let projector = stored_projector(u, beta, m, rom.model().weights())?;
            let hrom = HyperReducedModel::new(&rom, projector)?;
            report.offline_seconds = start.elapsed().as_secs_f64();
            let online = Instant::now();
            let traj = integrate_trajectory(&hrom, &z0, dt, n_t, &integrator, |_, _| Ok(())).map_err(numerical(context))?;
            report.online_seconds = online.elapsed().as_secs_f64();
            fill_counts(&mut report, hrom.counts());
            report.newton_iterations = traj.newton_iterations();
            report.hamiltonian = hamiltonian_series(&hrom, &traj.states)?;
            report.deim_gap = deim_gap_series(&hrom, &traj.states)?;
            traj.states
        }
        Mode::HromAdaptive => {
            let initial = match cfg.adapt.init {
                InitName::WarmUp => None,
                InitName::Training => {
                    let (u, beta) = deim.expect("training init loads the DEIM basis");
                    Some(stored_projector(u, beta, m, rom.model().weights())?)
                }
            };
            let acfg = cfg.adapt.to_core(m, cfg.run.seed);
            acfg.validate().map_err(|e| CliError::Validation(format!("adapt: {e}")))?;
            let run = gp_adeim_run(&rom, &acfg, &integrator, dt, n_t, initial).map_err(numerical(context))?;
            let rep = &run.report;
            report.offline_seconds = start.elapsed().as_secs_f64() - rep.online_seconds;
            report.online_seconds = rep.online_seconds;
            fill_counts(&mut report, rep.hrom_counts);
            report.jacobian_rows += rep.basis_rows + rep.sampling_rows;
            report.newton_iterations = rep.newton_iterations;
            report.hamiltonian = hamiltonian_series(&rom, &run.trajectory.states)?;
            adaptive = Some(run.report);
            run.trajectory.states
        }
        Mode::Fom => unreachable!("handled by fom_job"),
    };
    report.state_norms = lifted_norms(a, offset, &states);
    report.errors = Some(rel_errors_with_offset(&r.full, &states, a, Some(offset))?);
    Ok((report, states, adaptive))
}

fn write_run(cfg: &RunConfig, layout: &Layout, out: &RunOutput) -> Result<(), CliError> {
    let dir = layout.run_dir(cfg.run.mode);
    fs::create_dir_all(&dir)?;
    write_errors_csv(fs::File::create(dir.join("errors.csv"))?, &out.reports)?;
    write_timings_csv(fs::File::create(dir.join("timings.csv"))?, &out.reports)?;
    let mut counters = fs::File::create(dir.join("counters.csv"))?;
    writeln!(counters, "{COUNTERS_HEADER}")?;
    for r in &out.reports {
        writeln!(
            counters,
            "{},{},{},{},{},{}",
            r.label, r.m, r.term_rows, r.jacobian_rows, r.hessian_rows, r.newton_iterations
        )?;
    }
    let mut adaptive = out.adaptive.iter();
    for (report, states) in out.reports.iter().zip(&out.trajectories) {
        let run_dir = dir.join(&report.label);
        fs::create_dir_all(&run_dir)?;
        write_hamiltonian_csv(fs::File::create(run_dir.join("hamiltonian.csv"))?, report)?;
        if cfg.run.mode == Mode::HromAdaptive {
            let a = adaptive.next().expect("one adaptive report per run");
            write_adapt_csv(fs::File::create(run_dir.join("adapt_log.csv"))?, &a.updates)?;
        }
        if cfg.run.save_trajectories {
            let m = DMatrix::from_fn(states[0].len(), states.len(), |i, j| states[j][i]);
            let mut meta = metadata(cfg, "trajectory");
            meta.labels = report
                .times
                .iter()
                .map(|&t| ColumnLabel {
                    time: t,
                    eta: Vec::new(),
                })
                .collect();
            write_matrix(&run_dir.join("trajectory.gphr"), &m, &meta)?;
        }
    }
    Ok(())
}

pub const COUNTERS_HEADER: &str = "run,m,term_rows,jacobian_rows,hessian_rows,newton_iterations";

/// Merged view of all runs below an output directory.
#[derive(Clone, Debug, Default)]
pub struct ReportOutput {
    /// `errors.csv` rows as `(run, mode, m, e_l2, e_fin)` strings, verbatim.
    pub errors: Vec<[String; 5]>,
    /// Largest Hamiltonian drift per `(mode, run)`.
    pub max_drift: BTreeMap<(String, String), f64>,
}

fn expected_files(layout: &Layout) -> String {
    MODES
        .iter()
        .map(|m| layout.run_dir(*m).join("errors.csv").display().to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

/// Merges every `runs/<mode>` directory into `report/`.
pub fn report(out_dir: &Path) -> Result<ReportOutput, CliError> {
    let layout = Layout::new(out_dir);
    let found: Vec<Mode> = MODES
        .iter()
        .copied()
        .filter(|m| layout.run_dir(*m).join("errors.csv").exists())
        .collect();
    if found.is_empty() {
        return Err(CliError::Artifact(format!(
            "no run outputs under {}; expected at least one of {}",
            out_dir.display(),
            expected_files(&layout)
        )));
    }
    let csv_err = |p: &Path, e: csv::Error| CliError::Artifact(format!("{}: {e}", p.display()));
    let mut result = ReportOutput::default();
    let mut drift_rows: Vec<[String; 4]> = Vec::new();
    for mode in found {
        let dir = layout.run_dir(mode);
        let path = dir.join("errors.csv");
        let mut reader = csv::Reader::from_path(&path).map_err(|e| csv_err(&path, e))?;
        let header = reader.headers().map_err(|e| csv_err(&path, e))?.clone();
        if header.iter().collect::<Vec<_>>().join(",") != ERRORS_HEADER {
            return Err(CliError::Artifact(format!("{}: unexpected header", path.display())));
        }
        for rec in reader.records() {
            let rec = rec.map_err(|e| csv_err(&path, e))?;
            result.errors.push(std::array::from_fn(|i| rec[i].to_string()));
        }
        let mut labels: Vec<String> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join("hamiltonian.csv").exists())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        labels.sort();
        for label in labels {
            let path = dir.join(&label).join("hamiltonian.csv");
            let mut reader = csv::Reader::from_path(&path).map_err(|e| csv_err(&path, e))?;
            let mut worst = 0.0f64;
            for rec in reader.records() {
                let rec = rec.map_err(|e| csv_err(&path, e))?;
                let drift: f64 = rec[1]
                    .parse()
                    .map_err(|_| CliError::Artifact(format!("{}: bad drift value '{}'", path.display(), &rec[1])))?;
                worst = worst.max(drift.abs());
                drift_rows.push([mode.as_str().into(), label.clone(), rec[0].to_string(), rec[1].to_string()]);
            }
            result.max_drift.insert((mode.as_str().into(), label), worst);
        }
    }

    let dir = layout.report_dir();
    fs::create_dir_all(&dir)?;
    let mut w = csv::Writer::from_path(dir.join("errors.csv")).map_err(|e| csv_err(&dir, e))?;
    w.write_record(ERRORS_HEADER.split(',')).map_err(|e| csv_err(&dir, e))?;
    for row in &result.errors {
        w.write_record(row).map_err(|e| csv_err(&dir, e))?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("drift.csv")).map_err(|e| csv_err(&dir, e))?;
    w.write_record(["mode", "run", "t", "drift"]).map_err(|e| csv_err(&dir, e))?;
    for row in &drift_rows {
        w.write_record(row).map_err(|e| csv_err(&dir, e))?;
    }
    w.flush()?;

    let mut md = String::from("# Run summary\n\n## Errors\n\n| mode | run | m | E_L2 | E_fin |\n|---|---|---|---|---|\n");
    for r in &result.errors {
        md.push_str(&format!("| {} | {} | {} | {} | {} |\n", r[1], r[0], r[2], r[3], r[4]));
    }
    md.push_str("\n## Hamiltonian drift\n\n| mode | run | max drift |\n|---|---|---|\n");
    for ((mode, label), d) in &result.max_drift {
        md.push_str(&format!("| {mode} | {label} | {} |\n", fmt_f64(*d)));
    }
    fs::write(dir.join("summary.md"), md)?;
    Ok(result)
}
