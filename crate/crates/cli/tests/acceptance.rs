//! End-to-end acceptance suite. Every test prints one
//! `criterion N: PASS|FAIL ...` line; a FAIL is reported, not asserted, so the
//! suite always completes and the full scorecard is visible with `--nocapture`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use gpdeim_cli::config::{RunConfig, SchemeName};
use gpdeim_cli::pipeline::{self, BuildOutput, RunOutput};
use gpdeim_cli::Mode;
use gpdeim_core::adapt::{
    adapt_sampling, apply_rank_update, compute_window_residual, gp_adeim_run, solve_rank_r_update, update_objective,
    warm_up_projector, AdaptConfig, AdaptiveRun, FactorPath, RankPolicy, SamplingPolicy, SamplingStrategy, UpdateOutcome,
};
use gpdeim_core::deim::{DeimProjector, HyperReducedModel};
use gpdeim_core::integrate::{integrate_trajectory, FullOrderSystem, HamiltonianFlow, Integrator, Scheme};
use gpdeim_core::metrics::{conservation_terms, hamiltonian_series, rel_errors_with_offset};
use gpdeim_core::model::{Counted, HamiltonianModel, Nls1d, Nls1dConfig, ShiftedModel, Swe2d, Swe2dConfig};
use gpdeim_core::reduce::{assemble_rom, complex_svd_basis, ReducedModel, SymplecticBasis};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

type Model = dyn HamiltonianModel<f64>;

/// Written to the stderr handle directly so the line survives output capture.
fn verdict(n: usize, pass: bool, detail: impl AsRef<str>) {
    let line = format!("criterion {n}: {} {}\n", if pass { "PASS" } else { "FAIL" }, detail.as_ref());
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
}

fn fmt_seq(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", ")
}

// ---------------------------------------------------------------------------
// Desk-scale pipelines, run once and shared.

const SWE_SWEEP: [usize; 6] = [10, 20, 40, 80, 160, 256];
const NLS_SWEEP: [usize; 7] = [10, 20, 40, 80, 160, 320, 512];

struct Desk {
    _dir: Option<TempDir>,
    cfg: RunConfig,
    build: BuildOutput,
    fom: RunOutput,
    rom: RunOutput,
    hrom: RunOutput,
    adaptive: Option<RunOutput>,
}

fn shipped(name: &str) -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    RunConfig::load(&path).unwrap()
}

fn with_mode(cfg: &RunConfig, mode: Mode) -> RunConfig {
    let mut c = cfg.clone();
    c.run.mode = mode;
    c
}

/// snapshots, build, then fom, rom, the hrom sweep and (optionally) the adaptive runs.
fn desk_pipeline(base: &RunConfig, sweep: &[usize], adaptive: bool, out: &Path) -> Desk {
    let mut cfg = base.clone();
    cfg.run.output = out.to_path_buf();
    let adaptive_m = cfg.deim.m.clone();
    cfg.deim.m = sweep.to_vec();
    cfg.validate().unwrap();
    pipeline::snapshots(&cfg).unwrap();
    let build = pipeline::build(&cfg).unwrap();
    let fom = pipeline::run(&with_mode(&cfg, Mode::Fom)).unwrap();
    let rom = pipeline::run(&with_mode(&cfg, Mode::Rom)).unwrap();
    let hrom = pipeline::run(&with_mode(&cfg, Mode::Hrom)).unwrap();
    let adaptive = adaptive.then(|| {
        let mut c = with_mode(&cfg, Mode::HromAdaptive);
        c.deim.m = adaptive_m;
        pipeline::run(&c).unwrap()
    });
    Desk {
        _dir: None,
        cfg,
        build,
        fom,
        rom,
        hrom,
        adaptive,
    }
}

fn desk(base: RunConfig, sweep: &[usize], adaptive: bool) -> Desk {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let mut d = desk_pipeline(&base, sweep, adaptive, dir.path());
    eprintln!("desk {} ({:?}) ready in {:.0}s", d.cfg.problem.name(), d.cfg.time.scheme, start.elapsed().as_secs_f64());
    d._dir = Some(dir);
    d
}

fn nls_base() -> RunConfig {
    shipped("nls1d_desk.toml")
}

fn swe_base(scheme: SchemeName) -> RunConfig {
    let mut cfg = shipped("swe2d_desk.toml");
    cfg.time.scheme = scheme;
    cfg
}

/// AVF desk config whose adaptive runs use m ∈ {20, 40}.
fn swe_reproducible() -> RunConfig {
    let mut cfg = swe_base(SchemeName::Avf);
    cfg.deim.m = vec![20, 40];
    cfg
}

fn swe_avf() -> &'static Desk {
    static CELL: OnceLock<Desk> = OnceLock::new();
    CELL.get_or_init(|| desk(swe_reproducible(), &SWE_SWEEP, true))
}

fn swe_imr() -> &'static Desk {
    static CELL: OnceLock<Desk> = OnceLock::new();
    CELL.get_or_init(|| desk(swe_base(SchemeName::Imr), &SWE_SWEEP, false))
}

fn nls() -> &'static Desk {
    static CELL: OnceLock<Desk> = OnceLock::new();
    CELL.get_or_init(|| desk(nls_base(), &NLS_SWEEP, true))
}

impl Desk {
    fn eta(&self) -> &[f64] {
        &self.cfg.run.test[0]
    }

    fn model(&self) -> Box<Model> {
        pipeline::build_model(&self.cfg.problem).unwrap()
    }

    fn rom_error(&self) -> f64 {
        self.rom.reports[0].errors.unwrap().l2
    }

    /// `(m, E_L2)` of the hrom sweep.
    fn sweep(&self) -> Vec<(usize, f64)> {
        self.hrom.reports.iter().map(|r| (r.m, r.errors.unwrap().l2)).collect()
    }

    fn hrom_index(&self, m: usize) -> usize {
        self.hrom.reports.iter().position(|r| r.m == m).unwrap()
    }
}

fn shifted_rom<'a>(model: &'a Model, basis: &SymplecticBasis<f64>, eta: &[f64]) -> ReducedModel<ShiftedModel<&'a Model, f64>, f64> {
    assemble_rom(ShiftedModel::at_initial_state(model, eta), basis, eta).unwrap()
}

// ---------------------------------------------------------------------------
// Small random problems.

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn orthonormal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    random_matrix(rows, cols, rng).qr().q()
}

fn small_models() -> Vec<(&'static str, Box<Model>, Vec<(f64, f64)>)> {
    vec![
        (
            "swe2d 8x8",
            Box::new(Swe2d::new(&Swe2dConfig { lx1: 2.0, lx2: 2.0, nx1: 8, nx2: 8 }).unwrap()) as Box<Model>,
            vec![(1.1, 1.7), (0.7, 1.3)],
        ),
        (
            "nls1d n=64",
            Box::new(Nls1d::new(&Nls1dConfig { n: 64, l: 0.11 }).unwrap()) as Box<Model>,
            vec![(0.9, 1.1)],
        ),
    ]
}

fn random_eta(bounds: &[(f64, f64)], rng: &mut ChaCha8Rng) -> Vec<f64> {
    bounds.iter().map(|&(lo, hi)| rng.random_range(lo..hi)).collect()
}

/// Complex-SVD basis of random snapshots.
fn random_basis(dim: usize, k: usize, rng: &mut ChaCha8Rng) -> SymplecticBasis<f64> {
    complex_svd_basis(&random_matrix(dim, 3 * k.max(dim / 2), rng), k).unwrap()
}

/// `J v` for the canonical `J = [[0, I], [-I, 0]]`.
fn poisson(v: &DVector<f64>) -> DVector<f64> {
    let k = v.len() / 2;
    DVector::from_fn(v.len(), |i, _| if i < k { v[i + k] } else { -v[i - k] })
}

/// Fourth-order central differences.
fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, z: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_fn(z.len(), |i, _| {
        let at = |s: f64| {
            let mut x = z.clone();
            x[i] += s * h;
            f(&x)
        };
        (-at(2.0) + 8.0 * at(1.0) - 8.0 * at(-1.0) + at(-2.0)) / (12.0 * h)
    })
}

fn orthosymplectic_residuals(a: &DMatrix<f64>) -> (f64, f64) {
    let (n2, k2) = a.shape();
    let (n, k) = (n2 / 2, k2 / 2);
    let ja = DMatrix::from_fn(n2, k2, |i, j| if i < n { a[(i + n, j)] } else { -a[(i - n, j)] });
    let j2k = DMatrix::from_fn(k2, k2, |i, j| {
        if i < k && j == i + k {
            1.0
        } else if i >= k && j + k == i {
            -1.0
        } else {
            0.0
        }
    });
    let orth = (a.transpose() * a - DMatrix::identity(k2, k2)).abs().max();
    let symp = (a.transpose() * ja - j2k).abs().max();
    (orth, symp)
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_01_structure_preservation() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    for (name, model, bounds) in small_models() {
        let basis = random_basis(model.dim(), 5, &mut rng);
        let d = model.num_terms();
        let mut w = 0.0f64;
        for _ in 0..50 {
            let eta = random_eta(&bounds, &mut rng);
            let rom = shifted_rom(model.as_ref(), &basis, &eta);
            let m = rng.random_range(3..=12);
            let projector = DeimProjector::from_basis(orthonormal(d, m, &mut rng), rom.model().weights()).unwrap();
            let hrom = HyperReducedModel::new(&rom, projector).unwrap();
            let z = DVector::from_fn(10, |_, _| rng.random_range(-0.5..0.5));
            let rhs = hrom.rhs(&z).unwrap();
            let fd = poisson(&fd_gradient(|v| hrom.energy(v).unwrap(), &z, 1e-3));
            w = w.max((&rhs - &fd).norm() / rhs.norm());
        }
        worst.insert(name, w);
    }
    let pass = worst.values().all(|&e| e <= 1e-6);
    verdict(1, pass, format!("max relative |f_hr - J2k grad H_hr| over 50 samples per problem: {worst:?} (tol 1e-6)"));
}

#[test]
fn criterion_02_hrom_converges_to_rom() {
    let mut lines = Vec::new();
    let mut pass = true;
    for (label, desk) in [("swe avf", swe_avf()), ("swe imr", swe_imr()), ("nls avf", nls())] {
        let rom = desk.rom_error();
        let sweep = desk.sweep();
        let within = |e: f64| e <= 1.1 * rom && rom <= 1.1 * e;
        let last = sweep.last().unwrap().1;
        let plateau = sweep.iter().rev().take_while(|(_, e)| within(*e)).count();
        let ok = within(last) && plateau >= 2;
        pass &= ok;
        lines.push(format!(
            "{label}: rom {rom:.3e}, hrom [{}] at m = {:?}, plateau length {plateau}",
            fmt_seq(&sweep.iter().map(|s| s.1).collect::<Vec<_>>()),
            sweep.iter().map(|s| s.0).collect::<Vec<_>>()
        ));
    }
    verdict(2, pass, format!("largest m within 1.1x of rom and a plateau of >= 2 sizes; {}", lines.join("; ")));
}

#[test]
fn criterion_03_conservation_hierarchy() {
    let mut pass = true;
    let mut lines = Vec::new();
    for (label, desk) in [("swe", swe_avf()), ("nls", nls())] {
        let fom_h = &desk.fom.reports[0].hamiltonian;
        let h0 = fom_h[0];
        let fom_drift = fom_h.iter().map(|h| (h - h0).abs()).fold(0.0, f64::max);
        let model = desk.model();
        let rom = shifted_rom(model.as_ref(), &desk.build.basis, desk.eta());
        let mut drifts = Vec::new();
        let mut bound_ok = true;
        for (report, states) in desk.hrom.reports.iter().zip(&desk.hrom.trajectories) {
            let h_az = hamiltonian_series(&rom, states).unwrap();
            drifts.push(h_az.iter().map(|h| (h - h0).abs()).fold(0.0, f64::max));
            let terms = conservation_terms(fom_h, &h_az, &report.hamiltonian, &report.deim_gap).unwrap();
            bound_ok &= terms.iter().all(|t| t.holds(h0));
        }
        let monotone = drifts.windows(2).all(|w| w[1] <= 3.0 * w[0]);
        let plateau = *drifts.last().unwrap() <= 10.0 * fom_drift;
        let ok = fom_drift <= 1e-9 && monotone && plateau && bound_ok;
        pass &= ok;
        lines.push(format!(
            "{label}: fom drift {fom_drift:.2e}, hrom drift [{}], monotone(x3) {monotone}, plateau<=10x fom {plateau}, bound every step {bound_ok}",
            fmt_seq(&drifts)
        ));
    }
    verdict(3, pass, lines.join("; "));
}

fn max_rel_gap(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    let scale = b.iter().map(|v| v.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max) / scale
}

#[test]
fn criterion_04_exactness_cases() {
    let mut lines = Vec::new();
    let mut pass = true;
    for (label, desk) in [("swe", swe_avf()), ("nls", nls())] {
        let full = desk.hrom_index(desk.model().num_terms());
        let gap = max_rel_gap(&desk.hrom.trajectories[full], &desk.rom.trajectories[0]);
        pass &= gap <= 1e-10;
        lines.push(format!("{label} m=d vs rom {gap:.2e}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let small: Vec<(&str, Box<Model>, Vec<f64>)> = vec![
        ("swe 4x4", Box::new(Swe2d::new(&Swe2dConfig { lx1: 2.0, lx2: 2.0, nx1: 4, nx2: 4 }).unwrap()), vec![1.4, 1.0]),
        ("nls n=16", Box::new(Nls1d::new(&Nls1dConfig { n: 16, l: 0.11 }).unwrap()), vec![1.0]),
    ];
    for (label, model, eta) in small {
        let n = model.half_dim();
        let basis = random_basis(2 * n, n, &mut rng);
        let integrator = Integrator::new(Scheme::Avf);
        let y0 = model.initial_state(&eta);
        let fom = integrate_trajectory(&FullOrderSystem::new(model.as_ref(), &eta), &y0, 0.01, 50, &integrator, |_, _| Ok(())).unwrap();
        let rom = assemble_rom(model.as_ref(), &basis, &eta).unwrap();
        let z0 = basis.project(&y0);
        let red = integrate_trajectory(&rom, &z0, 0.01, 50, &integrator, |_, _| Ok(())).unwrap();
        let lifted: Vec<DVector<f64>> = red.states.iter().map(|z| basis.lift(z)).collect();
        let gap = max_rel_gap(&lifted, &fom.states);
        pass &= gap <= 1e-10;
        lines.push(format!("{label} square basis vs fom {gap:.2e}"));
    }
    verdict(4, pass, format!("{} (tol 1e-10)", lines.join(", ")));
}

/// Orthonormal basis of the row space of `c` from the eigenvectors of `CᵀC`.
fn row_space(c: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = (c.transpose() * c).symmetric_eigen();
    let tol = 1e-10 * eig.eigenvalues.max();
    let keep: Vec<usize> = (0..eig.eigenvalues.len()).filter(|&i| eig.eigenvalues[i] > tol).collect();
    let v = DMatrix::from_fn(c.ncols(), keep.len(), |i, j| eig.eigenvectors[(i, keep[j])]);
    assert!((c - c * &v * v.transpose()).norm() <= 1e-10 * c.norm(), "row-space oracle");
    v
}

fn rows_of(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), m.ncols(), |i, j| m[(idx[i], j)])
}

fn f2(m: &DMatrix<f64>) -> f64 {
    m.norm_squared()
}

#[test]
fn criterion_05_update_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst_obj, mut worst_eig, mut worst_lemma, mut worst_rho) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let (mut deficient, mut qr_path) = (0, 0);
    for case in 0..100 {
        let ms = rng.random_range(2..=16);
        let m = rng.random_range(1..=8);
        let wbar = rng.random_range(1..=24);
        let d = ms + rng.random_range(m..=m + 8);
        let u = orthonormal(d, m, &mut rng);
        let weights = DVector::from_element(d, 1.0);
        let projector = DeimProjector::from_basis(u, &weights).unwrap();
        // Every third case forces a rank-deficient coefficient matrix.
        let f = if case % 3 == 0 && m > 1 {
            let q = rng.random_range(1..m);
            random_matrix(d, q, &mut rng) * random_matrix(q, wbar, &mut rng)
        } else {
            random_matrix(d, wbar, &mut rng)
        };
        let all: Vec<usize> = (0..d).collect();
        let residual = compute_window_residual(&projector, &rows_of(&f, projector.indices()), &f, &all).unwrap();
        let c = &residual.coefficients;
        let v = row_space(c);
        if v.ncols() < m {
            deficient += 1;
        }
        let cc = &v * v.transpose();
        let r = &residual.residual;
        let sampling = adapt_sampling(r, c, m, SamplingPolicy::Fixed(ms), SamplingStrategy::Projection, &mut rng).unwrap();
        let s = sampling.indices();
        let sr = rows_of(r, s);
        let scale = f2(r).max(f64::MIN_POSITIVE);
        // Generalized eigenvalues are the squared singular values of SᵀRℂ.
        let mut oracle: Vec<f64> = (&sr * &v).singular_values().iter().map(|x| x * x).collect();
        oracle.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for rank in 1..=m {
            let up = solve_rank_r_update(&sr, c, RankPolicy::Fixed(rank)).unwrap();
            let obj = update_objective(&sr, c, &up);
            worst_obj = worst_obj.max((obj - (f2(&sr) - up.lambda_sum())).abs() / scale);
            for (l, o) in up.lambda.iter().zip(&oracle) {
                worst_eig = worst_eig.max((l - o).abs() / scale);
            }
        }
        let full = solve_rank_r_update(&sr, c, RankPolicy::full()).unwrap();
        if v.ncols() < m {
            qr_path += usize::from(full.path == FactorPath::PivotedQr);
        }
        let lemma = f2(&(&sr * (DMatrix::identity(wbar, wbar) - &cc)));
        worst_lemma = worst_lemma.max((update_objective(&sr, c, &full) - lemma).abs() / scale);
        let restricted = residual.restrict(s).unwrap();
        let bu = apply_rank_update(&projector, &restricted, RankPolicy::full(), &weights).unwrap();
        if bu.outcome != UpdateOutcome::Rejected {
            let after = f2(&(bu.projector.basis() * c - &f));
            let rc = r * &cc;
            let rho = f2(r) - f2(&rows_of(&rc, s));
            let split = f2(&(r - &rc)) + f2(&rows_of(&rc, &sampling.complement()));
            worst_rho = worst_rho.max((after - rho).abs() / scale).max((rho - split).abs() / scale);
        }
    }
    let worst = worst_obj.max(worst_eig).max(worst_lemma).max(worst_rho);
    let pass = worst <= 1e-9 && deficient > 0 && qr_path == deficient;
    verdict(
        5,
        pass,
        format!(
            "100 cases: objective {worst_obj:.1e}, eigenvalues {worst_eig:.1e}, sampled remainder {worst_lemma:.1e}, rho {worst_rho:.1e} (tol 1e-9); {deficient} rank-deficient C, {qr_path} on the pivoted-QR path"
        ),
    );
}

fn combinations(d: usize, k: usize) -> Vec<Vec<usize>> {
    (0u32..(1 << d))
        .filter(|mask| mask.count_ones() as usize == k)
        .map(|mask| (0..d).filter(|i| mask & (1 << i) != 0).collect())
        .collect()
}

fn nls_reference() -> (Box<Model>, Vec<DVector<f64>>) {
    let desk = nls();
    (desk.model(), desk.fom.trajectories[0].clone())
}

/// Adaptive run at the desk NLS test parameter; returns `(E_L2, run)`.
fn nls_adaptive(cfg: &AdaptConfig) -> (f64, AdaptiveRun<f64>) {
    let desk = nls();
    let (model, full) = nls_reference();
    let rom = shifted_rom(model.as_ref(), &desk.build.basis, desk.eta());
    let integrator = desk.cfg.time.integrator().unwrap();
    let run = gp_adeim_run(&rom, cfg, &integrator, desk.cfg.time.dt, desk.cfg.time.steps(), None).unwrap();
    let e = rel_errors_with_offset(&full, &run.trajectory.states, desk.build.basis.matrix(), Some(rom.model().offset())).unwrap();
    (e.l2, run)
}

fn trend_base(m: usize) -> AdaptConfig {
    let mut c = AdaptConfig::nls_default(m);
    c.rank = RankPolicy::full();
    c.sampling = SamplingPolicy::Fixed(5 * m / 2);
    c
}

#[test]
fn criterion_06_sampling_optimality() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut exhaustive_ok = true;
    for _ in 0..60 {
        let d = rng.random_range(4..=12);
        let m = rng.random_range(1..=3.min(d - 1));
        let ms = rng.random_range(m..d);
        let wbar = rng.random_range(2..=8);
        let r = random_matrix(d, wbar, &mut rng);
        let c = random_matrix(m, wbar, &mut rng);
        let v = row_space(&c);
        let rc = &r * &v;
        let s = adapt_sampling(&r, &c, m, SamplingPolicy::Fixed(ms), SamplingStrategy::Projection, &mut rng).unwrap();
        let chosen = f2(&rows_of(&rc, s.indices()));
        let best = combinations(d, ms).iter().map(|set| f2(&rows_of(&rc, set))).fold(0.0, f64::max);
        exhaustive_ok &= chosen >= best * (1.0 - 1e-12);
    }
    let m = 20;
    let projection = trend_base(m);
    let mut random = projection.clone();
    random.strategy = SamplingStrategy::Random(nls().cfg.run.seed);
    let (e_p, p) = nls_adaptive(&projection);
    let (e_r, q) = nls_adaptive(&random);
    let pairs: Vec<(f64, f64)> = p
        .report
        .updates
        .iter()
        .zip(&q.report.updates)
        .filter_map(|(a, b)| Some((a.full_residual_after?, b.full_residual_after?)))
        .collect();
    let wins = pairs.iter().filter(|(a, b)| a <= b).count();
    let fraction = wins as f64 / pairs.len().max(1) as f64;
    let pass = exhaustive_ok && !pairs.is_empty() && fraction >= 0.9;
    verdict(
        6,
        pass,
        format!(
            "exhaustive optimality (60 cases, d <= 12) {exhaustive_ok}; desk nls m={m}, m_s={}: projection residual <= random at {wins}/{} sampling updates ({:.0}%, need >= 90%), E_L2 projection {e_p:.3e} vs random {e_r:.3e}",
            5 * m / 2,
            pairs.len(),
            100.0 * fraction
        ),
    );
}

fn non_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= w[0])
}

fn non_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] >= w[0])
}

#[test]
fn criterion_07_adaptive_vs_fixed_and_trends() {
    let start = Instant::now();
    let desk = nls();
    let adaptive = desk.adaptive.as_ref().unwrap();
    let mut pass = true;
    let mut lines = Vec::new();
    for r in &adaptive.reports {
        let fixed = desk.hrom.reports[desk.hrom_index(r.m)].errors.unwrap().l2;
        let adapted = r.errors.unwrap().l2;
        let ratio = adapted / fixed;
        pass &= ratio <= 0.5;
        lines.push(format!("m={}: adaptive {adapted:.3e} / fixed {fixed:.3e} = {ratio:.2}", r.m));
    }
    let m = 20;
    let sweep = |vary: &dyn Fn(&mut AdaptConfig, f64), values: &[f64]| -> Vec<f64> {
        values
            .iter()
            .map(|&x| {
                let mut c = trend_base(m);
                vary(&mut c, x);
                nls_adaptive(&c).0
            })
            .collect()
    };
    let taus = [1e-4, 1e-6, 1e-8, 1e-10, 1e-12];
    let tau_r = sweep(&|c, x| c.rank = RankPolicy::Tolerance(x), &taus);
    let tau_s = sweep(&|c, x| c.sampling = SamplingPolicy::Tolerance(x), &taus);
    let window = sweep(
        &|c, x| {
            c.delta0 = 10;
            c.delta = 10;
            c.gamma = 10;
            c.window = x as usize;
        },
        &[1.0, 2.0, 4.0, 6.0],
    );
    let delta = sweep(
        &|c, x| {
            c.delta = x as usize;
            c.gamma = x as usize;
        },
        &[5.0, 10.0, 20.0, 30.0],
    );
    let gamma = sweep(&|c, x| c.gamma = x as usize, &[5.0, 10.0, 20.0, 30.0]);
    let trends = [
        ("tau_r 1e-4..1e-12 non-increasing", &tau_r, non_increasing(&tau_r)),
        ("tau_s 1e-4..1e-12 non-increasing", &tau_s, non_increasing(&tau_s)),
        ("w 1,2,4,6 non-increasing", &window, non_increasing(&window)),
        ("delta 5,10,20,30 non-decreasing", &delta, non_decreasing(&delta)),
        ("gamma 5,10,20,30 non-decreasing", &gamma, non_decreasing(&gamma)),
    ];
    for (name, values, ok) in trends {
        pass &= ok;
        lines.push(format!("{name} {ok} [{}]", fmt_seq(values)));
    }
    let seconds = start.elapsed().as_secs_f64();
    pass &= seconds <= 900.0;
    verdict(7, pass, format!("ratio <= 0.5; {}; trend sweeps {seconds:.0}s", lines.join("; ")));
}

#[test]
fn criterion_08_cost_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut hrom_ok = true;
    for (_, model, bounds) in small_models() {
        let eta = random_eta(&bounds, &mut rng);
        let basis = random_basis(model.dim(), 4, &mut rng);
        let counted = Counted::new(ShiftedModel::at_initial_state(model.as_ref(), &eta));
        let rom = assemble_rom(&counted, &basis, &eta).unwrap();
        for m in [3, 7, 12] {
            let projector = DeimProjector::from_basis(orthonormal(model.num_terms(), m, &mut rng), rom.model().weights()).unwrap();
            let hrom = HyperReducedModel::new(&rom, projector).unwrap();
            let z = DVector::from_fn(8, |_, _| rng.random_range(-0.3..0.3));
            counted.reset();
            hrom.rhs(&z).unwrap();
            let c = counted.counts();
            hrom_ok &= c.gradients == m && c.terms == 0 && c.hessians == 0;
            counted.reset();
            hrom.hessian(&z).unwrap();
            hrom_ok &= counted.counts().hessians == m;
        }
    }
    let desk = nls();
    let model = desk.model();
    let counted = Counted::new(ShiftedModel::at_initial_state(model.as_ref(), desk.eta()));
    let rom = assemble_rom(&counted, &desk.build.basis, desk.eta()).unwrap();
    let d = model.num_terms();
    let mut cfg = trend_base(20);
    cfg.delta0 = 10;
    cfg.delta = 5;
    cfg.window = 3;
    cfg.gamma = 15;
    let integrator = desk.cfg.time.integrator().unwrap();
    let (initial, _) = warm_up_projector(&rom, &integrator, desk.cfg.time.dt, cfg.delta0, cfg.m).unwrap();
    counted.reset();
    let run = gp_adeim_run(&rom, &cfg, &integrator, desk.cfg.time.dt, desk.cfg.time.steps(), Some(initial)).unwrap();
    let rep = &run.report;
    let mut budget_ok = true;
    let mut schedule_ok = true;
    for u in &rep.updates {
        schedule_ok &= u.sampling_updated == cfg.is_sampling_step(u.step);
        if u.sampling_updated {
            budget_ok &= u.jacobian_rows == d * cfg.window;
        } else {
            budget_ok &= u.jacobian_rows <= (cfg.m + u.sampling_size) * cfg.window && u.jacobian_rows < d;
        }
    }
    let total = counted.counts().gradients;
    let accounted = rep.basis_rows + rep.sampling_rows + rep.hrom_counts.gradients;
    let ledger_ok = total == accounted;
    let pass = hrom_ok && budget_ok && schedule_ok && ledger_ok && !rep.updates.is_empty();
    verdict(
        8,
        pass,
        format!(
            "per-evaluation rows == m {hrom_ok}; {} updates within (m + m_s) w rows {budget_ok}; all d rows only on gamma steps {schedule_ok}; counted {total} == reported {accounted} {ledger_ok}",
            rep.updates.len()
        ),
    );
}

#[test]
fn criterion_09_basis_certification() {
    let mut worst = (0.0f64, 0.0f64);
    let mut bases: Vec<DMatrix<f64>> = Vec::new();
    for desk in [swe_avf(), swe_imr(), nls()] {
        let cert = desk.build.certificate;
        worst = (worst.0.max(cert.orthonormality), worst.1.max(cert.symplecticity));
        bases.push(desk.build.basis.matrix().clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for (_, model, _) in small_models() {
        for k in [1, 5, model.half_dim()] {
            bases.push(random_basis(model.dim(), k, &mut rng).matrix().clone());
        }
    }
    for a in &bases {
        let (o, s) = orthosymplectic_residuals(a);
        worst = (worst.0.max(o), worst.1.max(s));
    }
    let count = bases.len();
    let pass = worst.0 <= 1e-12 && worst.1 <= 1e-12;
    verdict(
        9,
        pass,
        format!("{count} bases: max |AᵀA - I| {:.1e}, max |AᵀJA - J| {:.1e} (tol 1e-12)", worst.0, worst.1),
    );
}

fn csv_files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "csv") && p.file_name().is_some_and(|n| n != "timings.csv") {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn criterion_10_reproducibility() {
    let first = swe_avf();
    let root_a = first.cfg.run.output.clone();
    let dir = tempfile::tempdir().unwrap();
    desk_pipeline(&swe_reproducible(), &SWE_SWEEP, true, dir.path());
    let (a, b) = (csv_files(&root_a), csv_files(dir.path()));
    let differing: Vec<String> = a
        .iter()
        .filter(|p| fs::read(root_a.join(p)).ok() != fs::read(dir.path().join(p)).ok())
        .map(|p| p.display().to_string())
        .collect();
    let pass = a == b && !a.is_empty() && differing.is_empty();
    verdict(
        10,
        pass,
        format!("{} CSV files compared byte-for-byte across two desk swe pipelines (timings excluded), differing: {differing:?}", a.len()),
    );
}
