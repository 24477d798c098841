//! Errors, Hamiltonian conservation and spectra of a run.
//!
//! CSV files written here use `.` as decimal separator and 17 significant
//! digits, so every `f64` round-trips exactly. Headers:
//!
//! | file | columns |
//! |---|---|
//! | `errors.csv` | `run,mode,m,e_l2,e_fin` |
//! | `hamiltonian.csv` | `t,drift,deim_gap` |
//! | `spectrum.csv` | `index,sigma` |
//! | `adapt_log.csv` | `j,step,rank,m_s,sampling_updated,residual_before,residual_after,full_residual_after,lambda_sum,path,outcome,condition,jacobian_rows,bucket` |
//! | `timings.csv` | `run,bucket,seconds` |

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};

use crate::adapt::UpdateRecord;
use crate::deim::HyperReducedModel;
use crate::error::{Error, Result};
use crate::integrate::HamiltonianFlow;
use crate::linalg::singular_values;
use crate::model::HamiltonianModel;
use crate::scalar::{as_f64, Scalar};

/// `E_L2` and `E_fin` of a reduced trajectory against the full one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelErrors {
    pub l2: f64,
    pub fin: f64,
}

/// Relative errors of `A zⁱ` against `yⁱ`.
pub fn rel_errors<T: Scalar>(full: &[DVector<T>], reduced: &[DVector<T>], a: &DMatrix<T>) -> Result<RelErrors> {
    rel_errors_with_offset(full, reduced, a, None)
}

/// Relative errors of `A zⁱ + offset` against `yⁱ`, for shifted coordinates.
pub fn rel_errors_with_offset<T: Scalar>(
    full: &[DVector<T>],
    reduced: &[DVector<T>],
    a: &DMatrix<T>,
    offset: Option<&DVector<T>>,
) -> Result<RelErrors> {
    if full.len() != reduced.len() {
        return Err(Error::dims("trajectory length", full.len(), reduced.len()));
    }
    if full.is_empty() {
        return Err(Error::ZeroReference);
    }
    let (mut num, mut den) = (0.0f64, 0.0f64);
    let mut last = (0.0, 0.0);
    for (y, z) in full.iter().zip(reduced) {
        if y.len() != a.nrows() || z.len() != a.ncols() {
            return Err(Error::dims("trajectory state", a.nrows(), y.len()));
        }
        let mut approx = a * z;
        if let Some(o) = offset {
            approx += o;
        }
        let e = as_f64((y - approx).norm_squared());
        let n = as_f64(y.norm_squared());
        num += e;
        den += n;
        last = (e, n);
    }
    if den == 0.0 || last.1 == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok(RelErrors {
        l2: (num / den).sqrt(),
        fin: (last.0 / last.1).sqrt(),
    })
}

/// `H` along a trajectory.
pub fn hamiltonian_series<T: Scalar, F: HamiltonianFlow<T> + ?Sized>(flow: &F, states: &[DVector<T>]) -> Result<Vec<f64>> {
    states.iter().map(|s| flow.energy(s).map(as_f64)).collect()
}

/// Reference value for a drift series.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DriftReference {
    /// The first entry of the series.
    Initial,
    /// A supplied value, such as the full-order `H(y⁰)`.
    Value(f64),
}

/// `|Hʲ − H_ref|`.
pub fn hamiltonian_drift(series: &[f64], reference: DriftReference) -> Vec<f64> {
    let h0 = match reference {
        DriftReference::Initial => series.first().copied().unwrap_or(0.0),
        DriftReference::Value(v) => v,
    };
    series.iter().map(|h| (h - h0).abs()).collect()
}

/// `|H_hr(z) − H(Az)| = |cᵀ(ℙ − I) G(Az)|` at each state.
pub fn deim_gap_series<T: Scalar, M: HamiltonianModel<T>>(hrom: &HyperReducedModel<'_, M, T>, states: &[DVector<T>]) -> Result<Vec<f64>> {
    states
        .iter()
        .map(|z| Ok((as_f64(hrom.nonlinear_energy(z)) - as_f64(hrom.rom().nonlinear_energy(z)?)).abs()))
        .collect()
}

/// Terms of the hyper-reduced conservation bound at one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConservationTerms {
    /// `|H(y⁰) − H(Azʲ)|`.
    pub error: f64,
    /// `|cᵀ(I − ℙ) G(Azʲ)|`.
    pub gap: f64,
    /// `|H(yʲ) − H(y⁰)|` of the full-order integrator.
    pub fom_drift: f64,
    /// `|H_hr(zʲ) − H_hr(z⁰)|` of the hyper-reduced integrator.
    pub hrom_drift: f64,
}

impl ConservationTerms {
    /// Whether `error ≤ gap + fom_drift + hrom_drift`, up to rounding in the
    /// evaluation of Hamiltonians of size `scale`.
    pub fn holds(&self, scale: f64) -> bool {
        self.error <= self.gap + self.fom_drift + self.hrom_drift + 64.0 * f64::EPSILON * scale.abs().max(1.0)
    }
}

/// The bound terms at every step from the measured series.
///
/// `fom` holds `H(yʲ)`, `rom` holds `H(Azʲ)`, `hrom` holds `H_hr(zʲ)` and `gap` the DEIM gap.
pub fn conservation_terms(fom: &[f64], rom: &[f64], hrom: &[f64], gap: &[f64]) -> Result<Vec<ConservationTerms>> {
    let n = fom.len();
    if rom.len() != n || hrom.len() != n || gap.len() != n {
        return Err(Error::dims("conservation series", n, rom.len().min(hrom.len()).min(gap.len())));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    Ok((0..n)
        .map(|j| ConservationTerms {
            error: (fom[0] - rom[j]).abs(),
            gap: gap[j],
            fom_drift: (fom[j] - fom[0]).abs(),
            hrom_drift: (hrom[j] - hrom[0]).abs(),
        })
        .collect())
}

/// Singular values in decreasing order.
pub fn singular_spectrum<T: Scalar>(m: &DMatrix<T>) -> Result<Vec<f64>> {
    if m.is_empty() {
        return Err(Error::InvalidArgument("empty matrix has no spectrum".into()));
    }
    Ok(singular_values(m)?.iter().map(|&s| as_f64(s)).collect())
}

/// Per-run record of a simulation.
#[derive(Clone, Debug, Default)]
pub struct RunReport {
    pub label: String,
    pub mode: String,
    /// DEIM size, zero when not hyper-reduced.
    pub m: usize,
    pub times: Vec<f64>,
    pub hamiltonian: Vec<f64>,
    pub state_norms: Vec<f64>,
    /// DEIM gap per step, empty unless hyper-reduced.
    pub deim_gap: Vec<f64>,
    /// Rows of `G` evaluated.
    pub term_rows: usize,
    /// Rows of the Jacobian of `G` evaluated.
    pub jacobian_rows: usize,
    /// Rows of the Hessian of `G` evaluated.
    pub hessian_rows: usize,
    pub newton_iterations: usize,
    pub offline_seconds: f64,
    pub online_seconds: f64,
    pub errors: Option<RelErrors>,
}

impl RunReport {
    /// Series lengths all equal `n_t + 1`.
    pub fn validate(&self) -> Result<()> {
        let n = self.times.len();
        if self.hamiltonian.len() != n || self.state_norms.len() != n {
            return Err(Error::dims("report series", n, self.hamiltonian.len()));
        }
        if !self.deim_gap.is_empty() && self.deim_gap.len() != n {
            return Err(Error::dims("DEIM gap series", n, self.deim_gap.len()));
        }
        Ok(())
    }

    pub fn drift(&self) -> Vec<f64> {
        hamiltonian_drift(&self.hamiltonian, DriftReference::Initial)
    }

    pub fn max_drift(&self) -> f64 {
        self.drift().into_iter().fold(0.0, f64::max)
    }
}

/// Float formatting with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub const ERRORS_HEADER: &str = "run,mode,m,e_l2,e_fin";
pub const HAMILTONIAN_HEADER: &str = "t,drift,deim_gap";
pub const SPECTRUM_HEADER: &str = "index,sigma";
pub const ADAPT_HEADER: &str =
    "j,step,rank,m_s,sampling_updated,residual_before,residual_after,full_residual_after,lambda_sum,path,outcome,condition,jacobian_rows,bucket";
pub const TIMINGS_HEADER: &str = "run,bucket,seconds";

/// One `errors.csv` row per report that carries errors.
pub fn write_errors_csv<W: Write>(mut w: W, reports: &[RunReport]) -> io::Result<()> {
    writeln!(w, "{ERRORS_HEADER}")?;
    for r in reports {
        if let Some(e) = r.errors {
            writeln!(w, "{},{},{},{},{}", r.label, r.mode, r.m, fmt_f64(e.l2), fmt_f64(e.fin))?;
        }
    }
    Ok(())
}

/// `hamiltonian.csv` of one run; the gap column is empty when not hyper-reduced.
pub fn write_hamiltonian_csv<W: Write>(mut w: W, report: &RunReport) -> io::Result<()> {
    writeln!(w, "{HAMILTONIAN_HEADER}")?;
    for (j, d) in report.drift().iter().enumerate() {
        let gap = report.deim_gap.get(j).map(|&g| fmt_f64(g)).unwrap_or_default();
        writeln!(w, "{},{},{}", fmt_f64(report.times[j]), fmt_f64(*d), gap)?;
    }
    Ok(())
}

pub fn write_spectrum_csv<W: Write>(mut w: W, sigma: &[f64]) -> io::Result<()> {
    writeln!(w, "{SPECTRUM_HEADER}")?;
    for (i, s) in sigma.iter().enumerate() {
        writeln!(w, "{},{}", i + 1, fmt_f64(*s))?;
    }
    Ok(())
}

/// `adapt_log.csv`; wall-clock seconds go to `timings.csv` so this file is reproducible.
pub fn write_adapt_csv<W: Write>(mut w: W, updates: &[UpdateRecord]) -> io::Result<()> {
    writeln!(w, "{ADAPT_HEADER}")?;
    for u in updates {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            u.j,
            u.step,
            u.rank,
            u.sampling_size,
            u.sampling_updated,
            fmt_f64(u.residual_before),
            fmt_f64(u.residual_after),
            u.full_residual_after.map(fmt_f64).unwrap_or_default(),
            fmt_f64(u.lambda_sum),
            u.path.as_str(),
            u.outcome.as_str(),
            fmt_f64(u.condition),
            u.jacobian_rows,
            "online",
        )?;
    }
    Ok(())
}

pub fn write_timings_csv<W: Write>(mut w: W, reports: &[RunReport]) -> io::Result<()> {
    writeln!(w, "{TIMINGS_HEADER}")?;
    for r in reports {
        writeln!(w, "{},offline,{}", r.label, fmt_f64(r.offline_seconds))?;
        writeln!(w, "{},online,{}", r.label, fmt_f64(r.online_seconds))?;
    }
    Ok(())
}
