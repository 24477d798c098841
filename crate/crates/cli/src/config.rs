//! TOML run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use gpdeim_core::adapt::{AdaptConfig, RankPolicy, SamplingPolicy, SamplingStrategy};
use gpdeim_core::integrate::{Integrator, JacobianMode, NewtonConfig, QuadratureRule, Scheme};
use gpdeim_core::model::{Nls1dConfig, ParamBox, Swe2dConfig};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSection,
    pub time: TimeSection,
    pub reduction: ReductionSection,
    pub deim: DeimSection,
    #[serde(default)]
    pub adapt: AdaptSection,
    pub run: RunSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ProblemSection {
    Swe2d {
        nx1: usize,
        nx2: usize,
        #[serde(default = "two")]
        lx1: f64,
        #[serde(default = "two")]
        lx2: f64,
    },
    Nls1d {
        n: usize,
        #[serde(default = "nls_l")]
        l: f64,
    },
}

fn two() -> f64 {
    2.0
}

fn nls_l() -> f64 {
    0.11
}

impl ProblemSection {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemSection::Swe2d { .. } => "swe2d",
            ProblemSection::Nls1d { .. } => "nls1d",
        }
    }

    pub fn swe(&self) -> Option<Swe2dConfig> {
        match *self {
            ProblemSection::Swe2d { nx1, nx2, lx1, lx2 } => Some(Swe2dConfig { lx1, lx2, nx1, nx2 }),
            _ => None,
        }
    }

    pub fn nls(&self) -> Option<Nls1dConfig> {
        match *self {
            ProblemSection::Nls1d { n, l } => Some(Nls1dConfig { n, l }),
            _ => None,
        }
    }

    pub fn param_box(&self) -> ParamBox {
        match self {
            ProblemSection::Swe2d { .. } => ParamBox {
                bounds: vec![(1.1, 1.7), (0.7, 1.3)],
            },
            ProblemSection::Nls1d { .. } => ParamBox { bounds: vec![(0.9, 1.1)] },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeName {
    Imr,
    Avf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub t_end: f64,
    pub dt: f64,
    pub scheme: SchemeName,
    #[serde(default = "newton_tol")]
    pub newton_tol: f64,
    #[serde(default = "newton_iter")]
    pub newton_max_iter: usize,
    #[serde(default = "quad_points")]
    pub quadrature_points: usize,
}

fn newton_tol() -> f64 {
    1e-10
}

fn newton_iter() -> usize {
    50
}

fn quad_points() -> usize {
    3
}

impl TimeSection {
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn integrator(&self) -> Result<Integrator<f64>, CliError> {
        Ok(Integrator {
            scheme: match self.scheme {
                SchemeName::Imr => Scheme::Imr,
                SchemeName::Avf => Scheme::Avf,
            },
            newton: NewtonConfig {
                tol: self.newton_tol,
                max_iter: self.newton_max_iter,
                jacobian: JacobianMode::Analytic,
            },
            quadrature: QuadratureRule::gauss_legendre(self.quadrature_points).map_err(CliError::from_core)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisName {
    ComplexSvd,
    CotangentLift,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReductionSection {
    /// Half the reduced dimension.
    pub k: usize,
    pub basis: BasisName,
    /// Keep every `snapshot_stride`-th state.
    #[serde(default = "one")]
    pub snapshot_stride: usize,
    /// Equispaced training values per parameter direction.
    pub training_per_dim: usize,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeimSection {
    /// DEIM sizes; `hrom` runs one model per entry.
    #[serde(default)]
    pub m: Vec<usize>,
    /// Energy criterion for the POD truncation, used when `m` is empty.
    #[serde(default)]
    pub energy_tol: Option<f64>,
    /// Every `snapshot_stride`-th training state enters the Jacobian snapshots.
    #[serde(default = "one")]
    pub snapshot_stride: usize,
    /// Store the Jacobian snapshot matrix itself.
    #[serde(default)]
    pub store_snapshots: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyName {
    Projection,
    Residual,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitName {
    WarmUp,
    Training,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptSection {
    pub delta0: usize,
    pub delta: usize,
    pub window: usize,
    pub gamma: usize,
    /// Fixed update rank; overrides `rank_tol`.
    #[serde(default)]
    pub rank: Option<usize>,
    #[serde(default)]
    pub rank_tol: Option<f64>,
    /// Fixed number of sampling rows; overrides `sampling_tol`.
    #[serde(default)]
    pub sampling_size: Option<usize>,
    #[serde(default)]
    pub sampling_tol: Option<f64>,
    pub strategy: StrategyName,
    pub init: InitName,
}

impl Default for AdaptSection {
    fn default() -> Self {
        Self {
            delta0: 5,
            delta: 5,
            window: 1,
            gamma: 5,
            rank: None,
            rank_tol: Some(1e-12),
            sampling_size: None,
            sampling_tol: Some(1e-10),
            strategy: StrategyName::Projection,
            init: InitName::WarmUp,
        }
    }
}

impl AdaptSection {
    pub fn to_core(&self, m: usize, seed: u64) -> AdaptConfig {
        AdaptConfig {
            delta0: self.delta0,
            delta: self.delta,
            window: self.window,
            gamma: self.gamma,
            rank: match (self.rank, self.rank_tol) {
                (Some(r), _) => RankPolicy::Fixed(r),
                (None, Some(t)) => RankPolicy::Tolerance(t),
                (None, None) => RankPolicy::full(),
            },
            sampling: match (self.sampling_size, self.sampling_tol) {
                (Some(s), _) => SamplingPolicy::Fixed(s),
                (None, Some(t)) => SamplingPolicy::Tolerance(t),
                (None, None) => SamplingPolicy::Tolerance(0.0),
            },
            strategy: match self.strategy {
                StrategyName::Projection => SamplingStrategy::Projection,
                StrategyName::Residual => SamplingStrategy::Residual,
                StrategyName::Random => SamplingStrategy::Random(seed),
            },
            m,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Fom,
    Rom,
    Hrom,
    HromAdaptive,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Fom => "fom",
            Mode::Rom => "rom",
            Mode::Hrom => "hrom",
            Mode::HromAdaptive => "hrom-adaptive",
        }
    }

    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "fom" => Ok(Mode::Fom),
            "rom" => Ok(Mode::Rom),
            "hrom" => Ok(Mode::Hrom),
            "hrom-adaptive" => Ok(Mode::HromAdaptive),
            _ => Err(CliError::Validation(format!(
                "unknown mode '{s}' (expected fom, rom, hrom or hrom-adaptive)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub mode: Mode,
    /// Test parameters, one list per run.
    pub test: Vec<Vec<f64>>,
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Write reduced trajectories as matrix containers.
    #[serde(default)]
    pub save_trajectories: bool,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Training parameters, first coordinate fastest.
    pub fn training(&self) -> Vec<Vec<f64>> {
        self.problem.param_box().grid(self.reduction.training_per_dim)
    }

    /// Cross-field checks; each message names the offending fields.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        match self.problem {
            ProblemSection::Swe2d { nx1, nx2, lx1, lx2 } => {
                if nx1 < 3 || nx2 < 3 {
                    return bad(format!("problem.nx1/problem.nx2 ({nx1}, {nx2}) must be at least 3"));
                }
                if !(lx1 > 0.0 && lx2 > 0.0) {
                    return bad("problem.lx1/problem.lx2 must be positive".into());
                }
            }
            ProblemSection::Nls1d { n, l } => {
                if n < 3 {
                    return bad(format!("problem.n ({n}) must be at least 3"));
                }
                if !(l > 0.0) {
                    return bad("problem.l must be positive".into());
                }
            }
        }
        let t = &self.time;
        if !(t.dt > 0.0) {
            return bad(format!("time.dt ({}) must be positive", t.dt));
        }
        if !(t.t_end >= 0.0) {
            return bad(format!("time.t_end ({}) must be nonnegative", t.t_end));
        }
        if ((t.t_end / t.dt).round() * t.dt - t.t_end).abs() > 1e-9 * t.t_end.max(1.0) {
            return bad(format!("time.t_end ({}) must be a multiple of time.dt ({})", t.t_end, t.dt));
        }
        if !(t.newton_tol > 0.0) || t.newton_max_iter == 0 {
            return bad("time.newton_tol and time.newton_max_iter must be positive".into());
        }
        if t.quadrature_points == 0 {
            return bad("time.quadrature_points must be at least 1".into());
        }
        let r = &self.reduction;
        if r.k == 0 || r.snapshot_stride == 0 || r.training_per_dim == 0 {
            return bad("reduction.k, reduction.snapshot_stride and reduction.training_per_dim must be positive".into());
        }
        let d = self.deim.snapshot_stride;
        if d == 0 {
            return bad("deim.snapshot_stride must be positive".into());
        }
        if d % r.snapshot_stride != 0 {
            return bad(format!(
                "deim.snapshot_stride ({d}) must be a multiple of reduction.snapshot_stride ({})",
                r.snapshot_stride
            ));
        }
        if self.deim.m.iter().any(|&m| m == 0) {
            return bad("deim.m entries must be positive".into());
        }
        if self.deim.m.is_empty() && self.deim.energy_tol.is_none() && matches!(self.run.mode, Mode::Hrom | Mode::HromAdaptive) {
            return bad("deim.m or deim.energy_tol is required for hyper-reduced modes".into());
        }
        let a = &self.adapt;
        if a.delta0 == 0 || a.delta == 0 || a.gamma == 0 {
            return bad("adapt.delta0, adapt.delta and adapt.gamma must be at least 1".into());
        }
        if a.window == 0 || a.window >= a.delta0 {
            return bad(format!("adapt.window ({}) must be positive and smaller than adapt.delta0 ({})", a.window, a.delta0));
        }
        if a.gamma % a.delta != 0 {
            return bad(format!("adapt.gamma ({}) must be a multiple of adapt.delta ({})", a.gamma, a.delta));
        }
        if let Some(ms) = a.sampling_size {
            if let Some(&m) = self.deim.m.iter().find(|&&m| ms < m) {
                return bad(format!("adapt.sampling_size ({ms}) must be at least deim.m ({m})"));
            }
        }
        let dim = self.problem.param_box().bounds.len();
        if self.run.test.is_empty() {
            return bad("run.test must list at least one parameter".into());
        }
        if let Some(p) = self.run.test.iter().find(|p| p.len() != dim) {
            return bad(format!("run.test entry {p:?} must have {dim} components for problem.kind = {}", self.problem.name()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const DESK: &str = r#"
[problem]
kind = "nls1d"
n = 64

[time]
t_end = 0.1
dt = 0.01
scheme = "avf"

[reduction]
k = 4
basis = "complex-svd"
training_per_dim = 3

[deim]
m = [4, 8]
snapshot_stride = 2

[adapt]
delta0 = 3
delta = 2
window = 1
gamma = 4
rank_tol = 1e-12
sampling_size = 12
strategy = "projection"
init = "warm-up"

[run]
mode = "hrom"
test = [[1.05]]
output = "out"
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = RunConfig::from_toml(DESK).unwrap();
        assert_eq!(cfg.time.steps(), 10);
        assert_eq!(cfg.training().len(), 3);
        let again = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.hash(), again.hash());
        assert_eq!(cfg.hash().len(), 64);
    }

    fn rejects(edit: impl Fn(&mut RunConfig), fields: &[&str]) {
        let mut cfg = RunConfig::from_toml(DESK).unwrap();
        edit(&mut cfg);
        let msg = cfg.validate().unwrap_err().to_string();
        for f in fields {
            assert!(msg.contains(f), "'{msg}' should name {f}");
        }
    }

    #[test]
    fn cross_field_violations_name_both_fields() {
        rejects(|c| c.adapt.window = 3, &["adapt.window", "adapt.delta0"]);
        rejects(|c| c.adapt.gamma = 3, &["adapt.gamma", "adapt.delta"]);
        rejects(|c| c.adapt.sampling_size = Some(6), &["adapt.sampling_size", "deim.m"]);
        rejects(|c| c.time.dt = 0.0, &["time.dt"]);
        rejects(|c| c.reduction.snapshot_stride = 3, &["deim.snapshot_stride", "reduction.snapshot_stride"]);
        rejects(|c| c.time.dt = -1.0, &["time.dt"]);
        rejects(|c| c.time.t_end = 0.105, &["time.t_end", "time.dt"]);
        rejects(|c| c.run.test = vec![vec![1.0, 2.0]], &["run.test", "problem.kind"]);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = DESK.replace("k = 4", "k = 4\nkk = 1");
        assert!(RunConfig::from_toml(&text).is_err());
    }

    #[test]
    fn adapt_section_maps_policies() {
        let cfg = RunConfig::from_toml(DESK).unwrap();
        let a = cfg.adapt.to_core(4, 0);
        assert_eq!(a.sampling, SamplingPolicy::Fixed(12));
        assert_eq!(a.rank, RankPolicy::Tolerance(1e-12));
        a.validate().unwrap();
    }
}
