//! Experiment configuration, read from TOML.
//!
//! Every section has defaults, so an empty file describes the desk-scale
//! checkerboard with all schemes under both scenarios. Unknown keys are
//! rejected at every level.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::{ShareMode, SolverOptions};
use crate::rates::{CandidateMode, Precoder};
use crate::scheduler::VqParams;
use crate::topology::{CheckerboardConfig, ShadowingConfig, DEFAULT_NOISE_DBM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Desk,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    pub preset: Preset,
    /// Replaces the preset when given.
    pub checkerboard: Option<CheckerboardConfig>,
    pub noise_dbm: f64,
    pub shadowing: ShadowingConfig,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self { preset: Preset::Desk, checkerboard: None, noise_dbm: DEFAULT_NOISE_DBM, shadowing: ShadowingConfig::default() }
    }
}

impl TopologyConfig {
    pub fn layout(&self) -> CheckerboardConfig {
        self.checkerboard.clone().unwrap_or_else(|| match self.preset {
            Preset::Desk => CheckerboardConfig::desk_scale(),
            Preset::Full => CheckerboardConfig::full_scale(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatesConfig {
    pub precoder: Precoder,
    /// Largest cluster size; defaults to the topology's.
    pub l_max: Option<usize>,
    pub candidates: CandidateMode,
}

impl Default for RatesConfig {
    fn default() -> Self {
        Self { precoder: Precoder::Zf, l_max: None, candidates: CandidateMode::Strongest }
    }
}

/// Architecture of the shared-band scenario; the split scenario always
/// runs the orthogonal macro/pico problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SharedArchitecture {
    #[default]
    Ucs,
    Mcs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NumConfig {
    pub architecture: SharedArchitecture,
    /// Mode shares for the mixed architecture.
    pub shares: ShareMode,
    /// Macro RB fraction in the split scenario.
    pub rho: f64,
    pub solver: SolverOptions,
}

impl Default for NumConfig {
    fn default() -> Self {
        Self { architecture: SharedArchitecture::Ucs, shares: ShareMode::Free, rho: 0.2, solver: SolverOptions::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    pub horizon: usize,
    pub vq: VqParams,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self { horizon: 10_000, vq: VqParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub trials: usize,
    /// Users whose strongest cluster of `cluster_size` is checked.
    pub users: Vec<usize>,
    pub cluster_size: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { trials: 1000, users: vec![0], cluster_size: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    MaxSinr,
    NumCellular,
    NumDistributed,
    NumUnique,
    NumVqGreedy,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [Scheme::MaxSinr, Scheme::NumCellular, Scheme::NumDistributed, Scheme::NumUnique, Scheme::NumVqGreedy];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::MaxSinr => "max_sinr",
            Scheme::NumCellular => "num_cellular",
            Scheme::NumDistributed => "num_distributed",
            Scheme::NumUnique => "num_unique",
            Scheme::NumVqGreedy => "num_vq_greedy",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s.replace('-', "_"))
            .ok_or_else(|| Error::Config(format!("unknown scheme {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Macros and picos on the same band.
    Shared,
    /// Macros cellular on `rho` of the RBs, picos on the rest.
    Split,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Shared => "shared",
            Scenario::Split => "split",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared" => Ok(Scenario::Shared),
            "split" => Ok(Scenario::Split),
            other => Err(Error::Config(format!("unknown scenario {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub schemes: Vec<Scheme>,
    pub scenarios: Vec<Scenario>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { schemes: Scheme::ALL.to_vec(), scenarios: vec![Scenario::Shared, Scenario::Split] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Also write layout, gains, catalogs, allocations and schedules.
    pub artifacts: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), artifacts: true }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub topology: TopologyConfig,
    pub rates: RatesConfig,
    pub num: NumConfig,
    pub scheduler: SchedulerConfig,
    pub oracle: OracleConfig,
    pub pipeline: PipelineConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Cluster size limit used for the catalogs.
    pub fn l_max(&self) -> usize {
        self.rates.l_max.unwrap_or(self.topology.layout().l_max)
    }

    pub fn validate(&self) -> Result<()> {
        let layout = self.topology.layout();
        let l_max = self.l_max();
        if l_max == 0 || l_max > layout.l_max {
            return Err(Error::Config(format!("rates.l_max {l_max} must lie in 1..={} (topology budgets)", layout.l_max)));
        }
        if !self.topology.noise_dbm.is_finite() {
            return Err(Error::Config("noise_dbm must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.num.rho) {
            return Err(Error::Config(format!("num.rho must lie in [0, 1], got {}", self.num.rho)));
        }
        if self.num.architecture == SharedArchitecture::Mcs && l_max < 2 {
            return Err(Error::Config("the mixed architecture needs l_max >= 2".into()));
        }
        if !(self.num.solver.tol > 0.0) {
            return Err(Error::Config("num.solver.tol must be positive".into()));
        }
        if self.scheduler.horizon == 0 {
            return Err(Error::Config("scheduler.horizon must be positive".into()));
        }
        if self.oracle.trials < 2 {
            return Err(Error::Config("oracle.trials must be at least 2".into()));
        }
        if self.oracle.cluster_size == 0 || self.oracle.cluster_size > l_max {
            return Err(Error::Config(format!("oracle.cluster_size must lie in 1..={l_max}")));
        }
        if self.pipeline.schemes.is_empty() || self.pipeline.scenarios.is_empty() {
            return Err(Error::Config("pipeline needs at least one scheme and one scenario".into()));
        }
        Ok(())
    }
}
