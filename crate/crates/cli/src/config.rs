use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wfgame::channel::{CrossDistance, ScenarioParams};
use wfgame::equilibrium::{Init, Schedule, SolveOptions};
use wfgame::matrix_oracle::Payoff;
use wfgame::rng::derive_seed;
use wfgame::ChannelSet;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    UniquenessMc,
    Psd,
    RateRegion,
    VerifyTheorem1,
    CheckUniqueness,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::UniquenessMc => "uniqueness_mc",
            ExperimentKind::Psd => "psd",
            ExperimentKind::RateRegion => "rate_region",
            ExperimentKind::VerifyTheorem1 => "verify_theorem1",
            ExperimentKind::CheckUniqueness => "check_uniqueness",
        }
    }
}

/// Where channel realizations come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Random FIR channels, one realization per trial.
    Generated(ScenarioParams),
    /// A fixed channel set; every trial sees the same links.
    Channels(ChannelSet),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    #[default]
    Uniform,
    /// Random feasible start seeded per trial.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub schedule: Schedule,
    pub init: InitKind,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolveOptions::default();
        Self { schedule: d.schedule, init: InitKind::Uniform, tol: d.tol, max_iter: d.max_iter }
    }
}

impl SolverConfig {
    pub fn options(&self, root: u64, trial: u64) -> SolveOptions {
        let init = match self.init {
            InitKind::Uniform => Init::Uniform,
            InitKind::Random => Init::Random { seed: derive_seed(root, &[trial, 1]) },
        };
        SolveOptions { schedule: self.schedule, init, tol: self.tol, max_iter: self.max_iter }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsdConfig {
    /// Support threshold on normalized power.
    pub eps: f64,
    /// Largest flatness index still reported as a flat spectrum.
    pub flat_threshold: f64,
}

impl Default for PsdConfig {
    fn default() -> Self {
        Self { eps: 1e-6, flat_threshold: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionConfig {
    /// Grid steps per budget for the sampled region; no grid when absent.
    pub resolution: Option<usize>,
    /// Weight vectors for the scalarized problem and the modified game.
    /// The uniform vector is always solved since it gives the sum-rate loss.
    pub lambdas: Vec<Vec<f64>>,
    pub modified_game: bool,
    /// Split steps for the total-power equilibrium sweep; none when absent.
    pub total_power_resolution: Option<usize>,
    pub restarts: usize,
    pub tol: f64,
}

impl Default for RegionConfig {
    fn default() -> Self {
        Self {
            resolution: None,
            lambdas: Vec::new(),
            modified_game: true,
            total_power_resolution: None,
            restarts: 8,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Opponents {
    /// Opponents play the equilibrium of the diagonal game.
    #[default]
    Equilibrium,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Theorem1Config {
    pub samples: usize,
    pub payoffs: Vec<Payoff>,
    pub opponents: Opponents,
}

impl Default for Theorem1Config {
    fn default() -> Self {
        Self {
            samples: 200,
            payoffs: vec![Payoff::MutualInformation, Payoff::GapRate { gap: 3.0 }],
            opponents: Opponents::Equilibrium,
        }
    }
}

fn default_trials() -> usize {
    500
}

/// One experiment, read from a single JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub kind: Option<ExperimentKind>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub scenario: Scenario,
    /// Cross-distance ratios `d_rq / d_qq` to sweep; the scenario's own
    /// geometry is used when empty.
    #[serde(default)]
    pub d_ratios: Vec<f64>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub psd: PsdConfig,
    #[serde(default)]
    pub region: RegionConfig,
    #[serde(default)]
    pub theorem1: Theorem1Config,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.trials == 0 {
            return bad("trials must be >= 1");
        }
        if self.d_ratios.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return bad("d_ratios must be finite and positive");
        }
        match &self.scenario {
            Scenario::Generated(p) => p.validate()?,
            Scenario::Channels(ch) => {
                ch.validate()?;
                if !self.d_ratios.is_empty() {
                    return bad("d_ratios need a generated scenario");
                }
            }
        }
        if !(self.solver.tol > 0.0) || self.solver.max_iter == 0 {
            return bad("solver tol and max_iter must be positive");
        }
        if !(self.region.tol > 0.0) {
            return bad("region tol must be positive");
        }
        if self.theorem1.payoffs.is_empty() {
            return bad("theorem1 needs at least one payoff");
        }
        Ok(())
    }

    /// Checks the `kind` field against the subcommand being run.
    pub fn expect_kind(&self, kind: ExperimentKind) -> Result<()> {
        match self.kind {
            Some(k) if k != kind => Err(CliError::Config(format!(
                "config kind {} does not match {}",
                k.as_str(),
                kind.as_str()
            ))),
            _ => Ok(()),
        }
    }

    pub fn users(&self) -> usize {
        match &self.scenario {
            Scenario::Generated(p) => p.users,
            Scenario::Channels(ch) => ch.users(),
        }
    }

    /// Trials actually run: a fixed channel set has a single realization.
    pub fn effective_trials(&self) -> usize {
        match self.scenario {
            Scenario::Generated(_) => self.trials,
            Scenario::Channels(_) => 1,
        }
    }

    /// Sweep points; `None` keeps the scenario geometry.
    pub fn sweep(&self) -> Vec<Option<f64>> {
        if self.d_ratios.is_empty() {
            vec![None]
        } else {
            self.d_ratios.iter().map(|&d| Some(d)).collect()
        }
    }

    /// Label written in the `d_ratio` column.
    pub fn ratio_label(&self, ratio: Option<f64>) -> String {
        match (ratio, &self.scenario) {
            (Some(d), _) => d.to_string(),
            (None, Scenario::Generated(p)) => match p.cross {
                CrossDistance::Ratio(d) => d.to_string(),
                CrossDistance::Matrix(_) => "matrix".into(),
            },
            (None, Scenario::Channels(_)) => "fixed".into(),
        }
    }

    /// Channels for one trial. The taps depend on `(seed, trial)` only, so
    /// every ratio of a sweep sees the same fading.
    pub fn channels(&self, ratio: Option<f64>, trial: u64) -> Result<ChannelSet> {
        match &self.scenario {
            Scenario::Generated(p) => {
                let mut p = p.clone();
                if let Some(d) = ratio {
                    p.cross = CrossDistance::Ratio(d);
                }
                Ok(p.realize(self.seed, trial)?)
            }
            Scenario::Channels(ch) => Ok(ch.clone()),
        }
    }
}
