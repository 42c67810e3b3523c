//! Experiment configuration, read from TOML.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vtr::Bonus;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    /// UCRL2-VTR with the bonus chosen by `agent.bonus`.
    #[serde(rename = "ucrl2-vtr")]
    Ucrl2Vtr,
    #[serde(rename = "vtr-hoeffding")]
    VtrHoeffding,
    #[serde(rename = "vtr-bernstein")]
    VtrBernstein,
    #[serde(rename = "ucrl2")]
    Ucrl2,
    #[serde(rename = "eps-greedy-ql")]
    EpsGreedyQl,
    #[serde(rename = "random")]
    Random,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Ucrl2Vtr,
        Algorithm::VtrHoeffding,
        Algorithm::VtrBernstein,
        Algorithm::Ucrl2,
        Algorithm::EpsGreedyQl,
        Algorithm::Random,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            Algorithm::Ucrl2Vtr => "ucrl2-vtr",
            Algorithm::VtrHoeffding => "vtr-hoeffding",
            Algorithm::VtrBernstein => "vtr-bernstein",
            Algorithm::Ucrl2 => "ucrl2",
            Algorithm::EpsGreedyQl => "eps-greedy-ql",
            Algorithm::Random => "random",
        }
    }

    /// The bonus used by the VTR variants, `None` for baselines.
    pub fn bonus(&self, configured: Bonus) -> Option<Bonus> {
        match self {
            Algorithm::Ucrl2Vtr => Some(configured),
            Algorithm::VtrHoeffding => Some(Bonus::Hoeffding),
            Algorithm::VtrBernstein => Some(Bonus::Bernstein),
            _ => None,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.id() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = Algorithm::ALL.iter().map(|a| a.id()).collect();
                Error::Config(format!("unknown algorithm {s:?}; known: {}", known.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MdpKind {
    Hard,
    Fixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MdpSection {
    pub kind: MdpKind,
    /// JSON fixture path, required when `kind = "fixture"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture: Option<PathBuf>,
}

impl Default for MdpSection {
    fn default() -> Self {
        Self {
            kind: MdpKind::Hard,
            fixture: None,
        }
    }
}

/// Parameters of the two-state hard instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HardSection {
    pub d: usize,
    #[serde(rename = "D")]
    pub diameter: f64,
    /// Horizon entering the gap; defaults to `run.T`.
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(rename = "B")]
    pub b_bound: f64,
    pub theta_seed: u64,
}

impl Default for HardSection {
    fn default() -> Self {
        Self {
            d: 4,
            diameter: 10.0,
            horizon: None,
            b_bound: 2.0,
            theta_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    #[serde(rename = "T")]
    pub horizon: u64,
    pub replications: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub stride: u64,
    pub algorithms: Vec<Algorithm>,
    pub parallel: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            horizon: 20_000,
            replications: 10,
            seed: 0,
            out_dir: PathBuf::from("out"),
            stride: 100,
            algorithms: vec![
                Algorithm::Ucrl2Vtr,
                Algorithm::Ucrl2,
                Algorithm::EpsGreedyQl,
                Algorithm::Random,
            ],
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSection {
    pub bonus: Bonus,
    /// Defaults to `1 / B^2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Defaults to `1 / sqrt(T)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub delta_conf: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_evi_iters: Option<usize>,
    pub evi_damping: f64,
    pub radius_scale: f64,
}

impl Default for AgentSection {
    fn default() -> Self {
        Self {
            bonus: Bonus::Hoeffding,
            lambda: None,
            epsilon: None,
            delta_conf: 0.1,
            max_evi_iters: None,
            evi_damping: 1.0,
            radius_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub eps_explore: f64,
    pub q_step_h: f64,
    pub q_ref_state: usize,
    pub q_ref_action: usize,
    pub ucrl2_radius_const: f64,
    pub ucrl2_delta_conf: f64,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self {
            eps_explore: 0.1,
            q_step_h: 10.0,
            q_ref_state: 0,
            q_ref_action: 0,
            ucrl2_radius_const: 14.0,
            ucrl2_delta_conf: 0.1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mdp: MdpSection,
    pub hard: HardSection,
    pub run: RunSection,
    pub agent: AgentSection,
    pub baseline: BaselineSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        // Fixture paths are relative to the config file.
        if let (Some(f), Some(dir)) = (&cfg.mdp.fixture, path.parent()) {
            if f.is_relative() {
                cfg.mdp.fixture = Some(dir.join(f));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let run = &self.run;
        if run.stride == 0 {
            return Err(Error::Config("run.stride must be positive".into()));
        }
        if run.replications == 0 {
            return Err(Error::Config("run.replications must be positive".into()));
        }
        if run.algorithms.is_empty() {
            return Err(Error::Config("run.algorithms must not be empty".into()));
        }
        let mut seen = Vec::new();
        for a in &run.algorithms {
            if seen.contains(a) {
                return Err(Error::Config(format!("algorithm {a} listed twice")));
            }
            seen.push(*a);
        }
        if self.mdp.kind == MdpKind::Fixture && self.mdp.fixture.is_none() {
            return Err(Error::Config("mdp.kind = \"fixture\" requires mdp.fixture".into()));
        }
        let b = &self.baseline;
        if !(0.0..=1.0).contains(&b.eps_explore) {
            return Err(Error::Config(format!(
                "baseline.eps_explore must lie in [0, 1], got {}",
                b.eps_explore
            )));
        }
        Ok(())
    }

    /// Horizon that sets the hard-instance gap.
    pub fn hard_horizon(&self) -> f64 {
        self.hard.horizon.unwrap_or(self.run.horizon as f64)
    }
}
