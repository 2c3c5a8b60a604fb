//! TOML scenario and attack-spec files.
//!
//! ```toml
//! case = "case30.m"
//! seed = 7
//! defense = "pairs"
//!
//! [attack]
//! zone = [6, 8, 9, 10, 11, 28]
//! target = [8, 28]
//!
//! [stream]
//! kind = "noisy"
//!
//! [trusted]
//! members = [1, 2, 13, 22, 23, 27]
//! anchors = [13, 27]
//!
//! [pairs]
//! dist_sigma = 0.05
//! iterations = 10000
//! dwell = 1
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::case::parse_case;
use crate::attack::{
    compute_initial_attack, record_replay_series, validate_attack, AttackOptions, AttackSpec, AttackStream,
    InitialAttackSolution, StreamKind, ValidationReport,
};
use crate::defense::{CovarianceOptions, Detector, PairsOptions, TrustedSet};
use crate::error::{Error, Result};
use crate::grid::{BusId, LineId, Network, OperatingPoint};
use crate::sim::{DefenseConfig, InjectionSchedule, Scenario, SensorModel};

/// A line named by position in the case file or by its two end buses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LineRef {
    Index(LineId),
    Ends([BusId; 2]),
}

impl LineRef {
    pub fn resolve(self, network: &Network) -> Result<LineId> {
        match self {
            LineRef::Index(l) => {
                network.line(l)?;
                Ok(l)
            }
            LineRef::Ends([a, b]) => {
                let hits: Vec<LineId> = network
                    .lines
                    .iter()
                    .enumerate()
                    .filter(|(_, l)| (l.from, l.to) == (a, b) || (l.from, l.to) == (b, a))
                    .map(|(i, _)| i)
                    .collect();
                match hits.as_slice() {
                    [l] => Ok(*l),
                    [] => Err(Error::Config(format!("no line between buses {a} and {b}"))),
                    _ => Err(Error::Config(format!(
                        "buses {a} and {b} are joined by lines {hits:?}; give an index"
                    ))),
                }
            }
        }
    }
}

fn default_margin() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub zone: Vec<BusId>,
    pub target: LineRef,
    #[serde(default)]
    pub cut_lines: Vec<LineRef>,
    #[serde(default = "default_margin")]
    pub overload_margin: f64,
}

impl AttackConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        parse_toml(&std::fs::read_to_string(path)?)
    }

    pub fn resolve(&self, network: &Network) -> Result<AttackSpec> {
        let mut spec = AttackSpec::new(self.zone.iter().copied(), self.target.resolve(network)?);
        for l in &self.cut_lines {
            spec.cut_lines.insert(l.resolve(network)?);
        }
        spec.overload_margin = self.overload_margin;
        spec.validate(network)?;
        Ok(spec)
    }
}

fn default_sigma() -> f64 {
    1e-3
}

fn default_frames() -> usize {
    300
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamConfig {
    pub kind: StreamKind,
    #[serde(default = "default_sigma")]
    pub noise_sigma_v: f64,
    #[serde(default = "default_sigma")]
    pub noise_sigma_i: f64,
    /// Frames recorded before a replay.
    #[serde(default = "default_frames")]
    pub replay_frames: usize,
    /// Enhanced stream: fixed boundary voltages as `[re, im]` per bus.
    #[serde(default)]
    pub overrides: BTreeMap<String, [f64; 2]>,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            kind: StreamKind::Noisy,
            noise_sigma_v: default_sigma(),
            noise_sigma_i: default_sigma(),
            replay_frames: default_frames(),
            overrides: BTreeMap::new(),
        }
    }
}

fn default_dwell() -> usize {
    60
}

fn default_rate() -> f64 {
    0.05
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairsConfig {
    pub dist_sigma: f64,
    pub iterations: usize,
    #[serde(default = "default_dwell")]
    pub dwell: usize,
    #[serde(default = "default_threshold")]
    pub corr_threshold: f64,
    #[serde(default = "default_min_iterations")]
    pub min_iterations: usize,
}

fn default_threshold() -> f64 {
    PairsOptions::default().corr_threshold
}

fn default_min_iterations() -> usize {
    PairsOptions::default().min_iterations
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriteriaConfig {
    pub dist_sigma: f64,
    pub iterations: usize,
    #[serde(default = "default_dwell")]
    pub dwell: usize,
    #[serde(default = "default_rate")]
    pub rate_threshold: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefenseKind {
    #[default]
    None,
    Pairs,
    Covariance,
    Criteria,
}

impl From<Detector> for DefenseKind {
    fn from(d: Detector) -> Self {
        match d {
            Detector::Pairs => DefenseKind::Pairs,
            Detector::Covariance => DefenseKind::Covariance,
            Detector::Criteria => DefenseKind::Criteria,
        }
    }
}

fn default_ticks() -> usize {
    1
}

fn default_tick_rate() -> f64 {
    30.0
}

fn default_ambient() -> f64 {
    0.003
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Case file, relative to the scenario file.
    pub case: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_ticks")]
    pub ticks: usize,
    #[serde(default = "default_tick_rate")]
    pub tick_rate: f64,
    #[serde(default = "default_ambient")]
    pub ambient_sigma: f64,
    #[serde(default)]
    pub sensor: SensorModel,
    /// Defense run by `simulate`.
    #[serde(default)]
    pub defense: DefenseKind,
    pub attack: Option<AttackConfig>,
    pub stream: Option<StreamConfig>,
    pub trusted: Option<TrustedSet>,
    pub pairs: Option<PairsConfig>,
    pub covariance: Option<CovarianceOptions>,
    pub criteria: Option<CriteriaConfig>,
}

/// A scenario ready to run, with the attack it was built from.
#[derive(Clone, Debug)]
pub struct BuiltScenario {
    pub scenario: Scenario,
    pub attack: Option<InitialAttackSolution>,
    pub validation: Option<ValidationReport>,
}

fn parse_toml<T: DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let (line, column) = match e.span() {
            Some(span) => {
                let before = &text[..span.start.min(text.len())];
                let line = before.matches('\n').count() + 1;
                let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
                (line, column)
            }
            None => (0, 0),
        };
        Error::Parse {
            line,
            column,
            message: e.message().to_string(),
        }
    })
}

impl std::str::FromStr for ScenarioConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        parse_toml(text)
    }
}

impl ScenarioConfig {
    /// Reads a scenario file; the case path is taken relative to it.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: ScenarioConfig = std::fs::read_to_string(path)?.parse()?;
        if cfg.case.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.case = dir.join(&cfg.case);
            }
        }
        Ok(cfg)
    }

    fn section<T: Copy>(section: Option<T>, name: &str) -> Result<T> {
        section.ok_or_else(|| Error::Config(format!("scenario has no [{name}] section")))
    }

    pub fn defense_config(&self, kind: DefenseKind) -> Result<DefenseConfig> {
        Ok(match kind {
            DefenseKind::None => DefenseConfig::None,
            DefenseKind::Pairs => {
                let p = Self::section(self.pairs, "pairs")?;
                DefenseConfig::Pairs {
                    schedule: InjectionSchedule {
                        dist_sigma: p.dist_sigma,
                        iterations: p.iterations,
                        dwell: p.dwell,
                    },
                    options: PairsOptions {
                        corr_threshold: p.corr_threshold,
                        min_iterations: p.min_iterations,
                    },
                }
            }
            DefenseKind::Covariance => DefenseConfig::Covariance(Self::section(self.covariance, "covariance")?),
            DefenseKind::Criteria => {
                let c = Self::section(self.criteria, "criteria")?;
                DefenseConfig::Criteria {
                    schedule: InjectionSchedule {
                        dist_sigma: c.dist_sigma,
                        iterations: c.iterations,
                        dwell: c.dwell,
                    },
                    rate_threshold: c.rate_threshold,
                }
            }
        })
    }

    /// Loads the case, solves the attack (if any) and records replay frames.
    /// `kind` overrides the configured defense.
    pub fn build(&self, kind: Option<DefenseKind>, opts: &AttackOptions) -> Result<BuiltScenario> {
        let network = parse_case(&self.case)?;
        let base = OperatingPoint::solve(&network)?;
        let mut scenario = Scenario::new(network.clone(), base.clone(), self.seed);
        scenario.defense = self.defense_config(kind.unwrap_or(self.defense))?;
        scenario.trusted = self.trusted.clone();
        scenario.sensor = self.sensor;
        scenario.ambient_sigma = self.ambient_sigma;
        scenario.ticks = self.ticks;
        scenario.tick_rate = self.tick_rate;

        let (mut attack, mut validation) = (None, None);
        if let Some(cfg) = &self.attack {
            let spec = cfg.resolve(&network)?;
            let sol = compute_initial_attack(&network, &spec, &base, opts)?;
            validation = Some(validate_attack(&network, &spec, &sol, opts.tolerance));
            let stream_cfg = self.stream.clone().unwrap_or_default();
            let stream = match stream_cfg.kind {
                StreamKind::Noisy => AttackStream::noisy(sol.clone(), stream_cfg.noise_sigma_v, stream_cfg.noise_sigma_i),
                StreamKind::Replay => {
                    let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                    rng.set_stream(4);
                    let series =
                        record_replay_series(&network, &sol, stream_cfg.replay_frames, self.ambient_sigma, &mut rng)?;
                    AttackStream::replay(sol.clone(), series)
                }
                StreamKind::Enhanced => {
                    let mut overrides = BTreeMap::new();
                    for (k, [re, im]) in &stream_cfg.overrides {
                        let bus: BusId = k
                            .parse()
                            .map_err(|_| Error::Config(format!("override key {k:?} is not a bus id")))?;
                        overrides.insert(bus, Complex64::new(*re, *im));
                    }
                    AttackStream::enhanced(sol.clone(), stream_cfg.noise_sigma_v, stream_cfg.noise_sigma_i, overrides)
                }
            };
            stream.validate(&network)?;
            scenario.attack = Some(stream);
            attack = Some(sol);
        } else if self.stream.is_some() {
            return Err(Error::Config("[stream] given without [attack]".into()));
        }
        Ok(BuiltScenario {
            scenario,
            attack,
            validation,
        })
    }
}
