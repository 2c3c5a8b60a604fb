//! Randomized injection defenses and the detectors that read their effect
//! off reported phasors.

mod covariance;
mod criteria;
mod pairs;
mod voltage;

use std::collections::BTreeSet;
use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BusId, LineId, Network, PhasorState, ReducedSusceptance};

pub use covariance::{
    covariance_defense, omega, predicted_cov_shift, CovarianceEstimates, CovarianceOptions, Welford,
};
pub use criteria::{
    criterion1_check, criterion2_check, hoo_ratio, CriteriaMonitor, CriterionCheck, LineSide,
};
pub use pairs::{pairs_detect, PairsOptions};
pub use voltage::{voltage_change_score, VoltageScore};

/// Generator buses whose sensors the defender trusts, with the two fixed
/// anchors used as references by the covariance test.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustedSet {
    pub members: BTreeSet<BusId>,
    pub anchors: (BusId, BusId),
}

impl TrustedSet {
    pub fn new(members: impl IntoIterator<Item = BusId>, anchors: (BusId, BusId)) -> Result<Self> {
        let set = TrustedSet {
            members: members.into_iter().collect(),
            anchors,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.len() < 2 {
            return Err(Error::InvalidDefense("trusted set needs at least two buses".into()));
        }
        let (a, b) = self.anchors;
        if a == b || !self.members.contains(&a) || !self.members.contains(&b) {
            return Err(Error::InvalidDefense(format!(
                "anchors ({a}, {b}) must be two distinct trusted buses"
            )));
        }
        Ok(())
    }

    /// Members must be generator buses of the network.
    pub fn check_against(&self, network: &Network) -> Result<()> {
        self.validate()?;
        for &k in &self.members {
            if !network.bus(k)?.is_generator {
                return Err(Error::InvalidDefense(format!("trusted bus {k} has no generator")));
            }
        }
        Ok(())
    }
}

/// A paired injection: `+gamma` at `s`, `−gamma` at `t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectionCommand {
    pub s: BusId,
    pub t: BusId,
    pub gamma: f64,
}

impl InjectionCommand {
    /// Per-bus injection vector by position. Sums to zero exactly.
    pub fn delta(&self, network: &Network) -> Result<Vec<f64>> {
        let mut d = vec![0.0; network.n_buses()];
        d[network.index_of(self.s)?] = self.gamma;
        d[network.index_of(self.t)?] = -self.gamma;
        Ok(d)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairMode {
    /// Any ordered pair of distinct trusted buses.
    Plain,
    /// Sink restricted to one of the two anchors.
    Anchored,
}

/// Draws a random pair and a zero-mean Gaussian `gamma` with standard
/// deviation `dist_sigma`.
pub fn draw_pairs_command<R: Rng + ?Sized>(
    trusted: &TrustedSet,
    dist_sigma: f64,
    mode: PairMode,
    rng: &mut R,
) -> Result<InjectionCommand> {
    trusted.validate()?;
    if !(dist_sigma > 0.0 && dist_sigma.is_finite()) {
        return Err(Error::InvalidDefense(format!("injection sigma {dist_sigma} must be positive")));
    }
    let members: Vec<BusId> = trusted.members.iter().copied().collect();
    let t = match mode {
        PairMode::Plain => members[rng.random_range(0..members.len())],
        PairMode::Anchored => {
            if rng.random::<bool>() {
                trusted.anchors.0
            } else {
                trusted.anchors.1
            }
        }
    };
    let sources: Vec<BusId> = members.into_iter().filter(|&k| k != t).collect();
    let s = sources[rng.random_range(0..sources.len())];
    let gamma = Normal::new(0.0, dist_sigma).expect("validated sigma").sample(rng);
    Ok(InjectionCommand { s, t, gamma })
}

/// `gamma · B̆_t u^{s,t}`: DC angle response to the command, referenced to `t`.
pub fn dc_phase_shift(network: &Network, cmd: &InjectionCommand) -> Result<Vec<f64>> {
    let reduced = ReducedSusceptance::new(network, cmd.t)?;
    Ok(reduced.apply(&cmd.delta(network)?))
}

/// Something the defender can command and observe: each call applies
/// `cmd` (or nothing) for one tick and returns the reported phasors.
pub trait PhasorSource {
    fn network(&self) -> &Network;
    fn observe(&mut self, cmd: Option<&InjectionCommand>) -> Result<PhasorState>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub command: Option<InjectionCommand>,
    pub ticks: Range<usize>,
    /// Reported frames; kept only by detectors that need them afterwards.
    #[serde(skip)]
    pub samples: Vec<PhasorState>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DefenseLog {
    pub iterations: Vec<IterationRecord>,
}

impl DefenseLog {
    pub fn push(&mut self, record: IterationRecord) -> Result<()> {
        if let Some(last) = self.iterations.last() {
            if record.ticks.start < last.ticks.end {
                return Err(Error::InvalidDefense(format!(
                    "iteration ticks {:?} overlap the previous {:?}",
                    record.ticks, last.ticks
                )));
            }
        }
        if record.ticks.is_empty() {
            return Err(Error::InvalidDefense("iteration spans no ticks".into()));
        }
        self.iterations.push(record);
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Detector {
    Pairs,
    Criteria,
    Covariance,
}

impl Detector {
    pub fn name(self) -> &'static str {
        match self {
            Detector::Pairs => "pairs",
            Detector::Criteria => "criteria",
            Detector::Covariance => "covariance",
        }
    }
}

impl std::str::FromStr for Detector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pairs" => Ok(Detector::Pairs),
            "criteria" => Ok(Detector::Criteria),
            "covariance" => Ok(Detector::Covariance),
            _ => Err(Error::Config(format!("unknown detector {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BusFlag {
    pub bus: BusId,
    pub statistic: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFlag {
    pub line: LineId,
    pub criterion: u8,
    /// Largest `lhs − rhs` seen in the flagging window.
    pub residual: f64,
    /// Fraction of samples in the window that failed.
    pub rate: f64,
    /// Last tick of the first window that raised the flag.
    pub tick: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub detector: Detector,
    pub flagged_buses: Vec<BusFlag>,
    pub flagged_lines: Vec<LineFlag>,
    /// Tick at which the verdict became available.
    pub decided_at: usize,
    /// Warnings that do not change the verdict.
    pub notes: Vec<String>,
}

impl DetectionReport {
    pub fn empty(detector: Detector) -> Self {
        DetectionReport {
            detector,
            flagged_buses: Vec::new(),
            flagged_lines: Vec::new(),
            decided_at: 0,
            notes: Vec::new(),
        }
    }

    pub fn bus_set(&self) -> BTreeSet<BusId> {
        self.flagged_buses.iter().map(|f| f.bus).collect()
    }

    pub fn line_set(&self) -> BTreeSet<LineId> {
        self.flagged_lines.iter().map(|f| f.line).collect()
    }
}
