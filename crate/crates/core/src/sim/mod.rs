//! Time-stepped scenarios: ambient physics, sensors, attacker streams and
//! defenses.

mod dc;
mod physics;
mod redispatch;
mod sensor;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::attack::{boundary_of, AttackStream};
use crate::defense::{
    covariance_defense, draw_pairs_command, pairs_detect, CovarianceOptions, CriteriaMonitor, DefenseLog,
    DetectionReport, Detector, IterationRecord, PairMode, PairsOptions, PhasorSource, TrustedSet,
};
use crate::error::{Error, Result};
use crate::grid::{BusId, LineId, Network, OperatingPoint};

pub use dc::DcSource;
pub use physics::{ScenarioSource, TruePhysics};
pub use redispatch::voltage_experiments;
pub use sensor::{ambient_step, perturb_loads, sensor_sample, SensorModel};

/// Random pair injections held for `dwell` ticks each.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InjectionSchedule {
    pub dist_sigma: f64,
    pub iterations: usize,
    pub dwell: usize,
}

impl InjectionSchedule {
    fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.dwell == 0 {
            return Err(Error::InvalidDefense("injection schedule needs iterations and dwell ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DefenseConfig {
    None,
    Pairs {
        schedule: InjectionSchedule,
        options: PairsOptions,
    },
    Covariance(CovarianceOptions),
    Criteria {
        schedule: InjectionSchedule,
        rate_threshold: f64,
    },
}

impl DefenseConfig {
    pub fn detector(&self) -> Option<Detector> {
        match self {
            DefenseConfig::None => None,
            DefenseConfig::Pairs { .. } => Some(Detector::Pairs),
            DefenseConfig::Covariance(_) => Some(Detector::Covariance),
            DefenseConfig::Criteria { .. } => Some(Detector::Criteria),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub network: Network,
    /// Operating point before any attack.
    pub base: OperatingPoint,
    pub attack: Option<AttackStream>,
    /// Required by every defense except `None`.
    pub trusted: Option<TrustedSet>,
    pub defense: DefenseConfig,
    pub sensor: SensorModel,
    pub ambient_sigma: f64,
    /// Length of an undefended run; defenses run for their own schedule.
    pub ticks: usize,
    /// Samples per second, carried into reports only.
    pub tick_rate: f64,
    pub seed: u64,
}

impl Scenario {
    pub fn new(network: Network, base: OperatingPoint, seed: u64) -> Self {
        Scenario {
            network,
            base,
            attack: None,
            trusted: None,
            defense: DefenseConfig::None,
            sensor: SensorModel::default(),
            ambient_sigma: 0.003,
            ticks: 1,
            tick_rate: 30.0,
            seed,
        }
    }
}

/// Detection quality against the attacked zone.
///
/// Bus detectors are scored on `𝒜 − ∂𝒜`: flags there are true positives and
/// flags outside `𝒜` are false positives; flags on `∂𝒜` count as neither.
/// Line detectors are scored on lines with exactly one end in `𝒜`, with
/// false positives on lines that have no end in `𝒜`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub detector: String,
    pub precision: f64,
    pub recall: f64,
    pub time_to_first_flag: Option<usize>,
    pub flagged_buses: Vec<BusId>,
    pub flagged_lines: Vec<LineId>,
    pub false_positive_buses: Vec<BusId>,
    pub false_positive_lines: Vec<LineId>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    pub fn score(network: &Network, zone: &BTreeSet<BusId>, report: Option<&DetectionReport>) -> Result<Self> {
        let boundary = if zone.is_empty() {
            BTreeSet::new()
        } else {
            boundary_of(network, zone)?
        };
        let detector = report.map_or("none", |r| r.detector.name()).to_string();
        let buses = report.map(|r| r.bus_set()).unwrap_or_default();
        let lines = report.map(|r| r.line_set()).unwrap_or_default();

        let fp_buses: Vec<BusId> = buses.iter().copied().filter(|k| !zone.contains(k)).collect();
        let fp_lines: Vec<LineId> = lines
            .iter()
            .copied()
            .filter(|&l| {
                let line = &network.lines[l];
                !zone.contains(&line.from) && !zone.contains(&line.to)
            })
            .collect();

        let (precision, recall) = match report.map(|r| r.detector) {
            Some(Detector::Criteria) => {
                let positives: BTreeSet<LineId> = network
                    .lines
                    .iter()
                    .enumerate()
                    .filter(|(_, l)| l.in_service && (zone.contains(&l.from) != zone.contains(&l.to)))
                    .map(|(id, _)| id)
                    .collect();
                let tp = lines.intersection(&positives).count();
                (ratio(tp, tp + fp_lines.len()), ratio(tp, positives.len()))
            }
            _ => {
                let positives: BTreeSet<BusId> = zone.difference(&boundary).copied().collect();
                let tp = buses.intersection(&positives).count();
                (ratio(tp, tp + fp_buses.len()), ratio(tp, positives.len()))
            }
        };
        let time_to_first_flag = report.and_then(|r| {
            if !r.flagged_lines.is_empty() {
                r.flagged_lines.iter().map(|f| f.tick).min()
            } else if !r.flagged_buses.is_empty() {
                Some(r.decided_at)
            } else {
                None
            }
        });
        Ok(Metrics {
            detector,
            precision,
            recall,
            time_to_first_flag,
            flagged_buses: buses.into_iter().collect(),
            flagged_lines: lines.into_iter().collect(),
            false_positive_buses: fp_buses,
            false_positive_lines: fp_lines,
        })
    }
}

#[derive(Clone, Debug)]
pub struct ScenarioOutcome {
    pub metrics: Metrics,
    pub log: DefenseLog,
    /// `None` when no defense ran.
    pub report: Option<DetectionReport>,
}

fn run_schedule(
    source: &mut ScenarioSource,
    trusted: &TrustedSet,
    schedule: &InjectionSchedule,
    rng: &mut rand_chacha::ChaCha8Rng,
    keep_samples: bool,
    mut on_sample: impl FnMut(usize, &crate::grid::PhasorState),
    mut on_iteration: impl FnMut(),
) -> Result<DefenseLog> {
    schedule.validate()?;
    let mut log = DefenseLog::default();
    for _ in 0..schedule.iterations {
        let cmd = draw_pairs_command(trusted, schedule.dist_sigma, PairMode::Plain, rng)?;
        let start = source.tick();
        let mut samples = Vec::new();
        for _ in 0..schedule.dwell {
            let tick = source.tick();
            let state = source.observe(Some(&cmd))?;
            on_sample(tick, &state);
            if keep_samples {
                samples.push(state);
            }
        }
        on_iteration();
        log.push(IterationRecord {
            command: Some(cmd),
            ticks: start..source.tick(),
            samples,
        })?;
    }
    Ok(log)
}

/// Runs one scenario to completion.
pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioOutcome> {
    let net = &scenario.network;
    let mut streams = physics::Streams::new(scenario.seed);
    let mut source = ScenarioSource::new(
        net,
        &scenario.base,
        scenario.attack.clone(),
        scenario.sensor,
        scenario.ambient_sigma,
        &mut streams,
    )?;
    let trusted = || -> Result<&TrustedSet> {
        let t = scenario
            .trusted
            .as_ref()
            .ok_or_else(|| Error::InvalidDefense("defense requires a trusted set".into()))?;
        t.check_against(net)?;
        Ok(t)
    };

    let (log, report) = match &scenario.defense {
        DefenseConfig::None => {
            if scenario.ticks == 0 {
                return Err(Error::Config("scenario needs at least one tick".into()));
            }
            for _ in 0..scenario.ticks {
                source.observe(None)?;
            }
            let log = DefenseLog {
                iterations: vec![IterationRecord {
                    command: None,
                    ticks: 0..scenario.ticks,
                    samples: Vec::new(),
                }],
            };
            (log, None)
        }
        DefenseConfig::Pairs { schedule, options } => {
            let trusted = trusted()?;
            let log = run_schedule(&mut source, trusted, schedule, &mut streams.defense, true, |_, _| {}, || {})?;
            let mut report = pairs_detect(net, &log, trusted, options)?;
            report.decided_at = source.tick() - 1;
            let mut log = log;
            for rec in &mut log.iterations {
                rec.samples.clear();
            }
            (log, Some(report))
        }
        DefenseConfig::Covariance(opts) => {
            let trusted = trusted()?;
            let (_, report, log) = covariance_defense(&mut source, trusted, opts, 0, &mut streams.defense)?;
            (log, Some(report))
        }
        DefenseConfig::Criteria {
            schedule,
            rate_threshold,
        } => {
            let trusted = trusted()?;
            let monitor = std::cell::RefCell::new(CriteriaMonitor::new(net, scenario.sensor.tau, *rate_threshold));
            let log = run_schedule(
                &mut source,
                trusted,
                schedule,
                &mut streams.defense,
                false,
                |tick, state| monitor.borrow_mut().observe(tick, state),
                || monitor.borrow_mut().close_window(),
            )?;
            (log, Some(monitor.into_inner().report()))
        }
    };
    let zone = scenario
        .attack
        .as_ref()
        .map(|a| a.base.spec.zone.clone())
        .unwrap_or_default();
    let metrics = Metrics::score(net, &zone, report.as_ref())?;
    Ok(ScenarioOutcome { metrics, log, report })
}
