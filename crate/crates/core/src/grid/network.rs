use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// External bus number, as it appears in case files.
pub type BusId = usize;
/// Position of a line in [`Network::lines`].
pub type LineId = usize;

/// One end of a line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum End {
    From,
    To,
}

impl End {
    pub fn index(self) -> usize {
        match self {
            End::From => 0,
            End::To => 1,
        }
    }

    pub fn opposite(self) -> End {
        match self {
            End::From => End::To,
            End::To => End::From,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: BusId,
    pub v_min: f64,
    pub v_max: f64,
    /// Active load, per unit.
    pub p_load: f64,
    /// Reactive load, per unit.
    pub q_load: f64,
    pub is_generator: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: BusId,
    pub to: BusId,
    pub r: f64,
    pub x: f64,
    /// Total line-charging susceptance.
    pub b_charge: f64,
    pub tap_ratio: f64,
    /// Phase shift, radians.
    pub phase_shift: f64,
    /// Apparent power limit, per unit. `f64::INFINITY` when unlimited.
    pub s_max: f64,
    /// Angle difference limit, radians.
    pub theta_max: f64,
    pub in_service: bool,
}

impl Line {
    /// A plain series line with no charging, tap, or limits.
    pub fn series(from: BusId, to: BusId, r: f64, x: f64) -> Self {
        Line {
            from,
            to,
            r,
            x,
            b_charge: 0.0,
            tap_ratio: 1.0,
            phase_shift: 0.0,
            s_max: f64::INFINITY,
            theta_max: std::f64::consts::PI,
            in_service: true,
        }
    }

    pub fn bus(&self, end: End) -> BusId {
        match end {
            End::From => self.from,
            End::To => self.to,
        }
    }

    pub fn other(&self, bus: BusId) -> BusId {
        if bus == self.from {
            self.to
        } else {
            self.from
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: BusId,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub p_set: f64,
    pub q_set: f64,
    /// Voltage magnitude setpoint held by the generator in power flow.
    pub v_set: f64,
}

/// Immutable grid description. Buses are addressed by their external id;
/// internally everything is stored densely by position.
#[derive(Clone, Debug)]
pub struct Network {
    pub name: String,
    pub base_power: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    pub slack: BusId,
    pub agc_set: BTreeSet<BusId>,
    pub participation: BTreeMap<BusId, f64>,
    index: HashMap<BusId, usize>,
    incident: Vec<Vec<(LineId, End)>>,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.base_power == other.base_power
            && self.buses == other.buses
            && self.lines == other.lines
            && self.generators == other.generators
            && self.slack == other.slack
            && self.agc_set == other.agc_set
            && self.participation == other.participation
    }
}

impl Network {
    /// Builds and validates a network. The AGC set defaults to every
    /// generator with equal participation when `agc` is `None`.
    pub fn new(
        name: impl Into<String>,
        base_power: f64,
        buses: Vec<Bus>,
        lines: Vec<Line>,
        generators: Vec<Generator>,
        slack: BusId,
        agc: Option<BTreeMap<BusId, f64>>,
    ) -> Result<Self> {
        let participation = match agc {
            Some(p) => p,
            None => {
                let n = generators.len().max(1) as f64;
                generators.iter().map(|g| (g.bus, 1.0 / n)).collect()
            }
        };
        let mut net = Network {
            name: name.into(),
            base_power,
            buses,
            lines,
            generators,
            slack,
            agc_set: participation.keys().copied().collect(),
            participation,
            index: HashMap::new(),
            incident: Vec::new(),
        };
        net.reindex()?;
        net.validate()?;
        Ok(net)
    }

    fn reindex(&mut self) -> Result<()> {
        self.index.clear();
        for (i, b) in self.buses.iter().enumerate() {
            if self.index.insert(b.id, i).is_some() {
                return Err(Error::InvalidNetwork(format!("duplicate bus id {}", b.id)));
            }
        }
        self.incident = vec![Vec::new(); self.buses.len()];
        for (l, line) in self.lines.iter().enumerate() {
            let f = *self.index.get(&line.from).ok_or(Error::UnknownBus(line.from))?;
            let t = *self.index.get(&line.to).ok_or(Error::UnknownBus(line.to))?;
            if f == t {
                return Err(Error::InvalidLine {
                    line: l,
                    reason: "self loop".into(),
                });
            }
            if line.in_service {
                self.incident[f].push((l, End::From));
                self.incident[t].push((l, End::To));
            }
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if !(self.base_power > 0.0 && self.base_power.is_finite()) {
            return Err(Error::InvalidNetwork("base power must be positive".into()));
        }
        for b in &self.buses {
            if !(b.v_min > 0.0 && b.v_min <= b.v_max) {
                return Err(Error::InvalidNetwork(format!("bus {}: bad voltage bounds", b.id)));
            }
            if !(b.p_load.is_finite() && b.q_load.is_finite()) {
                return Err(Error::InvalidNetwork(format!("bus {}: non-finite load", b.id)));
            }
        }
        for (l, line) in self.lines.iter().enumerate() {
            validate_line(l, line)?;
        }
        let mut seen = BTreeSet::new();
        for g in &self.generators {
            let i = self.index_of(g.bus)?;
            if !seen.insert(g.bus) {
                return Err(Error::InvalidNetwork(format!("more than one generator at bus {}", g.bus)));
            }
            if !self.buses[i].is_generator {
                return Err(Error::InvalidNetwork(format!("bus {} hosts a generator but is not flagged", g.bus)));
            }
        }
        self.index_of(self.slack)?;
        if !seen.contains(&self.slack) {
            return Err(Error::InvalidNetwork(format!("slack bus {} has no generator", self.slack)));
        }
        let mut total = 0.0;
        for (&k, &a) in &self.participation {
            if !seen.contains(&k) {
                return Err(Error::InvalidNetwork(format!("AGC responder {k} is not a generator bus")));
            }
            if !(a >= 0.0 && a.is_finite()) {
                return Err(Error::InvalidNetwork(format!("negative participation at bus {k}")));
            }
            total += a;
        }
        if !self.participation.is_empty() && (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidNetwork(format!("participation factors sum to {total}")));
        }
        if !self.is_connected(&BTreeSet::new()) {
            return Err(Error::Disconnected);
        }
        Ok(())
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn index_of(&self, bus: BusId) -> Result<usize> {
        self.index.get(&bus).copied().ok_or(Error::UnknownBus(bus))
    }

    pub fn bus(&self, bus: BusId) -> Result<&Bus> {
        Ok(&self.buses[self.index_of(bus)?])
    }

    pub fn line(&self, line: LineId) -> Result<&Line> {
        self.lines.get(line).ok_or(Error::UnknownLine(line))
    }

    pub fn generator_at(&self, bus: BusId) -> Option<&Generator> {
        self.generators.iter().find(|g| g.bus == bus)
    }

    /// In-service lines incident to the bus at position `idx`, with the end
    /// of each line that touches it.
    pub fn incident(&self, idx: usize) -> &[(LineId, End)] {
        &self.incident[idx]
    }

    pub fn bus_ids(&self) -> impl Iterator<Item = BusId> + '_ {
        self.buses.iter().map(|b| b.id)
    }

    pub fn neighbors(&self, bus: BusId) -> Result<Vec<BusId>> {
        let i = self.index_of(bus)?;
        Ok(self.incident[i]
            .iter()
            .map(|&(l, _)| self.lines[l].other(bus))
            .collect())
    }

    /// Connectivity over in-service lines, ignoring `removed` lines.
    pub fn is_connected(&self, removed: &BTreeSet<LineId>) -> bool {
        let n = self.buses.len();
        if n == 0 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = queue.pop_front() {
            for &(l, end) in &self.incident[i] {
                if removed.contains(&l) {
                    continue;
                }
                let j = self.index[&self.lines[l].bus(end.opposite())];
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
        count == n
    }

    /// Copy of the network with the given lines taken out of service.
    pub fn without_lines(&self, removed: &BTreeSet<LineId>) -> Result<Network> {
        let mut net = self.clone();
        for &l in removed {
            net.lines
                .get_mut(l)
                .ok_or(Error::UnknownLine(l))?
                .in_service = false;
        }
        net.reindex()?;
        if !net.is_connected(&BTreeSet::new()) {
            return Err(Error::Disconnected);
        }
        Ok(net)
    }

    /// Copy of the network with a different AGC responder set.
    pub fn with_agc(&self, participation: BTreeMap<BusId, f64>) -> Result<Network> {
        let mut net = self.clone();
        net.agc_set = participation.keys().copied().collect();
        net.participation = participation;
        net.validate()?;
        Ok(net)
    }

    /// Copy of the network with loads replaced (per-bus, by position).
    pub fn with_loads(&self, loads: &[num_complex::Complex64]) -> Network {
        let mut net = self.clone();
        for (b, s) in net.buses.iter_mut().zip(loads) {
            b.p_load = s.re;
            b.q_load = s.im;
        }
        net
    }

    /// Copy of the network with generator active setpoints replaced.
    pub fn with_dispatch(&self, dispatch: &BTreeMap<BusId, f64>) -> Network {
        let mut net = self.clone();
        for g in &mut net.generators {
            if let Some(&p) = dispatch.get(&g.bus) {
                g.p_set = p;
            }
        }
        net
    }

    pub fn loads(&self) -> Vec<num_complex::Complex64> {
        self.buses
            .iter()
            .map(|b| num_complex::Complex64::new(b.p_load, b.q_load))
            .collect()
    }
}

pub(crate) fn validate_line(l: LineId, line: &Line) -> Result<()> {
    let finite = [line.r, line.x, line.b_charge, line.tap_ratio, line.phase_shift]
        .iter()
        .all(|v| v.is_finite());
    if !finite {
        return Err(Error::InvalidLine {
            line: l,
            reason: "non-finite parameter".into(),
        });
    }
    if line.x <= 0.0 {
        return Err(Error::InvalidLine {
            line: l,
            reason: format!("reactance must be positive, got {}", line.x),
        });
    }
    if line.tap_ratio <= 0.0 {
        return Err(Error::InvalidLine {
            line: l,
            reason: "tap ratio must be positive".into(),
        });
    }
    if !(line.s_max > 0.0) || line.s_max.is_nan() {
        return Err(Error::InvalidLine {
            line: l,
            reason: "apparent power limit must be positive".into(),
        });
    }
    if !(line.theta_max > 0.0) {
        return Err(Error::InvalidLine {
            line: l,
            reason: "angle limit must be positive".into(),
        });
    }
    Ok(())
}
