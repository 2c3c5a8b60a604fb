//! Initial attack synthesis, validation, and the falsified data streams that
//! follow it.

mod solve;
mod stream;
mod validate;

use std::collections::{BTreeMap, BTreeSet};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BusId, End, LineId, Network, OperatingPoint, PhasorState};

pub use solve::{compute_initial_attack, AttackOptions};
pub use stream::{attack_stream_sample, record_replay_series, sample_at, AttackStream, PartialState, StreamKind};
pub use validate::{validate_attack, CheckResult, ValidationReport};

fn default_margin() -> f64 {
    0.1
}

/// Which buses the attacker controls, which lines it cuts, and which line it
/// wants to overload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub zone: BTreeSet<BusId>,
    #[serde(default)]
    pub cut_lines: BTreeSet<LineId>,
    pub target: LineId,
    #[serde(default = "default_margin")]
    pub overload_margin: f64,
}

impl AttackSpec {
    pub fn new(zone: impl IntoIterator<Item = BusId>, target: LineId) -> Self {
        AttackSpec {
            zone: zone.into_iter().collect(),
            cut_lines: BTreeSet::new(),
            target,
            overload_margin: default_margin(),
        }
    }

    pub fn validate(&self, network: &Network) -> Result<()> {
        boundary_of(network, &self.zone)?;
        if let Some(g) = network.generators.iter().find(|g| self.zone.contains(&g.bus)) {
            return Err(Error::InvalidAttack(format!("zone contains generator bus {}", g.bus)));
        }
        let inside = |l: LineId| -> Result<bool> {
            let line = network.line(l)?;
            Ok(line.in_service && self.zone.contains(&line.from) && self.zone.contains(&line.to))
        };
        for &l in &self.cut_lines {
            if !inside(l)? {
                return Err(Error::InvalidAttack(format!(
                    "cut line {l} must be in service with both ends in the zone"
                )));
            }
        }
        if !inside(self.target)? {
            return Err(Error::InvalidAttack(format!(
                "target line {} must be in service with both ends in the zone",
                self.target
            )));
        }
        if self.cut_lines.contains(&self.target) {
            return Err(Error::InvalidAttack("target line cannot be cut".into()));
        }
        if !(self.overload_margin >= 0.0 && self.overload_margin.is_finite()) {
            return Err(Error::InvalidAttack("overload margin must be a nonnegative number".into()));
        }
        if !network.is_connected(&self.cut_lines) {
            return Err(Error::InvalidAttack("cutting the lines disconnects the network".into()));
        }
        Ok(())
    }
}

/// Zone buses with at least one neighbor outside the zone.
pub fn boundary_of(network: &Network, zone: &BTreeSet<BusId>) -> Result<BTreeSet<BusId>> {
    if zone.is_empty() {
        return Err(Error::InvalidAttack("zone is empty".into()));
    }
    if zone.len() >= network.n_buses() {
        return Err(Error::InvalidAttack("zone must leave at least one bus outside".into()));
    }
    let mut boundary = BTreeSet::new();
    for &k in zone {
        if network.neighbors(k)?.iter().any(|m| !zone.contains(m)) {
            boundary.insert(k);
        }
    }
    Ok(boundary)
}

/// Paired true and reported pictures produced by the initial attack.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialAttackSolution {
    pub spec: AttackSpec,
    pub boundary: BTreeSet<BusId>,
    /// Operating point observed just before the attack.
    pub base: OperatingPoint,
    pub true_state: PhasorState,
    pub reported_state: PhasorState,
    pub true_loads: BTreeMap<BusId, Complex64>,
    pub reported_loads: BTreeMap<BusId, Complex64>,
    pub agc_delta: f64,
    /// `(P^g, Q^g)` of every AGC responder.
    pub responder_dispatch: BTreeMap<BusId, (f64, f64)>,
    /// Squared apparent power entering the target line at its from end.
    pub objective: f64,
}

impl InitialAttackSolution {
    /// The do-nothing attack: both pictures equal the base operating point.
    pub fn passive(network: &Network, spec: &AttackSpec, base: &OperatingPoint) -> Result<Self> {
        spec.validate(network)?;
        let boundary = boundary_of(network, &spec.zone)?;
        let mut loads = BTreeMap::new();
        for &k in &spec.zone {
            loads.insert(k, base.loads[network.index_of(k)?]);
        }
        let mut dispatch = BTreeMap::new();
        for &k in &network.agc_set {
            let g = base.generation.get(&k).copied().unwrap_or_default();
            dispatch.insert(k, (g.re, g.im));
        }
        let objective = target_flow(network, spec, &base.state)?.norm_sqr();
        Ok(InitialAttackSolution {
            spec: spec.clone(),
            boundary,
            base: base.clone(),
            true_state: base.state.clone(),
            reported_state: base.state.clone().with_role(crate::grid::Role::Reported),
            true_loads: loads.clone(),
            reported_loads: loads,
            agc_delta: 0.0,
            responder_dispatch: dispatch,
            objective,
        })
    }

    /// Buses in the zone but not on its boundary.
    pub fn interior(&self) -> BTreeSet<BusId> {
        self.spec.zone.difference(&self.boundary).copied().collect()
    }
}

/// Complex power entering the target line at its from end.
pub(crate) fn target_flow(network: &Network, spec: &AttackSpec, state: &PhasorState) -> Result<Complex64> {
    let line = network.line(spec.target)?;
    let v = state.voltage(network, line.from)?;
    Ok(v * state.current(spec.target, End::From)?.conj())
}

/// Currents the attacker reports at every line end touching the zone: the
/// two-port image of the reported voltages on lines inside the zone, and the
/// true current on lines leaving it.
pub fn reported_currents(
    solution: &InitialAttackSolution,
    network: &Network,
) -> Result<BTreeMap<(LineId, End), Complex64>> {
    let zone = &solution.spec.zone;
    let mut out = BTreeMap::new();
    for (l, line) in network.lines.iter().enumerate() {
        if !line.in_service {
            continue;
        }
        let (f_in, t_in) = (zone.contains(&line.from), zone.contains(&line.to));
        if f_in && t_in {
            let y = crate::grid::admittance_unchecked(line);
            let vk = solution.reported_state.voltage(network, line.from)?;
            let vm = solution.reported_state.voltage(network, line.to)?;
            let (a, b) = y.currents(vk, vm);
            out.insert((l, End::From), a);
            out.insert((l, End::To), b);
        } else if f_in || t_in {
            let end = if f_in { End::From } else { End::To };
            out.insert((l, end), solution.true_state.current(l, end)?);
        }
    }
    Ok(out)
}
