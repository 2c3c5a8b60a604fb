use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::admittance::admittance_unchecked;
use super::network::{BusId, End, LineId, Network};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    True,
    Reported,
    Sensed,
}

/// Bus voltages and line-end currents, stored by position
/// (`v[i]` belongs to `network.buses[i]`, `i[l][end]` to `network.lines[l]`).
/// Out-of-service lines carry zero current.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasorState {
    pub role: Role,
    pub v: Vec<Complex64>,
    pub i: Vec<[Complex64; 2]>,
}

impl PhasorState {
    /// State whose currents follow from the voltages through each line's
    /// two-port admittance.
    pub fn from_voltages(network: &Network, v: Vec<Complex64>, role: Role) -> Result<Self> {
        if v.len() != network.n_buses() {
            return Err(Error::IncompleteState(format!(
                "{} voltages for {} buses",
                v.len(),
                network.n_buses()
            )));
        }
        let i = line_currents(network, &v)?;
        Ok(PhasorState { role, v, i })
    }

    pub fn flat(network: &Network, role: Role) -> Self {
        let v = vec![Complex64::new(1.0, 0.0); network.n_buses()];
        let i = vec![[Complex64::default(); 2]; network.lines.len()];
        PhasorState { role, v, i }
    }

    pub fn voltage(&self, network: &Network, bus: BusId) -> Result<Complex64> {
        Ok(self.v[network.index_of(bus)?])
    }

    pub fn current(&self, line: LineId, end: End) -> Result<Complex64> {
        self.i
            .get(line)
            .map(|c| c[end.index()])
            .ok_or(Error::UnknownLine(line))
    }

    pub fn angles(&self) -> Vec<f64> {
        self.v.iter().map(|v| v.arg()).collect()
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    /// Rotates every phasor by `angle` radians.
    pub fn rotate(&mut self, angle: f64) {
        let r = Complex64::from_polar(1.0, angle);
        self.v.iter_mut().for_each(|v| *v *= r);
        self.i.iter_mut().flatten().for_each(|c| *c *= r);
    }

    pub(crate) fn check_shape(&self, network: &Network) -> Result<()> {
        if self.v.len() != network.n_buses() || self.i.len() != network.lines.len() {
            return Err(Error::IncompleteState(format!(
                "state has {} voltages / {} lines, network has {} / {}",
                self.v.len(),
                self.i.len(),
                network.n_buses(),
                network.lines.len()
            )));
        }
        Ok(())
    }
}

pub(crate) fn line_currents(network: &Network, v: &[Complex64]) -> Result<Vec<[Complex64; 2]>> {
    network
        .lines
        .iter()
        .map(|line| {
            if !line.in_service {
                return Ok([Complex64::default(); 2]);
            }
            let y = admittance_unchecked(line);
            let vk = v[network.index_of(line.from)?];
            let vm = v[network.index_of(line.to)?];
            let (a, b) = y.currents(vk, vm);
            Ok([a, b])
        })
        .collect()
}

/// Net complex power injected into the network at `bus`:
/// `Σ_{km ∈ δ(k)} V_k · conj(I_km)` over in-service incident lines.
pub fn bus_injection(network: &Network, state: &PhasorState, bus: BusId) -> Result<Complex64> {
    state.check_shape(network)?;
    let k = network.index_of(bus)?;
    let vk = state.v[k];
    let mut s = Complex64::default();
    for &(l, end) in network.incident(k) {
        let i = state.i[l][end.index()];
        if !(i.re.is_finite() && i.im.is_finite()) {
            return Err(Error::IncompleteState(format!("current on line {l} at bus {bus} is missing")));
        }
        s += vk * i.conj();
    }
    Ok(s)
}

/// Injections at every bus, by position.
pub fn bus_injections(network: &Network, state: &PhasorState) -> Result<Vec<Complex64>> {
    network.bus_ids().map(|b| bus_injection(network, state, b)).collect()
}
