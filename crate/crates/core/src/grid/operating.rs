use std::collections::BTreeMap;

use num_complex::Complex64;

use super::ac::{ac_solve, AcOptions, PowerFlowSpec};
use super::network::{BusId, Network};
use super::state::{bus_injections, PhasorState};
use crate::error::{Error, Result};

/// A solved operating point: the true state plus the loads and generation
/// that produce it.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatingPoint {
    pub state: PhasorState,
    /// By bus position.
    pub loads: Vec<Complex64>,
    pub generation: BTreeMap<BusId, Complex64>,
}

impl OperatingPoint {
    /// Solves the network's own dispatch from a flat start.
    pub fn solve(network: &Network) -> Result<Self> {
        let spec = PowerFlowSpec::from_network(network)?;
        let sol = ac_solve(network, &spec, &AcOptions::default())?;
        Self::from_state(network, sol.state)
    }

    /// Reads generation off a solved state, taking loads from the network.
    /// Non-generator buses must already balance their load.
    pub fn from_state(network: &Network, state: PhasorState) -> Result<Self> {
        let inj = bus_injections(network, &state)?;
        let loads = network.loads();
        let mut generation = BTreeMap::new();
        for (i, bus) in network.buses.iter().enumerate() {
            let g = inj[i] + loads[i];
            if bus.is_generator {
                generation.insert(bus.id, g);
            } else if g.norm() > 1e-6 {
                return Err(Error::InvalidSpec(format!(
                    "bus {} injects {g} without a generator",
                    bus.id
                )));
            }
        }
        Ok(OperatingPoint {
            state,
            loads,
            generation,
        })
    }

    /// Net injection `S^g − S^d` at the bus in position `i`.
    pub fn net_injection(&self, network: &Network, i: usize) -> Complex64 {
        let g = self
            .generation
            .get(&network.buses[i].id)
            .copied()
            .unwrap_or_default();
        g - self.loads[i]
    }
}
