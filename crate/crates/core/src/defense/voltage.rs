use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BusId, Network, PhasorState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoltageScore {
    /// Largest relative complex voltage change per load bus.
    pub per_bus: BTreeMap<BusId, f64>,
    pub min: f64,
    pub mean: f64,
    /// Buses left out because their base voltage is zero.
    pub excluded: Vec<BusId>,
}

/// `max_i |V_ik − V_k| / |V_k|` over experiments, for every non-generator bus.
pub fn voltage_change_score(network: &Network, base: &PhasorState, experiments: &[PhasorState]) -> Result<VoltageScore> {
    if experiments.is_empty() {
        return Err(Error::InvalidSpec("voltage score needs at least one experiment".into()));
    }
    base.check_shape(network)?;
    for e in experiments {
        e.check_shape(network)?;
    }
    let mut per_bus = BTreeMap::new();
    let mut excluded = Vec::new();
    for (k, bus) in network.buses.iter().enumerate() {
        if bus.is_generator {
            continue;
        }
        let vb = base.v[k];
        if vb.norm() == 0.0 {
            excluded.push(bus.id);
            continue;
        }
        let score = experiments
            .iter()
            .map(|e| (e.v[k] - vb).norm() / vb.norm())
            .fold(0.0, f64::max);
        per_bus.insert(bus.id, score);
    }
    if per_bus.is_empty() {
        return Err(Error::InvalidSpec("no load bus to score".into()));
    }
    let min = per_bus.values().copied().fold(f64::INFINITY, f64::min);
    let mean = per_bus.values().sum::<f64>() / per_bus.len() as f64;
    Ok(VoltageScore {
        per_bus,
        min,
        mean,
        excluded,
    })
}
