use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::network::{BusId, Network};
use crate::error::{Error, Result};

/// Generator outputs after an AGC response, with any limit violations the
/// response produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgcDispatch {
    /// Active output of every generator, per unit.
    pub dispatch: BTreeMap<BusId, f64>,
    pub violations: Vec<LimitViolation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitViolation {
    pub bus: BusId,
    pub p: f64,
    pub p_min: f64,
    pub p_max: f64,
}

/// Spreads a net active change `delta` over the responders in proportion to
/// their participation factors. Limit violations are reported, not clamped.
pub fn apply_agc(network: &Network, delta: f64) -> Result<AgcDispatch> {
    if network.participation.is_empty() {
        return Err(Error::InvalidNetwork("AGC responder set is empty".into()));
    }
    let mut dispatch = BTreeMap::new();
    let mut violations = Vec::new();
    for g in &network.generators {
        let alpha = network.participation.get(&g.bus).copied().unwrap_or(0.0);
        let p = g.p_set + alpha * delta;
        if p < g.p_min || p > g.p_max {
            log::warn!("AGC pushes generator at bus {} to {p:.4} outside [{}, {}]", g.bus, g.p_min, g.p_max);
            violations.push(LimitViolation {
                bus: g.bus,
                p,
                p_min: g.p_min,
                p_max: g.p_max,
            });
        }
        dispatch.insert(g.bus, p);
    }
    Ok(AgcDispatch { dispatch, violations })
}
