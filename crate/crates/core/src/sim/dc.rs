use std::collections::BTreeSet;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::defense::{InjectionCommand, PhasorSource};
use crate::error::{Error, Result};
use crate::grid::{BusId, Network, PhasorState, ReducedSusceptance, Role};

/// DC-linearized phasor source: unit magnitudes, angles from `B̆ p` under
/// ambient load noise, exact sensors.
///
/// Buses in `replayed` report angles from an independent ambient draw that
/// never sees the defender's injections, as a replaying attacker would.
pub struct DcSource {
    network: Network,
    reduced: ReducedSusceptance,
    loads: Vec<f64>,
    generation: Vec<f64>,
    nominal: Vec<f64>,
    sigma_rel: f64,
    replayed: BTreeSet<usize>,
    rng: ChaCha8Rng,
}

impl DcSource {
    pub fn new(network: &Network, sigma_rel: f64, seed: u64) -> Result<Self> {
        if !(sigma_rel >= 0.0 && sigma_rel.is_finite()) {
            return Err(Error::Config(format!("ambient sigma {sigma_rel} must be nonnegative")));
        }
        let reduced = ReducedSusceptance::new(network, network.slack)?;
        let loads: Vec<f64> = network.buses.iter().map(|b| b.p_load).collect();
        let mut generation = vec![0.0; network.n_buses()];
        for g in &network.generators {
            generation[network.index_of(g.bus)?] += g.p_set;
        }
        let p: Vec<f64> = generation.iter().zip(&loads).map(|(g, l)| g - l).collect();
        let nominal = reduced.apply(&p);
        Ok(DcSource {
            network: network.clone(),
            reduced,
            loads,
            generation,
            nominal,
            sigma_rel,
            replayed: BTreeSet::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn with_replayed(mut self, buses: impl IntoIterator<Item = BusId>) -> Result<Self> {
        for k in buses {
            self.replayed.insert(self.network.index_of(k)?);
        }
        Ok(self)
    }

    fn angles(&mut self, delta: Option<&[f64]>, pin: usize) -> Vec<f64> {
        let normal = Normal::new(0.0, self.sigma_rel).expect("validated sigma");
        let mut p: Vec<f64> = self
            .generation
            .iter()
            .zip(&self.loads)
            .map(|(g, l)| g - l * (1.0 + normal.sample(&mut self.rng)))
            .collect();
        if let Some(d) = delta {
            for (x, dx) in p.iter_mut().zip(d) {
                *x += dx;
            }
        }
        let mut theta = self.reduced.apply(&p);
        let shift = self.nominal[pin] - theta[pin];
        theta.iter_mut().for_each(|x| *x += shift);
        theta
    }
}

impl PhasorSource for DcSource {
    fn network(&self) -> &Network {
        &self.network
    }

    fn observe(&mut self, cmd: Option<&InjectionCommand>) -> Result<PhasorState> {
        let (delta, pin) = match cmd {
            Some(c) => (Some(c.delta(&self.network)?), self.network.index_of(c.t)?),
            None => (None, self.network.index_of(self.network.slack)?),
        };
        let mut theta = self.angles(delta.as_deref(), pin);
        if !self.replayed.is_empty() {
            let stale = self.angles(None, pin);
            for &k in &self.replayed {
                theta[k] = stale[k];
            }
        }
        let v = theta.iter().map(|&a| Complex64::from_polar(1.0, a)).collect();
        PhasorState::from_voltages(&self.network, v, Role::Reported)
    }
}
