use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{reported_currents, InitialAttackSolution};
use crate::error::{Error, Result};
use crate::grid::{
    ac_solve, admittance_unchecked, AcOptions, BusId, BusSpec, End, LineId, Network, PhasorState, PowerFlowSpec, Role,
};
use crate::sim::perturb_loads;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamKind {
    Noisy,
    Replay,
    Enhanced,
}

/// Phasors for the zone only: bus voltages and the currents measured at zone
/// line ends.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PartialState {
    pub v: BTreeMap<BusId, Complex64>,
    pub i: BTreeMap<(LineId, End), Complex64>,
}

#[derive(Clone, Debug)]
pub struct AttackStream {
    pub kind: StreamKind,
    pub base: InitialAttackSolution,
    pub noise_sigma_v: f64,
    pub noise_sigma_i: f64,
    /// Full reported frames, replayed cyclically.
    pub replay_series: Vec<PhasorState>,
    pub boundary_overrides: BTreeMap<BusId, Complex64>,
}

impl AttackStream {
    pub fn noisy(base: InitialAttackSolution, sigma_v: f64, sigma_i: f64) -> Self {
        AttackStream {
            kind: StreamKind::Noisy,
            base,
            noise_sigma_v: sigma_v,
            noise_sigma_i: sigma_i,
            replay_series: Vec::new(),
            boundary_overrides: BTreeMap::new(),
        }
    }

    pub fn replay(base: InitialAttackSolution, series: Vec<PhasorState>) -> Self {
        AttackStream {
            kind: StreamKind::Replay,
            replay_series: series,
            ..Self::noisy(base, 0.0, 0.0)
        }
    }

    pub fn enhanced(
        base: InitialAttackSolution,
        sigma_v: f64,
        sigma_i: f64,
        overrides: BTreeMap<BusId, Complex64>,
    ) -> Self {
        AttackStream {
            kind: StreamKind::Enhanced,
            boundary_overrides: overrides,
            ..Self::noisy(base, sigma_v, sigma_i)
        }
    }

    pub fn validate(&self, network: &Network) -> Result<()> {
        for s in [self.noise_sigma_v, self.noise_sigma_i] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::InvalidStream(format!("noise sigma {s} must be nonnegative")));
            }
        }
        if self.kind == StreamKind::Replay {
            if self.replay_series.is_empty() {
                return Err(Error::InvalidStream("replay stream has no recorded frames".into()));
            }
            for frame in &self.replay_series {
                frame.check_shape(network)?;
            }
        }
        for k in self.boundary_overrides.keys() {
            if !self.base.boundary.contains(k) {
                return Err(Error::InvalidStream(format!("override at bus {k}, which is not on the boundary")));
            }
        }
        Ok(())
    }
}

/// Circularly symmetric complex Gaussian with `E|z|² = sigma²`.
fn complex_noise<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> Complex64 {
    if sigma == 0.0 {
        return Complex64::default();
    }
    let n = Normal::new(0.0, sigma / std::f64::consts::SQRT_2).expect("finite sigma");
    Complex64::new(n.sample(rng), n.sample(rng))
}

/// Zone phasors the attacker emits at tick `t`.
pub fn attack_stream_sample<R: Rng + ?Sized>(
    stream: &AttackStream,
    network: &Network,
    t: usize,
    rng: &mut R,
) -> Result<PartialState> {
    stream.validate(network)?;
    let sol = &stream.base;
    let zone = &sol.spec.zone;
    if stream.kind == StreamKind::Replay {
        let frame = &stream.replay_series[t % stream.replay_series.len()];
        return restrict(network, zone, frame);
    }

    let mut v = BTreeMap::new();
    for &k in zone {
        let v0 = sol.reported_state.voltage(network, k)?;
        let noisy = v0 + complex_noise(stream.noise_sigma_v, rng);
        let value = match stream.kind {
            StreamKind::Enhanced => stream.boundary_overrides.get(&k).copied().unwrap_or(noisy),
            _ => noisy,
        };
        v.insert(k, value);
    }
    let base_currents = reported_currents(sol, network)?;
    let mut i = BTreeMap::new();
    for (l, line) in network.lines.iter().enumerate() {
        if !line.in_service {
            continue;
        }
        match (v.get(&line.from), v.get(&line.to)) {
            (Some(&vk), Some(&vm)) => {
                let (a, b) = admittance_unchecked(line).currents(vk, vm);
                i.insert((l, End::From), a);
                i.insert((l, End::To), b);
            }
            (Some(_), None) | (None, Some(_)) => {
                let end = if zone.contains(&line.from) { End::From } else { End::To };
                let i0 = base_currents[&(l, end)];
                i.insert((l, end), i0 + complex_noise(stream.noise_sigma_i, rng));
            }
            (None, None) => {}
        }
    }
    Ok(PartialState { v, i })
}

/// Sample at tick `t` from a generator seeded by `seed` on stream `t`, so any
/// tick can be reproduced on its own.
pub fn sample_at(stream: &AttackStream, network: &Network, t: usize, seed: u64) -> Result<PartialState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t as u64);
    attack_stream_sample(stream, network, t, &mut rng)
}

fn restrict(
    network: &Network,
    zone: &std::collections::BTreeSet<BusId>,
    frame: &PhasorState,
) -> Result<PartialState> {
    let mut out = PartialState::default();
    for &k in zone {
        out.v.insert(k, frame.voltage(network, k)?);
    }
    for (l, line) in network.lines.iter().enumerate() {
        if !line.in_service {
            continue;
        }
        for end in [End::From, End::To] {
            if zone.contains(&line.bus(end)) {
                out.i.insert((l, end), frame.current(l, end)?);
            }
        }
    }
    Ok(out)
}

/// Records the reported picture under ambient load noise, as an attacker
/// would before replaying it.
///
/// Each frame re-solves the full network with the reported zone loads and the
/// post-attack dispatch, generators holding their reported magnitudes.
pub fn record_replay_series<R: Rng + ?Sized>(
    network: &Network,
    solution: &InitialAttackSolution,
    frames: usize,
    sigma_rel: f64,
    rng: &mut R,
) -> Result<Vec<PhasorState>> {
    let mut loads = solution.base.loads.clone();
    for (&k, &s) in &solution.reported_loads {
        loads[network.index_of(k)?] = s;
    }
    let rep = &solution.reported_state;
    let slack = network.index_of(network.slack)?;
    let mut opts = AcOptions {
        warm_start: Some(rep.v.clone()),
        ..AcOptions::default()
    };
    let mut out = Vec::with_capacity(frames);
    for _ in 0..frames {
        let loads_t = perturb_loads(&loads, sigma_rel, rng);
        let mut buses = Vec::with_capacity(network.n_buses());
        for (i, bus) in network.buses.iter().enumerate() {
            let spec = if i == slack {
                BusSpec::Slack { v: rep.v[i] }
            } else if bus.is_generator {
                let p = match solution.responder_dispatch.get(&bus.id) {
                    Some(&(p, _)) => p,
                    None => solution.base.generation[&bus.id].re,
                };
                BusSpec::Pv {
                    p: p - loads_t[i].re,
                    v_mag: rep.v[i].norm(),
                }
            } else {
                BusSpec::Pq { s: -loads_t[i] }
            };
            buses.push(spec);
        }
        let sol = ac_solve(network, &PowerFlowSpec { buses }, &opts)?;
        opts.warm_start = Some(sol.state.v.clone());
        out.push(sol.state.with_role(Role::Reported));
    }
    Ok(out)
}
