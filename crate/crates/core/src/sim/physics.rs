use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::sensor::{perturb_loads, sensor_sample, SensorModel};
use crate::attack::{sample_at, AttackStream};
use crate::defense::{InjectionCommand, PhasorSource};
use crate::error::{Error, Result};
use crate::grid::{
    ac_solve, bus_injections, AcOptions, BusId, BusSpec, Network, OperatingPoint, PhasorState, PowerFlowSpec, Role,
};

/// Ground truth: the network (minus any cut lines) held at an operating point
/// under ambient load noise and defender injections.
#[derive(Clone, Debug)]
pub struct TruePhysics {
    network: Network,
    loads: Vec<Complex64>,
    dispatch: BTreeMap<BusId, f64>,
    v_mag: Vec<f64>,
    slack_v: Complex64,
    /// Angles of the operating point; the frame is pinned to these.
    ref_angles: Vec<f64>,
    warm: Vec<Complex64>,
    ticks: usize,
}

impl TruePhysics {
    /// Physics of the unattacked operating point.
    pub fn new(network: &Network, base: &OperatingPoint) -> Result<Self> {
        let dispatch = base.generation.iter().map(|(&k, s)| (k, s.re)).collect();
        Self::build(network.clone(), base.loads.clone(), dispatch, &base.state)
    }

    /// Physics after the attack: cut lines removed, zone loads at their true
    /// values, responders at the post-AGC dispatch.
    pub fn attacked(network: &Network, stream: &AttackStream) -> Result<Self> {
        let sol = &stream.base;
        let net = network.without_lines(&sol.spec.cut_lines)?;
        let mut loads = sol.base.loads.clone();
        for (&k, &s) in &sol.true_loads {
            loads[network.index_of(k)?] = s;
        }
        let mut dispatch: BTreeMap<BusId, f64> = sol.base.generation.iter().map(|(&k, s)| (k, s.re)).collect();
        for (&k, &(p, _)) in &sol.responder_dispatch {
            dispatch.insert(k, p);
        }
        Self::build(net, loads, dispatch, &sol.true_state)
    }

    fn build(network: Network, loads: Vec<Complex64>, dispatch: BTreeMap<BusId, f64>, state: &PhasorState) -> Result<Self> {
        state.check_shape(&network)?;
        let slack = network.index_of(network.slack)?;
        Ok(TruePhysics {
            loads,
            dispatch,
            v_mag: state.v.iter().map(|v| v.norm()).collect(),
            slack_v: state.v[slack],
            ref_angles: state.angles(),
            warm: state.v.clone(),
            ticks: 0,
            network,
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    fn spec(&self, loads: &[Complex64], cmd: Option<&InjectionCommand>) -> Result<PowerFlowSpec> {
        let net = &self.network;
        let slack = net.index_of(net.slack)?;
        let mut buses = Vec::with_capacity(net.n_buses());
        for (i, bus) in net.buses.iter().enumerate() {
            let spec = if i == slack {
                BusSpec::Slack { v: self.slack_v }
            } else if bus.is_generator {
                let mut p = self.dispatch.get(&bus.id).copied().unwrap_or(0.0);
                if let Some(c) = cmd {
                    if c.s == bus.id {
                        p += c.gamma;
                    } else if c.t == bus.id {
                        p -= c.gamma;
                    }
                }
                BusSpec::Pv {
                    p: p - loads[i].re,
                    v_mag: self.v_mag[i],
                }
            } else {
                BusSpec::Pq { s: -loads[i] }
            };
            buses.push(spec);
        }
        Ok(PowerFlowSpec { buses })
    }

    /// One tick of truth. The frame is rotated so the command's sink (the
    /// slack when idle) keeps its operating-point angle.
    pub fn step(&mut self, cmd: Option<&InjectionCommand>, rng: &mut ChaCha8Rng, ambient_sigma: f64) -> Result<PhasorState> {
        let loads = perturb_loads(&self.loads, ambient_sigma, rng);
        let spec = self.spec(&loads, cmd)?;
        let opts = AcOptions {
            warm_start: Some(self.warm.clone()),
            ..AcOptions::default()
        };
        let sol = ac_solve(&self.network, &spec, &opts)?;
        self.warm = sol.state.v.clone();
        if self.ticks % 100 == 0 {
            self.check_balance(&sol.state, &spec)?;
        }
        self.ticks += 1;
        let pin = match cmd {
            Some(c) => self.network.index_of(c.t)?,
            None => self.network.index_of(self.network.slack)?,
        };
        let mut state = sol.state;
        let angle = self.ref_angles[pin] - state.v[pin].arg();
        state.rotate(angle);
        Ok(state)
    }

    fn check_balance(&self, state: &PhasorState, spec: &PowerFlowSpec) -> Result<()> {
        let inj = bus_injections(&self.network, state)?;
        let mut worst: f64 = 0.0;
        for (s, spec) in inj.iter().zip(&spec.buses) {
            match *spec {
                BusSpec::Pq { s: target } => worst = worst.max((s.re - target.re).abs()).max((s.im - target.im).abs()),
                BusSpec::Pv { p, .. } => worst = worst.max((s.re - p).abs()),
                BusSpec::Slack { .. } => {}
            }
        }
        if worst > 1e-8 {
            return Err(Error::Divergence {
                iterations: 0,
                residual: worst,
            });
        }
        Ok(())
    }
}

/// Random streams used by one scenario, split so that changing one consumer
/// never shifts another's draws.
pub(crate) struct Streams {
    pub ambient: ChaCha8Rng,
    pub sensor: ChaCha8Rng,
    pub defense: ChaCha8Rng,
    pub attack_seed: u64,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        let make = |stream: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(stream);
            r
        };
        Streams {
            ambient: make(1),
            sensor: make(2),
            defense: make(3),
            attack_seed: seed ^ 0x5DEE_CE66_D1CE_4E5B,
        }
    }
}

/// Truth, sensors and attacker combined into the stream the control center
/// receives.
pub struct ScenarioSource {
    network: Network,
    physics: TruePhysics,
    attack: Option<AttackStream>,
    sensor: SensorModel,
    ambient_sigma: f64,
    ambient: ChaCha8Rng,
    sensor_rng: ChaCha8Rng,
    attack_seed: u64,
    tick: usize,
    last_truth: Option<PhasorState>,
}

impl ScenarioSource {
    pub(crate) fn new(
        network: &Network,
        base: &OperatingPoint,
        attack: Option<AttackStream>,
        sensor: SensorModel,
        ambient_sigma: f64,
        streams: &mut Streams,
    ) -> Result<Self> {
        sensor.validate()?;
        if !(ambient_sigma >= 0.0 && ambient_sigma.is_finite()) {
            return Err(Error::Config(format!("ambient sigma {ambient_sigma} must be nonnegative")));
        }
        let physics = match &attack {
            Some(a) => {
                a.validate(network)?;
                TruePhysics::attacked(network, a)?
            }
            None => TruePhysics::new(network, base)?,
        };
        Ok(ScenarioSource {
            network: network.clone(),
            physics,
            attack,
            sensor,
            ambient_sigma,
            ambient: streams.ambient.clone(),
            sensor_rng: streams.sensor.clone(),
            attack_seed: streams.attack_seed,
            tick: 0,
            last_truth: None,
        })
    }

    pub fn tick(&self) -> usize {
        self.tick
    }

    /// True state behind the most recent observation.
    pub fn last_truth(&self) -> Option<&PhasorState> {
        self.last_truth.as_ref()
    }

    fn observe_inner(&mut self, cmd: Option<&InjectionCommand>) -> Result<PhasorState> {
        let truth = self.physics.step(cmd, &mut self.ambient, self.ambient_sigma)?;
        let mut out = truth.clone().with_role(Role::Reported);
        for v in out.v.iter_mut() {
            *v = sensor_sample(*v, &self.sensor, &mut self.sensor_rng);
        }
        for pair in out.i.iter_mut() {
            for c in pair.iter_mut() {
                *c = sensor_sample(*c, &self.sensor, &mut self.sensor_rng);
            }
        }
        if let Some(stream) = &self.attack {
            let frame = sample_at(stream, &self.network, self.tick, self.attack_seed)?;
            for (&k, &v) in &frame.v {
                out.v[self.network.index_of(k)?] = v;
            }
            for (&(l, end), &c) in &frame.i {
                out.i[l][end.index()] = c;
            }
        }
        self.last_truth = Some(truth);
        Ok(out)
    }
}

impl PhasorSource for ScenarioSource {
    fn network(&self) -> &Network {
        &self.network
    }

    fn observe(&mut self, cmd: Option<&InjectionCommand>) -> Result<PhasorState> {
        let tick = self.tick;
        let out = self.observe_inner(cmd).map_err(|e| Error::ScenarioAborted {
            tick,
            source: Box::new(e),
        })?;
        self.tick += 1;
        Ok(out)
    }
}
