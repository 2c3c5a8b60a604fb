use std::collections::BTreeSet;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{AttackSpec, InitialAttackSolution};
use crate::grid::{admittance_unchecked, bus_injections, Network, PhasorState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst violation found; zero when nothing is violated.
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub tolerance: f64,
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.checks.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            let mark = if c.passed { "ok" } else { "FAIL" };
            write!(f, "{} {mark} ({:.2e})", c.name, c.residual)?;
        }
        Ok(())
    }
}

/// Running maximum of a violation measure. NaN counts as infinite.
#[derive(Default)]
struct Worst(f64);

impl Worst {
    fn see(&mut self, v: f64) {
        if v.is_nan() {
            self.0 = f64::INFINITY;
        } else {
            self.0 = self.0.max(v);
        }
    }

    fn above(&mut self, value: f64, bound: f64) {
        if bound.is_finite() {
            self.see(value - bound);
        }
    }

    fn below(&mut self, value: f64, bound: f64) {
        if bound.is_finite() {
            self.see(bound - value);
        }
    }
}

pub const BALANCE: &str = "balance";
pub const REPORTED_LIMITS: &str = "reported-limits";
pub const TRUE_LIMITS: &str = "true-limits";
pub const AGC: &str = "agc";
pub const AGREEMENT: &str = "agreement";
pub const OVERLOAD: &str = "overload";

/// Checks an attack solution against the feasibility conditions of a hidden
/// overload. Failures are reported, never raised.
pub fn validate_attack(
    network: &Network,
    spec: &AttackSpec,
    solution: &InitialAttackSolution,
    tolerance: f64,
) -> ValidationReport {
    let checks = match Checker::new(network, spec, solution) {
        Some(c) => vec![
            c.result(BALANCE, c.balance(), tolerance),
            c.result(REPORTED_LIMITS, c.reported_limits(), tolerance),
            c.result(TRUE_LIMITS, c.true_limits(), tolerance),
            c.result(AGC, c.agc(), tolerance),
            c.result(AGREEMENT, c.agreement(), tolerance),
            c.overload(),
        ],
        None => [BALANCE, REPORTED_LIMITS, TRUE_LIMITS, AGC, AGREEMENT, OVERLOAD]
            .iter()
            .map(|n| CheckResult {
                name: n.to_string(),
                passed: false,
                residual: f64::INFINITY,
            })
            .collect(),
    };
    ValidationReport { tolerance, checks }
}

struct Checker<'a> {
    net: &'a Network,
    cut_net: Network,
    spec: &'a AttackSpec,
    sol: &'a InitialAttackSolution,
    in_zone: Vec<bool>,
    interior: Vec<bool>,
    inj_t: Vec<Complex64>,
    inj_r: Vec<Complex64>,
}

impl<'a> Checker<'a> {
    /// `None` when the solution is structurally unusable for this network.
    fn new(net: &'a Network, spec: &'a AttackSpec, sol: &'a InitialAttackSolution) -> Option<Self> {
        let cut_net = net.without_lines(&spec.cut_lines).ok()?;
        sol.true_state.check_shape(net).ok()?;
        sol.reported_state.check_shape(net).ok()?;
        let mut in_zone = vec![false; net.n_buses()];
        let mut interior = vec![false; net.n_buses()];
        for &k in &spec.zone {
            let i = net.index_of(k).ok()?;
            in_zone[i] = true;
            interior[i] = !sol.boundary.contains(&k);
        }
        let inj_t = bus_injections(&cut_net, &sol.true_state).ok()?;
        let inj_r = bus_injections(net, &sol.reported_state).ok()?;
        Some(Checker {
            net,
            cut_net,
            spec,
            sol,
            in_zone,
            interior,
            inj_t,
            inj_r,
        })
    }

    fn result(&self, name: &str, worst: f64, tolerance: f64) -> CheckResult {
        CheckResult {
            name: name.to_string(),
            passed: worst <= tolerance,
            residual: worst,
        }
    }

    /// Net injection outside the zone implied by the base point and the AGC
    /// response.
    fn expected_injection(&self, i: usize) -> Complex64 {
        let bus = &self.net.buses[i];
        let base = self.sol.base.net_injection(self.net, i);
        match self.sol.responder_dispatch.get(&bus.id) {
            Some(&(p, q)) => Complex64::new(p, q) - self.sol.base.loads[i],
            None => base,
        }
    }

    fn consistency(&self, net: &Network, state: &PhasorState, w: &mut Worst) {
        for (l, line) in net.lines.iter().enumerate() {
            let (a, b) = if line.in_service {
                let i = net.index_of(line.from).unwrap();
                let j = net.index_of(line.to).unwrap();
                admittance_unchecked(line).currents(state.v[i], state.v[j])
            } else {
                Default::default()
            };
            w.see((state.i[l][0] - a).norm());
            w.see((state.i[l][1] - b).norm());
        }
    }

    fn balance(&self) -> f64 {
        let mut w = Worst::default();
        self.consistency(&self.cut_net, &self.sol.true_state, &mut w);
        self.consistency(self.net, &self.sol.reported_state, &mut w);
        for (i, bus) in self.net.buses.iter().enumerate() {
            if self.in_zone[i] {
                let t = self.sol.true_loads.get(&bus.id);
                let r = self.sol.reported_loads.get(&bus.id);
                match (t, r) {
                    (Some(&t), Some(&r)) => {
                        w.see((self.inj_t[i] + t).norm());
                        w.see((self.inj_r[i] + r).norm());
                    }
                    _ => w.see(f64::INFINITY),
                }
            } else {
                let e = self.expected_injection(i);
                w.see((self.inj_t[i] - e).norm());
                w.see((self.inj_r[i] - e).norm());
            }
        }
        w.0
    }

    fn generation(&self, i: usize, inj: Complex64) -> Complex64 {
        let bus = &self.net.buses[i];
        match self.sol.responder_dispatch.get(&bus.id) {
            Some(&(p, _)) => Complex64::new(p, inj.im + self.sol.base.loads[i].im),
            None => inj + self.sol.base.loads[i],
        }
    }

    fn state_limits(&self, state: &PhasorState, inj: &[Complex64], lines: &[usize], w: &mut Worst) {
        for (i, bus) in self.net.buses.iter().enumerate() {
            let m = state.v[i].norm();
            w.above(m, bus.v_max);
            w.below(m, bus.v_min);
            if let Some(g) = self.net.generator_at(bus.id) {
                let s = self.generation(i, inj[i]);
                w.above(s.re, g.p_max);
                w.below(s.re, g.p_min);
                w.above(s.im, g.q_max);
                w.below(s.im, g.q_min);
            }
        }
        for &l in lines {
            let line = &self.net.lines[l];
            let i = self.net.index_of(line.from).unwrap();
            let j = self.net.index_of(line.to).unwrap();
            let d = (state.v[i] / state.v[j]).arg().abs();
            if line.theta_max < std::f64::consts::PI {
                w.above(d, line.theta_max);
            }
        }
    }

    fn flows(&self, state: &PhasorState, lines: impl Iterator<Item = usize>, w: &mut Worst) {
        for l in lines {
            let line = &self.net.lines[l];
            let i = self.net.index_of(line.from).unwrap();
            let j = self.net.index_of(line.to).unwrap();
            let s1 = (state.v[i] * state.i[l][0].conj()).norm();
            let s2 = (state.v[j] * state.i[l][1].conj()).norm();
            w.above(s1.max(s2), line.s_max);
        }
    }

    fn reported_limits(&self) -> f64 {
        let mut w = Worst::default();
        let lines: Vec<usize> = (0..self.net.lines.len())
            .filter(|&l| self.net.lines[l].in_service)
            .collect();
        self.state_limits(&self.sol.reported_state, &self.inj_r, &lines, &mut w);
        self.flows(&self.sol.reported_state, lines.iter().copied(), &mut w);
        for s in self.sol.reported_loads.values() {
            w.see(-s.re);
        }
        w.0
    }

    fn true_limits(&self) -> f64 {
        let mut w = Worst::default();
        let lines: Vec<usize> = (0..self.net.lines.len())
            .filter(|&l| self.cut_net.lines[l].in_service)
            .collect();
        self.state_limits(&self.sol.true_state, &self.inj_t, &lines, &mut w);
        let outside = lines.iter().copied().filter(|&l| {
            let line = &self.net.lines[l];
            let i = self.net.index_of(line.from).unwrap();
            let j = self.net.index_of(line.to).unwrap();
            !(self.in_zone[i] && self.in_zone[j])
        });
        self.flows(&self.sol.true_state, outside, &mut w);
        for s in self.sol.true_loads.values() {
            w.see(-s.re);
        }
        w.0
    }

    fn agc(&self) -> f64 {
        let mut w = Worst::default();
        let delta = self.sol.agc_delta;
        let mut total = 0.0;
        for (&k, &a) in &self.net.participation {
            let Some(&(p, _)) = self.sol.responder_dispatch.get(&k) else {
                w.see(f64::INFINITY);
                continue;
            };
            let base = self.sol.base.generation.get(&k).map_or(0.0, |g| g.re);
            w.see((p - base - a * delta).abs());
            total += p - base;
        }
        if !self.net.participation.is_empty() {
            w.see((total - delta).abs());
        } else {
            w.see(delta.abs());
        }
        w.0
    }

    fn agreement(&self) -> f64 {
        let mut w = Worst::default();
        let (t, r) = (&self.sol.true_state, &self.sol.reported_state);
        for i in 0..self.net.n_buses() {
            if !self.interior[i] {
                w.see((t.v[i] - r.v[i]).norm());
            }
        }
        let cut: &BTreeSet<usize> = &self.spec.cut_lines;
        for (l, line) in self.net.lines.iter().enumerate() {
            if !line.in_service || cut.contains(&l) {
                continue;
            }
            let i = self.net.index_of(line.from).unwrap();
            let j = self.net.index_of(line.to).unwrap();
            if !self.interior[i] && !self.interior[j] {
                w.see((t.i[l][0] - r.i[l][0]).norm());
                w.see((t.i[l][1] - r.i[l][1]).norm());
            }
        }
        w.0
    }

    fn overload(&self) -> CheckResult {
        let s_max = self.net.lines[self.spec.target].s_max;
        let limit = s_max * s_max;
        let objective = super::target_flow(self.net, self.spec, &self.sol.true_state)
            .map(|s| s.norm_sqr())
            .unwrap_or(f64::NAN);
        CheckResult {
            name: OVERLOAD.to_string(),
            passed: objective > limit,
            residual: if objective > limit { 0.0 } else { limit - objective },
        }
    }
}
