use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::admittance::admittance_unchecked;
use super::network::Network;
use super::state::{PhasorState, Role};
use crate::error::{Error, Result};

/// What is held fixed at a bus during a power flow solve. Injections are net
/// (generation minus load), per unit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum BusSpec {
    Slack { v: Complex64 },
    Pv { p: f64, v_mag: f64 },
    Pq { s: Complex64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSpec {
    /// By bus position.
    pub buses: Vec<BusSpec>,
}

impl PowerFlowSpec {
    /// Generators hold `v_set` and inject `p_set`; the slack holds `v_set∠0`.
    pub fn from_network(network: &Network) -> Result<Self> {
        let mut buses: Vec<BusSpec> = network
            .buses
            .iter()
            .map(|b| BusSpec::Pq {
                s: Complex64::new(-b.p_load, -b.q_load),
            })
            .collect();
        for g in &network.generators {
            let i = network.index_of(g.bus)?;
            let bus = &network.buses[i];
            buses[i] = if g.bus == network.slack {
                BusSpec::Slack {
                    v: Complex64::new(g.v_set, 0.0),
                }
            } else {
                BusSpec::Pv {
                    p: g.p_set - bus.p_load,
                    v_mag: g.v_set,
                }
            };
        }
        Ok(PowerFlowSpec { buses })
    }

    /// Fixes every bus as PQ with the given net injections except the slack.
    pub fn with_injections(network: &Network, injections: &[Complex64], slack_v: Complex64) -> Result<Self> {
        let s = network.index_of(network.slack)?;
        let buses = injections
            .iter()
            .enumerate()
            .map(|(i, &inj)| if i == s { BusSpec::Slack { v: slack_v } } else { BusSpec::Pq { s: inj } })
            .collect();
        Ok(PowerFlowSpec { buses })
    }

    fn validate(&self, network: &Network) -> Result<()> {
        if self.buses.len() != network.n_buses() {
            return Err(Error::InvalidSpec(format!(
                "{} bus specifications for {} buses",
                self.buses.len(),
                network.n_buses()
            )));
        }
        let slacks = self
            .buses
            .iter()
            .filter(|b| matches!(b, BusSpec::Slack { .. }))
            .count();
        if slacks != 1 {
            return Err(Error::InvalidSpec(format!("expected exactly one slack bus, found {slacks}")));
        }
        for (b, spec) in network.buses.iter().zip(&self.buses) {
            match *spec {
                BusSpec::Pv { p, v_mag } => {
                    if !(v_mag >= b.v_min && v_mag <= b.v_max) || !p.is_finite() {
                        return Err(Error::InvalidSpec(format!(
                            "bus {}: voltage target {v_mag} outside [{}, {}]",
                            b.id, b.v_min, b.v_max
                        )));
                    }
                }
                BusSpec::Pq { s } if !(s.re.is_finite() && s.im.is_finite()) => {
                    return Err(Error::InvalidSpec(format!("bus {}: non-finite injection", b.id)));
                }
                BusSpec::Slack { v } if !(v.norm() > 0.0 && v.norm().is_finite()) => {
                    return Err(Error::InvalidSpec(format!("bus {}: bad slack voltage", b.id)));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AcOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub warm_start: Option<Vec<Complex64>>,
}

impl Default for AcOptions {
    fn default() -> Self {
        AcOptions {
            tolerance: 1e-8,
            max_iterations: 50,
            warm_start: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AcSolution {
    pub state: PhasorState,
    pub iterations: usize,
    /// Infinity norm of the final mismatch, per unit.
    pub residual: f64,
    /// Net complex injection at every bus, by position.
    pub injections: Vec<Complex64>,
}

/// Dense bus admittance matrix over in-service lines.
pub fn bus_admittance(network: &Network) -> DMatrix<Complex64> {
    let n = network.n_buses();
    let mut y = DMatrix::from_element(n, n, Complex64::default());
    for line in network.lines.iter().filter(|l| l.in_service) {
        let f = network.index_of(line.from).unwrap();
        let t = network.index_of(line.to).unwrap();
        let a = admittance_unchecked(line);
        y[(f, f)] += a.y11;
        y[(f, t)] += a.y12;
        y[(t, f)] += a.y21;
        y[(t, t)] += a.y22;
    }
    y
}

/// Newton–Raphson power flow in polar coordinates. Holds the bus admittance
/// matrix so repeated solves on one network skip the rebuild.
#[derive(Clone, Debug)]
pub struct AcSolver<'a> {
    network: &'a Network,
    ybus: DMatrix<Complex64>,
}

impl<'a> AcSolver<'a> {
    pub fn new(network: &'a Network) -> Self {
        AcSolver {
            network,
            ybus: bus_admittance(network),
        }
    }

    pub fn ybus(&self) -> &DMatrix<Complex64> {
        &self.ybus
    }

    pub fn solve(&self, spec: &PowerFlowSpec, opts: &AcOptions) -> Result<AcSolution> {
        spec.validate(self.network)?;
        let n = self.network.n_buses();
        let mut pvpq = Vec::new();
        let mut pq = Vec::new();
        let mut target = vec![Complex64::default(); n];
        let mut v: Vec<Complex64> = match &opts.warm_start {
            Some(w) if w.len() == n => w.clone(),
            Some(w) => {
                return Err(Error::InvalidSpec(format!("warm start has {} entries for {n} buses", w.len())));
            }
            None => vec![Complex64::new(1.0, 0.0); n],
        };
        for (i, spec) in spec.buses.iter().enumerate() {
            match *spec {
                BusSpec::Slack { v: vs } => v[i] = vs,
                BusSpec::Pv { p, v_mag } => {
                    pvpq.push(i);
                    target[i] = Complex64::new(p, 0.0);
                    v[i] = Complex64::from_polar(v_mag, v[i].arg());
                }
                BusSpec::Pq { s } => {
                    pvpq.push(i);
                    pq.push(i);
                    target[i] = s;
                }
            }
        }

        let mismatch = |v: &[Complex64]| -> DVector<f64> {
            let s = injections(&self.ybus, v);
            let mut f = DVector::zeros(pvpq.len() + pq.len());
            for (r, &i) in pvpq.iter().enumerate() {
                f[r] = s[i].re - target[i].re;
            }
            for (r, &i) in pq.iter().enumerate() {
                f[pvpq.len() + r] = s[i].im - target[i].im;
            }
            f
        };

        let mut f = mismatch(&v);
        let mut norm = f.amax();
        let mut iterations = 0;
        while norm > opts.tolerance {
            if iterations >= opts.max_iterations || !norm.is_finite() {
                return Err(Error::Divergence {
                    iterations,
                    residual: norm,
                });
            }
            iterations += 1;
            let jac = jacobian(&self.ybus, &v, &pvpq, &pq);
            let dx = jac.lu().solve(&(-&f)).ok_or_else(|| Error::Divergence {
                iterations,
                residual: norm,
            })?;

            let mut step = 1.0;
            let mut trial;
            let mut trial_f;
            let mut halvings = 0;
            loop {
                trial = v.clone();
                apply_step(&mut trial, &dx, step, &pvpq, &pq);
                trial_f = mismatch(&trial);
                let trial_norm = trial_f.amax();
                if trial_norm <= norm || halvings == 4 {
                    break;
                }
                step *= 0.5;
                halvings += 1;
            }
            v = trial;
            f = trial_f;
            norm = f.amax();
        }

        let state = PhasorState::from_voltages(self.network, v, Role::True)?;
        Ok(AcSolution {
            injections: injections(&self.ybus, &state.v),
            state,
            iterations,
            residual: norm,
        })
    }
}

pub fn ac_solve(network: &Network, spec: &PowerFlowSpec, opts: &AcOptions) -> Result<AcSolution> {
    AcSolver::new(network).solve(spec, opts)
}

pub(crate) fn injections(ybus: &DMatrix<Complex64>, v: &[Complex64]) -> Vec<Complex64> {
    let n = v.len();
    (0..n)
        .map(|r| {
            let mut i = Complex64::default();
            for c in 0..n {
                i += ybus[(r, c)] * v[c];
            }
            v[r] * i.conj()
        })
        .collect()
}

fn apply_step(v: &mut [Complex64], dx: &DVector<f64>, step: f64, pvpq: &[usize], pq: &[usize]) {
    for (r, &i) in pvpq.iter().enumerate() {
        let (m, a) = v[i].to_polar();
        v[i] = Complex64::from_polar(m, a + step * dx[r]);
    }
    for (r, &i) in pq.iter().enumerate() {
        let (m, a) = v[i].to_polar();
        v[i] = Complex64::from_polar(m + step * dx[pvpq.len() + r], a);
    }
}

/// Jacobian of `[P(pvpq); Q(pq)]` with respect to `[θ(pvpq); |V|(pq)]`.
pub(crate) fn jacobian(ybus: &DMatrix<Complex64>, v: &[Complex64], pvpq: &[usize], pq: &[usize]) -> DMatrix<f64> {
    let n = v.len();
    let j = Complex64::new(0.0, 1.0);
    let ibus: Vec<Complex64> = (0..n)
        .map(|r| (0..n).map(|c| ybus[(r, c)] * v[c]).sum())
        .collect();
    let vnorm: Vec<Complex64> = v.iter().map(|x| x / x.norm()).collect();
    let d_va = |r: usize, c: usize| {
        let mut inner = -ybus[(r, c)] * v[c];
        if r == c {
            inner += ibus[r];
        }
        j * v[r] * inner.conj()
    };
    let d_vm = |r: usize, c: usize| {
        let mut out = v[r] * (ybus[(r, c)] * vnorm[c]).conj();
        if r == c {
            out += ibus[r].conj() * vnorm[r];
        }
        out
    };
    let (a, b) = (pvpq.len(), pq.len());
    let mut jac = DMatrix::zeros(a + b, a + b);
    for (ri, &r) in pvpq.iter().enumerate() {
        for (ci, &c) in pvpq.iter().enumerate() {
            jac[(ri, ci)] = d_va(r, c).re;
        }
        for (ci, &c) in pq.iter().enumerate() {
            jac[(ri, a + ci)] = d_vm(r, c).re;
        }
    }
    for (ri, &r) in pq.iter().enumerate() {
        for (ci, &c) in pvpq.iter().enumerate() {
            jac[(a + ri, ci)] = d_va(r, c).im;
        }
        for (ci, &c) in pq.iter().enumerate() {
            jac[(a + ri, a + ci)] = d_vm(r, c).im;
        }
    }
    jac
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::network::testnets::*;
    use crate::grid::network::Line;
    use crate::grid::state::bus_injection;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_bus_is_flat() {
        let net = Network::new("one", 100.0, vec![gen_bus(1)], vec![], vec![generator(1, 0.0)], 1, None).unwrap();
        let sol = ac_solve(&net, &PowerFlowSpec::from_network(&net).unwrap(), &AcOptions::default()).unwrap();
        assert_eq!(sol.state.v, vec![Complex64::new(1.0, 0.0)]);
        assert_eq!(sol.residual, 0.0);
        assert_eq!(sol.iterations, 0);
    }

    #[test]
    fn two_bus_load_is_reproduced() {
        let buses = vec![gen_bus(1), pq_bus(2, 0.5, 0.1)];
        let lines = vec![Line::series(1, 2, 0.02, 0.2)];
        let net = Network::new("two", 100.0, buses, lines, vec![generator(1, 0.0)], 1, None).unwrap();
        let sol = ac_solve(&net, &PowerFlowSpec::from_network(&net).unwrap(), &AcOptions::default()).unwrap();
        assert!(sol.residual <= 1e-8);
        let s2 = bus_injection(&net, &sol.state, 2).unwrap();
        assert!((s2 - Complex64::new(-0.5, -0.1)).norm() < 1e-8);
    }

    #[test]
    fn lossless_transfer_balances() {
        let buses = vec![gen_bus(1), pq_bus(2, 1.0, 0.0)];
        let lines = vec![Line::series(1, 2, 0.0, 0.1)];
        let net = Network::new("two", 100.0, buses, lines, vec![generator(1, 0.0)], 1, None).unwrap();
        let sol = ac_solve(&net, &PowerFlowSpec::from_network(&net).unwrap(), &AcOptions::default()).unwrap();
        let s1 = bus_injection(&net, &sol.state, 1).unwrap();
        let s2 = bus_injection(&net, &sol.state, 2).unwrap();
        assert!((s1.re - 1.0).abs() < 1e-8);
        assert!((s2.re + 1.0).abs() < 1e-8);
    }

    #[test]
    fn divergence_reports_residual() {
        // far beyond the transfer capability of the line
        let buses = vec![gen_bus(1), pq_bus(2, 50.0, 0.0)];
        let lines = vec![Line::series(1, 2, 0.0, 0.5)];
        let net = Network::new("two", 100.0, buses, lines, vec![generator(1, 0.0)], 1, None).unwrap();
        let err = ac_solve(&net, &PowerFlowSpec::from_network(&net).unwrap(), &AcOptions::default()).unwrap_err();
        match err {
            Error::Divergence { residual, .. } => assert!(residual > 1.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn spec_needs_one_slack() {
        let net = path(2, 0.5);
        let spec = PowerFlowSpec {
            buses: vec![BusSpec::Pq { s: Complex64::default() }; 2],
        };
        assert!(matches!(
            ac_solve(&net, &spec, &AcOptions::default()),
            Err(Error::InvalidSpec(_))
        ));
    }

    fn mixed_network(rng: &mut ChaCha8Rng) -> Network {
        let n = 6;
        let mut buses = vec![gen_bus(1), gen_bus(2)];
        buses.extend((3..=n).map(|i| pq_bus(i, 0.2, 0.05)));
        let mut lines: Vec<Line> = (1..n).map(|i| Line::series(i, i + 1, 0.01, 0.1)).collect();
        lines.push(Line {
            b_charge: 0.05,
            tap_ratio: 1.03,
            phase_shift: 0.04,
            ..Line::series(1, 4, 0.02, 0.15)
        });
        lines.push(Line::series(2, 6, 0.03, 0.2));
        for l in &mut lines {
            l.x *= rng.random_range(0.7..1.3);
        }
        Network::new("mixed", 100.0, buses, lines, vec![generator(1, 0.0), generator(2, 0.5)], 1, None).unwrap()
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let net = mixed_network(&mut rng);
            let ybus = bus_admittance(&net);
            let pvpq: Vec<usize> = (1..6).collect();
            let pq: Vec<usize> = (2..6).collect();
            let v: Vec<Complex64> = (0..6)
                .map(|_| Complex64::from_polar(rng.random_range(0.9..1.1), rng.random_range(-0.3..0.3)))
                .collect();
            let eval = |v: &[Complex64]| {
                let s = injections(&ybus, v);
                let mut f: Vec<f64> = pvpq.iter().map(|&i| s[i].re).collect();
                f.extend(pq.iter().map(|&i| s[i].im));
                f
            };
            let jac = jacobian(&ybus, &v, &pvpq, &pq);
            let h = 1e-6;
            let nvar = pvpq.len() + pq.len();
            for c in 0..nvar {
                let perturb = |sign: f64| {
                    let mut w = v.clone();
                    if c < pvpq.len() {
                        let i = pvpq[c];
                        w[i] = Complex64::from_polar(w[i].norm(), w[i].arg() + sign * h);
                    } else {
                        let i = pq[c - pvpq.len()];
                        w[i] = Complex64::from_polar(w[i].norm() + sign * h, w[i].arg());
                    }
                    eval(&w)
                };
                let (fp, fm) = (perturb(1.0), perturb(-1.0));
                for r in 0..nvar {
                    let fd = (fp[r] - fm[r]) / (2.0 * h);
                    let err = (jac[(r, c)] - fd).abs() / jac[(r, c)].abs().max(1.0);
                    worst = worst.max(err);
                }
            }
        }
        assert!(worst <= 1e-6, "worst relative error {worst}");
    }

    #[test]
    fn currents_are_consistent_with_voltages() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = mixed_network(&mut rng);
        let sol = ac_solve(&net, &PowerFlowSpec::from_network(&net).unwrap(), &AcOptions::default()).unwrap();
        let rebuilt = PhasorState::from_voltages(&net, sol.state.v.clone(), Role::True).unwrap();
        assert_eq!(rebuilt.i, sol.state.i);
        for (i, b) in net.buses.iter().enumerate() {
            let s = bus_injection(&net, &sol.state, b.id).unwrap();
            assert!((s - sol.injections[i]).norm() < 1e-12);
        }
    }
}
