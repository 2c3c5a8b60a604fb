use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::validate::validate_attack;
use super::{boundary_of, target_flow, AttackSpec, InitialAttackSolution};
use crate::error::{Error, Result};
use crate::grid::{
    admittance_unchecked, bus_injections, end_flow, BranchAdmittance, Network, OperatingPoint, PhasorState, Role,
};

#[derive(Clone, Debug)]
pub struct AttackOptions {
    pub max_outer: usize,
    pub max_inner: usize,
    /// Residual allowed by the post-solve validation gate, per unit.
    pub tolerance: f64,
    /// Distance the solver keeps from every inequality bound.
    pub cushion: f64,
}

impl Default for AttackOptions {
    fn default() -> Self {
        AttackOptions {
            max_outer: 200,
            max_inner: 50,
            tolerance: 1e-6,
            cushion: 1e-7,
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Eq,
    Ineq,
    /// The overload requirement; an inequality kept apart for bookkeeping.
    Overload,
}

struct Constraint {
    kind: Kind,
    value: f64,
    grad: Vec<(usize, f64)>,
}

#[derive(Clone, Default)]
struct Lin {
    val: Complex64,
    grad: Vec<(usize, Complex64)>,
}

impl Lin {
    fn add(&mut self, s: Complex64, d: [(Option<usize>, Complex64); 4]) {
        self.val += s;
        for (var, g) in d {
            if let Some(v) = var {
                self.grad.push((v, g));
            }
        }
    }

    fn re(&self) -> Vec<(usize, f64)> {
        self.grad.iter().map(|&(v, g)| (v, g.re)).collect()
    }

    fn im(&self) -> Vec<(usize, f64)> {
        self.grad.iter().map(|&(v, g)| (v, g.im)).collect()
    }
}

struct LineData {
    f: usize,
    t: usize,
    y: BranchAdmittance,
    cut: bool,
    s_max: f64,
    theta_max: f64,
    /// Reported values at either end may differ from the truth.
    reported_differs: bool,
}

#[derive(Clone, Copy)]
enum Pic {
    True,
    Reported,
}

/// Polar variables of both pictures: true magnitudes for every bus, true
/// angles for every bus but the reference, reported magnitude and angle for
/// interior zone buses, and the AGC shift.
struct Problem<'a> {
    net: &'a Network,
    base: &'a OperatingPoint,
    n: usize,
    ref_angle: f64,
    in_zone: Vec<bool>,
    alpha: Vec<Option<f64>>,
    ang_var: Vec<Option<usize>>,
    rep_var: Vec<Option<(usize, usize)>>,
    delta_var: usize,
    nvar: usize,
    ref_idx: usize,
    lines: Vec<LineData>,
    target: usize,
    overload_level: f64,
}

impl<'a> Problem<'a> {
    fn new(net: &'a Network, spec: &AttackSpec, base: &'a OperatingPoint) -> Result<Self> {
        let n = net.n_buses();
        let boundary = boundary_of(net, &spec.zone)?;
        let ref_idx = net.index_of(net.slack)?;
        let mut in_zone = vec![false; n];
        let mut interior = vec![false; n];
        for &k in &spec.zone {
            let i = net.index_of(k)?;
            in_zone[i] = true;
            interior[i] = !boundary.contains(&k);
        }
        let mut alpha = vec![None; n];
        for (&k, &a) in &net.participation {
            alpha[net.index_of(k)?] = Some(a);
        }
        let mut nvar = n;
        let mut ang_var = vec![None; n];
        for (i, slot) in ang_var.iter_mut().enumerate() {
            if i != ref_idx {
                *slot = Some(nvar);
                nvar += 1;
            }
        }
        let mut rep_var = vec![None; n];
        for (i, slot) in rep_var.iter_mut().enumerate() {
            if interior[i] {
                *slot = Some((nvar, nvar + 1));
                nvar += 2;
            }
        }
        let delta_var = nvar;
        nvar += 1;

        let mut lines = Vec::new();
        let mut target = usize::MAX;
        for (l, line) in net.lines.iter().enumerate() {
            if !line.in_service {
                continue;
            }
            let f = net.index_of(line.from)?;
            let t = net.index_of(line.to)?;
            if l == spec.target {
                target = lines.len();
            }
            let cut = spec.cut_lines.contains(&l);
            lines.push(LineData {
                f,
                t,
                y: admittance_unchecked(line),
                cut,
                s_max: line.s_max,
                theta_max: line.theta_max,
                reported_differs: interior[f] || interior[t] || cut,
            });
        }
        let s_max = net.line(spec.target)?.s_max;
        Ok(Problem {
            net,
            base,
            n,
            ref_angle: base.state.v[ref_idx].arg(),
            in_zone,
            alpha,
            ang_var,
            rep_var,
            delta_var,
            nvar,
            ref_idx,
            lines,
            target,
            overload_level: (1.0 + spec.overload_margin) * s_max,
        })
    }

    fn initial_point(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.nvar];
        for (i, v) in self.base.state.v.iter().enumerate() {
            x[i] = v.norm();
            if let Some(a) = self.ang_var[i] {
                x[a] = v.arg();
            }
            if let Some((m, a)) = self.rep_var[i] {
                x[m] = v.norm();
                x[a] = v.arg();
            }
        }
        x
    }

    /// Magnitude, angle and their variable indices at a bus.
    fn polar(&self, x: &[f64], i: usize, pic: Pic) -> (f64, f64, Option<usize>, Option<usize>) {
        if let (Pic::Reported, Some((m, a))) = (pic, self.rep_var[i]) {
            return (x[m], x[a], Some(m), Some(a));
        }
        let ang = match self.ang_var[i] {
            Some(a) => x[a],
            None => self.ref_angle,
        };
        (x[i], ang, Some(i), self.ang_var[i])
    }

    /// Power entering line `ld` at its from (`near_from`) or to end.
    fn end(&self, x: &[f64], ld: &LineData, pic: Pic, near_from: bool) -> (Complex64, [(Option<usize>, Complex64); 4]) {
        let (near, far, y_nn, y_nf) = if near_from {
            (ld.f, ld.t, ld.y.y11, ld.y.y12)
        } else {
            (ld.t, ld.f, ld.y.y22, ld.y.y21)
        };
        let (a, alpha, va, vt) = self.polar(x, near, pic);
        let (b, beta, vb, vu) = self.polar(x, far, pic);
        let ef = end_flow(y_nn, y_nf, a, alpha, b, beta);
        (ef.s, [(va, ef.d[0]), (vt, ef.d[1]), (vb, ef.d[2]), (vu, ef.d[3])])
    }

    fn constraints(&self, x: &[f64]) -> Vec<Constraint> {
        let net = self.net;
        let n = self.n;
        let mut inj_t = vec![Lin::default(); n];
        let mut inj_r = vec![Lin::default(); n];
        for ld in &self.lines {
            for near_from in [true, false] {
                let near = if near_from { ld.f } else { ld.t };
                if !ld.cut {
                    let (s, d) = self.end(x, ld, Pic::True, near_from);
                    inj_t[near].add(s, d);
                }
                if self.in_zone[near] {
                    let (s, d) = self.end(x, ld, Pic::Reported, near_from);
                    inj_r[near].add(s, d);
                }
            }
        }

        let mut out = Vec::new();
        let dv = self.delta_var;
        for i in 0..n {
            if self.in_zone[i] {
                continue;
            }
            let target = self.base.net_injection(net, i);
            if let Some(a) = self.alpha[i] {
                let mut grad = inj_t[i].re();
                grad.push((dv, -a));
                out.push(Constraint {
                    kind: Kind::Eq,
                    value: inj_t[i].val.re - target.re - a * x[dv],
                    grad,
                });
            } else {
                out.push(Constraint {
                    kind: Kind::Eq,
                    value: inj_t[i].val.re - target.re,
                    grad: inj_t[i].re(),
                });
                out.push(Constraint {
                    kind: Kind::Eq,
                    value: inj_t[i].val.im - target.im,
                    grad: inj_t[i].im(),
                });
            }
        }

        let ineq = |out: &mut Vec<Constraint>, value: f64, grad: Vec<(usize, f64)>| {
            out.push(Constraint {
                kind: Kind::Ineq,
                value,
                grad,
            })
        };
        for i in 0..n {
            if self.in_zone[i] {
                // nonnegative true and reported active load
                ineq(&mut out, inj_t[i].val.re, inj_t[i].re());
                ineq(&mut out, inj_r[i].val.re, inj_r[i].re());
            }
            if let Some(a) = self.alpha[i] {
                let bus = &net.buses[i];
                let gen = net.generator_at(bus.id).expect("responders are generator buses");
                let qg = inj_t[i].val.im + self.base.loads[i].im;
                if gen.q_max.is_finite() {
                    ineq(&mut out, qg - gen.q_max, inj_t[i].im());
                }
                if gen.q_min.is_finite() {
                    let g: Vec<_> = inj_t[i].im().into_iter().map(|(v, d)| (v, -d)).collect();
                    ineq(&mut out, gen.q_min - qg, g);
                }
                let pg = self.base.generation[&bus.id].re + a * x[dv];
                if gen.p_max.is_finite() {
                    ineq(&mut out, pg - gen.p_max, vec![(dv, a)]);
                }
                if gen.p_min.is_finite() {
                    ineq(&mut out, gen.p_min - pg, vec![(dv, -a)]);
                }
            }
            let bus = &net.buses[i];
            ineq(&mut out, x[i] - bus.v_max, vec![(i, 1.0)]);
            ineq(&mut out, bus.v_min - x[i], vec![(i, -1.0)]);
            if let Some((m, _)) = self.rep_var[i] {
                ineq(&mut out, x[m] - bus.v_max, vec![(m, 1.0)]);
                ineq(&mut out, bus.v_min - x[m], vec![(m, -1.0)]);
            }
        }

        for ld in &self.lines {
            if ld.theta_max < std::f64::consts::PI {
                let mut pics = Vec::new();
                if !ld.cut {
                    pics.push(Pic::True);
                }
                if ld.reported_differs {
                    pics.push(Pic::Reported);
                }
                for pic in pics {
                    let (_, af, _, vf) = self.polar(x, ld.f, pic);
                    let (_, at, _, vt) = self.polar(x, ld.t, pic);
                    let mut g = Vec::new();
                    if let Some(v) = vf {
                        g.push((v, 1.0));
                    }
                    if let Some(v) = vt {
                        g.push((v, -1.0));
                    }
                    let neg: Vec<_> = g.iter().map(|&(v, d)| (v, -d)).collect();
                    ineq(&mut out, af - at - ld.theta_max, g);
                    ineq(&mut out, at - af - ld.theta_max, neg);
                }
            }
            if ld.s_max.is_finite() {
                for near_from in [true, false] {
                    let (s, d) = self.end(x, ld, Pic::Reported, near_from);
                    ineq(&mut out, (s.norm_sqr() - ld.s_max * ld.s_max) / (2.0 * ld.s_max), sq_grad(s, &d, 1.0 / ld.s_max));
                }
            }
        }

        let ld = &self.lines[self.target];
        let (s, d) = self.end(x, ld, Pic::True, true);
        let lvl = self.overload_level;
        out.push(Constraint {
            kind: Kind::Overload,
            value: (lvl * lvl - s.norm_sqr()) / (2.0 * lvl),
            grad: sq_grad(s, &d, -1.0 / lvl),
        });
        out
    }

    fn objective(&self, x: &[f64]) -> f64 {
        self.end(x, &self.lines[self.target], Pic::True, true).0.norm_sqr()
    }

    fn voltages(&self, x: &[f64], pic: Pic) -> Vec<Complex64> {
        (0..self.n)
            .map(|i| {
                let (m, a, _, _) = self.polar(x, i, pic);
                Complex64::from_polar(m, a)
            })
            .collect()
    }
}

/// Gradient of `scale·|s|²/2` given the gradient of `s`.
fn sq_grad(s: Complex64, d: &[(Option<usize>, Complex64); 4], scale: f64) -> Vec<(usize, f64)> {
    d.iter()
        .filter_map(|&(v, g)| v.map(|v| (v, scale * (s.re * g.re + s.im * g.im))))
        .collect()
}

struct Penalty {
    lambda: Vec<f64>,
    rho: f64,
    cushion: f64,
}

impl Penalty {
    /// Shifted residual of one constraint; `None` when an inequality is
    /// inactive.
    fn residual(&self, k: usize, c: &Constraint) -> Option<f64> {
        let shift = self.lambda[k] / self.rho;
        match c.kind {
            Kind::Eq => Some(c.value + shift),
            Kind::Ineq | Kind::Overload => {
                let r = c.value + self.cushion + shift;
                (r > 0.0).then_some(r)
            }
        }
    }

    fn merit(&self, cs: &[Constraint]) -> f64 {
        cs.iter()
            .enumerate()
            .filter_map(|(k, c)| self.residual(k, c))
            .map(|r| r * r)
            .sum()
    }
}

fn violation(cs: &[Constraint], include_overload: bool) -> f64 {
    cs.iter()
        .filter(|c| include_overload || c.kind != Kind::Overload)
        .map(|c| match c.kind {
            Kind::Eq => c.value.abs(),
            _ => c.value.max(0.0),
        })
        .fold(0.0, f64::max)
}

/// Damped Gauss-Newton (Levenberg-Marquardt) on the shifted penalty.
fn minimize(p: &Problem, pen: &Penalty, x: &mut Vec<f64>, max_iter: usize) {
    let nv = p.nvar;
    let mut cs = p.constraints(x);
    let mut f = pen.merit(&cs);
    let mut mu = 1e-6;
    for _ in 0..max_iter {
        if f < 1e-26 {
            return;
        }
        let mut jtj = DMatrix::<f64>::zeros(nv, nv);
        let mut jtr = DVector::<f64>::zeros(nv);
        let mut row = vec![0.0; nv];
        let mut touched = Vec::new();
        for (k, c) in cs.iter().enumerate() {
            let Some(r) = pen.residual(k, c) else { continue };
            for &(v, d) in &c.grad {
                if row[v] == 0.0 {
                    touched.push(v);
                }
                row[v] += d;
            }
            touched.sort_unstable();
            touched.dedup();
            for (a, &i) in touched.iter().enumerate() {
                jtr[i] += row[i] * r;
                for &j in &touched[a..] {
                    let v = row[i] * row[j];
                    jtj[(i, j)] += v;
                }
            }
            for &i in &touched {
                row[i] = 0.0;
            }
            touched.clear();
        }
        for i in 0..nv {
            for j in 0..i {
                jtj[(i, j)] = jtj[(j, i)];
            }
        }
        let diag: Vec<f64> = (0..nv).map(|i| jtj[(i, i)].max(1e-10)).collect();
        loop {
            let mut a = jtj.clone();
            for i in 0..nv {
                a[(i, i)] += mu * diag[i];
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&(-&jtr)),
                None => {
                    mu *= 10.0;
                    if mu > 1e12 {
                        return;
                    }
                    continue;
                }
            };
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let cs_t = p.constraints(&trial);
            let f_t = pen.merit(&cs_t);
            if f_t < f {
                let small = step.amax() < 1e-15;
                *x = trial;
                cs = cs_t;
                let gain = (f - f_t) / f.max(1e-300);
                f = f_t;
                mu = (mu / 3.0).max(1e-15);
                if small || gain < 1e-12 {
                    return;
                }
                break;
            }
            mu *= 4.0;
            if mu > 1e12 {
                return;
            }
        }
    }
}

/// Minimum-norm Newton corrections on the equality constraints alone.
fn polish(p: &Problem, x: &mut [f64]) {
    for _ in 0..6 {
        let cs = p.constraints(x);
        let eqs: Vec<&Constraint> = cs.iter().filter(|c| c.kind == Kind::Eq).collect();
        let worst = eqs.iter().map(|c| c.value.abs()).fold(0.0, f64::max);
        if worst < 1e-13 {
            return;
        }
        let mut j = DMatrix::<f64>::zeros(eqs.len(), p.nvar);
        let mut c = DVector::<f64>::zeros(eqs.len());
        for (r, e) in eqs.iter().enumerate() {
            c[r] = e.value;
            for &(v, d) in &e.grad {
                j[(r, v)] += d;
            }
        }
        let jjt = &j * j.transpose();
        let Some(ch) = jjt.cholesky() else { return };
        let step = j.transpose() * ch.solve(&c);
        for (xi, s) in x.iter_mut().zip(step.iter()) {
            *xi -= s;
        }
    }
}

/// Computes an initial attack hiding an overload on the target line.
///
/// Local augmented-Lagrangian search over the polar voltages of both pictures
/// and the AGC shift, started at the pre-attack operating point. Stops at the
/// first point that satisfies every constraint including the overload.
pub fn compute_initial_attack(
    network: &Network,
    spec: &AttackSpec,
    base: &OperatingPoint,
    opts: &AttackOptions,
) -> Result<InitialAttackSolution> {
    spec.validate(network)?;
    base.state.check_shape(network)?;
    let target_max = network.line(spec.target)?.s_max;
    let base_objective = target_flow(network, spec, &base.state)?.norm_sqr();
    if target_max.is_infinite() {
        return Err(Error::AttackInfeasible {
            best_objective: base_objective,
            required: f64::INFINITY,
        });
    }
    let required = ((1.0 + spec.overload_margin) * target_max).powi(2);

    let p = Problem::new(network, spec, base)?;
    let mut x = p.initial_point();
    let mut pen = Penalty {
        lambda: vec![0.0; p.constraints(&x).len()],
        rho: 1.0,
        cushion: opts.cushion,
    };
    let mut best = base_objective;
    let mut prev_viol = f64::INFINITY;
    let mut found = false;
    for outer in 0..opts.max_outer {
        minimize(&p, &pen, &mut x, opts.max_inner);
        let cs = p.constraints(&x);
        if violation(&cs, false) <= opts.tolerance {
            best = best.max(p.objective(&x));
        }
        let viol = violation(&cs, true);
        log::debug!("attack outer {outer}: violation {viol:.3e}, objective {:.6}", p.objective(&x));
        if viol <= 1e-10 {
            found = true;
            break;
        }
        for (k, c) in cs.iter().enumerate() {
            let l = pen.lambda[k] + pen.rho * (c.value + if c.kind == Kind::Eq { 0.0 } else { pen.cushion });
            pen.lambda[k] = if c.kind == Kind::Eq { l } else { l.max(0.0) };
        }
        if viol > 0.25 * prev_viol {
            pen.rho = (pen.rho * 10.0).min(1e8);
        }
        prev_viol = viol;
    }
    if !found {
        return Err(Error::AttackInfeasible {
            best_objective: best,
            required,
        });
    }
    polish(&p, &mut x);

    let solution = build_solution(network, spec, base, &p, &x)?;
    let report = validate_attack(network, spec, &solution, opts.tolerance);
    if !report.all_passed() || solution.objective < required {
        log::warn!("attack candidate rejected by validation: {report}");
        return Err(Error::AttackInfeasible {
            best_objective: solution.objective.max(best),
            required,
        });
    }
    Ok(solution)
}

fn build_solution(
    network: &Network,
    spec: &AttackSpec,
    base: &OperatingPoint,
    p: &Problem,
    x: &[f64],
) -> Result<InitialAttackSolution> {
    let cut_net = network.without_lines(&spec.cut_lines)?;
    let true_state = PhasorState::from_voltages(&cut_net, p.voltages(x, Pic::True), Role::True)?;
    let reported_state = PhasorState::from_voltages(network, p.voltages(x, Pic::Reported), Role::Reported)?;
    let inj_t = bus_injections(&cut_net, &true_state)?;
    let inj_r = bus_injections(network, &reported_state)?;
    let mut true_loads = BTreeMap::new();
    let mut reported_loads = BTreeMap::new();
    for &k in &spec.zone {
        let i = network.index_of(k)?;
        true_loads.insert(k, -inj_t[i]);
        reported_loads.insert(k, -inj_r[i]);
    }
    let delta = x[p.delta_var];
    let mut responder_dispatch = BTreeMap::new();
    for (&k, &a) in &network.participation {
        let i = network.index_of(k)?;
        let pg = base.generation[&k].re + a * delta;
        responder_dispatch.insert(k, (pg, inj_t[i].im + base.loads[i].im));
    }
    let objective = target_flow(network, spec, &true_state)?.norm_sqr();
    let _ = p.ref_idx;
    Ok(InitialAttackSolution {
        spec: spec.clone(),
        boundary: boundary_of(network, &spec.zone)?,
        base: base.clone(),
        true_state,
        reported_state,
        true_loads,
        reported_loads,
        agc_delta: delta,
        responder_dispatch,
        objective,
    })
}
