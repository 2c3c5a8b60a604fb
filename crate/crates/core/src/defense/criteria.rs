use std::collections::BTreeMap;

use num_complex::Complex64;

use super::{Detector, DetectionReport, LineFlag};
use crate::grid::{admittance_unchecked, BranchAdmittance, End, Line, LineId, Network, PhasorState};

/// Outcome of one current/voltage consistency test on one sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriterionCheck {
    pub flag: bool,
    pub lhs: f64,
    pub rhs: f64,
}

/// Two-port of `line` with the bus at `k` as the first port.
fn oriented(line: &Line, k: End) -> BranchAdmittance {
    let y = admittance_unchecked(line);
    match k {
        End::From => y,
        End::To => y.reversed(),
    }
}

/// Criterion 1 on line `km`: recovers `V_k` from the far-end current and
/// voltage and compares it with the reported `V_k`. `None` when the
/// transfer admittance vanishes.
pub fn criterion1_check(
    v_k: Complex64,
    v_m: Complex64,
    i_mk: Complex64,
    line: &Line,
    k: End,
    tau: f64,
) -> Option<CriterionCheck> {
    let y = oriented(line, k);
    if y.y21.norm() == 0.0 {
        return None;
    }
    let z3 = y.y21.inv();
    let lhs = (v_k - z3 * (i_mk - y.y22 * v_m)).norm();
    let rhs = 2.0 * tau * z3.norm() * (i_mk.norm() + y.y22.norm() * v_m.norm()) / (1.0 - tau);
    Some(CriterionCheck {
        flag: lhs >= rhs,
        lhs,
        rhs,
    })
}

/// Criterion 2 on line `km`: the near-end current against the two-port image
/// of both voltages.
pub fn criterion2_check(
    i_km: Complex64,
    v_k: Complex64,
    v_m: Complex64,
    line: &Line,
    k: End,
    tau: f64,
) -> CriterionCheck {
    let y = oriented(line, k);
    let lhs = (i_km - y.y11 * v_k - y.y12 * v_m).norm();
    let rhs = tau * (i_km.norm() + y.y11.norm() * v_k.norm() + y.y12.norm() * v_m.norm()) / (1.0 - tau);
    CriterionCheck {
        flag: lhs >= rhs,
        lhs,
        rhs,
    }
}

/// One line leaving a boundary bus `k`, as used by [`hoo_ratio`].
#[derive(Clone, Copy, Debug)]
pub struct LineSide {
    /// Two-port with `k` as the first port.
    pub y: BranchAdmittance,
    /// Current entering the line at the far end.
    pub i_far: Complex64,
    pub v_far: Complex64,
}

impl LineSide {
    pub fn new(line: &Line, k: End, i_far: Complex64, v_far: Complex64) -> Self {
        LineSide {
            y: oriented(line, k),
            i_far,
            v_far,
        }
    }

    /// Right-hand side of Criterion 1 for this side.
    fn slack(&self, tau: f64) -> f64 {
        let z3 = self.y.y21.inv().norm();
        2.0 * tau * z3 * (self.i_far.norm() + self.y.y22.norm() * self.v_far.norm()) / (1.0 - tau)
    }
}

/// How far the injection moved the true boundary voltage relative to the room
/// Criterion 1 leaves on an interior line `ka` (stale reported data) and an
/// exterior line `km` (fresh sensed data). Above one, no reported `V_k` can
/// satisfy both lines.
pub fn hoo_ratio(v_k_star: Complex64, v_k_r0: Complex64, ka: &LineSide, km: &LineSide, tau: f64) -> f64 {
    (v_k_star - v_k_r0).norm() / (ka.slack(tau) + km.slack(tau))
}

#[derive(Clone, Copy, Default)]
struct Tally {
    fails: usize,
    worst: f64,
}

/// Streaming Criteria 1–2 over windows of samples. A line is flagged when,
/// within one window, more than `rate_threshold` of its samples fail either
/// criterion in either direction.
#[derive(Clone)]
pub struct CriteriaMonitor {
    lines: Vec<(LineId, Line, usize, usize)>,
    tau: f64,
    rate_threshold: f64,
    samples: usize,
    // (line, criterion) → tally for the open window
    window: BTreeMap<(LineId, u8), Tally>,
    flags: BTreeMap<LineId, LineFlag>,
    last_tick: usize,
}

impl CriteriaMonitor {
    pub fn new(network: &Network, tau: f64, rate_threshold: f64) -> Self {
        let lines = network
            .lines
            .iter()
            .enumerate()
            .filter(|(_, l)| l.in_service)
            .map(|(id, l)| {
                let f = network.index_of(l.from).unwrap();
                let t = network.index_of(l.to).unwrap();
                (id, l.clone(), f, t)
            })
            .collect();
        CriteriaMonitor {
            lines,
            tau,
            rate_threshold,
            samples: 0,
            window: BTreeMap::new(),
            flags: BTreeMap::new(),
            last_tick: 0,
        }
    }

    pub fn observe(&mut self, tick: usize, state: &PhasorState) {
        self.samples += 1;
        self.last_tick = tick;
        for (id, line, f, t) in &self.lines {
            let ends = [(End::From, *f, *t), (End::To, *t, *f)];
            let mut fail = [false; 2];
            let mut worst = [f64::NEG_INFINITY; 2];
            for (k_end, k, m) in ends {
                let (v_k, v_m) = (state.v[k], state.v[m]);
                let i_km = state.i[*id][k_end.index()];
                let i_mk = state.i[*id][k_end.opposite().index()];
                if let Some(c) = criterion1_check(v_k, v_m, i_mk, line, k_end, self.tau) {
                    fail[0] |= c.flag;
                    worst[0] = worst[0].max(c.lhs - c.rhs);
                }
                let c = criterion2_check(i_km, v_k, v_m, line, k_end, self.tau);
                fail[1] |= c.flag;
                worst[1] = worst[1].max(c.lhs - c.rhs);
            }
            for c in 0..2 {
                let tally = self.window.entry((*id, c as u8 + 1)).or_default();
                if fail[c] {
                    if tally.fails == 0 {
                        tally.worst = worst[c];
                    }
                    tally.fails += 1;
                    tally.worst = tally.worst.max(worst[c]);
                }
            }
        }
    }

    /// Closes the current window and records any line over the rate.
    pub fn close_window(&mut self) {
        if self.samples == 0 {
            return;
        }
        for (&(line, criterion), tally) in &self.window {
            let rate = tally.fails as f64 / self.samples as f64;
            if rate > self.rate_threshold {
                let entry = self.flags.entry(line).or_insert(LineFlag {
                    line,
                    criterion,
                    residual: tally.worst,
                    rate,
                    tick: self.last_tick,
                });
                if entry.criterion == criterion {
                    entry.residual = entry.residual.max(tally.worst);
                    entry.rate = entry.rate.max(rate);
                }
            }
        }
        self.window.clear();
        self.samples = 0;
    }

    pub fn report(mut self) -> DetectionReport {
        self.close_window();
        let mut report = DetectionReport::empty(Detector::Criteria);
        report.decided_at = self.flags.values().map(|f| f.tick).min().unwrap_or(self.last_tick);
        report.flagged_lines = self.flags.into_values().collect();
        report
    }
}
