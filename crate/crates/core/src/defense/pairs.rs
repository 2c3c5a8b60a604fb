use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{BusFlag, DefenseLog, DetectionReport, Detector, TrustedSet};
use crate::error::{Error, Result};
use crate::grid::{BusId, Network};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairsOptions {
    /// Buses whose correlation with the injection falls below this are flagged.
    #[serde(default = "default_threshold")]
    pub corr_threshold: f64,
    #[serde(default = "default_min_iterations")]
    pub min_iterations: usize,
}

fn default_threshold() -> f64 {
    0.05
}

fn default_min_iterations() -> usize {
    200
}

impl Default for PairsOptions {
    fn default() -> Self {
        PairsOptions {
            corr_threshold: default_threshold(),
            min_iterations: default_min_iterations(),
        }
    }
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Correlates each bus's reported angle, referenced to the iteration's sink,
/// with the injected `gamma`.
///
/// Per iteration the statistic is the mean of `θ_k − θ_t` over the
/// iteration's samples, centered on the mean for the same sink so that
/// iterations with different references are comparable.
pub fn pairs_detect(
    network: &Network,
    log: &DefenseLog,
    trusted: &TrustedSet,
    opts: &PairsOptions,
) -> Result<DetectionReport> {
    let iters: Vec<_> = log
        .iterations
        .iter()
        .filter(|r| r.command.is_some() && !r.samples.is_empty())
        .collect();
    if iters.len() < opts.min_iterations.max(2) {
        return Err(Error::NotConverged(format!(
            "{} injection iterations, at least {} required",
            iters.len(),
            opts.min_iterations.max(2)
        )));
    }
    let n = network.n_buses();
    let mut gamma = Vec::with_capacity(iters.len());
    let mut stat: Vec<Vec<f64>> = vec![Vec::with_capacity(iters.len()); n];
    let mut sinks = Vec::with_capacity(iters.len());
    for rec in &iters {
        let cmd = rec.command.expect("filtered");
        let t = network.index_of(cmd.t)?;
        gamma.push(cmd.gamma);
        sinks.push(cmd.t);
        for (k, col) in stat.iter_mut().enumerate() {
            let sum: f64 = rec.samples.iter().map(|s| (s.v[k] / s.v[t]).arg()).sum();
            col.push(sum / rec.samples.len() as f64);
        }
    }
    // center per sink
    let mut groups: BTreeMap<BusId, Vec<usize>> = BTreeMap::new();
    for (j, &t) in sinks.iter().enumerate() {
        groups.entry(t).or_default().push(j);
    }
    for col in &mut stat {
        for idx in groups.values() {
            let mean = idx.iter().map(|&j| col[j]).sum::<f64>() / idx.len() as f64;
            for &j in idx {
                col[j] -= mean;
            }
        }
    }

    let mut report = DetectionReport::empty(Detector::Pairs);
    report.decided_at = iters.last().map_or(0, |r| r.ticks.end.saturating_sub(1));
    let head = iters.len() * 3 / 4;
    let mut unstable = Vec::new();
    for (k, bus) in network.buses.iter().enumerate() {
        if trusted.members.contains(&bus.id) {
            continue;
        }
        let c = pearson(&stat[k], &gamma);
        let earlier = pearson(&stat[k][..head], &gamma[..head]);
        // three standard errors of the gap between the prefix and full estimates
        if (c - earlier).abs() > 3.0 / (3.0 * iters.len() as f64).sqrt() {
            unstable.push(bus.id);
        }
        if c < opts.corr_threshold {
            report.flagged_buses.push(BusFlag {
                bus: bus.id,
                statistic: c,
                threshold: opts.corr_threshold,
            });
        }
    }
    if !unstable.is_empty() {
        report.notes.push(format!(
            "correlation still moving over the last quarter of iterations at buses {unstable:?}"
        ));
    }
    Ok(report)
}
