use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    draw_pairs_command, BusFlag, DefenseLog, DetectionReport, Detector, InjectionCommand, IterationRecord,
    PairMode, PhasorSource, TrustedSet,
};
use crate::error::{Error, Result};
use crate::grid::{BusId, Network, PhasorState, ReducedSusceptance};

/// Streaming mean and covariance (Welford).
#[derive(Clone, Debug)]
pub struct Welford {
    n: usize,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
}

impl Welford {
    pub fn new(dim: usize) -> Self {
        Welford {
            n: 0,
            mean: DVector::zeros(dim),
            m2: DMatrix::zeros(dim, dim),
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let x = DVector::from_column_slice(x);
        let delta = &x - &self.mean;
        self.mean += &delta / self.n as f64;
        let after = &x - &self.mean;
        self.m2.ger(1.0, &delta, &after, 1.0);
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Unbiased sample covariance, symmetrized.
    pub fn covariance(&self) -> DMatrix<f64> {
        if self.n < 2 {
            return DMatrix::zeros(self.mean.len(), self.mean.len());
        }
        let c = &self.m2 / (self.n - 1) as f64;
        (&c + c.transpose()) * 0.5
    }
}

/// `v^{s,t} = B̆_t u^{s,t}` by bus position.
fn unit_shift(network: &Network, reduced: &ReducedSusceptance, s: BusId) -> Result<Vec<f64>> {
    let cmd = InjectionCommand {
        s,
        t: reduced.ref_bus(),
        gamma: 1.0,
    };
    Ok(reduced.apply(&cmd.delta(network)?))
}

/// Smallest nonzero squared entry of `v^{s,t}` over trusted sources `s` and
/// anchor sinks `t`.
pub fn omega(network: &Network, trusted: &TrustedSet) -> Result<f64> {
    trusted.validate()?;
    let mut best = f64::INFINITY;
    for t in [trusted.anchors.0, trusted.anchors.1] {
        let reduced = ReducedSusceptance::new(network, t)?;
        for &s in trusted.members.iter().filter(|&&s| s != t) {
            let v = unit_shift(network, &reduced, s)?;
            let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            for x in v {
                if x.abs() > 1e-12 * scale {
                    best = best.min(x * x);
                }
            }
        }
    }
    Ok(best)
}

/// Expected growth of the angle covariance referenced to `t_i` when the sink
/// is `t_i` and the source is uniform over the other trusted buses.
pub fn predicted_cov_shift(
    network: &Network,
    trusted: &TrustedSet,
    t_i: BusId,
    sigma_gamma_sq: f64,
) -> Result<DMatrix<f64>> {
    trusted.validate()?;
    if !trusted.members.contains(&t_i) {
        return Err(Error::InvalidDefense(format!("reference {t_i} is not trusted")));
    }
    let n = network.n_buses();
    let reduced = ReducedSusceptance::new(network, t_i)?;
    let mut out = DMatrix::zeros(n, n);
    for &s in trusted.members.iter().filter(|&&s| s != t_i) {
        let v = DVector::from_vec(unit_shift(network, &reduced, s)?);
        out.ger(1.0, &v, &v, 1.0);
    }
    Ok(out * (sigma_gamma_sq / (trusted.members.len() - 1) as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovarianceOptions {
    pub dist_sigma: f64,
    pub phase1_samples: usize,
    pub phase2_samples: usize,
    /// Ticks each command is held.
    #[serde(default = "default_dwell")]
    pub dwell: usize,
}

fn default_dwell() -> usize {
    1
}

/// Angle covariances referenced to each anchor, without (`pre`) and with
/// (`post`) injections.
#[derive(Clone, Debug)]
pub struct CovarianceEstimates {
    pub anchors: [BusId; 2],
    pub pre: [Welford; 2],
    pub post: [Welford; 2],
}

impl CovarianceEstimates {
    fn new(n: usize, anchors: (BusId, BusId)) -> Self {
        CovarianceEstimates {
            anchors: [anchors.0, anchors.1],
            pre: [Welford::new(n), Welford::new(n)],
            post: [Welford::new(n), Welford::new(n)],
        }
    }

    /// `post − pre` for anchor `i`.
    pub fn shift(&self, i: usize) -> DMatrix<f64> {
        self.post[i].covariance() - self.pre[i].covariance()
    }
}

fn referenced(state: &PhasorState, t: usize) -> Vec<f64> {
    state.v.iter().map(|v| (v / state.v[t]).arg()).collect()
}

/// Runs both phases against `source` and flags every untrusted bus whose
/// angle variance grew by less than `λ = σ²_Γ·ω/(|T|−1)` for both anchors.
pub fn covariance_defense<S: PhasorSource + ?Sized, R: Rng + ?Sized>(
    source: &mut S,
    trusted: &TrustedSet,
    opts: &CovarianceOptions,
    first_tick: usize,
    rng: &mut R,
) -> Result<(CovarianceEstimates, DetectionReport, DefenseLog)> {
    trusted.check_against(source.network())?;
    if opts.phase1_samples < 2 || opts.phase2_samples < 2 || opts.dwell == 0 {
        return Err(Error::InvalidDefense(
            "covariance defense needs two or more samples per phase and a positive dwell".into(),
        ));
    }
    let network = source.network().clone();
    let n = network.n_buses();
    let anchors = [network.index_of(trusted.anchors.0)?, network.index_of(trusted.anchors.1)?];
    let mut est = CovarianceEstimates::new(n, trusted.anchors);
    let mut log = DefenseLog::default();
    let mut tick = first_tick;

    for _ in 0..opts.phase1_samples {
        let state = source.observe(None)?;
        for (i, &t) in anchors.iter().enumerate() {
            est.pre[i].push(&referenced(&state, t));
        }
    }
    log.push(IterationRecord {
        command: None,
        ticks: tick..tick + opts.phase1_samples,
        samples: Vec::new(),
    })?;
    tick += opts.phase1_samples;

    let mut taken = 0;
    while taken < opts.phase2_samples {
        let cmd = draw_pairs_command(trusted, opts.dist_sigma, PairMode::Anchored, rng)?;
        let i = usize::from(cmd.t != trusted.anchors.0);
        let len = opts.dwell.min(opts.phase2_samples - taken);
        for _ in 0..len {
            let state = source.observe(Some(&cmd))?;
            est.post[i].push(&referenced(&state, anchors[i]));
        }
        log.push(IterationRecord {
            command: Some(cmd),
            ticks: tick..tick + len,
            samples: Vec::new(),
        })?;
        tick += len;
        taken += len;
    }

    let lambda = opts.dist_sigma.powi(2) * omega(&network, trusted)? / (trusted.members.len() - 1) as f64;
    let shifts = [est.shift(0), est.shift(1)];
    let mut report = DetectionReport::empty(Detector::Covariance);
    report.decided_at = tick.saturating_sub(1);
    for (k, bus) in network.buses.iter().enumerate() {
        if trusted.members.contains(&bus.id) {
            continue;
        }
        let growth = shifts[0][(k, k)].max(shifts[1][(k, k)]);
        if growth < lambda {
            report.flagged_buses.push(BusFlag {
                bus: bus.id,
                statistic: growth,
                threshold: lambda,
            });
        }
    }
    let mut drifting = Vec::new();
    for (k, bus) in network.buses.iter().enumerate() {
        for i in 0..2 {
            let (a, b) = (&est.pre[i], &est.post[i]);
            if a.count() < 2 || b.count() < 2 {
                continue;
            }
            let se = (a.covariance()[(k, k)] / a.count() as f64 + b.covariance()[(k, k)] / b.count() as f64).sqrt();
            if (a.mean()[k] - b.mean()[k]).abs() > 5.0 * se && se > 0.0 {
                drifting.push(bus.id);
                break;
            }
        }
    }
    if !drifting.is_empty() {
        report.notes.push(format!("mean angle drifted between phases at buses {drifting:?}"));
    }
    Ok((est, report, log))
}
