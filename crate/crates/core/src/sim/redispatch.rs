use rand::seq::index::sample;
use rand::Rng;

use crate::error::Result;
use crate::grid::{ac_solve, AcOptions, Network, OperatingPoint, PhasorState, PowerFlowSpec};

/// Zero-sum `delta` inside `[lo, hi]` componentwise, by repeatedly spreading
/// the excess over entries that still have room.
fn balance(delta: &mut [f64], lo: &[f64], hi: &[f64]) {
    for _ in 0..50 {
        let excess: f64 = delta.iter().sum();
        if excess.abs() < 1e-12 {
            return;
        }
        let free: Vec<usize> = (0..delta.len())
            .filter(|&i| if excess > 0.0 { delta[i] > lo[i] } else { delta[i] < hi[i] })
            .collect();
        if free.is_empty() {
            return;
        }
        let step = excess / free.len() as f64;
        for i in free {
            delta[i] = (delta[i] - step).clamp(lo[i], hi[i]);
        }
    }
}

/// Solved states after `count` random large redispatches of the non-slack
/// generators, each moving a random subset of at least two units anywhere in
/// their limits with zero net change. A redispatch that does not converge is
/// halved and retried.
pub fn voltage_experiments<R: Rng + ?Sized>(
    network: &Network,
    base: &OperatingPoint,
    count: usize,
    rng: &mut R,
) -> Result<Vec<PhasorState>> {
    let units: Vec<usize> = network
        .generators
        .iter()
        .enumerate()
        .filter(|(_, g)| g.bus != network.slack)
        .map(|(i, _)| i)
        .collect();
    let opts = AcOptions {
        warm_start: Some(base.state.v.clone()),
        ..AcOptions::default()
    };
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let m = if units.len() <= 2 {
            units.len()
        } else {
            rng.random_range(2..=units.len())
        };
        let chosen: Vec<usize> = sample(rng, units.len(), m).into_iter().map(|j| units[j]).collect();
        let lo: Vec<f64> = chosen
            .iter()
            .map(|&g| network.generators[g].p_min - network.generators[g].p_set)
            .collect();
        let hi: Vec<f64> = chosen
            .iter()
            .map(|&g| network.generators[g].p_max - network.generators[g].p_set)
            .collect();
        let mut delta: Vec<f64> = lo.iter().zip(&hi).map(|(&a, &b)| a + (b - a) * rng.random::<f64>()).collect();
        balance(&mut delta, &lo, &hi);

        let mut attempt = 0;
        let state = loop {
            let mut net = network.clone();
            for (&g, d) in chosen.iter().zip(&delta) {
                net.generators[g].p_set += d;
            }
            let solved = PowerFlowSpec::from_network(&net).and_then(|spec| ac_solve(&net, &spec, &opts));
            match solved {
                Ok(sol) => break sol.state,
                Err(e) if e.is_divergence() && attempt < 6 => {
                    log::warn!("redispatch diverged, halving: {e}");
                    delta.iter_mut().for_each(|d| *d *= 0.5);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        };
        out.push(state);
    }
    Ok(out)
}
