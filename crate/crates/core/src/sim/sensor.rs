use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Network;

/// Phasor sensor obeying a total-vector-error bound `|err| < tau·|φ|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorModel {
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Fraction of the bound actually used by the error disk.
    #[serde(default = "default_scale")]
    pub error_scale: f64,
}

fn default_tau() -> f64 {
    0.01
}

fn default_scale() -> f64 {
    0.3
}

impl Default for SensorModel {
    fn default() -> Self {
        SensorModel {
            tau: default_tau(),
            error_scale: default_scale(),
        }
    }
}

impl SensorModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("sensor tau {} must lie in (0, 1)", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.error_scale) {
            return Err(Error::Config(format!(
                "sensor error_scale {} must lie in [0, 1]",
                self.error_scale
            )));
        }
        Ok(())
    }
}

/// Adds an error drawn uniformly from the disk of radius
/// `error_scale·tau·|φ|` around the true phasor.
pub fn sensor_sample<R: Rng + ?Sized>(phasor: Complex64, model: &SensorModel, rng: &mut R) -> Complex64 {
    let radius = model.error_scale * model.tau * phasor.norm();
    // two draws every call keeps the stream aligned whatever the radius
    let u: f64 = rng.random();
    let phi: f64 = rng.random::<f64>() * std::f64::consts::TAU;
    if radius == 0.0 {
        return phasor;
    }
    phasor + Complex64::from_polar(radius * u.sqrt(), phi)
}

/// Multiplies each load by `1 + ε` with `ε ~ N(0, sigma_rel²)`, one draw per
/// bus shared by its active and reactive parts. Factors below zero are
/// clipped.
pub fn perturb_loads<R: Rng + ?Sized>(loads: &[Complex64], sigma_rel: f64, rng: &mut R) -> Vec<Complex64> {
    if sigma_rel <= 0.0 {
        return loads.to_vec();
    }
    let normal = Normal::new(0.0, sigma_rel).expect("positive finite sigma");
    loads
        .iter()
        .map(|&s| {
            let mut f = 1.0 + normal.sample(rng);
            if f < 0.0 {
                log::warn!("ambient draw {f:.3} clipped to zero");
                f = 0.0;
            }
            s * f
        })
        .collect()
}

/// One tick of ambient load noise around the network's nominal loads.
pub fn ambient_step<R: Rng + ?Sized>(network: &Network, sigma_rel: f64, rng: &mut R) -> Vec<Complex64> {
    perturb_loads(&network.loads(), sigma_rel, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_radius_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = SensorModel {
            tau: 0.01,
            error_scale: 0.0,
        };
        let z = Complex64::new(0.3, -1.1);
        for _ in 0..100 {
            assert_eq!(sensor_sample(z, &m, &mut rng), z);
        }
    }

    #[test]
    fn error_stays_inside_bound_and_reaches_its_edge() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = SensorModel {
            tau: 0.01,
            error_scale: 1.0,
        };
        let z = Complex64::from_polar(1.02, 0.4);
        let mut worst: f64 = 0.0;
        for _ in 0..100_000 {
            let rel = (sensor_sample(z, &m, &mut rng) - z).norm() / z.norm();
            assert!(rel < 0.01);
            worst = worst.max(rel);
        }
        assert!(worst > 0.009, "{worst}");
    }

    #[test]
    fn ambient_noise_is_unbiased() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let loads = vec![Complex64::new(0.5, 0.2), Complex64::new(0.0, 0.0), Complex64::new(1.3, -0.4)];
        let sigma = 0.003;
        let n = 10_000;
        let mut sum = vec![Complex64::default(); loads.len()];
        for _ in 0..n {
            for (acc, s) in sum.iter_mut().zip(perturb_loads(&loads, sigma, &mut rng)) {
                *acc += s;
            }
        }
        for (acc, s) in sum.iter().zip(&loads) {
            let mean = acc / n as f64;
            let bound = 3.0 * sigma * s.norm() / (n as f64).sqrt();
            assert!((mean - s).norm() <= bound + 1e-15, "{mean} vs {s}");
        }
        assert_eq!(perturb_loads(&loads, 0.0, &mut rng), loads);
    }

    #[test]
    fn small_noise_never_clips() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let loads = vec![Complex64::new(0.1, 0.05); 10];
        for _ in 0..100_000 {
            assert!(perturb_loads(&loads, 0.01, &mut rng).iter().all(|s| s.re > 0.0));
        }
    }
}
