//! Warden energy detection under log-uniform noise uncertainty.
//!
//! The warden compares its average received power against a threshold while
//! its own noise power is only known to lie in `[s/tau, s*tau]` (log-uniform,
//! nominal value `s`). With the optimal threshold the total error probability
//! (false alarm plus missed detection) is
//!
//! ```text
//! xi* = 1 - ln(1 + P tau / s) / (2 ln tau)
//! ```
//!
//! and `xi* >= 1 - eps` is equivalent to `P <= s (tau^(2 eps) - 1) / tau`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Uniform;

use crate::channel::ChannelVector;
use crate::error::{Error, Result};
use crate::wmmse::Beamformer;

/// Largest warden power that keeps the detection error at or above `1 - eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovertnessBudget {
    pub p_th: f64,
    pub noise_uncertainty: f64,
    pub covertness_level: f64,
    pub nominal_noise: f64,
}

pub fn covert_power_budget(nominal_noise: f64, tau: f64, eps: f64) -> CovertnessBudget {
    CovertnessBudget {
        p_th: nominal_noise * (tau.powf(2.0 * eps) - 1.0) / tau,
        noise_uncertainty: tau,
        covertness_level: eps,
        nominal_noise,
    }
}

/// `sum_k |h0^H w_k|^2`.
pub fn warden_received_power(h0: &ChannelVector, w: &Beamformer) -> f64 {
    w.0.column_iter().map(|col| h0.0.dotc(&col).norm_sqr()).sum()
}

/// Minimum total detection error, clamped to `[0, 1]`.
pub fn min_detection_error(received_power: f64, nominal_noise: f64, tau: f64) -> Result<f64> {
    if !(tau > 1.0) {
        return Err(Error::DegenerateUncertainty(tau));
    }
    let xi = 1.0 - (received_power * tau / nominal_noise).ln_1p() / (2.0 * tau.ln());
    Ok(xi.clamp(0.0, 1.0))
}

pub fn optimal_threshold(received_power: f64, nominal_noise: f64, tau: f64) -> f64 {
    received_power + nominal_noise / tau
}

/// Draws the warden noise power `s * exp(u)`, `u ~ U[-ln tau, ln tau]`.
pub fn sample_warden_noise<R: Rng>(rng: &mut R, nominal_noise: f64, tau: f64) -> f64 {
    let spread = tau.ln();
    if spread == 0.0 {
        return nominal_noise;
    }
    let u = rng.sample(Uniform::new_inclusive(-spread, spread).expect("finite spread"));
    nominal_noise * u.exp()
}

/// Empirical false-alarm plus missed-detection probability at the optimal
/// threshold. Each hypothesis is simulated with `samples` independent noise
/// draws.
pub fn monte_carlo_detection_error(
    received_power: f64,
    nominal_noise: f64,
    tau: f64,
    samples: usize,
    seed: u64,
) -> f64 {
    let samples = samples.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let threshold = optimal_threshold(received_power, nominal_noise, tau);
    let mut false_alarms = 0usize;
    let mut misses = 0usize;
    for _ in 0..samples {
        // H0: only noise.
        if sample_warden_noise(&mut rng, nominal_noise, tau) > threshold {
            false_alarms += 1;
        }
        // H1: signal plus noise.
        if received_power + sample_warden_noise(&mut rng, nominal_noise, tau) <= threshold {
            misses += 1;
        }
    }
    (false_alarms + misses) as f64 / samples as f64
}
