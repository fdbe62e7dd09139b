//! SINR, sum rate and the closed-form WMMSE auxiliary updates.
//!
//! For fixed beamformer `W` and layout `T` the weighted-MSE surrogate is
//!
//! ```text
//! f = sum_k beta_k g_k(phi_k, W) - ln beta_k
//! g_k = |phi_k|^2 (sum_i |h_k^H w_i|^2 + s2) - 2 Re{phi_k^* h_k^H w_k} + 1
//! ```
//!
//! Minimizing over `phi` then `beta` yields `beta_k = 1 + gamma_k`, so the
//! minimum of `f` equals `K - ln 2 * sum_rate`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::channel::ChannelVector;
use crate::error::{Error, Result};

/// N x K precoding matrix; column `k` serves user `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Beamformer(pub DMatrix<Complex64>);

impl Beamformer {
    pub fn zeros(antennas: usize, users: usize) -> Self {
        Beamformer(DMatrix::zeros(antennas, users))
    }

    pub fn antennas(&self) -> usize {
        self.0.nrows()
    }

    pub fn users(&self) -> usize {
        self.0.ncols()
    }

    /// `sum_k ||w_k||^2`.
    pub fn total_power(&self) -> f64 {
        self.0.norm_squared()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Auxiliary receive coefficients `phi` and MSE weights `beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryState {
    pub phi: Vec<Complex64>,
    pub beta: Vec<f64>,
}

impl AuxiliaryState {
    /// The consistent state for an all-zero beamformer.
    pub fn degenerate(users: usize) -> Self {
        AuxiliaryState {
            phi: vec![Complex64::new(0.0, 0.0); users],
            beta: vec![1.0; users],
        }
    }
}

/// `h_k^H w_i` for every (k, i): row k is user k's view of all streams.
pub fn effective_gains(w: &Beamformer, channels: &[ChannelVector]) -> DMatrix<Complex64> {
    let k = channels.len();
    DMatrix::from_fn(k, w.users(), |user, stream| channels[user].0.dotc(&w.0.column(stream)))
}

fn sinr_from_gains(gains: &DMatrix<Complex64>, k: usize, noise: f64) -> f64 {
    let signal = gains[(k, k)].norm_sqr();
    let interference: f64 = (0..gains.ncols())
        .filter(|&i| i != k)
        .map(|i| gains[(k, i)].norm_sqr())
        .sum();
    signal / (interference + noise)
}

/// SINR of user `k` (0-based).
pub fn sinr(k: usize, w: &Beamformer, channels: &[ChannelVector], noise: f64) -> f64 {
    sinr_from_gains(&effective_gains(w, channels), k, noise)
}

pub fn sinrs(w: &Beamformer, channels: &[ChannelVector], noise: f64) -> Vec<f64> {
    let gains = effective_gains(w, channels);
    (0..channels.len()).map(|k| sinr_from_gains(&gains, k, noise)).collect()
}

/// `sum_k log2(1 + gamma_k)` in bits/s/Hz.
pub fn sum_rate(w: &Beamformer, channels: &[ChannelVector], noise: f64) -> f64 {
    sinrs(w, channels, noise).into_iter().map(|g| g.ln_1p()).sum::<f64>() / std::f64::consts::LN_2
}

/// `phi_k = h_k^H w_k / (sum_i |h_k^H w_i|^2 + s2)`.
pub fn update_phi(w: &Beamformer, channels: &[ChannelVector], noise: f64) -> Vec<Complex64> {
    let gains = effective_gains(w, channels);
    (0..channels.len())
        .map(|k| {
            let total: f64 = gains.row(k).iter().map(|z| z.norm_sqr()).sum();
            gains[(k, k)] / (total + noise)
        })
        .collect()
}

/// `beta_k = 1 / (1 - phi_k^* h_k^H w_k)`.
pub fn update_beta(phi: &[Complex64], w: &Beamformer, channels: &[ChannelVector]) -> Result<Vec<f64>> {
    phi.iter()
        .zip(channels)
        .enumerate()
        .map(|(k, (p, h))| {
            let signal = h.0.dotc(&w.0.column(k));
            // Real for MMSE-consistent phi; the imaginary part is rounding.
            let denom = 1.0 - (p.conj() * signal).re;
            if denom > 0.0 && denom.is_finite() {
                Ok(1.0 / denom)
            } else {
                Err(Error::NonPositiveWeight { user: k, value: denom })
            }
        })
        .collect()
}

/// Runs both closed-form updates.
pub fn update_auxiliary(w: &Beamformer, channels: &[ChannelVector], noise: f64) -> Result<AuxiliaryState> {
    let phi = update_phi(w, channels, noise);
    let beta = update_beta(&phi, w, channels)?;
    Ok(AuxiliaryState { phi, beta })
}

/// The WMMSE surrogate `f` with natural logarithms.
pub fn surrogate_f(aux: &AuxiliaryState, w: &Beamformer, channels: &[ChannelVector], noise: f64) -> f64 {
    let gains = effective_gains(w, channels);
    (0..channels.len())
        .map(|k| {
            let phi = aux.phi[k];
            let total: f64 = gains.row(k).iter().map(|z| z.norm_sqr()).sum();
            let g = phi.norm_sqr() * (total + noise) - 2.0 * (phi.conj() * gains[(k, k)]).re + 1.0;
            aux.beta[k] * g - aux.beta[k].ln()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn e1(n: usize) -> ChannelVector {
        let mut v = DVector::zeros(n);
        v[0] = c(1.0, 0.0);
        ChannelVector(v)
    }

    #[test]
    fn single_user_examples() {
        let p: f64 = 2.5;
        let noise = 0.5;
        let w = Beamformer(DMatrix::from_column_slice(2, 1, &[c(p.sqrt(), 0.0), c(0.0, 0.0)]));
        let h = vec![e1(2)];
        assert_relative_eq!(sinr(0, &w, &h, noise), p / noise, max_relative = 1e-15);
        let phi = update_phi(&w, &h, noise);
        assert_relative_eq!(phi[0].re, p.sqrt() / (p + noise), max_relative = 1e-15);
        assert_eq!(sinr(0, &Beamformer::zeros(2, 1), &h, noise), 0.0);
    }

    #[test]
    fn hand_evaluated_weights() {
        let w = Beamformer(DMatrix::from_column_slice(1, 1, &[c(1.0, 0.0)]));
        let h = vec![e1(1)];
        let aux = update_auxiliary(&w, &h, 1.0).unwrap();
        assert_relative_eq!(aux.phi[0].re, 0.5);
        assert_relative_eq!(aux.beta[0], 2.0);
    }

    #[test]
    fn zero_beamformer_state() {
        let h = vec![e1(3), e1(3)];
        let w = Beamformer::zeros(3, 2);
        let aux = update_auxiliary(&w, &h, 1e-3).unwrap();
        assert!(aux.phi.iter().all(|p| p.norm() == 0.0));
        assert_eq!(aux.beta, vec![1.0, 1.0]);
        assert_eq!(sum_rate(&w, &h, 1e-3), 0.0);
        let f = surrogate_f(&AuxiliaryState::degenerate(2), &w, &h, 1e-3);
        assert_relative_eq!(f, 2.0);
    }

    #[test]
    fn sum_rate_examples() {
        // Orthogonal single-antenna links with SINRs 1, 3 and 7.
        let h = vec![e1(1)];
        let w = Beamformer(DMatrix::from_column_slice(1, 1, &[c(1.0, 0.0)]));
        assert_relative_eq!(sum_rate(&w, &h, 1.0), 1.0, max_relative = 1e-15);

        let mut h1 = DVector::zeros(2);
        h1[0] = c(1.0, 0.0);
        let mut h2 = DVector::zeros(2);
        h2[1] = c(1.0, 0.0);
        let w = Beamformer(DMatrix::from_column_slice(
            2,
            2,
            &[c(3f64.sqrt(), 0.0), c(0.0, 0.0), c(0.0, 0.0), c(7f64.sqrt(), 0.0)],
        ));
        let rate = sum_rate(&w, &[ChannelVector(h1), ChannelVector(h2)], 1.0);
        assert_relative_eq!(rate, 5.0, max_relative = 1e-14);
    }

    #[test]
    fn non_consistent_phi_is_rejected() {
        let w = Beamformer(DMatrix::from_column_slice(1, 1, &[c(1.0, 0.0)]));
        let h = vec![e1(1)];
        let err = update_beta(&[c(2.0, 0.0)], &w, &h).unwrap_err();
        assert!(matches!(err, Error::NonPositiveWeight { user: 0, .. }));
    }
}
