//! The exact position-block objective for one antenna, with every other
//! antenna and the beamformer held fixed.

use num_complex::Complex64;

use crate::channel::{channel_entry, AntennaArray, Position, Scenario, GEOMETRY_TOL};
use crate::wmmse::{AuxiliaryState, Beamformer};

/// Partial sums that make `h_k^H w_i` an O(L) function of `t_n`.
#[derive(Debug, Clone)]
pub struct AntennaBlock<'a> {
    scenario: &'a Scenario,
    n: usize,
    others: Vec<Position>,
    /// `[k][i]`: `sum_{n' != n} conj(w_{i,n'}) h_{k,n'}`.
    user_rest: Vec<Vec<Complex64>>,
    warden_rest: Vec<Complex64>,
    /// `conj(w_{i,n})`.
    own: Vec<Complex64>,
    power_weight: Vec<f64>,
    gain_weight: Vec<Complex64>,
    beta: Vec<f64>,
}

impl<'a> AntennaBlock<'a> {
    pub fn new(n: usize, w: &Beamformer, aux: &AuxiliaryState, scenario: &'a Scenario, array: &AntennaArray) -> Self {
        let lambda = scenario.config.wavelength;
        let users = w.users();
        let rest = |paths| -> Vec<Complex64> {
            (0..users)
                .map(|i| {
                    array
                        .positions
                        .iter()
                        .enumerate()
                        .filter(|&(m, _)| m != n)
                        .map(|(m, &t)| w.0[(m, i)].conj() * channel_entry(t, paths, lambda))
                        .sum()
                })
                .collect()
        };
        AntennaBlock {
            scenario,
            n,
            others: array
                .positions
                .iter()
                .enumerate()
                .filter(|&(m, _)| m != n)
                .map(|(_, &t)| t)
                .collect(),
            user_rest: scenario.users.iter().map(rest).collect(),
            warden_rest: rest(&scenario.warden),
            own: (0..users).map(|i| w.0[(n, i)].conj()).collect(),
            power_weight: (0..users).map(|k| aux.beta[k] * aux.phi[k].norm_sqr()).collect(),
            gain_weight: aux.phi.clone(),
            beta: aux.beta.clone(),
        }
    }

    pub fn antenna(&self) -> usize {
        self.n
    }

    /// `sum_k beta_k (|phi_k|^2 sum_i |w_i^H h_k|^2 - 2 Re{phi_k w_k^H h_k})`.
    pub fn objective(&self, t: Position) -> f64 {
        let lambda = self.scenario.config.wavelength;
        self.scenario
            .users
            .iter()
            .enumerate()
            .map(|(k, paths)| {
                let h = channel_entry(t, paths, lambda);
                let rest = &self.user_rest[k];
                let power: f64 = (0..self.own.len())
                    .map(|i| (rest[i] + self.own[i] * h).norm_sqr())
                    .sum();
                let gain = (self.gain_weight[k] * (rest[k] + self.own[k] * h)).re;
                self.power_weight[k] * power - 2.0 * self.beta[k] * gain
            })
            .sum()
    }

    /// `sum_k |w_k^H h_0|^2` with antenna `n` at `t`.
    pub fn warden_power(&self, t: Position) -> f64 {
        let h = channel_entry(t, &self.scenario.warden, self.scenario.config.wavelength);
        self.warden_rest
            .iter()
            .zip(&self.own)
            .map(|(r, o)| (r + o * h).norm_sqr())
            .sum()
    }

    /// Region and spacing check with the shared geometry tolerance.
    pub fn placement_ok(&self, t: Position) -> bool {
        let cfg = &self.scenario.config;
        t.in_region(cfg.region_size)
            && self
                .others
                .iter()
                .all(|o| o.distance(&t) >= cfg.min_spacing - GEOMETRY_TOL)
    }
}

/// Best feasible point of the lattice `step * Z^2` inside the region, with
/// the current position kept as a candidate so the objective never rises.
pub fn grid_search_antenna(block: &AntennaBlock<'_>, current: Position, step: f64, p_th: f64) -> Position {
    let region = block.scenario.config.region_size;
    let count = (region / step + 1e-9).floor() as usize;
    let mut best = current;
    let mut best_val = block.objective(current);
    for ix in 0..=count {
        for iy in 0..=count {
            let t = Position::new(ix as f64 * step, iy as f64 * step);
            if !block.placement_ok(t) || block.warden_power(t) > p_th {
                continue;
            }
            let v = block.objective(t);
            if v < best_val {
                best_val = v;
                best = t;
            }
        }
    }
    best
}
