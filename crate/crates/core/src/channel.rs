//! Field-response channel model for a planar array of movable antennas.
//!
//! Each receiver sees `L` far-field paths. Path `l` has a normalized direction
//! `rho_l = [sin(theta) cos(phi), cos(theta)]` and a complex response `g_l`; an
//! antenna at `t` contributes the phase `exp(j 2 pi / lambda * t . rho_l)`.
//! The channel entry for antenna `n` is the conjugated field response applied
//! to the path responses.

use std::f64::consts::PI;

use nalgebra::{DVector, Vector2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};

/// Tolerance applied to the minimum-spacing and region checks.
pub const GEOMETRY_TOL: f64 = 1e-9;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

/// Physical constants and scenario parameters. Powers are linear watts.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub wavelength: f64,
    pub users: usize,
    pub antennas: usize,
    /// Path counts per receiver, warden first (index 0), then users 1..=K.
    pub paths_per_receiver: Vec<usize>,
    /// Side of the square moving region `[0, A]^2`, in metres.
    pub region_size: f64,
    pub min_spacing: f64,
    pub noise_power: f64,
    pub warden_noise_power: f64,
    pub noise_uncertainty: f64,
    pub covertness_level: f64,
    pub max_power: f64,
    /// Average large-scale gain; each path response has variance `path_gain / L`.
    pub path_gain: f64,
}

impl SystemConfig {
    /// The evaluation setup: K = 2 users, N = 4 antennas, four paths per
    /// receiver, a 3-wavelength region at 0.1 m wavelength, -90 dBm noise at
    /// users and warden, tau = 1.5, epsilon = 0.05 and a 10 dBm power budget.
    pub fn defaults() -> Self {
        let wavelength = 0.1;
        SystemConfig {
            wavelength,
            users: 2,
            antennas: 4,
            paths_per_receiver: vec![4; 3],
            region_size: 3.0 * wavelength,
            min_spacing: wavelength / 2.0,
            noise_power: dbm_to_watts(-90.0),
            warden_noise_power: dbm_to_watts(-90.0),
            noise_uncertainty: 1.5,
            covertness_level: 0.05,
            max_power: dbm_to_watts(10.0),
            path_gain: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.wavelength.is_finite() && self.wavelength > 0.0) {
            return bad(format!("wavelength must be positive, got {}", self.wavelength));
        }
        if self.users == 0 {
            return bad("at least one user is required".into());
        }
        if self.antennas < self.users {
            return bad(format!(
                "need at least as many antennas as users ({} < {})",
                self.antennas, self.users
            ));
        }
        if self.paths_per_receiver.len() != self.users + 1 {
            return bad(format!(
                "expected {} path counts (warden + users), got {}",
                self.users + 1,
                self.paths_per_receiver.len()
            ));
        }
        if self.paths_per_receiver.contains(&0) {
            return bad("every receiver needs at least one path".into());
        }
        for (name, v) in [
            ("noise power", self.noise_power),
            ("warden noise power", self.warden_noise_power),
            ("max power", self.max_power),
            ("path gain", self.path_gain),
            ("minimum spacing", self.min_spacing),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.region_size.is_finite() && self.region_size >= 0.0) {
            return bad(format!("region size must be non-negative, got {}", self.region_size));
        }
        if self.region_size == 0.0 && self.antennas > 1 {
            return bad("a zero-area region holds a single antenna only".into());
        }
        if !(self.noise_uncertainty.is_finite() && self.noise_uncertainty > 1.0) {
            return Err(Error::DegenerateUncertainty(self.noise_uncertainty));
        }
        if !(self.covertness_level > 0.0 && self.covertness_level <= 0.5) {
            return bad(format!(
                "covertness level must lie in (0, 0.5], got {}",
                self.covertness_level
            ));
        }
        if !admits_packing(self.antennas, self.region_size, self.min_spacing) {
            return Err(Error::Packing {
                count: self.antennas,
                spacing: self.min_spacing,
                region: self.region_size,
                attempts: PACKING_RETRIES,
            });
        }
        Ok(())
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength
    }
}

const PACKING_RETRIES: usize = 64;

/// Whether `count` points with pairwise spacing `spacing` fit in `[0, region]^2`.
///
/// A square lattice is tried first; otherwise greedy random sequential
/// placement is retried a bounded number of times from a fixed seed.
pub fn admits_packing(count: usize, region: f64, spacing: f64) -> bool {
    if count <= 1 {
        return true;
    }
    let per_side = (region / spacing + GEOMETRY_TOL).floor() as usize + 1;
    if per_side.saturating_mul(per_side) >= count {
        return true;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let side = Uniform::new_inclusive(0.0, region).expect("finite region");
    for _ in 0..PACKING_RETRIES {
        let mut placed: Vec<Position> = Vec::with_capacity(count);
        for _ in 0..1000 * count {
            let p = Position::new(side.sample(&mut rng), side.sample(&mut rng));
            if placed.iter().all(|q| p.distance(q) >= spacing) {
                placed.push(p);
                if placed.len() == count {
                    return true;
                }
            }
        }
    }
    false
}

/// A 2-D antenna position in metres, relative to the region corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn from_vector(v: &Vector2<f64>) -> Self {
        Position { x: v.x, y: v.y }
    }

    pub fn dot(&self, d: &Vector2<f64>) -> f64 {
        self.x * d.x + self.y * d.y
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn in_region(&self, region: f64) -> bool {
        let inside = |c: f64| c >= -GEOMETRY_TOL && c <= region + GEOMETRY_TOL;
        self.x.is_finite() && self.y.is_finite() && inside(self.x) && inside(self.y)
    }
}

/// Positions of the N movable antennas.
#[derive(Debug, Clone, PartialEq)]
pub struct AntennaArray {
    pub positions: Vec<Position>,
}

impl AntennaArray {
    pub fn new(positions: Vec<Position>) -> Self {
        AntennaArray { positions }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.positions.iter().enumerate() {
            for b in &self.positions[i + 1..] {
                best = best.min(a.distance(b));
            }
        }
        best
    }

    /// Checks the region and minimum-spacing constraints.
    pub fn validate(&self, region: f64, min_spacing: f64) -> Result<()> {
        if let Some(p) = self.positions.iter().find(|p| !p.in_region(region)) {
            return Err(Error::InvalidConfig(format!(
                "antenna at ({}, {}) leaves the {region} m region",
                p.x, p.y
            )));
        }
        let d = self.min_pairwise_distance();
        if d < min_spacing - GEOMETRY_TOL {
            return Err(Error::InvalidConfig(format!(
                "antennas {d} m apart, minimum is {min_spacing} m"
            )));
        }
        Ok(())
    }
}

/// `[sin(theta) cos(phi), cos(theta)]`.
pub fn normalized_direction(theta: f64, phi: f64) -> Vector2<f64> {
    Vector2::new(theta.sin() * phi.cos(), theta.cos())
}

/// Multipath geometry seen by one receiver (0 = warden, 1..=K = users).
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub receiver_id: usize,
    /// `(theta, phi)` elevation/azimuth angles of departure.
    pub angles: Vec<(f64, f64)>,
    pub directions: Vec<Vector2<f64>>,
    pub responses: Vec<Complex64>,
}

impl PathSet {
    pub fn new(receiver_id: usize, angles: Vec<(f64, f64)>, responses: Vec<Complex64>) -> Self {
        assert_eq!(angles.len(), responses.len(), "one response per path");
        let directions = angles
            .iter()
            .map(|&(theta, phi)| normalized_direction(theta, phi))
            .collect();
        PathSet {
            receiver_id,
            angles,
            directions,
            responses,
        }
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    /// Upper bound on any channel entry magnitude, `sum |g_l|`.
    pub fn response_l1(&self) -> f64 {
        self.responses.iter().map(|g| g.norm()).sum()
    }
}

/// Channel from the array to one receiver; entry `n` belongs to antenna `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelVector(pub DVector<Complex64>);

impl ChannelVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm_squared(&self) -> f64 {
        self.0.norm_squared()
    }
}

/// Per-path phase factors `exp(j k t . rho_l)` at one antenna position.
pub fn field_response(t: Position, paths: &PathSet, wavelength: f64) -> Vec<Complex64> {
    let k = 2.0 * PI / wavelength;
    paths
        .directions
        .iter()
        .map(|d| Complex64::from_polar(1.0, k * t.dot(d)))
        .collect()
}

/// `f(t)^H g` for a single antenna at `t`.
pub fn channel_entry(t: Position, paths: &PathSet, wavelength: f64) -> Complex64 {
    let k = 2.0 * PI / wavelength;
    paths
        .directions
        .iter()
        .zip(&paths.responses)
        .map(|(d, g)| Complex64::from_polar(1.0, -k * t.dot(d)) * g)
        .sum()
}

/// `h(T) = F(T)^H g`.
pub fn channel(array: &AntennaArray, paths: &PathSet, wavelength: f64) -> ChannelVector {
    ChannelVector(DVector::from_iterator(
        array.len(),
        array.positions.iter().map(|&t| channel_entry(t, paths, wavelength)),
    ))
}

/// Draws `K + 1` path sets (warden first). Angles are uniform on `[0, pi]^2`,
/// responses circularly-symmetric Gaussian with variance `path_gain / L`.
pub fn sample_scenario(cfg: &SystemConfig, seed: u64) -> Vec<PathSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let angle = Uniform::new_inclusive(0.0, PI).expect("finite bounds");
    cfg.paths_per_receiver
        .iter()
        .enumerate()
        .map(|(receiver, &count)| {
            let angles: Vec<(f64, f64)> = (0..count)
                .map(|_| (angle.sample(&mut rng), angle.sample(&mut rng)))
                .collect();
            let std = (cfg.path_gain / count as f64 / 2.0).sqrt();
            let responses = (0..count)
                .map(|_| {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    Complex64::new(re * std, im * std)
                })
                .collect();
            PathSet::new(receiver, angles, responses)
        })
        .collect()
}

/// A configuration together with the path geometry of every receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: SystemConfig,
    pub warden: PathSet,
    pub users: Vec<PathSet>,
}

/// Channels evaluated at one antenna layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Channels {
    pub users: Vec<ChannelVector>,
    pub warden: ChannelVector,
}

impl Scenario {
    pub fn sample(config: &SystemConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Self::from_paths(config.clone(), sample_scenario(config, seed))
    }

    pub fn from_paths(config: SystemConfig, mut paths: Vec<PathSet>) -> Result<Self> {
        if paths.len() != config.users + 1 {
            return Err(Error::Dimension(format!(
                "{} path sets for {} users",
                paths.len(),
                config.users
            )));
        }
        let users = paths.split_off(1);
        let warden = paths.pop().expect("warden path set");
        Ok(Scenario { config, warden, users })
    }

    pub fn channels(&self, array: &AntennaArray) -> Channels {
        let lambda = self.config.wavelength;
        Channels {
            users: self.users.iter().map(|p| channel(array, p, lambda)).collect(),
            warden: channel(array, &self.warden, lambda),
        }
    }

    /// Same paths with a different configuration (power, N, region...).
    pub fn with_config(&self, config: SystemConfig) -> Self {
        Scenario {
            config,
            warden: self.warden.clone(),
            users: self.users.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn single_path(theta: f64, phi: f64, g: Complex64) -> PathSet {
        PathSet::new(1, vec![(theta, phi)], vec![g])
    }

    #[test]
    fn direction_examples() {
        let d = normalized_direction(PI / 2.0, 0.0);
        assert_abs_diff_eq!(d.x, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.y, 0.0, epsilon = 1e-15);
        let d = normalized_direction(0.0, 1.234);
        assert_abs_diff_eq!(d.x, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.y, 1.0, epsilon = 1e-15);
        let d = normalized_direction(PI / 4.0, PI / 3.0);
        assert_abs_diff_eq!(d.x, (PI / 4.0).sin() * (PI / 3.0).cos(), epsilon = 1e-15);
        assert_abs_diff_eq!(d.x, 0.353_553_390_593_273_8, epsilon = 1e-12);
        assert_abs_diff_eq!(d.y, std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
    }

    #[test]
    fn field_response_examples() {
        let lambda = 0.1;
        let paths = sample_scenario(&SystemConfig::defaults(), 3).remove(1);
        for f in field_response(Position::new(0.0, 0.0), &paths, lambda) {
            assert_abs_diff_eq!(f.re, 1.0, epsilon = 1e-15);
            assert_abs_diff_eq!(f.im, 0.0, epsilon = 1e-15);
        }
        let p = single_path(PI / 2.0, 0.0, Complex64::new(1.0, 0.0));
        let f = field_response(Position::new(lambda / 2.0, 0.0), &p, lambda)[0];
        assert_abs_diff_eq!(f.re, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.im, 0.0, epsilon = 1e-12);
        let f = field_response(Position::new(lambda / 4.0, 0.0), &p, lambda)[0];
        assert_abs_diff_eq!(f.re, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.im, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn channel_examples() {
        let lambda = 0.1;
        let paths = sample_scenario(&SystemConfig::defaults(), 9).remove(2);
        let origin = AntennaArray::new(vec![Position::new(0.0, 0.0)]);
        let h = channel(&origin, &paths, lambda);
        let sum: Complex64 = paths.responses.iter().sum();
        assert_abs_diff_eq!((h.0[0] - sum).norm(), 0.0, epsilon = 1e-20);

        let p = single_path(PI / 2.0, 0.0, Complex64::new(1.0, 0.0));
        let half = AntennaArray::new(vec![Position::new(lambda / 2.0, 0.0)]);
        let h = channel(&half, &p, lambda);
        assert_abs_diff_eq!((h.0[0] - Complex64::new(-1.0, 0.0)).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn scenario_is_deterministic_and_counts_receivers() {
        let cfg = SystemConfig::defaults();
        let a = sample_scenario(&cfg, 42);
        let b = sample_scenario(&cfg, 42);
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert_eq!(a.iter().map(|p| p.receiver_id).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_ne!(a, sample_scenario(&cfg, 43));
    }

    #[test]
    fn response_power_matches_path_gain() {
        let cfg = SystemConfig {
            path_gain: 1.0,
            users: 1,
            paths_per_receiver: vec![4, 4],
            ..SystemConfig::defaults()
        };
        let draws = 100_000u64;
        let total: f64 = (0..draws)
            .map(|s| {
                sample_scenario(&cfg, s)[1]
                    .responses
                    .iter()
                    .map(|g| g.norm_sqr())
                    .sum::<f64>()
            })
            .sum();
        let mean = total / draws as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean power {mean}");
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let base = SystemConfig::defaults();
        assert!(base.validate().is_ok());
        let tau_one = SystemConfig {
            noise_uncertainty: 1.0,
            ..base.clone()
        };
        assert!(matches!(tau_one.validate(), Err(Error::DegenerateUncertainty(_))));
        let crowded = SystemConfig {
            antennas: 12,
            region_size: 0.1,
            ..base.clone()
        };
        assert!(matches!(crowded.validate(), Err(Error::Packing { .. })));
        let eps = SystemConfig {
            covertness_level: 0.7,
            ..base.clone()
        };
        assert!(eps.validate().is_err());
        let short = SystemConfig {
            paths_per_receiver: vec![4, 4],
            ..base
        };
        assert!(short.validate().is_err());
    }

    #[test]
    fn packing_check() {
        assert!(admits_packing(1, 0.0, 0.05));
        assert!(admits_packing(9, 0.1, 0.05));
        assert!(!admits_packing(40, 0.1, 0.05));
    }

    #[test]
    fn dbm_conversion() {
        assert_abs_diff_eq!(dbm_to_watts(30.0), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(dbm_to_watts(-90.0), 1e-12, epsilon = 1e-27);
        assert_abs_diff_eq!(watts_to_dbm(dbm_to_watts(7.5)), 7.5, epsilon = 1e-12);
    }
}
