//! Shared instance generators and brute-force oracles.
#![allow(dead_code)]

use nalgebra::{DMatrix, Matrix2, Vector2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use covert_ma::bsum::init_positions;
use covert_ma::channel::{channel, AntennaArray, ChannelVector, PathSet, Position, Scenario, SystemConfig};
use covert_ma::sca::{CovertCap, HalfPlane, QuadraticSurrogate};
use covert_ma::wmmse::{update_auxiliary, AuxiliaryState, Beamformer};

pub struct Instance {
    pub scenario: Scenario,
    pub array: AntennaArray,
    pub beamformer: Beamformer,
    pub aux: AuxiliaryState,
}

/// Default-parameter scenario, random valid layout, random full-power beamformer.
pub fn random_instance(seed: u64) -> Instance {
    let cfg = SystemConfig::defaults();
    let scenario = Scenario::sample(&cfg, seed).unwrap();
    let array = init_positions(&cfg, seed ^ 0x5eed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31));
    let mut w = DMatrix::from_fn(cfg.antennas, cfg.users, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im)
    });
    let scale = (cfg.max_power / w.norm_squared()).sqrt();
    w *= Complex64::new(scale, 0.0);
    let beamformer = Beamformer(w);
    let channels = scenario.channels(&array);
    let aux = update_auxiliary(&beamformer, &channels.users, cfg.noise_power).unwrap();
    Instance {
        scenario,
        array,
        beamformer,
        aux,
    }
}

pub fn uniform_point(rng: &mut ChaCha8Rng, region: f64) -> Position {
    Position::new(rng.random_range(0.0..=region), rng.random_range(0.0..=region))
}

pub struct Subproblem {
    pub objective: QuadraticSurrogate,
    pub cap: Option<CovertCap>,
    pub half_planes: Vec<HalfPlane>,
    pub region: f64,
    pub anchor: Position,
}

fn random_psd(rng: &mut ChaCha8Rng, scale: f64) -> Matrix2<f64> {
    let m = Matrix2::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
    (m.transpose() * m) * scale + Matrix2::identity() * 1e-3 * scale
}

/// Convex quadratic over the unit box with up to three half-planes and an
/// optional quadratic cap, all satisfied at the anchor.
pub fn random_subproblem(rng: &mut ChaCha8Rng) -> Subproblem {
    let anchor = Position::new(rng.random_range(0.2..0.8), rng.random_range(0.2..0.8));
    let a = anchor.to_vector();
    let p = random_psd(rng, 1.0);
    let q = Vector2::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    ) * 3.0;
    let objective = QuadraticSurrogate { p, q, r: 0.0 };
    let planes = rng.random_range(0..=3);
    let half_planes = (0..planes)
        .map(|_| {
            let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let normal = Vector2::new(angle.cos(), angle.sin());
            HalfPlane {
                normal,
                offset: normal.dot(&a) - rng.random_range(0.0..0.3),
            }
        })
        .collect();
    let cap = rng.random_bool(0.7).then(|| {
        let surrogate = QuadraticSurrogate {
            p: random_psd(rng, 1.0),
            q: Vector2::new(
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            ),
            r: 0.0,
        };
        let budget = surrogate.value_at(&a) + rng.random_range(0.0..0.2);
        CovertCap { surrogate, budget }
    });
    Subproblem {
        objective,
        cap,
        half_planes,
        region: 1.0,
        anchor,
    }
}

pub fn feasible(sub: &Subproblem, v: &Vector2<f64>, tol: f64) -> bool {
    v.x >= -tol
        && v.y >= -tol
        && v.x <= sub.region + tol
        && v.y <= sub.region + tol
        && sub.half_planes.iter().all(|h| h.normal.dot(v) >= h.offset - tol)
        && sub
            .cap
            .as_ref()
            .is_none_or(|c| c.surrogate.value_at(v) <= c.budget + tol)
}

/// Smallest objective over the feasible points of a `points x points` grid.
pub fn grid_minimum(sub: &Subproblem, points: usize) -> f64 {
    let step = sub.region / (points - 1) as f64;
    let mut best = f64::INFINITY;
    for i in 0..points {
        for j in 0..points {
            let v = Vector2::new(i as f64 * step, j as f64 * step);
            if feasible(sub, &v, 0.0) {
                best = best.min(sub.objective.value_at(&v));
            }
        }
    }
    best
}

pub fn moved(array: &AntennaArray, n: usize, t: Position) -> AntennaArray {
    let mut positions = array.positions.clone();
    positions[n] = t;
    AntennaArray::new(positions)
}

/// `|w_i^H h(T)|^2` evaluated on the full channel vector.
pub fn power_truth(inst: &Instance, paths: &PathSet, i: usize, array: &AntennaArray) -> f64 {
    let h = channel(array, paths, inst.scenario.config.wavelength);
    h.0.dotc(&inst.beamformer.0.column(i)).norm_sqr()
}

/// `Re{phi w_k^H h(T)}`.
pub fn gain_truth(inst: &Instance, k: usize, array: &AntennaArray) -> f64 {
    let h = channel(array, &inst.scenario.users[k], inst.scenario.config.wavelength);
    let wh: Complex64 = inst.beamformer.0.column(k).dotc(&h.0);
    (inst.aux.phi[k] * wh).re
}

/// SINR of user `k` written from its definition.
pub fn sinr_oracle(k: usize, w: &Beamformer, h: &[ChannelVector], noise: f64) -> f64 {
    let gain = |i: usize| {
        let mut z = Complex64::new(0.0, 0.0);
        for n in 0..w.antennas() {
            z += h[k].0[n].conj() * w.0[(n, i)];
        }
        z.norm_sqr()
    };
    let interference: f64 = (0..w.users()).filter(|&i| i != k).map(gain).sum();
    gain(k) / (interference + noise)
}
