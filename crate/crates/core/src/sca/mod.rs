//! Antenna-position block: per-antenna successive convex approximation.
//!
//! With every other antenna fixed, the received power `|w_i^H h_k(t_n)|^2`
//! and the correlation `Re{phi_k w_k^H h_k(t_n)}` are sums of cosines in the
//! position `t_n`. Each cosine is bounded by its second-order Taylor expansion
//! widened (or narrowed) by the global curvature bound, which gives convex
//! quadratic majorants and concave quadratic minorants that are tight at the
//! current position. The non-convex spacing constraint is replaced by a
//! half-plane through the anchor.

mod block;
mod subproblem;

use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;

use crate::channel::{channel_entry, AntennaArray, PathSet, Position, Scenario};
use crate::error::{Error, Result};
use crate::wmmse::{AuxiliaryState, Beamformer};

pub use block::{grid_search_antenna, AntennaBlock};
pub use subproblem::{solve_position_subproblem, CovertCap, HalfPlane, SubproblemSolution};

/// Relative magnitude below which a cosine term is dropped.
pub const NEGLIGIBLE_TERM: f64 = 1e-18;

/// `m * cos(k d^T t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineTerm {
    pub magnitude: f64,
    pub direction: Vector2<f64>,
    pub phase: f64,
}

/// `constant + sum_i m_i cos(k d_i^T t + psi_i)` as a function of one position.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineTermSet {
    pub terms: Vec<CosineTerm>,
    pub constant: f64,
    pub wavelength: f64,
}

impl CosineTermSet {
    fn new(wavelength: f64) -> Self {
        CosineTermSet {
            terms: Vec::new(),
            constant: 0.0,
            wavelength,
        }
    }

    fn push(&mut self, coefficient: Complex64, direction: Vector2<f64>, extra_phase: f64, weight: f64) {
        let magnitude = weight * coefficient.norm();
        if magnitude > 0.0 {
            self.terms.push(CosineTerm {
                magnitude,
                direction,
                phase: coefficient.arg() + extra_phase,
            });
        }
    }

    fn prune(mut self) -> Self {
        let largest = self.terms.iter().map(|t| t.magnitude).fold(0.0, f64::max);
        self.terms.retain(|t| t.magnitude >= NEGLIGIBLE_TERM * largest);
        self
    }

    /// `s * self`; a negative factor flips every phase by pi.
    pub fn scaled(mut self, s: f64) -> Self {
        let shift = if s < 0.0 { PI } else { 0.0 };
        for term in &mut self.terms {
            term.magnitude *= s.abs();
            term.phase += shift;
        }
        self.constant *= s;
        self
    }

    pub fn extend(&mut self, other: CosineTermSet) {
        self.terms.extend(other.terms);
        self.constant += other.constant;
    }

    /// Combines terms that share a direction (up to sign) into one phasor.
    /// The function is unchanged; its quadratic bounds become tighter.
    pub fn merged(self) -> Self {
        let mut groups: Vec<(Vector2<f64>, Complex64)> = Vec::new();
        for term in &self.terms {
            let d = term.direction;
            let (dir, phase) = if d.x < 0.0 || (d.x == 0.0 && d.y < 0.0) {
                (-d, -term.phase)
            } else {
                (d, term.phase)
            };
            let phasor = Complex64::from_polar(term.magnitude, phase);
            match groups.iter_mut().find(|(g, _)| *g == dir) {
                Some((_, acc)) => *acc += phasor,
                None => groups.push((dir, phasor)),
            }
        }
        let mut out = CosineTermSet::new(self.wavelength);
        out.constant = self.constant;
        for (dir, acc) in groups {
            out.push(acc, dir, 0.0, 1.0);
        }
        out.prune()
    }

    pub fn evaluate(&self, t: Position) -> f64 {
        let k = 2.0 * PI / self.wavelength;
        self.constant
            + self
                .terms
                .iter()
                .map(|term| term.magnitude * (k * t.dot(&term.direction) + term.phase).cos())
                .sum::<f64>()
    }

    /// Sum of per-term `psi_ub` bounds; a convex quadratic majorant.
    pub fn upper_bound(&self, anchor: Position) -> QuadraticSurrogate {
        self.fold_bounds(anchor, 1.0)
    }

    /// Sum of per-term `psi_lb` bounds; a concave quadratic minorant.
    pub fn lower_bound(&self, anchor: Position) -> QuadraticSurrogate {
        self.fold_bounds(anchor, -1.0)
    }

    fn fold_bounds(&self, anchor: Position, curvature_sign: f64) -> QuadraticSurrogate {
        let k = 2.0 * PI / self.wavelength;
        // Accumulate in coordinates relative to the anchor, convert once.
        let mut p = Matrix2::zeros();
        let mut g = Vector2::zeros();
        let mut c = self.constant;
        for term in &self.terms {
            let a = k * anchor.dot(&term.direction) + term.phase;
            c += term.magnitude * a.cos();
            g -= term.direction * (term.magnitude * k * a.sin());
            p += term.direction * term.direction.transpose() * (curvature_sign * term.magnitude * k * k / 2.0);
        }
        QuadraticSurrogate::from_anchored(anchor, p, g, c)
    }
}

/// `t^T P t + q^T t + r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticSurrogate {
    pub p: Matrix2<f64>,
    pub q: Vector2<f64>,
    pub r: f64,
}

impl QuadraticSurrogate {
    pub fn zero() -> Self {
        QuadraticSurrogate {
            p: Matrix2::zeros(),
            q: Vector2::zeros(),
            r: 0.0,
        }
    }

    /// Converts `c + g^T D + D^T P D` with `D = t - anchor` to absolute form.
    pub fn from_anchored(anchor: Position, p: Matrix2<f64>, g: Vector2<f64>, c: f64) -> Self {
        let t0 = anchor.to_vector();
        let pt0 = p * t0;
        QuadraticSurrogate {
            p,
            q: g - pt0 * 2.0,
            r: c - g.dot(&t0) + t0.dot(&pt0),
        }
    }

    pub fn value(&self, t: Position) -> f64 {
        let v = t.to_vector();
        v.dot(&(self.p * v)) + self.q.dot(&v) + self.r
    }

    pub fn value_at(&self, v: &Vector2<f64>) -> f64 {
        v.dot(&(self.p * v)) + self.q.dot(v) + self.r
    }

    pub fn gradient(&self, v: &Vector2<f64>) -> Vector2<f64> {
        (self.p + self.p.transpose()) * v + self.q
    }

    pub fn scaled(&self, s: f64) -> Self {
        QuadraticSurrogate {
            p: self.p * s,
            q: self.q * s,
            r: self.r * s,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        QuadraticSurrogate {
            p: self.p + other.p,
            q: self.q + other.q,
            r: self.r + other.r,
        }
    }

    /// Smallest eigenvalue of the symmetric part of `P`.
    pub fn min_curvature(&self) -> f64 {
        let s = (self.p + self.p.transpose()) * 0.5;
        let mean = 0.5 * (s[(0, 0)] + s[(1, 1)]);
        let half_gap = (0.25 * (s[(0, 0)] - s[(1, 1)]).powi(2) + s[(0, 1)].powi(2)).sqrt();
        mean - half_gap
    }
}

impl std::iter::Sum for QuadraticSurrogate {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(QuadraticSurrogate::zero(), |acc, q| acc.add(&q))
    }
}

fn taylor_bound(
    t: Position,
    anchor: Position,
    direction: &Vector2<f64>,
    phase: f64,
    wavelength: f64,
    sign: f64,
) -> f64 {
    let k = 2.0 * PI / wavelength;
    let a = k * anchor.dot(direction) + phase;
    let proj = direction.x * (t.x - anchor.x) + direction.y * (t.y - anchor.y);
    a.cos() - k * a.sin() * proj + sign * 2.0 * PI * PI / (wavelength * wavelength) * proj * proj
}

/// Quadratic majorant of `cos(2 pi / lambda * d^T t + phase)` around `anchor`.
pub fn psi_ub(t: Position, anchor: Position, direction: &Vector2<f64>, phase: f64, wavelength: f64) -> f64 {
    taylor_bound(t, anchor, direction, phase, wavelength, 1.0)
}

/// Quadratic minorant of `cos(2 pi / lambda * d^T t + phase)` around `anchor`.
pub fn psi_lb(t: Position, anchor: Position, direction: &Vector2<f64>, phase: f64, wavelength: f64) -> f64 {
    taylor_bound(t, anchor, direction, phase, wavelength, -1.0)
}

/// `sum_{n' != n} conj(w_n') h_n'` for antenna `n` removed.
fn others_contribution(n: usize, w: &[Complex64], paths: &PathSet, array: &AntennaArray, wavelength: f64) -> Complex64 {
    array
        .positions
        .iter()
        .enumerate()
        .filter(|&(m, _)| m != n)
        .map(|(m, &t)| w[m].conj() * channel_entry(t, paths, wavelength))
        .sum()
}

/// `|w^H h(t_n)|^2` as a cosine expansion in the position of antenna `n`.
///
/// Coefficients are `alpha^{n,n',l,l'} = w_n conj(w_n') conj(g_l) g_l'`.
/// Pairs with `n' = n` give direction `rho_l - rho_l'` (the `l = l'` pairs
/// are constant); pairs with `n' != n` appear twice with direction `rho_l`.
/// Terms independent of `t_n` are collected in the constant.
pub fn expand_received_power(
    n: usize,
    w: &[Complex64],
    paths: &PathSet,
    array: &AntennaArray,
    wavelength: f64,
) -> CosineTermSet {
    let k = 2.0 * PI / wavelength;
    let mut set = CosineTermSet::new(wavelength);
    let wn = w[n];
    if wn.norm_sqr() == 0.0 {
        set.constant = others_contribution(n, w, paths, array, wavelength).norm_sqr();
        return set;
    }
    let g = &paths.responses;
    let rho = &paths.directions;
    for l in 0..g.len() {
        for lp in 0..g.len() {
            let alpha = wn * wn.conj() * g[l].conj() * g[lp];
            if l == lp {
                set.constant += alpha.re;
            } else {
                set.push(alpha, rho[l] - rho[lp], 0.0, 1.0);
            }
        }
    }
    for (m, &t_other) in array.positions.iter().enumerate() {
        if m == n || w[m].norm_sqr() == 0.0 {
            continue;
        }
        for l in 0..g.len() {
            for lp in 0..g.len() {
                let alpha = wn * w[m].conj() * g[l].conj() * g[lp];
                set.push(alpha, rho[l], -k * t_other.dot(&rho[lp]), 2.0);
            }
        }
    }
    // The n', n'' != n block is exactly |sum_{n' != n} conj(w_n') h_n'|^2.
    set.constant += others_contribution(n, w, paths, array, wavelength).norm_sqr();
    set.prune()
}

/// `Re{phi w^H h(t_n)}` with `theta^{n,l} = w_n conj(phi) conj(g_l)`.
pub fn expand_weighted_gain(
    n: usize,
    w: &[Complex64],
    phi: Complex64,
    paths: &PathSet,
    array: &AntennaArray,
    wavelength: f64,
) -> CosineTermSet {
    let mut set = CosineTermSet::new(wavelength);
    set.constant = (phi * others_contribution(n, w, paths, array, wavelength)).re;
    for (g, rho) in paths.responses.iter().zip(&paths.directions) {
        let theta = w[n] * phi.conj() * g.conj();
        set.push(theta, *rho, 0.0, 1.0);
    }
    set.prune()
}

fn column(w: &Beamformer, k: usize) -> Vec<Complex64> {
    w.0.column(k).iter().copied().collect()
}

/// Majorant of `|w_i^H h_k(t_n)|^2` tight at the current position of antenna `n`.
pub fn zeta1(
    n: usize,
    i: usize,
    w: &Beamformer,
    paths: &PathSet,
    array: &AntennaArray,
    wavelength: f64,
) -> QuadraticSurrogate {
    expand_received_power(n, &column(w, i), paths, array, wavelength).upper_bound(array.positions[n])
}

/// Minorant of `Re{phi_k w_k^H h_k(t_n)}` tight at the current position.
pub fn zeta2(
    n: usize,
    k: usize,
    w: &Beamformer,
    phi: Complex64,
    paths: &PathSet,
    array: &AntennaArray,
    wavelength: f64,
) -> QuadraticSurrogate {
    expand_weighted_gain(n, &column(w, k), phi, paths, array, wavelength).lower_bound(array.positions[n])
}

/// Majorants of each stream's warden power `|w_k^H h_0(t_n)|^2`.
pub fn zeta3(
    n: usize,
    w: &Beamformer,
    warden: &PathSet,
    array: &AntennaArray,
    wavelength: f64,
) -> Vec<QuadraticSurrogate> {
    (0..w.users())
        .map(|k| zeta1(n, k, w, warden, array, wavelength))
        .collect()
}

/// Linearized distance `u^T (t - t_other)` with `u` the unit vector from
/// `t_other` to the anchor; it never exceeds the true distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceBound {
    pub normal: Vector2<f64>,
    pub other: Position,
}

impl DistanceBound {
    pub fn value(&self, t: Position) -> f64 {
        self.normal.x * (t.x - self.other.x) + self.normal.y * (t.y - self.other.y)
    }

    /// `{t : u^T (t - t_other) >= d_min}`.
    pub fn half_plane(&self, min_spacing: f64) -> HalfPlane {
        HalfPlane {
            normal: self.normal,
            offset: self.normal.dot(&self.other.to_vector()) + min_spacing,
        }
    }
}

pub fn min_distance_linearization(anchor: Position, other: Position) -> Result<DistanceBound> {
    let diff = anchor.to_vector() - other.to_vector();
    let norm = diff.norm();
    if !(norm > 0.0) {
        return Err(Error::CoincidentAntennas {
            x: anchor.x,
            y: anchor.y,
        });
    }
    Ok(DistanceBound {
        normal: diff / norm,
        other,
    })
}

/// How the cosine terms of one antenna's objective are bounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SurrogateForm {
    /// One quadratic bound per cosine term.
    #[default]
    PerTerm,
    /// Terms sharing a direction are summed before bounding.
    Merged,
}

impl std::str::FromStr for SurrogateForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_term" => Ok(SurrogateForm::PerTerm),
            "merged" => Ok(SurrogateForm::Merged),
            other => Err(Error::InvalidConfig(format!("unknown surrogate form {other:?}"))),
        }
    }
}

/// The assembled convex subproblem for one antenna.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionSubproblem {
    pub objective: QuadraticSurrogate,
    pub covert: CovertCap,
    pub half_planes: Vec<HalfPlane>,
    pub region: f64,
    pub anchor: Position,
}

/// Builds `sum_k beta_k (|phi_k|^2 sum_i zeta1^{i,k} - 2 zeta2^k)` together
/// with the linearized spacing and the warden-power majorant.
pub fn assemble_subproblem(
    n: usize,
    w: &Beamformer,
    aux: &AuxiliaryState,
    scenario: &Scenario,
    array: &AntennaArray,
    p_th: f64,
    form: SurrogateForm,
) -> Result<PositionSubproblem> {
    let cfg = &scenario.config;
    let lambda = cfg.wavelength;
    let users = w.users();
    let streams: Vec<Vec<Complex64>> = (0..users).map(|k| column(w, k)).collect();
    let anchor = array.positions[n];

    let (objective, covert) = match form {
        SurrogateForm::PerTerm => {
            let mut objective = QuadraticSurrogate::zero();
            for (k, paths) in scenario.users.iter().enumerate() {
                let power_weight = aux.beta[k] * aux.phi[k].norm_sqr();
                if power_weight > 0.0 {
                    for stream in &streams {
                        let bound = expand_received_power(n, stream, paths, array, lambda).upper_bound(anchor);
                        objective = objective.add(&bound.scaled(power_weight));
                    }
                }
                let gain = expand_weighted_gain(n, &streams[k], aux.phi[k], paths, array, lambda).lower_bound(anchor);
                objective = objective.add(&gain.scaled(-2.0 * aux.beta[k]));
            }
            let covert = streams
                .iter()
                .map(|s| expand_received_power(n, s, &scenario.warden, array, lambda).upper_bound(anchor))
                .sum();
            (objective, covert)
        }
        SurrogateForm::Merged => {
            let mut terms = CosineTermSet::new(lambda);
            for (k, paths) in scenario.users.iter().enumerate() {
                let power_weight = aux.beta[k] * aux.phi[k].norm_sqr();
                if power_weight > 0.0 {
                    for stream in &streams {
                        terms.extend(expand_received_power(n, stream, paths, array, lambda).scaled(power_weight));
                    }
                }
                terms.extend(
                    expand_weighted_gain(n, &streams[k], aux.phi[k], paths, array, lambda).scaled(-2.0 * aux.beta[k]),
                );
            }
            let mut warden = CosineTermSet::new(lambda);
            for s in &streams {
                warden.extend(expand_received_power(n, s, &scenario.warden, array, lambda));
            }
            (terms.merged().upper_bound(anchor), warden.merged().upper_bound(anchor))
        }
    };

    let half_planes = array
        .positions
        .iter()
        .enumerate()
        .filter(|&(m, _)| m != n)
        .map(|(_, &other)| min_distance_linearization(anchor, other).map(|d| d.half_plane(cfg.min_spacing)))
        .collect::<Result<Vec<_>>>()?;

    Ok(PositionSubproblem {
        objective,
        covert: CovertCap {
            surrogate: covert,
            budget: p_th,
        },
        half_planes,
        region: cfg.region_size,
        anchor,
    })
}

/// New position of antenna `n` from one SCA step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AntennaUpdate {
    pub position: Position,
    pub flagged: bool,
}

pub fn sca_update_antenna(
    n: usize,
    w: &Beamformer,
    aux: &AuxiliaryState,
    scenario: &Scenario,
    array: &AntennaArray,
    p_th: f64,
    form: SurrogateForm,
) -> Result<AntennaUpdate> {
    let sub = assemble_subproblem(n, w, aux, scenario, array, p_th, form)?;
    let solution = solve_position_subproblem(
        &sub.objective,
        Some(&sub.covert),
        &sub.half_planes,
        sub.region,
        sub.anchor,
    );
    Ok(AntennaUpdate {
        position: solution.position,
        flagged: solution.flagged,
    })
}
