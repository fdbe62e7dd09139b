//! Beamforming block: proximal distance algorithm over the power ball and the
//! covertness set.
//!
//! With `(phi, beta)` and the layout fixed, the beamformer minimizes the
//! convex quadratic `sum_k w_k^H A w_k - 2 Re{b_k^H w_k}` subject to
//! `||W||_F^2 <= p_max` and `sum_k |h0^H w_k|^2 <= p_th`. Each constraint is
//! replaced by `rho * ||W - Proj(W_s)||^2`, which leaves an unconstrained
//! quadratic with the closed-form minimizer
//!
//! ```text
//! w_k = (A + 2 rho I)^-1 (b_k + rho [W1]_k + rho [W2]_k)
//! ```
//!
//! and `rho` grows geometrically until the iterates settle on the feasible set.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::channel::ChannelVector;
use crate::covertness::warden_received_power;
use crate::error::{Error, Result};
use crate::wmmse::{AuxiliaryState, Beamformer};

/// Multiplier corrections tried when rounding leaves the covertness
/// projection just outside the set.
pub const COVERT_NUDGES: usize = 60;
/// Relative squared distance to the constraint sets below which the PDA may stop.
pub const PDA_FEASIBILITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdaConfig {
    /// Initial penalty, relative to the mean eigenvalue of `A`.
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub max_iters: usize,
    /// Relative decrease of the penalized objective that ends the loop.
    pub objective_tol: f64,
}

impl Default for PdaConfig {
    fn default() -> Self {
        PdaConfig {
            penalty_init: 0.05,
            penalty_growth: 1.1,
            max_iters: 200,
            objective_tol: 1e-3,
        }
    }
}

impl PdaConfig {
    /// A configuration that always runs exactly `iters` inner iterations.
    pub fn fixed_iterations(iters: usize) -> Self {
        PdaConfig {
            max_iters: iters,
            objective_tol: f64::NEG_INFINITY,
            ..Self::default()
        }
    }
}

/// Data of the beamforming quadratic for one outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticBlockData {
    /// Shared Hermitian PSD matrix `sum_k beta_k |phi_k|^2 h_k h_k^H`.
    pub a: DMatrix<Complex64>,
    /// Column `k` is `beta_k phi_k h_k`.
    pub b: DMatrix<Complex64>,
    pub h0: ChannelVector,
}

impl QuadraticBlockData {
    /// The rank-one warden matrix `h0 h0^H`.
    pub fn h0_outer(&self) -> DMatrix<Complex64> {
        &self.h0.0 * self.h0.0.adjoint()
    }

    pub fn antennas(&self) -> usize {
        self.a.nrows()
    }
}

pub fn build_block_data(aux: &AuxiliaryState, channels: &[ChannelVector], h0: &ChannelVector) -> QuadraticBlockData {
    let n = h0.len();
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, channels.len());
    for (k, h) in channels.iter().enumerate() {
        let weight = aux.beta[k] * aux.phi[k].norm_sqr();
        a.gerc(Complex64::new(weight, 0.0), &h.0, &h.0, Complex64::new(1.0, 0.0));
        b.set_column(k, &(&h.0 * (aux.phi[k] * aux.beta[k])));
    }
    QuadraticBlockData { a, b, h0: h0.clone() }
}

/// `sum_k w_k^H A w_k - 2 Re{b_k^H w_k}`.
pub fn block_objective(data: &QuadraticBlockData, w: &Beamformer) -> f64 {
    let aw = &data.a * &w.0;
    w.0.column_iter()
        .zip(aw.column_iter())
        .zip(data.b.column_iter())
        .map(|((wk, awk), bk)| wk.dotc(&awk).re - 2.0 * bk.dotc(&wk).re)
        .sum()
}

/// Euclidean projection onto `||W||_F^2 <= p_max`.
pub fn project_power(w: &Beamformer, p_max: f64) -> Beamformer {
    let power = w.total_power();
    if power <= p_max {
        return w.clone();
    }
    Beamformer(&w.0 * Complex64::new((p_max / power).sqrt(), 0.0))
}

/// `(I + s h0 h0^H)^-1 W` via Sherman-Morrison.
fn shrink_along(w: &Beamformer, h0: &ChannelVector, h0_norm_sq: f64, s: f64) -> Beamformer {
    let factor = s / (1.0 + s * h0_norm_sq);
    // h0 (h0^H W) is rank one.
    let proj = h0.0.adjoint() * &w.0;
    Beamformer(&w.0 - &h0.0 * (proj * Complex64::new(factor, 0.0)))
}

/// Euclidean projection onto `sum_k |h0^H w_k|^2 <= p_th`.
///
/// The multiplier solving `power(s) = p_th` is
/// `s = (sqrt(P / p_th) - 1) / ||h0||^2`; rounding can leave the result a few
/// ulps above the cap, so `s` is nudged up until it is not.
pub fn project_covert(w: &Beamformer, h0: &ChannelVector, p_th: f64) -> Result<Beamformer> {
    let power = warden_received_power(h0, w);
    if power <= p_th {
        return Ok(w.clone());
    }
    let h0_norm_sq = h0.norm_squared();
    let mut s = ((power / p_th).sqrt() - 1.0) / h0_norm_sq;
    let mut nudge = 1e-15;
    for _ in 0..COVERT_NUDGES {
        let candidate = shrink_along(w, h0, h0_norm_sq, s);
        if warden_received_power(h0, &candidate) <= p_th {
            return Ok(candidate);
        }
        // Additive part for s rounding to zero when P is an ulp above p_th.
        s = s * (1.0 + nudge) + nudge / h0_norm_sq;
        nudge *= 2.0;
    }
    Err(Error::ProjectionFailed(COVERT_NUDGES))
}

/// Closed-form minimizer of the penalized quadratic for fixed anchors.
pub fn pda_step(
    data: &QuadraticBlockData,
    power_anchor: &Beamformer,
    covert_anchor: &Beamformer,
    rho: f64,
) -> Beamformer {
    let n = data.antennas();
    let mut m = data.a.clone();
    for i in 0..n {
        m[(i, i)] += Complex64::new(2.0 * rho, 0.0);
    }
    let rhs = &data.b + (&power_anchor.0 + &covert_anchor.0) * Complex64::new(rho, 0.0);
    let chol = m
        .cholesky()
        .expect("A + 2 rho I is Hermitian positive definite for rho > 0");
    Beamformer(chol.solve(&rhs))
}

/// Objective of the majorized problem at fixed anchors.
pub fn penalized_objective(
    data: &QuadraticBlockData,
    w: &Beamformer,
    power_anchor: &Beamformer,
    covert_anchor: &Beamformer,
    rho: f64,
) -> f64 {
    block_objective(data, w)
        + rho * (&w.0 - &power_anchor.0).norm_squared()
        + rho * (&w.0 - &covert_anchor.0).norm_squared()
}

/// Squared distances of `w` to the power ball and the covertness set.
pub fn constraint_distances(w: &Beamformer, h0: &ChannelVector, p_max: f64, p_th: f64) -> Result<(f64, f64)> {
    let to_power = (&w.0 - &project_power(w, p_max).0).norm_squared();
    let to_covert = (&w.0 - &project_covert(w, h0, p_th)?.0).norm_squared();
    Ok((to_power, to_covert))
}

/// One inner iteration as seen by the caller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdaIteration {
    pub rho: f64,
    /// Penalized objective at the iterate before the step (distance form).
    pub before: f64,
    /// Majorized objective at the new iterate, same anchors and penalty.
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdaOutcome {
    pub beamformer: Beamformer,
    pub iterations: usize,
    pub history: Vec<PdaIteration>,
}

/// Runs the PDA loop and finishes with a covertness then power projection so
/// the returned beamformer is feasible for both sets.
pub fn run_pda(
    data: &QuadraticBlockData,
    w_init: &Beamformer,
    p_max: f64,
    p_th: f64,
    cfg: &PdaConfig,
) -> Result<PdaOutcome> {
    let n = data.antennas();
    let mean_eig = (0..n).map(|i| data.a[(i, i)].re).sum::<f64>() / n as f64;
    let scale = if mean_eig.is_finite() && mean_eig > 0.0 {
        mean_eig
    } else {
        1.0
    };
    let mut rho = cfg.penalty_init * scale;
    let mut w = w_init.clone();
    let mut history = Vec::new();

    for _ in 0..cfg.max_iters.max(1) {
        let w1 = project_power(&w, p_max);
        let w2 = project_covert(&w, &data.h0, p_th)?;
        let before = penalized_objective(data, &w, &w1, &w2, rho);
        let next = pda_step(data, &w1, &w2, rho);
        let after = penalized_objective(data, &next, &w1, &w2, rho);
        history.push(PdaIteration { rho, before, after });
        w = next;
        rho *= cfg.penalty_growth;

        let decrease = before - after;
        if decrease <= cfg.objective_tol * before.abs() {
            let (dp, dc) = constraint_distances(&w, &data.h0, p_max, p_th)?;
            if dp + dc <= PDA_FEASIBILITY_TOL * w.total_power() {
                break;
            }
        }
    }

    let w = project_power(&project_covert(&w, &data.h0, p_th)?, p_max);
    Ok(PdaOutcome {
        beamformer: w,
        iterations: history.len(),
        history,
    })
}

/// Column-wise residual `||(A + 2 rho I) w_k - rhs_k|| / ||rhs_k||`, maximized over k.
pub fn normal_equation_residual(
    data: &QuadraticBlockData,
    w: &Beamformer,
    power_anchor: &Beamformer,
    covert_anchor: &Beamformer,
    rho: f64,
) -> f64 {
    let lhs = &data.a * &w.0 + &w.0 * Complex64::new(2.0 * rho, 0.0);
    let rhs = &data.b + (&power_anchor.0 + &covert_anchor.0) * Complex64::new(rho, 0.0);
    lhs.column_iter()
        .zip(rhs.column_iter())
        .map(|(l, r)| {
            let denom = r.norm().max(f64::MIN_POSITIVE);
            (l - r).norm() / denom
        })
        .fold(0.0, f64::max)
}

/// Whether `w` meets both beamforming constraints within relative `tol`.
pub fn is_feasible(w: &Beamformer, h0: &ChannelVector, p_max: f64, p_th: f64, tol: f64) -> bool {
    w.total_power() <= p_max * (1.0 + tol) && warden_received_power(h0, w) <= p_th * (1.0 + tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wmmse::update_auxiliary;
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<Complex64> {
        DVector::from_fn(n, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    fn random_w(rng: &mut ChaCha8Rng, n: usize, k: usize, scale: f64) -> Beamformer {
        Beamformer(DMatrix::from_fn(n, k, |_, _| {
            c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * scale
        }))
    }

    #[test]
    fn block_data_examples() {
        let h = vec![ChannelVector(DVector::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0)]))];
        let h0 = ChannelVector(DVector::from_vec(vec![c(0.0, 1.0), c(1.0, 0.0)]));
        let data = build_block_data(&AuxiliaryState::degenerate(1), &h, &h0);
        assert!(data.a.iter().all(|z| z.norm() == 0.0));
        assert!(data.b.iter().all(|z| z.norm() == 0.0));

        let aux = AuxiliaryState {
            phi: vec![c(0.0, 1.0)],
            beta: vec![2.0],
        };
        let data = build_block_data(&aux, &h, &h0);
        assert_relative_eq!(data.a[(0, 0)].re, 2.0);
        assert_eq!(
            data.a[(0, 1)].norm() + data.a[(1, 0)].norm() + data.a[(1, 1)].norm(),
            0.0
        );
        let h0h0 = data.h0_outer();
        assert_relative_eq!(h0h0[(0, 1)].im, 1.0);
    }

    #[test]
    fn power_projection_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = random_w(&mut rng, 4, 2, 0.1);
        let p = w.total_power();
        assert_eq!(project_power(&w, 2.0 * p), w);
        let big = Beamformer(&w.0 * c(2.0, 0.0));
        let projected = project_power(&big, p);
        for (a, b) in projected.0.iter().zip(big.0.iter()) {
            assert_relative_eq!(a.re, b.re / 2.0, max_relative = 1e-12);
            assert_relative_eq!(a.im, b.im / 2.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn covert_projection_aligned_matches_closed_form() {
        // w = c h0: the projection shrinks w by 1 / (1 + s ||h0||^2).
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h0 = ChannelVector(random_vec(&mut rng, 4));
        let scale = c(0.3, -0.2);
        let w = Beamformer(DMatrix::from_column_slice(4, 1, (&h0.0 * scale).as_slice()));
        let before = warden_received_power(&h0, &w);
        let p_th = before / 50.0;
        let projected = project_covert(&w, &h0, p_th).unwrap();
        let after = warden_received_power(&h0, &projected);
        assert!((after - p_th).abs() <= 1e-12 * p_th);
        let hn = h0.norm_squared();
        let s = ((before / p_th).sqrt() - 1.0) / hn;
        let expected = &w.0 / c(1.0 + s * hn, 0.0);
        assert!((&projected.0 - expected).norm() <= 1e-10 * w.0.norm());
    }

    #[test]
    fn covert_projection_feasible_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h0 = ChannelVector(random_vec(&mut rng, 4));
        let w = random_w(&mut rng, 4, 2, 1.0);
        let p = warden_received_power(&h0, &w);
        assert_eq!(project_covert(&w, &h0, p * 1.01).unwrap(), w);
    }

    #[test]
    fn pda_step_averages_without_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = QuadraticBlockData {
            a: DMatrix::zeros(3, 3),
            b: DMatrix::zeros(3, 2),
            h0: ChannelVector(random_vec(&mut rng, 3)),
        };
        let w1 = random_w(&mut rng, 3, 2, 1.0);
        let w2 = random_w(&mut rng, 3, 2, 1.0);
        let w = pda_step(&data, &w1, &w2, 0.7);
        let avg = (&w1.0 + &w2.0) * c(0.5, 0.0);
        assert!((&w.0 - avg).norm() < 1e-14);
    }

    #[test]
    fn pda_step_large_penalty_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = vec![
            ChannelVector(random_vec(&mut rng, 4)),
            ChannelVector(random_vec(&mut rng, 4)),
        ];
        let w0 = random_w(&mut rng, 4, 2, 1.0);
        let aux = update_auxiliary(&w0, &h, 0.5).unwrap();
        let data = build_block_data(&aux, &h, &ChannelVector(random_vec(&mut rng, 4)));
        let w1 = random_w(&mut rng, 4, 2, 1.0);
        let w2 = random_w(&mut rng, 4, 2, 1.0);
        let w = pda_step(&data, &w1, &w2, 1e8);
        let avg = (&w1.0 + &w2.0) * c(0.5, 0.0);
        assert!((&w.0 - avg).norm() < 1e-6);
    }

    #[test]
    fn zero_problem_is_a_fixed_point() {
        let h0 = ChannelVector(DVector::from_vec(vec![c(1.0, 0.0), c(0.5, 0.5)]));
        let data = QuadraticBlockData {
            a: DMatrix::zeros(2, 2),
            b: DMatrix::zeros(2, 2),
            h0,
        };
        let out = run_pda(&data, &Beamformer::zeros(2, 2), 1.0, 1e-3, &PdaConfig::default()).unwrap();
        assert_eq!(out.iterations, 1);
        assert_eq!(out.beamformer.total_power(), 0.0);
    }
}
