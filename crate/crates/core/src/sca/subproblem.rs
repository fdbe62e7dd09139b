//! Exact solver for the two-variable convex position subproblem.
//!
//! The feasible set without the covertness cap is a convex polygon (the
//! square region clipped by the linearized spacing half-planes), so a convex
//! quadratic is minimized by checking its unconstrained minimizer and the
//! minimum along every edge. The single quadratic cap is handled through its
//! Lagrange multiplier, found by bisection on `mu` for `f + mu g`.

use nalgebra::{Matrix2, Vector2};

use super::QuadraticSurrogate;
use crate::channel::Position;

/// `{t : normal^T t >= offset}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfPlane {
    pub normal: Vector2<f64>,
    pub offset: f64,
}

impl HalfPlane {
    pub fn slack(&self, t: &Vector2<f64>) -> f64 {
        self.normal.dot(t) - self.offset
    }
}

/// `g(t) <= budget` with `g` a convex quadratic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovertCap {
    pub surrogate: QuadraticSurrogate,
    pub budget: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubproblemSolution {
    pub position: Position,
    /// Set when no feasible point was found and the anchor was returned.
    pub flagged: bool,
    /// Multiplier of the covertness cap (zero when inactive).
    pub multiplier: f64,
}

const MULTIPLIER_BISECTION_ITERS: usize = 200;
const MULTIPLIER_DOUBLINGS: usize = 400;

fn clip(polygon: &[Vector2<f64>], plane: &HalfPlane, tol: f64) -> Vec<Vector2<f64>> {
    let mut out = Vec::with_capacity(polygon.len() + 1);
    for (i, &cur) in polygon.iter().enumerate() {
        let prev = polygon[(i + polygon.len() - 1) % polygon.len()];
        let s_cur = plane.slack(&cur);
        let s_prev = plane.slack(&prev);
        let cur_in = s_cur >= -tol;
        let prev_in = s_prev >= -tol;
        if cur_in != prev_in {
            let frac = s_prev / (s_prev - s_cur);
            out.push(prev + (cur - prev) * frac);
        }
        if cur_in {
            out.push(cur);
        }
    }
    // Crossings through a vertex produce duplicates.
    out.dedup_by(|a, b| (*a - *b).norm() <= tol);
    if out.len() > 1 && (out[0] - out[out.len() - 1]).norm() <= tol {
        out.pop();
    }
    out
}

/// Vertices of `[0, region]^2` intersected with every half-plane, counter-clockwise.
pub fn feasible_polygon(half_planes: &[HalfPlane], region: f64) -> Vec<Vector2<f64>> {
    let tol = 1e-13 * region.max(1e-300);
    let mut poly = vec![
        Vector2::new(0.0, 0.0),
        Vector2::new(region, 0.0),
        Vector2::new(region, region),
        Vector2::new(0.0, region),
    ];
    for plane in half_planes {
        if poly.is_empty() {
            break;
        }
        poly = clip(&poly, plane, tol);
    }
    poly
}

fn inside(t: &Vector2<f64>, half_planes: &[HalfPlane], region: f64) -> bool {
    let tol = 1e-12 * region.max(1e-300);
    t.x >= -tol
        && t.y >= -tol
        && t.x <= region + tol
        && t.y <= region + tol
        && half_planes.iter().all(|h| h.slack(t) >= -tol)
}

/// Minimizer of a convex quadratic over a convex polygon.
fn minimize_on_polygon(
    f: &QuadraticSurrogate,
    polygon: &[Vector2<f64>],
    half_planes: &[HalfPlane],
    region: f64,
) -> Vector2<f64> {
    let mut best = polygon[0];
    let mut best_val = f.value_at(&best);
    let consider = |t: Vector2<f64>, best: &mut Vector2<f64>, best_val: &mut f64| {
        let v = f.value_at(&t);
        if v < *best_val {
            *best_val = v;
            *best = t;
        }
    };

    let hessian: Matrix2<f64> = f.p + f.p.transpose();
    let scale = hessian.abs().max();
    if scale > 0.0 && f.min_curvature() > 1e-12 * scale {
        if let Some(inv) = hessian.try_inverse() {
            let t = -(inv * f.q);
            if inside(&t, half_planes, region) {
                consider(t, &mut best, &mut best_val);
            }
        }
    }

    for (i, &a) in polygon.iter().enumerate() {
        let b = polygon[(i + 1) % polygon.len()];
        consider(a, &mut best, &mut best_val);
        let d = b - a;
        let curvature = d.dot(&(f.p * d));
        if curvature > 0.0 {
            let slope = f.gradient(&a).dot(&d);
            let s = (-slope / (2.0 * curvature)).clamp(0.0, 1.0);
            consider(a + d * s, &mut best, &mut best_val);
        }
    }
    best
}

fn combined(f: &QuadraticSurrogate, g: &QuadraticSurrogate, mu: f64) -> QuadraticSurrogate {
    f.add(&g.scaled(mu))
}

/// Minimizes `objective` over the region, the half-planes and the optional
/// cap. Never returns a point with a larger objective than a feasible anchor.
pub fn solve_position_subproblem(
    objective: &QuadraticSurrogate,
    covert: Option<&CovertCap>,
    half_planes: &[HalfPlane],
    region: f64,
    anchor: Position,
) -> SubproblemSolution {
    let anchor_v = anchor.to_vector();
    let fallback = SubproblemSolution {
        position: anchor,
        flagged: true,
        multiplier: 0.0,
    };
    let polygon = feasible_polygon(half_planes, region);
    if polygon.is_empty() {
        return fallback;
    }

    let free = minimize_on_polygon(objective, &polygon, half_planes, region);
    let (point, multiplier) = match covert {
        Some(cap) if cap.surrogate.value_at(&free) > cap.budget => {
            let g = &cap.surrogate;
            let g_min = minimize_on_polygon(g, &polygon, half_planes, region);
            if g.value_at(&g_min) > cap.budget {
                return fallback;
            }
            // Multiplier scale from the trade-off between the two extreme points.
            let df = (objective.value_at(&g_min) - objective.value_at(&free)).abs();
            let dg = (g.value_at(&free) - g.value_at(&g_min)).abs();
            let mut hi = if df > 0.0 && dg > 0.0 { df / dg } else { 1.0 };
            let mut lo = 0.0;
            let solve = |mu: f64| minimize_on_polygon(&combined(objective, g, mu), &polygon, half_planes, region);
            let mut x_hi = solve(hi);
            let mut doublings = 0;
            while g.value_at(&x_hi) > cap.budget {
                lo = hi;
                hi *= 2.0;
                x_hi = solve(hi);
                doublings += 1;
                if doublings >= MULTIPLIER_DOUBLINGS || !hi.is_finite() {
                    // The cap minimizer is feasible; use it.
                    x_hi = g_min;
                    break;
                }
            }
            for _ in 0..MULTIPLIER_BISECTION_ITERS {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi || hi - lo <= 1e-14 * hi {
                    break;
                }
                let x_mid = solve(mid);
                if g.value_at(&x_mid) <= cap.budget {
                    hi = mid;
                    x_hi = x_mid;
                } else {
                    lo = mid;
                }
            }
            (x_hi, hi)
        }
        _ => (free, 0.0),
    };

    let anchor_ok = inside(&anchor_v, half_planes, region)
        && covert.is_none_or(|cap| cap.surrogate.value_at(&anchor_v) <= cap.budget);
    if anchor_ok && objective.value_at(&anchor_v) <= objective.value_at(&point) {
        return SubproblemSolution {
            position: anchor,
            flagged: false,
            multiplier,
        };
    }
    SubproblemSolution {
        position: Position::from_vector(&point),
        flagged: false,
        multiplier,
    }
}
