use crate::error::{Error, Result};
use crate::simenv::Embodiment;

/// Quintic minimum-jerk profile `s(u) = 10u³ − 15u⁴ + 6u⁵` on `[0, 1]`.
pub fn min_jerk_profile(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    let u3 = u * u * u;
    u3 * (10.0 + u * (-15.0 + 6.0 * u))
}

/// `n_ticks` samples of the minimum-jerk path from `p0` to `p1`, endpoints included.
pub fn min_jerk(p0: [f64; 2], p1: [f64; 2], n_ticks: usize) -> Result<Vec<[f64; 2]>> {
    if n_ticks < 2 {
        return Err(Error::Contract(format!("min_jerk needs at least 2 ticks, got {n_ticks}")));
    }
    let last = (n_ticks - 1) as f64;
    Ok((0..n_ticks)
        .map(|i| {
            let s = min_jerk_profile(i as f64 / last);
            [p0[0] + s * (p1[0] - p0[0]), p0[1] + s * (p1[1] - p0[1])]
        })
        .collect())
}

/// Base-joint offset tried first for the three-link arm, then shrunk when the
/// distal pair cannot reach.
const G1_BASE_OFFSETS: [f64; 7] = [0.3, 0.25, 0.2, 0.15, 0.1, 0.05, 0.0];

/// Closed-form two-link solution with a positive elbow angle, or `None` when
/// `(x, y)` lies outside the annulus `[|l1 − l2|, l1 + l2]`.
fn two_link(l1: f64, l2: f64, x: f64, y: f64) -> Option<[f64; 2]> {
    let r2 = x * x + y * y;
    let r = r2.sqrt();
    if r > l1 + l2 + 1e-12 || r < (l1 - l2).abs() - 1e-12 {
        return None;
    }
    let c2 = ((r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
    let q2 = c2.acos();
    let q1 = y.atan2(x) - (l2 * q2.sin()).atan2(l1 + l2 * q2.cos());
    Some([q1, q2])
}

/// Wraps an angle into `(−π, π]`.
fn wrap(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let w = a.rem_euclid(TAU);
    if w > PI { w - TAU } else { w }
}

fn reach_deficit(links: &[f64], r: f64) -> f64 {
    let total: f64 = links.iter().sum();
    if r > total {
        return r - total;
    }
    // Inner hole of a two-link arm.
    let hole = if links.len() == 2 { (links[0] - links[1]).abs() } else { 0.0 };
    (hole - r).max(0.0)
}

/// Joint angles placing the end effector at `target`.
///
/// The two-link arm uses the elbow-positive closed form. The three-link arm
/// fixes the base joint at `atan2(target) − 0.3` and solves the distal pair.
pub fn ik(embodiment: &Embodiment, target: [f64; 2]) -> Result<Vec<f64>> {
    let [x, y] = target;
    let r = (x * x + y * y).sqrt();
    let l = &embodiment.link_lengths;
    let unreachable = || Error::Unreachable { x, y, deficit: reach_deficit(l, r) };
    match l.len() {
        2 => two_link(l[0], l[1], x, y).map(|q| q.map(wrap).to_vec()).ok_or_else(unreachable),
        3 => {
            if r > embodiment.reach() {
                return Err(unreachable());
            }
            let heading = y.atan2(x);
            for off in G1_BASE_OFFSETS {
                let q1 = heading - off;
                let (bx, by) = (l[0] * q1.cos(), l[0] * q1.sin());
                if let Some([a, b]) = two_link(l[1], l[2], x - bx, y - by) {
                    return Ok(vec![wrap(q1), wrap(a - q1), wrap(b)]);
                }
            }
            Err(unreachable())
        }
        n => Err(Error::Config(format!("no IK for {n}-link arms"))),
    }
}
