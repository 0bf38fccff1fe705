//! Independent reference implementations used as test oracles.

#![allow(dead_code)]

use std::f64::consts::{PI, TAU};

use perimeter_core::game::{FovMode, Observation};
use perimeter_core::matching::BoolMatrix;

/// Size of a maximum matching by exhaustive search over every row's choice.
pub fn brute_force_matching_size(m: &BoolMatrix) -> usize {
    fn go(m: &BoolMatrix, row: usize, used: &mut Vec<bool>) -> usize {
        if row == m.rows() {
            return 0;
        }
        let mut best = go(m, row + 1, used);
        for c in 0..m.cols() {
            if m.get(row, c) && !used[c] {
                used[c] = true;
                best = best.max(1 + go(m, row + 1, used));
                used[c] = false;
            }
        }
        best
    }
    go(m, 0, &mut vec![false; m.cols()])
}

fn wrap_pi(a: f64) -> f64 {
    let mut x = (a + PI).rem_euclid(TAU) - PI;
    if x <= -PI {
        x += TAU;
    }
    x
}

/// Pure pursuit against a radially moving intruder: the defender closes the
/// signed angular gap at unit speed (never overshooting), the intruder runs
/// straight in. Capture when the two are within `eps`, checked before the
/// breach test at every step.
pub fn pursuit_captures(defender: f64, radius: f64, intruder: f64, eps: f64, dt: f64) -> bool {
    let mut d = defender;
    let mut r = radius;
    let (ix, iy) = (intruder.cos(), intruder.sin());
    loop {
        let gap = wrap_pi(intruder - d);
        d += gap.signum() * gap.abs().min(dt);
        r -= dt;
        let (dx, dy) = (d.cos(), d.sin());
        let dist = ((r * ix - dx).powi(2) + (r * iy - dy).powi(2)).sqrt();
        if dist <= eps {
            return true;
        }
        if r <= 1.0 {
            return false;
        }
    }
}

/// Observation built from first principles: every live intruder in front of
/// (or, for full view, anywhere around) the defender.
pub fn reference_observation(self_angle: f64, intruders: &[(f64, f64)], fov: FovMode) -> Observation {
    let me = [self_angle.cos(), self_angle.sin()];
    let visible_intruders = intruders
        .iter()
        .map(|&(r, a)| [r * a.cos(), r * a.sin()])
        .filter(|p| match fov {
            FovMode::Full360 => true,
            FovMode::Half180 => (p[0] - me[0]) * me[0] + (p[1] - me[1]) * me[1] >= 0.0,
        })
        .collect();
    Observation {
        self_position: me,
        visible_intruders,
        fov,
    }
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
