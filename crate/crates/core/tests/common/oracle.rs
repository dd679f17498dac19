//! Independent reference implementations used as test oracles.

use std::f64::consts::PI;

use chainsfm::scale::angle_objective;
use chainsfm::Vec3;
use num_bigint::BigUint;

pub fn binomial(n: usize, k: usize) -> BigUint {
    let mut c = BigUint::from(1u32);
    for i in 0..k {
        c = c * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    c
}

/// `log₁₀` of an arbitrary-size integer from its leading 64 bits.
pub fn log10_big(x: &BigUint) -> f64 {
    let bits = x.bits();
    if bits <= 64 {
        let v: u64 = x.try_into().unwrap();
        return (v as f64).log10();
    }
    let shift = bits - 64;
    let top: u64 = (x >> shift).try_into().unwrap();
    (top as f64).log10() + shift as f64 * 2f64.log10()
}

/// Sorted copy with NaN treated as infinity.
fn ascending(d: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = d.iter().map(|x| if x.is_nan() { f64::INFINITY } else { *x }).collect();
    v.sort_by(f64::total_cmp);
    v
}

/// `min_k` of `log₁₀(count(k)) + e(k) log₁₀ α(d_k)` over finite `d_k`, `+∞` if none.
fn minimum(d: &[f64], ks: std::ops::RangeInclusive<usize>, count: impl Fn(usize) -> BigUint, e: impl Fn(usize) -> usize, alpha: impl Fn(f64) -> f64) -> f64 {
    let mut best = f64::INFINITY;
    for k in ks {
        let dk = d[k - 1];
        if !dk.is_finite() {
            break;
        }
        let v = log10_big(&count(k)) + e(k) as f64 * alpha(dk).log10();
        if v < best {
            best = v;
        }
    }
    best
}

pub fn nfa_points(dists: &[f64], n_pt: usize, area: f64) -> Option<f64> {
    let n = n_pt.min(dists.len());
    (n >= 2).then(|| {
        let d = ascending(dists);
        minimum(&d, 2..=n, |k| BigUint::from(n - 1) * binomial(n, k) * BigUint::from(k), |k| k - 1, |x| PI * x * x / area)
    })
}

pub fn nfa_lines(dists: &[f64], n_se: usize, area: f64, diagonal: f64) -> Option<f64> {
    let n = n_se.min(dists.len());
    (n >= 2).then(|| {
        let d = ascending(dists);
        minimum(&d, 2..=n, |k| BigUint::from(n - 1) * binomial(n, k) * BigUint::from(k), |k| k - 1, |x| 2.0 * diagonal * x / area)
    })
}

pub fn nfa_coplanar(per_line: &[f64], n_se2: usize, neighbors: usize, area: f64) -> Option<f64> {
    let top = per_line.len().min(n_se2 + 2);
    (n_se2 >= 3 && top >= 3).then(|| {
        let d = ascending(per_line);
        let head = BigUint::from(n_se2 - 2) * BigUint::from(n_se2) * BigUint::from(neighbors);
        minimum(&d, 3..=top, |k| &head * binomial(n_se2, k - 2), |k| k - 2, |x| PI * x * x / area)
    })
}

/// Smallest objective over `samples` evenly spaced values of `atan λ`, the
/// grid spacing in that angle, and the argmin.
pub fn grid_minimum(u: &Vec3, v: &Vec3, w: &Vec3, samples: usize) -> (f64, f64, f64) {
    let step = PI / samples as f64;
    let mut best = (f64::INFINITY, f64::NAN);
    for i in 0..samples {
        let theta = -PI / 2.0 + (i as f64 + 0.5) * step;
        let lambda = theta.tan();
        let f = angle_objective(u, v, w, lambda);
        if f < best.0 {
            best = (f, lambda);
        }
    }
    (best.0, step, best.1)
}
