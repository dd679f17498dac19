//! Number of false alarms for the three feature families, in log₁₀.
//!
//! Each family scans the number of inliers `k` over the sorted residuals and
//! keeps the most meaningful (lowest) value. Binomial coefficients go through
//! log-gamma so counts in the tens of thousands stay finite.

use std::f64::consts::{LN_10, PI};

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

/// The `k` realizing the minimum and the residual of the `k`-th best feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NfaBest {
    pub k: usize,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyNfa {
    /// False when the family has too few members for its formula.
    pub defined: bool,
    /// `+∞` when undefined or when no `k` gives a finite value.
    pub log10_nfa: f64,
    pub best: Option<NfaBest>,
}

impl FamilyNfa {
    pub const UNDEFINED: FamilyNfa = FamilyNfa { defined: false, log10_nfa: f64::INFINITY, best: None };

    /// Contribution to the product over families. Undefined families, and
    /// families where no `k` has a finite residual, count as 1.
    pub fn contribution(&self) -> f64 {
        if self.defined && self.log10_nfa < f64::INFINITY {
            self.log10_nfa
        } else {
            0.0
        }
    }
}

/// `log₁₀ C(n, k)`.
pub fn log10_binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let (n, k) = (n as f64, k as f64);
    (ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0)) / LN_10
}

fn sorted(dists: &[f64]) -> Vec<f64> {
    let mut d: Vec<f64> = dists.iter().map(|x| if x.is_nan() { f64::INFINITY } else { *x }).collect();
    d.sort_by(|a, b| a.total_cmp(b));
    d
}

/// Minimum over `k ∈ [k_min, k_max]` of `constant(k) + exponent(k) · log₁₀ α(d_k)`,
/// with `d_k` the `k`-th smallest distance. Ties keep the larger `k`.
fn scan(
    d: &[f64],
    k_min: usize,
    k_max: usize,
    constant: impl Fn(usize) -> f64,
    exponent: impl Fn(usize) -> f64,
    log10_alpha: impl Fn(f64) -> f64,
) -> FamilyNfa {
    let mut best = FamilyNfa { defined: true, log10_nfa: f64::INFINITY, best: None };
    for k in k_min..=k_max {
        let dk = d[k - 1];
        if !dk.is_finite() {
            break;
        }
        let v = constant(k) + exponent(k) * log10_alpha(dk);
        if v.is_nan() {
            continue;
        }
        if v <= best.log10_nfa {
            best.log10_nfa = v;
            best.best = Some(NfaBest { k, threshold: dk });
        }
    }
    best
}

/// Coplanar lines:
/// `(n₂ − 2) min_{k∈[3, n_cop]} n₂ N C(n₂, k−2) [π d_k² / A]^{k−2}`.
///
/// `per_line` holds, for each line of camera 2 involved in a candidate pair,
/// its smallest pair distance; `n_se2` counts the camera-2 lines matched in
/// view 1 or 3 and `neighbors` is the neighborhood size `N`.
pub fn nfa_coplanar(per_line: &[f64], n_se2: usize, neighbors: usize, area: f64) -> FamilyNfa {
    let n_cop = per_line.len().min(n_se2 + 2);
    if n_se2 < 3 || n_cop < 3 {
        return FamilyNfa::UNDEFINED;
    }
    let d = sorted(per_line);
    let head = ((n_se2 - 2) as f64).log10() + ((n_se2 * neighbors) as f64).log10();
    scan(
        &d,
        3,
        n_cop,
        |k| head + log10_binomial(n_se2, k - 2),
        |k| (k - 2) as f64,
        |dk| (PI * dk * dk / area).log10(),
    )
}

/// Trifocal points: `(n − 1) min_{k∈[2, n]} C(n, k) k [π d_k² / A]^{k−1}`.
pub fn nfa_trifocal_points(dists: &[f64], n_pt: usize, area: f64) -> FamilyNfa {
    let n = n_pt.min(dists.len());
    if n < 2 {
        return FamilyNfa::UNDEFINED;
    }
    let d = sorted(dists);
    let head = ((n - 1) as f64).log10();
    scan(
        &d,
        2,
        n,
        |k| head + log10_binomial(n, k) + (k as f64).log10(),
        |k| (k - 1) as f64,
        |dk| (PI * dk * dk / area).log10(),
    )
}

/// Trifocal lines: `(n − 1) min_{k∈[2, n]} C(n, k) k [2 D d_k / A]^{k−1}`.
/// The line error enters linearly.
pub fn nfa_trifocal_lines(dists: &[f64], n_se: usize, area: f64, diagonal: f64) -> FamilyNfa {
    let n = n_se.min(dists.len());
    if n < 2 {
        return FamilyNfa::UNDEFINED;
    }
    let d = sorted(dists);
    let head = ((n - 1) as f64).log10();
    scan(
        &d,
        2,
        n,
        |k| head + log10_binomial(n, k) + (k as f64).log10(),
        |k| (k - 1) as f64,
        |dk| (2.0 * diagonal * dk / area).log10(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn coplanar_hand_value() {
        // two sample lines at 0 px, the third at 1 px
        let v = nfa_coplanar(&[0.0, 0.0, 1.0], 3, 10, 1e6);
        // (n - 2) * n * N * C(3, 1) * pi * 1 / A
        let expected = (1.0 * 3.0 * 10.0 * 3.0 * PI * 1e-6_f64).log10();
        assert_relative_eq!(v.log10_nfa, expected, epsilon = 1e-12);
        assert_relative_eq!(v.log10_nfa, -3.5486, epsilon = 1e-4);
        assert_eq!(v.best.unwrap().k, 3);
    }

    #[test]
    fn perfect_fit_is_minus_infinity() {
        let v = nfa_coplanar(&[0.0; 6], 6, 10, 1e6);
        assert_eq!(v.log10_nfa, f64::NEG_INFINITY);
        assert_eq!(v.best.unwrap().k, 6);
    }

    #[test]
    fn undefined_below_minimum() {
        assert!(!nfa_coplanar(&[0.0, 1.0], 2, 10, 1e6).defined);
        assert!(!nfa_trifocal_points(&[1.0], 1, 1e6).defined);
        assert!(!nfa_trifocal_lines(&[1.0], 1, 1e6, 1e3).defined);
        assert_eq!(nfa_trifocal_points(&[1.0], 1, 1e6).log10_nfa, f64::INFINITY);
        assert_eq!(FamilyNfa::UNDEFINED.contribution(), 0.0);
    }

    #[test]
    fn point_hand_value() {
        let v = nfa_trifocal_points(&[0.5, 1.0], 2, 1e6);
        assert_relative_eq!(10f64.powf(v.log10_nfa), 2.0 * PI * 1e-6, max_relative = 1e-12);
    }

    #[test]
    fn line_hand_value() {
        let v = nfa_trifocal_lines(&[1.0, 1.0], 2, 6_291_456.0, 3693.2);
        let direct = 2.0 * (2.0 * 3693.2 / 6_291_456.0);
        assert_relative_eq!(10f64.powf(v.log10_nfa), direct, max_relative = 1e-12);
        assert_relative_eq!(10f64.powf(v.log10_nfa), 2.3482e-3, max_relative = 1e-4);
    }

    #[test]
    fn infinite_residuals_never_help() {
        let a = nfa_trifocal_points(&[0.1, 0.2, 0.3], 3, 1e6);
        let b = nfa_trifocal_points(&[0.1, 0.2, f64::INFINITY], 3, 1e6);
        assert!(b.log10_nfa >= a.log10_nfa);
        let c = nfa_trifocal_points(&[f64::INFINITY; 3], 3, 1e6);
        assert!(c.defined && c.log10_nfa == f64::INFINITY && c.best.is_none());
    }

    #[test]
    fn binomial_small_values() {
        assert_relative_eq!(log10_binomial(10, 3), 120f64.log10(), epsilon = 1e-12);
        assert_relative_eq!(log10_binomial(5, 0), 0.0, epsilon = 1e-12);
        assert_eq!(log10_binomial(3, 4), f64::NEG_INFINITY);
    }
}
