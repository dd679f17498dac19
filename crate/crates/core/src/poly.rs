//! Real roots of low-degree polynomials.

/// Real roots of `a x² + b x + c = 0`, sorted ascending.
///
/// Falls back to the linear equation when `a` vanishes relative to the other
/// coefficients. Returns no roots for the all-zero polynomial.
pub fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == 0.0 || !scale.is_finite() {
        return Vec::new();
    }
    let (a, b, c) = (a / scale, b / scale, c / scale);
    if a.abs() <= f64::EPSILON * 4.0 {
        if b == 0.0 {
            return Vec::new();
        }
        return vec![-c / b];
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        // tangent roots can come out slightly negative
        if disc > -f64::EPSILON * 16.0 * b * b {
            return vec![-b / (2.0 * a)];
        }
        return Vec::new();
    }
    // cancellation-free form
    let q = -0.5 * (b + b.signum_or_one() * disc.sqrt());
    let mut roots = if q == 0.0 {
        vec![0.0]
    } else {
        vec![q / a, c / q]
    };
    roots.sort_by(|x, y| x.total_cmp(y));
    roots.dedup();
    roots
}

trait SignumOrOne {
    fn signum_or_one(self) -> f64;
}

impl SignumOrOne for f64 {
    fn signum_or_one(self) -> f64 {
        if self < 0.0 {
            -1.0
        } else {
            1.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_roots() {
        let r = quadratic_roots(1.0, -3.0, 2.0);
        assert_eq!(r.len(), 2);
        assert!((r[0] - 1.0).abs() < 1e-15 && (r[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn linear_fallback() {
        assert_eq!(quadratic_roots(0.0, 2.0, -4.0), vec![2.0]);
        assert!(quadratic_roots(0.0, 0.0, 1.0).is_empty());
        assert!(quadratic_roots(0.0, 0.0, 0.0).is_empty());
    }

    #[test]
    fn no_real_roots() {
        assert!(quadratic_roots(1.0, 0.0, 1.0).is_empty());
    }

    #[test]
    fn tiny_root_is_accurate() {
        // x² - 1e8 x + 1 has a root near 1e-8 that the textbook formula loses
        let r = quadratic_roots(1.0, -1e8, 1.0);
        assert!((r[0] - 1e-8).abs() < 1e-20);
    }

    #[test]
    fn double_root() {
        assert_eq!(quadratic_roots(1.0, -2.0, 1.0), vec![1.0]);
    }
}
