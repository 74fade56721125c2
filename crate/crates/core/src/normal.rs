//! Standard normal distribution functions.
//!
//! Tail probabilities go through the complementary error function so that
//! small upper-tail p-values keep full relative precision.

use statrs::function::erf::{erfc, erfc_inv};
use std::f64::consts::SQRT_2;

pub fn cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Upper tail `1 - Φ(z)`.
pub fn sf(z: f64) -> f64 {
    0.5 * erfc(z / SQRT_2)
}

/// Inverse of [`cdf`] for `p` in `(0, 1)`.
pub fn quantile(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert_eq!(cdf(0.0), 0.5);
        // Φ(1) = 0.841344746068542948585...
        assert!((cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-10);
        // 1 - Φ(3) = 1.3498980316300945e-3
        assert!((sf(3.0) - 1.349_898_031_630_094_5e-3).abs() < 1e-13);
        assert!((sf(-1.0) - cdf(1.0)).abs() < 1e-15);
    }

    #[test]
    fn quantile_inverts_cdf() {
        assert!((quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-12);
        for &p in &[1e-6, 0.01, 0.3, 0.5, 0.8, 0.999] {
            assert!((cdf(quantile(p)) - p).abs() < 1e-10 * p);
        }
    }

    #[test]
    fn two_sided_five_percent() {
        let p = 2.0 * sf(1.959964);
        assert!((p - 0.05).abs() < 1e-6);
    }
}
