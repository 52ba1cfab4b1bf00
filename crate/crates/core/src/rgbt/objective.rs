//! Second-order pieces of the regularized logistic boosting objective.

use super::RgbtError;
use crate::math::sigmoid;

/// First and second derivative of the logistic loss with respect to the
/// margin: `g = p - y`, `h = p (1 - p)`.
#[inline]
pub fn logistic_grad_hess(label: f64, margin: f64) -> (f64, f64) {
    let p = sigmoid(margin);
    (p - label, p * (1.0 - p))
}

/// Minimizer of `G w + ½ (H + λ) w²`, i.e. `-G / (H + λ)`.
pub fn leaf_weight(grad_sum: f64, hess_sum: f64, lambda: f64) -> Result<f64, RgbtError> {
    let denom = hess_sum + lambda;
    if denom <= 0.0 || !denom.is_finite() {
        return Err(RgbtError::DegenerateLeaf {
            hess_sum,
            lambda,
        });
    }
    Ok(-grad_sum / denom)
}

/// Loss reduction from splitting a leaf into left/right children, minus `γ`.
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64, gamma: f64) -> f64 {
    let score = |g: f64, h: f64| g * g / (h + lambda);
    0.5 * (score(gl, hl) + score(gr, hr) - score(gl + gr, hl + hr)) - gamma
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::XorShiftRng;

    #[test]
    fn grad_hess_at_zero_margin() {
        assert_eq!(logistic_grad_hess(1.0, 0.0), (-0.5, 0.25));
        assert_eq!(logistic_grad_hess(0.0, 0.0), (0.5, 0.25));
    }

    #[test]
    fn grad_hess_match_finite_differences() {
        // loss(m) = -ln p(m) for label 1
        let loss = |m: f64| -(1.0 / (1.0 + (-m).exp())).ln();
        for m in [2.0, -1.3, 0.4, 5.0] {
            let (g, h) = logistic_grad_hess(1.0, m);
            let e = 1e-4;
            let fd_g = (loss(m + e) - loss(m - e)) / (2.0 * e);
            let fd_h = (loss(m + e) - 2.0 * loss(m) + loss(m - e)) / (e * e);
            assert!((g - fd_g).abs() < 1e-6);
            assert!((h - fd_h).abs() < 1e-6);
        }
    }

    #[test]
    fn leaf_weight_examples() {
        assert_eq!(leaf_weight(0.0, 1.0, 1.0).unwrap(), 0.0);
        assert_eq!(leaf_weight(2.0, 3.0, 1.0).unwrap(), -0.5);
        assert!(matches!(
            leaf_weight(1.0, 0.0, 0.0),
            Err(RgbtError::DegenerateLeaf { .. })
        ));
    }

    #[test]
    fn split_gain_examples() {
        assert_eq!(split_gain(-2.0, 1.0, 2.0, 1.0, 1.0, 0.0), 2.0);
        assert_eq!(split_gain(1.0, 1.0, 1.0, 1.0, 0.0, 0.0), 0.0);
    }

    #[test]
    fn larger_lambda_never_grows_leaf_weight() {
        let mut rng = XorShiftRng::seed_from(4);
        for _ in 0..200 {
            let g = rng.unit() * 20.0 - 10.0;
            let h = rng.unit() * 5.0;
            let l1 = rng.unit() * 3.0 + 1e-3;
            let l2 = l1 + rng.unit() * 3.0;
            assert!(leaf_weight(g, h, l2).unwrap().abs() <= leaf_weight(g, h, l1).unwrap().abs());
        }
    }
}
