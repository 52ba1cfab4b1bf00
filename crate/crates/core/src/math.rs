/// Logistic function, evaluated without overflow for either sign.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)`, stable for large |z|.
#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Logistic loss of margin `z` against a {0,1} target.
#[inline]
pub fn logistic_loss(label: f64, z: f64) -> f64 {
    softplus(z) - label * z
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_symmetric_and_bounded() {
        assert_eq!(sigmoid(0.0), 0.5);
        for z in [-800.0, -30.0, -1.0, 1.0, 30.0, 800.0] {
            let s = sigmoid(z);
            assert!((0.0..=1.0).contains(&s));
            assert!((s + sigmoid(-z) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn logistic_loss_matches_direct_form() {
        for &(y, z) in &[(1.0, 0.3), (0.0, -1.2), (1.0, -2.0), (0.0, 4.0)] {
            let p = 1.0 / (1.0 + (-z as f64).exp());
            let direct = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
            assert!((logistic_loss(y, z) - direct).abs() < 1e-12);
        }
    }
}
