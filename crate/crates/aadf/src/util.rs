//! Small numeric helpers shared across modules.

/// Logistic sigmoid, stable for large |t|.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// d/dt sigmoid(t) = sigmoid(t) * (1 - sigmoid(t)).
pub fn sigmoid_prime(t: f64) -> f64 {
    let s = sigmoid(t);
    s * (1.0 - s)
}

/// log(1 + e^t) without overflow.
pub fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Single tie rule used for every byte and coefficient rounding: half up.
pub fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

/// Compensated sequential sum; keeps big reductions accurate enough for
/// finite-difference checks.
pub fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

/// sign with sign(0) = 0; the L1 subgradient convention.
pub fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_saturates_without_overflow() {
        assert!(sigmoid(800.0) <= 1.0);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn softplus_matches_naive_in_safe_range() {
        for &t in &[-3.0f64, -0.5, 0.0, 0.7, 4.2] {
            let naive = (1.0 + t.exp()).ln();
            assert!((softplus(t) - naive).abs() < 1e-12);
        }
        // large positive input must not overflow
        assert!((softplus(1000.0) - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(round_half_up(0.5), 1.0);
        assert_eq!(round_half_up(1.5), 2.0);
        assert_eq!(round_half_up(-0.5), 0.0);
        assert_eq!(round_half_up(-1.5), -1.0);
        assert_eq!(round_half_up(2.4), 2.0);
        assert_eq!(round_half_up(127.5), 128.0);
    }

    #[test]
    fn kahan_sum_recovers_small_terms() {
        let mut values = vec![1e16];
        values.extend(std::iter::repeat(1.0).take(1000));
        values.push(-1e16);
        assert_eq!(kahan_sum(values), 1000.0);
    }
}
