//! Overflow-safe scalar kernels shared by the tape and the plain scoring API.

/// `ln Σ exp(x_i)` with the maximum shifted out. Empty input gives `-∞`.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// `ln Σ exp(x_i)` over the listed positions only.
pub fn logsumexp_at(values: &[f64], positions: &[usize]) -> f64 {
    let max = positions.iter().map(|&i| values[i]).fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = positions.iter().map(|&i| (values[i] - max).exp()).sum();
    max + sum.ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

pub fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in values.iter_mut() {
        *v /= sum;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sigmoid_at_zero() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-30.0) < 1e-12);
        assert!(sigmoid(-800.0) >= 0.0);
    }

    #[test]
    fn logsumexp_does_not_overflow() {
        let v = logsumexp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + std::f64::consts::LN_2)).abs() < 1e-12);
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn equal_logits_give_uniform() {
        let p = softmax(&[3.5; 7]);
        for v in p {
            assert!((v - 1.0 / 7.0).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(logits in prop::collection::vec(-700.0f64..700.0, 1..64)) {
            let p = softmax(&logits);
            prop_assert!(p.iter().all(|&v| v >= 0.0 && v.is_finite()));
            let total: f64 = p.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
