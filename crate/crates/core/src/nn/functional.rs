//! Stateless activation helpers.

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0, 0.0, 0.0]);
        for x in p {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax(&[2f64.ln(), 0.0, 0.0]);
        assert!((p[0] - 0.5).abs() < 1e-12);
        assert!((p[1] - 0.25).abs() < 1e-12);
        assert!((p[2] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn leaky_relu_examples() {
        assert_eq!(leaky_relu(-2.0, 0.01), -0.02);
        assert_eq!(leaky_relu(3.0, 0.01), 3.0);
        assert_eq!(leaky_relu(0.0, 0.01), 0.0);
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            logits in prop::collection::vec(-50.0f64..50.0, 1..12),
            shift in -100.0f64..100.0,
        ) {
            let p = softmax(&logits);
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&x| x > 0.0));
            let shifted: Vec<f64> = logits.iter().map(|z| z + shift).collect();
            let q = softmax(&shifted);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
