//! Small statistics helpers.

/// One-sided sign test: probability of at least `positive` successes in `n`
/// fair coin flips. Ties must already be dropped from `n`; `n == 0` gives 1.
pub fn sign_test_p(positive: usize, n: usize) -> f64 {
    assert!(positive <= n, "{positive} successes out of {n}");
    let mut tail = 0.0f64;
    let mut c = 1.0f64;
    for i in 0..=n {
        if i >= positive {
            tail += c;
        }
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    tail / 2f64.powi(n as i32)
}

/// Paired sign test on `deltas`: zeros are ties and are dropped.
/// Returns `(positive, non-tied, p)`.
pub fn paired_sign_test(deltas: &[f64]) -> (usize, usize, f64) {
    let positive = deltas.iter().filter(|&&d| d > 0.0).count();
    let n = deltas.iter().filter(|&&d| d != 0.0).count();
    (positive, n, sign_test_p(positive, n))
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_binomial_tail() {
        assert_eq!(sign_test_p(5, 5), 1.0 / 32.0);
        assert_eq!(sign_test_p(4, 5), 6.0 / 32.0);
        assert_eq!(sign_test_p(0, 7), 1.0);
        assert_eq!(sign_test_p(0, 0), 1.0);
        assert!((sign_test_p(8, 10) - 56.0 / 1024.0).abs() < 1e-15);
    }

    #[test]
    fn ties_are_dropped() {
        assert_eq!(paired_sign_test(&[0.1, 0.0, 0.2, -0.1]), (2, 3, 0.5));
        assert_eq!(paired_sign_test(&[0.0, 0.0]), (0, 0, 1.0));
    }
}
