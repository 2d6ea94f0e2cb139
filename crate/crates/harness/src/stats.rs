//! Order statistics and the paired sign test.

use crate::{HarnessError, Result};

/// Percentile `q` in `[0, 1]` of `values` by linear interpolation between
/// order statistics (`q = 0.5` is the median).
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(HarnessError::Empty("percentile of no values".into()));
    }
    if !(0.0..=1.0).contains(&q) || values.iter().any(|v| v.is_nan()) {
        return Err(HarnessError::Invalid(format!("percentile {q} of values containing NaN or out of range")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Median with its interquartile range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spread {
    pub n: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

pub fn spread(values: &[f64]) -> Result<Spread> {
    Ok(Spread { n: values.len(), median: percentile(values, 0.5)?, q25: percentile(values, 0.25)?, q75: percentile(values, 0.75)? })
}

/// Outcome of a one-sided sign test on paired differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignTest {
    /// Pairs with a strictly positive difference.
    pub positive: usize,
    /// Pairs with a non-zero difference (ties are dropped).
    pub informative: usize,
    /// `P(X >= positive)` for `X ~ Binomial(informative, 1/2)`.
    pub p_value: f64,
}

/// One-sided exact sign test of `H1: a > b` over pairs `(a_i, b_i)`.
pub fn sign_test_greater(a: &[f64], b: &[f64]) -> Result<SignTest> {
    if a.len() != b.len() {
        return Err(HarnessError::Invalid("sign test needs equally many values on both sides".into()));
    }
    let mut positive = 0;
    let mut informative = 0;
    for (x, y) in a.iter().zip(b) {
        if x != y {
            informative += 1;
            if x > y {
                positive += 1;
            }
        }
    }
    Ok(SignTest { positive, informative, p_value: binomial_upper_tail(informative, positive) })
}

/// `P(X >= k)` for `X ~ Binomial(n, 1/2)`, summed in log space.
fn binomial_upper_tail(n: usize, k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let ln_half_n = n as f64 * 0.5f64.ln();
    let mut ln_choose = 0.0f64;
    let mut total = 0.0;
    for i in 0..=n {
        if i > 0 {
            ln_choose += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        if i >= k {
            total += (ln_choose + ln_half_n).exp();
        }
    }
    total.min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_and_quartiles() {
        let s = spread(&[5.0, 1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_eq!((s.median, s.q25, s.q75), (3.0, 2.0, 4.0));
        let single = spread(&[7.5]).unwrap();
        assert_eq!((single.median, single.q25, single.q75), (7.5, 7.5, 7.5));
        assert_eq!(percentile(&[1.0, 2.0], 0.5).unwrap(), 1.5);
        assert!(percentile(&[], 0.5).is_err());
    }

    #[test]
    fn sign_test_tails() {
        // 20 of 30 gives the familiar ~0.049 tail.
        let p = binomial_upper_tail(30, 20);
        assert!((p - 0.049368).abs() < 1e-5, "{p}");
        assert_eq!(binomial_upper_tail(10, 0), 1.0);
        assert!((binomial_upper_tail(3, 3) - 0.125).abs() < 1e-15);
        let t = sign_test_greater(&[2.0, 3.0, 1.0, 5.0], &[1.0, 1.0, 1.0, 4.0]).unwrap();
        assert_eq!((t.positive, t.informative), (3, 3));
        assert!((t.p_value - 0.125).abs() < 1e-15);
    }
}
