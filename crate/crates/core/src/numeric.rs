//! Small shared numeric helpers.

/// Log of a sum of exponentials, shifted by the running maximum so that no
/// raw exponential of a large argument is ever materialized.
pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        // All terms are -inf (empty sums never occur here).
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// In-place normalization of log-weights into probabilities.
pub(crate) fn softmax_in_place(log_weights: &mut [f64]) {
    let lse = log_sum_exp(log_weights);
    for w in log_weights.iter_mut() {
        *w = (*w - lse).exp();
    }
    // exp of normalized logs sums to 1 up to a few ulps; divide the rest out.
    let sum: f64 = log_weights.iter().sum();
    for w in log_weights.iter_mut() {
        *w /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_matches_direct_sum_on_small_values() {
        let v = [0.0_f64, -1.0, -2.5];
        let direct = v.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&v) - direct).abs() < 1e-14);
    }

    #[test]
    fn lse_survives_large_magnitudes() {
        let v = [1e6, 1e6 - 3.0];
        let got = log_sum_exp(&v);
        assert!((got - (1e6 + (1.0 + (-3.0_f64).exp()).ln())).abs() < 1e-9);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut v = [-500.0, -501.0, -1500.0];
        softmax_in_place(&mut v);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(v[0] > v[1] && v[1] > v[2]);
    }
}
