//! Log-domain reductions.
//!
//! Every partition quantity in the crate is carried as a logarithm; these are
//! the only places where exponentials are taken, always after shifting by the
//! running maximum.

/// `log Σ exp(x_i)`, skipping `-inf` entries. Returns `-inf` for an empty or
/// all-`-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// `log Σ exp(scale · x_i)`.
pub fn log_sum_exp_scaled(values: &[f64], scale: f64) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for &v in values {
        if v != f64::NEG_INFINITY {
            max = max.max(scale * v);
        }
    }
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values
        .iter()
        .filter(|v| **v != f64::NEG_INFINITY)
        .map(|&v| (scale * v - max).exp())
        .sum();
    max + sum.ln()
}

/// `log( (1/N) Σ exp(scale · x_i) )`.
pub fn log_mean_exp_scaled(values: &[f64], scale: f64) -> f64 {
    log_sum_exp_scaled(values, scale) - (values.len() as f64).ln()
}

/// Normalized weights `w_i ∝ exp(scale · x_i)` written into `out`.
///
/// Entries equal to `-inf` get weight zero. Returns the log of the
/// unnormalized sum (relative to nothing, i.e. `log Σ exp(scale · x_i)`).
pub fn softmax_scaled_into(values: &[f64], scale: f64, out: &mut [f64]) -> f64 {
    debug_assert_eq!(values.len(), out.len());
    let mut max = f64::NEG_INFINITY;
    for &v in values {
        if v != f64::NEG_INFINITY {
            max = max.max(scale * v);
        }
    }
    if max == f64::NEG_INFINITY {
        out.iter_mut().for_each(|w| *w = 0.0);
        return f64::NEG_INFINITY;
    }
    let mut sum = 0.0;
    for (w, &v) in out.iter_mut().zip(values) {
        *w = if v == f64::NEG_INFINITY {
            0.0
        } else {
            (scale * v - max).exp()
        };
        sum += *w;
    }
    out.iter_mut().for_each(|w| *w /= sum);
    max + sum.ln()
}

/// Mean and standard error of the mean. The standard error is zero for a
/// single sample.
pub fn mean_and_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn large_arguments_do_not_overflow() {
        let v = log_sum_exp(&[1234.0, 1232.0]);
        assert!((v - (1234.0 + (-2f64).exp().ln_1p())).abs() < 1e-12);
        let naive = (1234f64.exp() + 1232f64.exp()).ln();
        assert!(naive.is_infinite());
    }

    #[test]
    fn neg_infinity_is_skipped() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, 0.0]), 0.0);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn two_equal_terms_give_log_two() {
        assert!((log_sum_exp(&[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn softmax_handles_extreme_spread() {
        let mut w = [0.0; 3];
        softmax_scaled_into(&[0.0, 1000.0, f64::NEG_INFINITY], 1.0, &mut w);
        assert_eq!(w, [0.0, 1.0, 0.0]);
        softmax_scaled_into(&[0.0, 3f64.ln(), f64::NEG_INFINITY], 1.0, &mut w);
        assert!((w[0] - 0.25).abs() < 1e-15 && (w[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn stderr_of_constant_is_zero() {
        let (m, se) = mean_and_stderr(&[2.0, 2.0, 2.0]);
        assert_eq!(m, 2.0);
        assert_eq!(se, 0.0);
    }
}
