//! Small descriptive-statistics helpers shared across modules.

use statrs::function::erf::erfc;

/// Two-sided 95% standard normal critical value.
pub const Z_975: f64 = 1.959_963_984_540_054;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with the `n - 1` denominator.
pub fn sample_var(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

pub fn sample_sd(xs: &[f64]) -> f64 {
    sample_var(xs).sqrt()
}

/// Quantile of already sorted data by linear interpolation between order
/// statistics at position `p (n - 1)`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if hi == lo || frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

pub fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn quantile(xs: &[f64], p: f64) -> f64 {
    quantile_sorted(&sorted(xs), p)
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Quantile of the equally weighted mixture `(1/D) Σ_d N(means[d], vars[d])`.
///
/// Components with zero variance are point masses. When every component is a
/// point mass this is the interpolated empirical quantile of `means`.
pub fn normal_mixture_quantile(means: &[f64], vars: &[f64], p: f64) -> f64 {
    assert_eq!(means.len(), vars.len());
    assert!(!means.is_empty());
    if vars.iter().all(|&v| v <= 0.0) {
        return quantile(means, p);
    }
    let cdf = |x: f64| {
        means
            .iter()
            .zip(vars)
            .map(|(&m, &v)| {
                if v <= 0.0 {
                    if x >= m {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    normal_cdf((x - m) / v.sqrt())
                }
            })
            .sum::<f64>()
            / means.len() as f64
    };
    let max_sd = vars.iter().cloned().fold(0.0, f64::max).sqrt();
    let lo_m = means.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi_m = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut lo = lo_m - 10.0 * max_sd;
    let mut hi = hi_m + 10.0 * max_sd;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * (1.0 + mid.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Monte Carlo standard error of the mean of a correlated series, by
/// non-overlapping batch means.
pub fn batch_means_se(xs: &[f64], batches: usize) -> f64 {
    let n = xs.len();
    let batches = batches.max(2).min(n.max(2));
    let size = n / batches;
    if size == 0 {
        return f64::NAN;
    }
    let means: Vec<f64> = (0..batches)
        .map(|b| mean(&xs[b * size..(b + 1) * size]))
        .collect();
    (sample_var(&means) / batches as f64).sqrt()
}
