//! Small numeric helpers shared by the estimators.

/// Ordinary least-squares fit `y = intercept + slope * x`.
/// Returns `(slope, intercept, r_squared)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    assert!(n >= 2.0, "need at least two points to fit");
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (slope, intercept, r2)
}

/// Wilson 95% score interval for a binomial proportion.
pub fn wilson_ci(successes: usize, trials: usize) -> (f64, f64) {
    let z = 1.959963984540054_f64;
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Survival function of the chi-squared distribution with `df` degrees of
/// freedom, evaluated at `stat`.
pub fn chi2_sf(stat: f64, df: f64) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    if df <= 0.0 {
        return 1.0;
    }
    let dist = ChiSquared::new(df).expect("positive degrees of freedom");
    (1.0 - dist.cdf(stat)).clamp(0.0, 1.0)
}

/// Poisson pmf `P(X = k)` for mean `lambda`, via logs for stability.
pub fn poisson_pmf(k: usize, lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    let mut log_p = -lambda + (k as f64) * lambda.ln();
    for i in 1..=k {
        log_p -= (i as f64).ln();
    }
    log_p.exp()
}

/// Sample mean and unbiased variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() < 2 {
        0.0
    } else {
        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    };
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn fit_recovers_exact_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [0.5, 1.5, 2.5, 3.5];
        let (slope, intercept, r2) = linear_fit(&xs, &ys);
        assert_abs_diff_eq!(slope, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(intercept, -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r2, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn chi2_sf_reference_value() {
        // 2.417910447761194 with 3 df, cross-checked against scipy
        assert_abs_diff_eq!(chi2_sf(2.417910447761194, 3.0), 0.4903093069653883, epsilon = 1e-10);
    }

    #[test]
    fn poisson_pmf_sums_to_one() {
        let total: f64 = (0..60).map(|k| poisson_pmf(k, 2.5)).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn wilson_interval_contains_point_estimate() {
        let (lo, hi) = wilson_ci(370, 1000);
        assert!(lo < 0.37 && 0.37 < hi);
        assert!(hi - lo < 0.07);
    }
}
