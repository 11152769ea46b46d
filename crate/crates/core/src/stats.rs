//! Order-fixed reductions and small estimators.

/// Pairwise (cascade) summation in index order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 16;
    if values.len() <= BLOCK {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

pub fn mean(values: &[f64]) -> f64 {
    pairwise_sum(values) / values.len() as f64
}

/// Unbiased sample variance; `None` for fewer than two values.
pub fn sample_variance(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let m = mean(values);
    let sq: Vec<f64> = values.iter().map(|v| (v - m) * (v - m)).collect();
    Some(pairwise_sum(&sq) / (values.len() - 1) as f64)
}

/// Root mean square of `values`.
pub fn rms(values: &[f64]) -> f64 {
    let sq: Vec<f64> = values.iter().map(|v| v * v).collect();
    (pairwise_sum(&sq) / values.len() as f64).sqrt()
}

/// Jackknife estimate of the standard error of `estimator` over `values`.
pub fn jackknife_stderr<F>(values: &[f64], estimator: F) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mut buf = Vec::with_capacity(n - 1);
    let loo: Vec<f64> = (0..n)
        .map(|i| {
            buf.clear();
            buf.extend_from_slice(&values[..i]);
            buf.extend_from_slice(&values[i + 1..]);
            estimator(&buf)
        })
        .collect();
    let m = mean(&loo);
    let sq: Vec<f64> = loo.iter().map(|v| (v - m) * (v - m)).collect();
    ((n - 1) as f64 / n as f64 * pairwise_sum(&sq)).sqrt()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    if lx.iter().chain(ly.iter()).any(|v| !v.is_finite()) {
        return None;
    }
    let mx = mean(&lx);
    let my = mean(&ly);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pairwise_matches_exact_sum() {
        let v: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&v), 500_500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn variance_of_small_sample() {
        assert_relative_eq!(sample_variance(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 5.0 / 3.0);
        assert_eq!(sample_variance(&[1.0]), None);
    }

    #[test]
    fn jackknife_of_mean_is_standard_error() {
        let v = [1.0, 4.0, 2.0, 8.0, 5.0, 7.0];
        let se = jackknife_stderr(&v, mean);
        let expected = (sample_variance(&v).unwrap() / v.len() as f64).sqrt();
        assert_relative_eq!(se, expected, max_relative = 1e-12);
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [100.0, 200.0, 400.0, 800.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-0.5)).collect();
        assert_relative_eq!(loglog_slope(&xs, &ys).unwrap(), -0.5, epsilon = 1e-12);
        assert_eq!(loglog_slope(&[1.0], &[1.0]), None);
    }
}
