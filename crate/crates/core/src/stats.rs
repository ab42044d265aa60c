//! Small statistics helpers: Student-t confidence intervals, the one-sample
//! Kolmogorov–Smirnov test and a Pearson chi-square goodness-of-fit p-value.

use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

/// Sample mean and unbiased variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Two-sided Student-t confidence interval for the mean; `None` with fewer
/// than two samples.
pub fn t_confidence_interval(xs: &[f64], level: f64) -> Option<(f64, f64)> {
    if xs.len() < 2 {
        return None;
    }
    let (mean, var) = mean_var(xs);
    let n = xs.len() as f64;
    let t = StudentsT::new(0.0, 1.0, n - 1.0).ok()?;
    let q = t.inverse_cdf(0.5 + level / 2.0);
    let half = q * (var / n).sqrt();
    Some((mean - half, mean + half))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// One-sample KS statistic `sup |F_n - F|` of `samples` against `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic Kolmogorov survival function with Stephens' small-sample
/// correction.
pub fn ks_p_value(statistic: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * statistic;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let j = j as f64;
        let term = 2.0 * (if j as i64 % 2 == 1 { 1.0 } else { -1.0 }) * (-2.0 * j * j * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

pub fn ks_test<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> KsResult {
    let statistic = ks_statistic(samples, cdf);
    KsResult {
        statistic,
        p_value: ks_p_value(statistic, samples.len()),
        n: samples.len(),
    }
}

/// Pearson chi-square p-value of observed counts against expected counts,
/// with `dof = bins - 1 - fitted`.
pub fn chi_square_p_value(observed: &[f64], expected: &[f64], fitted: usize) -> f64 {
    assert_eq!(observed.len(), expected.len());
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .map(|(o, e)| (o - e) * (o - e) / e)
        .sum();
    let dof = (observed.len() - 1 - fitted) as f64;
    let chi = ChiSquared::new(dof).expect("positive degrees of freedom");
    1.0 - chi.cdf(stat)
}
