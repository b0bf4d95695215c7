use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Normal quantile for a two-sided 95% interval.
pub const Z_95: f64 = 1.96;

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

/// Size, mean and 95% normal-approximation half-width of one group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub n: usize,
    /// `None` for an empty group.
    pub mean: Option<f64>,
    /// `1.96 * s / sqrt(n)`; `None` when `n < 2`.
    pub ci95_half_width: Option<f64>,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn sample_variance(values: &[f64], m: f64) -> f64 {
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64
}

pub fn summarize(values: &[f64]) -> GroupSummary {
    let n = values.len();
    let m = (n > 0).then(|| mean(values));
    let ci = m.filter(|_| n >= 2).map(|m| Z_95 * sample_variance(values, m).sqrt() / (n as f64).sqrt());
    GroupSummary { n, mean: m, ci95_half_width: ci }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Two-sided Welch t-test. `None` when either group has fewer than two
/// values. With both variances zero the p-value is 1 for equal means and
/// 0 otherwise.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Option<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (sample_variance(a, ma) / a.len() as f64, sample_variance(b, mb) / b.len() as f64);
    let se2 = va + vb;
    if se2 == 0.0 {
        let df = (a.len() + b.len() - 2) as f64;
        return Some(if ma == mb {
            WelchResult { t: 0.0, df, p_value: 1.0 }
        } else {
            WelchResult { t: (ma - mb).signum() * f64::INFINITY, df, p_value: 0.0 }
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (va * va / (a.len() - 1) as f64 + vb * vb / (b.len() - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    let p_value = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Some(WelchResult { t, df, p_value })
}
