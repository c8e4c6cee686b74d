//! Shared helpers for statistical test oracles.

/// Sample mean, variance, and the standard errors of both (the variance
/// standard error uses the empirical fourth central moment).
pub(crate) struct McSummary {
    pub mean: f64,
    pub var: f64,
    pub se_mean: f64,
    pub se_var: f64,
}

pub(crate) fn summarize(samples: &[f64]) -> McSummary {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let mut m2 = 0.0;
    let mut m4 = 0.0;
    for &x in samples {
        let d = x - mean;
        m2 += d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m4 /= n;
    McSummary {
        mean,
        var: m2,
        se_mean: libm::sqrt(m2 / n),
        se_var: libm::sqrt((m4 - m2 * m2).max(0.0) / n),
    }
}
