//! Heterogeneity measures and hypothesis tests used in cohort comparisons.

pub mod special;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use special::{normal_cdf, student_t_cdf, student_t_two_sided};

fn mean(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    // one correction pass absorbs most of the summation error
    m + values.iter().map(|v| v - m).sum::<f64>() / n
}

fn sum_sq_dev(values: &[f64], m: f64) -> f64 {
    values.iter().map(|v| (v - m).powi(2)).sum()
}

fn cv_with(values: &[f64], ddof: usize) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::Argument(format!(
            "coefficient of variation needs at least 2 values, got {}",
            values.len()
        )));
    }
    let m = mean(values);
    let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m == 0.0 || m.abs() <= f64::EPSILON * scale {
        return Err(Error::UndefinedCv);
    }
    if values.iter().all(|&v| v == values[0]) {
        return Ok(0.0);
    }
    let sd = (sum_sq_dev(values, m) / (values.len() - ddof) as f64).sqrt();
    Ok(sd / m)
}

/// Coefficient of variation with the population (n) standard deviation.
/// Used for intra-mask heterogeneity.
pub fn cv(values: &[f64]) -> Result<f64> {
    cv_with(values, 0)
}

/// Coefficient of variation with the sample (n - 1) standard deviation.
/// Used for inter-subject variability.
pub fn cv_sample(values: &[f64]) -> Result<f64> {
    cv_with(values, 1)
}

/// Equal-width histogram over `[min, max]` of the data, normalized to probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Argument("histogram of an empty sample".into()));
        }
        if bins == 0 {
            return Err(Error::Argument("histogram needs at least one bin".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("non-finite value {v} in histogram")));
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins];
        for &v in values {
            let k = if hi > lo {
                (((v - lo) / (hi - lo)) * bins as f64) as usize
            } else {
                0
            };
            counts[k.min(bins - 1)] += 1;
        }
        let n = values.len() as f64;
        Ok(Histogram {
            edges: (0..=bins).map(|k| lo + width * k as f64).collect(),
            probabilities: counts.into_iter().map(|c| c as f64 / n).collect(),
        })
    }

    /// `-Σ p log₂ p` with `0 log 0 = 0`.
    pub fn entropy_bits(&self) -> f64 {
        entropy_of(&self.probabilities)
    }
}

/// Shannon entropy in bits of a probability vector.
pub fn entropy_of(probabilities: &[f64]) -> f64 {
    let h: f64 = probabilities
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum();
    // -0.0 for a delta distribution
    h.max(0.0)
}

/// Default bin count for parameter-map entropy.
pub const DEFAULT_ENTROPY_BINS: usize = 64;

pub fn shannon_entropy(values: &[f64], bins: usize) -> Result<f64> {
    Ok(Histogram::new(values, bins)?.entropy_bits())
}

/// Outcome of a hypothesis test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    pub n1: usize,
    pub n2: Option<usize>,
    /// The statistic is infinite (zero-variance differences with non-zero
    /// mean); `p_value` is reported as 0 and is really below any threshold.
    pub degenerate: bool,
}

/// Two-sided paired t-test on `y - x`.
pub fn paired_t_test(x: &[f64], y: &[f64]) -> Result<TestResult> {
    if x.len() != y.len() {
        return Err(Error::Argument(format!(
            "paired samples differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::Argument(format!(
            "paired t-test needs at least 2 pairs, got {n}"
        )));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| b - a).collect();
    let m = mean(&d);
    let sd = (sum_sq_dev(&d, m) / (n - 1) as f64).sqrt();
    let result = |statistic: f64, p_value: f64, degenerate: bool| TestResult {
        statistic,
        p_value,
        n1: n,
        n2: None,
        degenerate,
    };
    if d.iter().all(|&v| v == 0.0) {
        return Ok(result(0.0, 1.0, false));
    }
    if sd == 0.0 {
        return Ok(result(m.signum() * f64::INFINITY, 0.0, true));
    }
    let t = m / (sd / (n as f64).sqrt());
    Ok(result(t, student_t_two_sided(t, (n - 1) as f64), false))
}

/// Midranks (1-based) of the pooled sample.
fn midranks(pooled: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn check_two_samples(x: &[f64], y: &[f64]) -> Result<()> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Argument("Mann-Whitney U needs two non-empty samples".into()));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::Argument("Mann-Whitney U received NaN".into()));
    }
    Ok(())
}

/// `U` of the first sample: pairs with `x > y` plus half the ties.
pub fn u_statistic(x: &[f64], y: &[f64]) -> f64 {
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks = midranks(&pooled);
    let n1 = x.len() as f64;
    ranks[..x.len()].iter().sum::<f64>() - n1 * (n1 + 1.0) / 2.0
}

/// Largest pooled sample size for which [`mann_whitney_u`] enumerates exactly.
pub const EXACT_MWU_MAX_N: usize = 12;

/// Two-sided Mann–Whitney U: exact enumeration for `n1 + n2 <= 12`, otherwise
/// the tie- and continuity-corrected normal approximation.
pub fn mann_whitney_u(x: &[f64], y: &[f64]) -> Result<TestResult> {
    if x.len() + y.len() <= EXACT_MWU_MAX_N {
        mann_whitney_u_exact(x, y)
    } else {
        mann_whitney_u_asymptotic(x, y)
    }
}

/// Exact permutation distribution of U over all splits of the pooled midranks.
pub fn mann_whitney_u_exact(x: &[f64], y: &[f64]) -> Result<TestResult> {
    check_two_samples(x, y)?;
    let n1 = x.len();
    let n2 = y.len();
    if n1 + n2 > 20 {
        return Err(Error::Argument(format!(
            "exact enumeration limited to 20 observations, got {}",
            n1 + n2
        )));
    }
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks = midranks(&pooled);
    let offset = (n1 * (n1 + 1)) as f64 / 2.0;
    let u_obs = ranks[..n1].iter().sum::<f64>() - offset;
    let centre = (n1 * n2) as f64 / 2.0;
    let dev_obs = (u_obs - centre).abs();

    // subsets of size n1 via an index vector in lexicographic order
    let n = ranks.len();
    let mut idx: Vec<usize> = (0..n1).collect();
    let (mut extreme, mut total) = (0u64, 0u64);
    loop {
        let u = idx.iter().map(|&i| ranks[i]).sum::<f64>() - offset;
        total += 1;
        if (u - centre).abs() >= dev_obs - 1e-9 {
            extreme += 1;
        }
        // advance to the next combination
        let mut k = n1;
        loop {
            if k == 0 {
                let p = extreme as f64 / total as f64;
                return Ok(TestResult {
                    statistic: u_obs,
                    p_value: p.min(1.0),
                    n1,
                    n2: Some(n2),
                    degenerate: false,
                });
            }
            k -= 1;
            if idx[k] < n - n1 + k {
                idx[k] += 1;
                for j in k + 1..n1 {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

pub fn mann_whitney_u_asymptotic(x: &[f64], y: &[f64]) -> Result<TestResult> {
    check_two_samples(x, y)?;
    let n1 = x.len();
    let n2 = y.len();
    let n = (n1 + n2) as f64;
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks = midranks(&pooled);
    let u = ranks[..n1].iter().sum::<f64>() - (n1 * (n1 + 1)) as f64 / 2.0;

    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let (a, b) = (n1 as f64, n2 as f64);
    let mu = a * b / 2.0;
    let var = a * b / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = ((u - mu).abs() - 0.5).max(0.0) / var.sqrt();
        (2.0 * special::normal_sf(z)).min(1.0)
    };
    Ok(TestResult {
        statistic: u,
        p_value: p,
        n1,
        n2: Some(n2),
        degenerate: false,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regression {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Two-sided p-value of the slope (t-test, n - 2 degrees of freedom).
    pub p_value: f64,
}

/// Ordinary least-squares line `y = slope * x + intercept`.
pub fn linear_regression(x: &[f64], y: &[f64]) -> Result<Regression> {
    if x.len() != y.len() {
        return Err(Error::Argument(format!(
            "regression samples differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::Argument(format!(
            "regression needs at least 3 points, got {n}"
        )));
    }
    let mx = mean(x);
    let my = mean(y);
    let sxx = sum_sq_dev(x, mx);
    if sxx == 0.0 {
        return Err(Error::DegenerateRegressor);
    }
    let syy = sum_sq_dev(y, my);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    if syy == 0.0 {
        return Ok(Regression {
            slope,
            intercept,
            r_squared: 0.0,
            p_value: 1.0,
        });
    }
    let r_squared = (sxy * sxy / (sxx * syy)).min(1.0);
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - (slope * a + intercept)).powi(2))
        .sum();
    let df = (n - 2) as f64;
    let p_value = if sse <= 0.0 {
        0.0
    } else {
        let se = (sse / df / sxx).sqrt();
        student_t_two_sided(slope / se, df)
    };
    Ok(Regression {
        slope,
        intercept,
        r_squared,
        p_value,
    })
}

/// Mean over `i` of `|b_i - a_i| / |a_i|`, in percent. `a` is the reference.
pub fn mean_abs_pct_diff(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Argument(format!(
            "percentage difference needs equal lengths: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Argument("percentage difference of empty lists".into()));
    }
    if let Some(i) = a.iter().position(|&v| v == 0.0) {
        return Err(Error::ZeroReference(i));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(r, v)| (v - r).abs() / r.abs() * 100.0)
        .sum::<f64>()
        / a.len() as f64)
}
