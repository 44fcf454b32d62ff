//! Survey schema and the statistics used to evaluate it: pooled two-sample
//! t-test, Cohen's d, Pearson's r and Likert summaries.

mod special;
mod survey;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use special::{ln_gamma, regularized_incomplete_beta, student_t_cdf, t_two_tailed_p};
pub use survey::{
    read_csv, LikertResponse, Metric, PerceivedChange, Phase, SurveyRecord, CSV_HEADER,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least {need} observations, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("samples have zero variance")]
    DegenerateSample,
    #[error("paired samples differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite observation")]
    NonFinite,
    #[error("no records for the selection")]
    EmptySelection,
    #[error("likert value {0} outside -3..=3")]
    InvalidLikert(i64),
    #[error("survey csv line {line}: {message}")]
    Schema { line: usize, message: String },
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sum of squared deviations from the mean.
fn ss(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum()
}

fn check(v: &[f64], need: usize) -> Result<(), StatsError> {
    if v.len() < need {
        return Err(StatsError::TooFewSamples { need, got: v.len() });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

/// Student's two-sample t-test with pooled variance, two-tailed.
///
/// With zero pooled variance the statistic is undefined; by convention
/// unequal means give `t = ±inf, p = 0` and equal means `t = 0, p = 1`.
pub fn pooled_t_test(a: &[f64], b: &[f64]) -> Result<TTest, StatsError> {
    check(a, 2)?;
    check(b, 2)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let df = na + nb - 2.0;
    let diff = mean(a) - mean(b);
    let sp2 = (ss(a) + ss(b)) / df;
    if sp2 == 0.0 {
        return Ok(if diff == 0.0 {
            TTest { t: 0.0, df, p: 1.0 }
        } else {
            TTest {
                t: f64::INFINITY.copysign(diff),
                df,
                p: 0.0,
            }
        });
    }
    let t = diff / (sp2 * (1.0 / na + 1.0 / nb)).sqrt();
    Ok(TTest {
        t,
        df,
        p: t_two_tailed_p(t, df),
    })
}

/// `(mean_a - mean_b) / s_pooled`.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    check(a, 2)?;
    check(b, 2)?;
    let sp2 = (ss(a) + ss(b)) / (a.len() + b.len() - 2) as f64;
    if sp2 == 0.0 {
        return Err(StatsError::DegenerateSample);
    }
    Ok((mean(a) - mean(b)) / sp2.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub p: f64,
    pub n: usize,
}

/// Pearson product-moment correlation with a two-tailed p from
/// `t = r sqrt((n-2)/(1-r^2))`, `df = n - 2`.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<Correlation, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    check(x, 3)?;
    check(y, 3)?;
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let (sxx, syy) = (ss(x), ss(y));
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::DegenerateSample);
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let n = x.len();
    let p = if r.abs() == 1.0 {
        0.0
    } else {
        let t = r * ((n as f64 - 2.0) / (1.0 - r * r)).sqrt();
        t_two_tailed_p(t, n as f64 - 2.0)
    };
    Ok(Correlation { r, p, n })
}

/// Integer percentages of `counts` that sum to exactly 100: floor each
/// share, then hand the missing points to the largest remainders (ties to
/// the earlier category). All zeros when `counts` sums to zero.
pub fn round_percentages(counts: &[usize]) -> Vec<u32> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return vec![0; counts.len()];
    }
    let mut out: Vec<u32> = counts.iter().map(|&c| (c * 100 / total) as u32).collect();
    let missing = 100 - out.iter().sum::<u32>();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(counts[i] * 100 % total), i));
    for &i in order.iter().take(missing as usize) {
        out[i] += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub label: String,
    pub code: i8,
    pub count: usize,
    pub percent: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub metric: Metric,
    pub phase: Phase,
    pub n: usize,
    pub buckets: Vec<Bucket>,
    pub mean: f64,
    /// Sample standard deviation (n - 1); 0 for a single response.
    pub sd: f64,
}

/// Coded values of `metric` for the records in `phase`.
pub fn metric_values(records: &[SurveyRecord], metric: Metric, phase: Phase) -> Vec<f64> {
    records
        .iter()
        .filter(|r| r.phase == phase)
        .filter_map(|r| r.value(metric))
        .map(f64::from)
        .collect()
}

pub fn summarize_likert(
    records: &[SurveyRecord],
    metric: Metric,
    phase: Phase,
) -> Result<Distribution, StatsError> {
    let values: Vec<i8> = records
        .iter()
        .filter(|r| r.phase == phase)
        .filter_map(|r| r.value(metric))
        .collect();
    if values.is_empty() {
        return Err(StatsError::EmptySelection);
    }
    let categories = metric.categories();
    let counts: Vec<usize> = categories
        .iter()
        .map(|(code, _)| values.iter().filter(|v| *v == code).count())
        .collect();
    let percents = round_percentages(&counts);
    let coded: Vec<f64> = values.iter().map(|v| f64::from(*v)).collect();
    let sd = if coded.len() > 1 {
        (ss(&coded) / (coded.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(Distribution {
        metric,
        phase,
        n: values.len(),
        buckets: categories
            .iter()
            .zip(counts.iter().zip(&percents))
            .map(|((code, label), (&count, &percent))| Bucket {
                label: label.to_string(),
                code: *code,
                count,
                percent,
            })
            .collect(),
        mean: mean(&coded),
        sd,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: Metric,
    pub t: f64,
    pub df: f64,
    pub p: f64,
    /// `None` when both samples have zero variance.
    pub d: Option<f64>,
    pub a: Distribution,
    pub b: Distribution,
}

/// Independent-samples comparison of `metric` between two phases.
pub fn compare_phases(
    records: &[SurveyRecord],
    metric: Metric,
    a: Phase,
    b: Phase,
) -> Result<Comparison, StatsError> {
    let (va, vb) = (metric_values(records, metric, a), metric_values(records, metric, b));
    let test = pooled_t_test(&va, &vb)?;
    let d = match cohens_d(&va, &vb) {
        Ok(d) => Some(d),
        Err(StatsError::DegenerateSample) => None,
        Err(e) => return Err(e),
    };
    Ok(Comparison {
        metric,
        t: test.t,
        df: test.df,
        p: test.p,
        d,
        a: summarize_likert(records, metric, a)?,
        b: summarize_likert(records, metric, b)?,
    })
}
