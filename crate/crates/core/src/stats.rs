//! Descriptive statistics, the two-sample t-test, cutoff pass rates and
//! normalized histograms.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Gender;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("no samples")]
    Empty,
    #[error("t-test needs at least two samples per group, got {0} and {1}")]
    TooFewSamples(usize, usize),
    #[error("cutoff {0} outside [0, 10]")]
    BadCutoff(f64),
    #[error("histogram edges must be strictly increasing with at least two edges")]
    BadEdges,
    #[error("sample contains a non-finite value")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for n = 1.
    pub sd: f64,
}

pub fn describe(samples: &[f64]) -> Result<GroupStats, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::Empty);
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    Ok(GroupStats {
        n,
        mean,
        median,
        sd: sample_variance(samples, mean).sqrt(),
    })
}

fn sample_variance(xs: &[f64], mean: f64) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variance {
    /// Student's t with pooled variance.
    #[default]
    Pooled,
    /// Welch's t with Satterthwaite degrees of freedom.
    Welch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    #[serde(with = "float_or_symbol")]
    pub t: f64,
    pub p: f64,
    pub df: f64,
}

/// Two-sided independent two-sample t-test of `a` against `b`.
pub fn t_test_ind(a: &[f64], b: &[f64], variance: Variance) -> Result<TTestResult, StatsError> {
    let (na, nb) = (a.len(), b.len());
    if na < 2 || nb < 2 {
        return Err(StatsError::TooFewSamples(na, nb));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let (fa, fb) = (na as f64, nb as f64);
    let ma = a.iter().sum::<f64>() / fa;
    let mb = b.iter().sum::<f64>() / fb;
    let (va, vb) = (sample_variance(a, ma), sample_variance(b, mb));
    let (se2, df) = match variance {
        Variance::Pooled => {
            let df = fa + fb - 2.0;
            let pooled = ((fa - 1.0) * va + (fb - 1.0) * vb) / df;
            (pooled * (1.0 / fa + 1.0 / fb), df)
        }
        Variance::Welch => {
            let (qa, qb) = (va / fa, vb / fb);
            let se2 = qa + qb;
            let df = if se2 > 0.0 {
                se2 * se2 / (qa * qa / (fa - 1.0) + qb * qb / (fb - 1.0))
            } else {
                fa + fb - 2.0
            };
            (se2, df)
        }
    };
    let diff = ma - mb;
    if se2 == 0.0 {
        return Ok(if diff == 0.0 {
            TTestResult { t: 0.0, p: 1.0, df }
        } else {
            TTestResult {
                t: f64::INFINITY.copysign(diff),
                p: 0.0,
                df,
            }
        });
    }
    let t = diff / se2.sqrt();
    Ok(TTestResult {
        t,
        p: t_two_sided_p(t, df),
        df,
    })
}

/// P(|T| >= |t|) for Student's t with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t == 0.0 {
        return 1.0;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let t2 = t * t;
    // x = df/(df+t²) and 1-x computed separately to keep precision at both ends.
    let x = df / (df + t2);
    let y = t2 / (df + t2);
    beta_reg(df / 2.0, 0.5, x, y).clamp(0.0, 1.0)
}

/// Regularized incomplete beta I_x(a, b).
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    beta_reg(a, b, x, 1.0 - x)
}

fn beta_reg(a: f64, b: f64, x: f64, y: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if y <= 0.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * y.ln() - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, y) / b
    }
}

/// Continued fraction for the incomplete beta, modified Lentz evaluation.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    const MAX_ITER: usize = 10_000;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Lanczos approximation (g = 7, 9 terms), relative error near 1e-15.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassCounts {
    pub pass: usize,
    pub fail: usize,
    pub pass_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffResult {
    pub cutoff: f64,
    pub per_gender: BTreeMap<Gender, PassCounts>,
}

/// A score passes when it is at least `cutoff`.
pub fn cutoff_analysis(scores_by_gender: &BTreeMap<Gender, Vec<f64>>, cutoff: f64) -> Result<CutoffResult, StatsError> {
    if !(0.0..=10.0).contains(&cutoff) {
        return Err(StatsError::BadCutoff(cutoff));
    }
    let per_gender = scores_by_gender
        .iter()
        .map(|(g, scores)| {
            let pass = scores.iter().filter(|s| **s >= cutoff).count();
            let fail = scores.len() - pass;
            let pass_rate = if scores.is_empty() { 0.0 } else { pass as f64 / scores.len() as f64 };
            (*g, PassCounts { pass, fail, pass_rate })
        })
        .collect();
    Ok(CutoffResult { cutoff, per_gender })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Count in a bin divided by (total samples × bin width).
    pub densities: Vec<f64>,
    pub underflow: usize,
    pub overflow: usize,
    /// No samples at all; densities are all zero.
    pub empty: bool,
}

impl Histogram {
    pub fn bins(&self) -> impl Iterator<Item = ((f64, f64), f64)> + '_ {
        self.edges
            .windows(2)
            .map(|w| (w[0], w[1]))
            .zip(self.densities.iter().copied())
    }
}

/// Bins are half-open `[lo, hi)` except the last, which includes its upper
/// edge. Samples outside the edges are counted as underflow or overflow and
/// still count toward the normalizing total.
pub fn histogram_normalized(samples: &[f64], edges: &[f64]) -> Result<Histogram, StatsError> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(StatsError::BadEdges);
    }
    let bins = edges.len() - 1;
    let (lo, hi) = (edges[0], edges[bins]);
    let mut counts = vec![0usize; bins];
    let (mut underflow, mut overflow) = (0, 0);
    for &x in samples {
        if x < lo {
            underflow += 1;
        } else if x > hi || x.is_nan() {
            overflow += 1;
        } else {
            // Index of the last edge <= x, with x == hi folded into the last bin.
            let i = edges.partition_point(|e| *e <= x).saturating_sub(1).min(bins - 1);
            counts[i] += 1;
        }
    }
    let total = samples.len() as f64;
    let densities = counts
        .iter()
        .zip(edges.windows(2))
        .map(|(c, w)| if samples.is_empty() { 0.0 } else { *c as f64 / (total * (w[1] - w[0])) })
        .collect();
    Ok(Histogram {
        edges: edges.to_vec(),
        counts,
        densities,
        underflow,
        overflow,
        empty: samples.is_empty(),
    })
}

/// `bins + 1` evenly spaced edges from `lo` to `hi`.
pub fn equal_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let width = (hi - lo) / bins as f64;
    (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect()
}

/// Format a float the way Python's `repr` does: shortest round-trip digits,
/// scientific notation below 1e-4 or from 1e16.
pub fn python_repr(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0.0".into() } else { "0.0".into() };
    }
    let sci = format!("{v:e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..16).contains(&exp) {
        let s = v.to_string();
        if s.contains('.') { s } else { format!("{s}.0") }
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    }
}

fn fixed2(v: f64) -> String {
    if v.is_nan() { "nan".into() } else { format!("{v:.2}") }
}

/// The plain-text statistics block for one metric. A missing group or test
/// prints `nan` in its place.
pub fn statistics_block(male: Option<&GroupStats>, female: Option<&GroupStats>, t: Option<&TTestResult>) -> String {
    let mean = |g: Option<&GroupStats>| fixed2(g.map_or(f64::NAN, |g| g.mean));
    let median = |g: Option<&GroupStats>| fixed2(g.map_or(f64::NAN, |g| g.median));
    let (t, p) = t.map_or((f64::NAN, f64::NAN), |t| (t.t, t.p));
    let mut s = String::new();
    writeln!(s, "Statistics :").unwrap();
    writeln!(s, "Mean Male = {}", mean(male)).unwrap();
    writeln!(s, "Median Male ={}", median(male)).unwrap();
    writeln!(s, "Mean Female = {}", mean(female)).unwrap();
    writeln!(s, "Median Female = {}", median(female)).unwrap();
    writeln!(s, "Ttest_indResult(statistic={}, pvalue={})", python_repr(t), python_repr(p)).unwrap();
    s
}

/// JSON has no infinities; write them as strings and accept either form.
pub(crate) mod float_or_symbol {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&super::python_repr(*v))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Sym(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Sym(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("not a float: {other:?}"))),
            },
        }
    }
}
