//! Male-minus-female difference series and a linear regression discontinuity
//! at `t0`.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::changepoint::{covering_interval, ChangeReport};
use crate::epoch::WindowSeries;
use crate::ingest::Gender;
use crate::{Error, Polarity, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffSeries {
    pub offsets: Vec<i64>,
    pub values: Vec<Option<f64>>,
}

/// `V(t) = V_m(t) - V_f(t)`; defined where both inputs are.
pub fn difference_series(male: &WindowSeries, female: &WindowSeries) -> Result<DiffSeries> {
    difference(&male.offsets, &male.mean_valence, &female.offsets, &female.mean_valence)
}

pub fn difference(m_off: &[i64], m: &[Option<f64>], f_off: &[i64], f: &[Option<f64>]) -> Result<DiffSeries> {
    if m_off != f_off || m.len() != f.len() || m.len() != m_off.len() {
        return Err(Error::InvalidInput("series use different window grids".into()));
    }
    Ok(DiffSeries {
        offsets: m_off.to_vec(),
        values: m
            .iter()
            .zip(f)
            .map(|(a, b)| match (a, b) {
                (Some(a), Some(b)) => Some(a - b),
                _ => None,
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
    pub ci: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: Estimate,
    pub intercept: Estimate,
    pub n: usize,
    pub residual_se: f64,
}

impl LineFit {
    pub fn predict(&self, t: f64) -> f64 {
        self.intercept.value + self.slope.value * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RddResult {
    pub t0: i64,
    pub pre: LineFit,
    pub post: LineFit,
    /// `post(t0) - pre(t0)`.
    pub gap: Estimate,
    /// Whether the two lines' intercept intervals at `t0` overlap.
    pub overlap: bool,
}

fn t_quantile(df: usize) -> Result<f64> {
    let dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(dist.inverse_cdf(0.975))
}

fn interval(value: f64, se: f64, q: f64) -> Estimate {
    Estimate {
        value,
        se,
        ci: (value - q * se, value + q * se),
    }
}

/// Ordinary least squares of `y` on `x - x0`, so the intercept is the value at `x0`.
fn ols(x: &[f64], y: &[f64], x0: f64) -> Result<LineFit> {
    let n = x.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!("{n} points on one side, need 3")));
    }
    let nf = n as f64;
    let mx = x.iter().map(|v| v - x0).sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - x0 - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::InvalidInput("all windows share one offset".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - x0 - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * (a - x0)).powi(2))
        .sum();
    let s2 = rss / (nf - 2.0);
    let q = t_quantile(n - 2)?;
    let se_slope = (s2 / sxx).sqrt();
    let se_intercept = (s2 * (1.0 / nf + mx * mx / sxx)).sqrt();
    Ok(LineFit {
        slope: interval(slope, se_slope, q),
        intercept: interval(intercept, se_intercept, q),
        n,
        residual_se: s2.sqrt(),
    })
}

/// Separate lines before (`k < t0`) and from (`k >= t0`) the anchor.
pub fn rdd_fit(diff: &DiffSeries, t0: i64) -> Result<RddResult> {
    let side = |post: bool| -> (Vec<f64>, Vec<f64>) {
        diff.offsets
            .iter()
            .zip(&diff.values)
            .filter(|(&k, _)| (k >= t0) == post)
            .filter_map(|(&k, v)| v.map(|v| (k as f64, v)))
            .unzip()
    };
    let (xa, ya) = side(false);
    let (xb, yb) = side(true);
    let origin = t0 as f64;
    let pre = ols(&xa, &ya, origin)?;
    let post = ols(&xb, &yb, origin)?;
    let gap = post.intercept.value - pre.intercept.value;
    let se = (post.intercept.se.powi(2) + pre.intercept.se.powi(2)).sqrt();
    let df = (pre.n + post.n - 4).max(1);
    let overlap = pre.intercept.ci.0 <= post.intercept.ci.1 && post.intercept.ci.0 <= pre.intercept.ci.1;
    Ok(RddResult {
        t0,
        pre,
        post,
        gap: interval(gap, se, t_quantile(df)?),
        overlap,
    })
}

/// Change analyses of one gender and polarity cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenderCell {
    pub gender: Gender,
    pub polarity: Polarity,
    pub cusum: ChangeReport,
    pub ci_divergence: ChangeReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenderSpanRow {
    pub label: String,
    pub cusum_span: Option<(i64, i64)>,
    pub cusum_minutes: Option<i64>,
    pub ci_span: Option<(i64, i64)>,
    pub ci_minutes: Option<i64>,
}

fn cell_label(gender: Gender, polarity: Polarity) -> String {
    let g = match gender {
        Gender::Female => "Female",
        Gender::Male => "Male",
        Gender::Unknown => "Unknown",
    };
    let p = match polarity {
        Polarity::Positive => "+",
        Polarity::Negative => "-",
    };
    format!("{g}{p}")
}

/// Rows in the order Female+, Male+, Female-, Male-; missing cells are skipped.
pub fn gender_change_spans(cells: &[GenderCell]) -> Vec<GenderSpanRow> {
    let order = [
        (Gender::Female, Polarity::Positive),
        (Gender::Male, Polarity::Positive),
        (Gender::Female, Polarity::Negative),
        (Gender::Male, Polarity::Negative),
    ];
    order
        .iter()
        .filter_map(|&(g, p)| cells.iter().find(|c| c.gender == g && c.polarity == p))
        .map(|c| {
            let cusum = covering_interval(&c.cusum, c.polarity);
            let ci = covering_interval(&c.ci_divergence, c.polarity);
            GenderSpanRow {
                label: cell_label(c.gender, c.polarity),
                cusum_span: cusum.map(|i| (i.start_k, i.end_k)),
                cusum_minutes: cusum.map(|i| i.duration_minutes),
                ci_span: ci.map(|i| (i.start_k, i.end_k)),
                ci_minutes: ci.map(|i| i.duration_minutes),
            }
        })
        .collect()
}
