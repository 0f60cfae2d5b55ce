//! CUSUM control charts, baseline intervals, median excursions and the
//! combined duration estimate.

use serde::{Deserialize, Serialize};

use crate::stats::{mean, median, percentile, round_half_away};
use crate::{Error, Polarity, Result};

pub const DEFAULT_H: f64 = 0.01;
pub const DEFAULT_LAMBDA_MINUTES: i64 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CusumParams {
    /// Reference mean of the null series.
    pub target: f64,
    /// Allowance: standard deviation of the null series.
    pub allowance: f64,
    pub threshold: f64,
    pub lambda_min: i64,
}

impl CusumParams {
    pub fn new(target: f64, allowance: f64, threshold: f64, lambda_min: i64) -> Result<Self> {
        if !(threshold > 0.0) {
            return Err(Error::InvalidInput(format!("CUSUM threshold {threshold} must be positive")));
        }
        if lambda_min < 1 {
            return Err(Error::InvalidInput(format!("minimum run length {lambda_min} must be at least 1")));
        }
        if !target.is_finite() || !allowance.is_finite() {
            return Err(Error::InvalidInput("CUSUM target and allowance must be finite".into()));
        }
        Ok(CusumParams {
            target,
            allowance,
            threshold,
            lambda_min,
        })
    }

    /// Target and allowance from the mean and sample standard deviation of a
    /// null-model series; missing windows are ignored.
    pub fn from_null(null_series: &[Option<f64>], threshold: f64, lambda_min: i64) -> Result<Self> {
        let defined: Vec<f64> = null_series.iter().flatten().copied().collect();
        let target = mean(&defined)
            .ok_or_else(|| Error::InsufficientData("null series has no defined window".into()))?;
        let allowance = crate::stats::sample_std(&defined)
            .ok_or_else(|| Error::InsufficientData("null series needs two defined windows".into()))?;
        CusumParams::new(target, allowance, threshold, lambda_min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Cusum,
    CiDivergence,
    MedianExcursion,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Cusum => "CUSUM",
            Method::CiDivergence => "95% CI",
            Method::MedianExcursion => "Median",
        }
    }
}

/// Which side of the reference an interval departs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Upper,
    Lower,
}

impl Direction {
    pub fn of(polarity: Polarity) -> Direction {
        match polarity {
            Polarity::Positive => Direction::Upper,
            Polarity::Negative => Direction::Lower,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeInterval {
    pub start_k: i64,
    pub end_k: i64,
    /// Inclusive length `end_k - start_k + 1`, the convention of the duration
    /// tables, also on coarser window grids.
    pub duration_minutes: i64,
    pub direction: Direction,
}

impl ChangeInterval {
    pub fn new(start_k: i64, end_k: i64, direction: Direction) -> Self {
        ChangeInterval {
            start_k,
            end_k,
            duration_minutes: end_k - start_k + 1,
            direction,
        }
    }

    pub fn covers(&self, k: i64) -> bool {
        self.start_k <= k && k <= self.end_k
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeReport {
    pub method: Method,
    pub intervals: Vec<ChangeInterval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl ChangeReport {
    pub fn empty(method: Method) -> Self {
        ChangeReport {
            method,
            intervals: Vec::new(),
            warning: None,
        }
    }
}

/// The two control-limit series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CusumChart {
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
}

/// Runs the recursions over `x`. A missing value leaves both sums unchanged.
pub fn cusum_chart(x: &[Option<f64>], params: &CusumParams) -> CusumChart {
    let hi = params.target + params.allowance;
    let lo = params.target - params.allowance;
    let mut upper = Vec::with_capacity(x.len());
    let mut lower = Vec::with_capacity(x.len());
    let (mut s_up, mut s_lo) = (0.0f64, 0.0f64);
    for v in x {
        if let Some(v) = v {
            s_up = (s_up + v - hi).max(0.0);
            s_lo = (s_lo + v - lo).min(0.0);
        }
        upper.push(s_up);
        lower.push(s_lo);
    }
    CusumChart { upper, lower }
}

/// Maximal runs of consecutive violations along which `sums` keeps moving
/// away from zero (ties allowed).
fn monotone_runs(sums: &[f64], violates: impl Fn(f64) -> bool, away: impl Fn(f64, f64) -> bool) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start: Option<usize> = None;
    for i in 0..sums.len() {
        let v = violates(sums[i]);
        if let Some(s) = start {
            if v && away(sums[i - 1], sums[i]) {
                continue;
            }
            runs.push((s, i - 1));
            start = None;
        }
        if v {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        runs.push((s, sums.len() - 1));
    }
    runs
}

/// CUSUM anomalies on a series defined on `offsets` (window starts).
///
/// Only runs lasting longer than `lambda_min` minutes are reported.
pub fn cusum(series: &[Option<f64>], offsets: &[i64], window_minutes: i64, params: &CusumParams) -> Result<ChangeReport> {
    if series.len() != offsets.len() {
        return Err(Error::InvalidInput("series and offsets differ in length".into()));
    }
    let mut report = ChangeReport::empty(Method::Cusum);
    if (series.len() as i64) * window_minutes <= params.lambda_min {
        return Ok(report);
    }
    let chart = cusum_chart(series, params);
    let h = params.threshold;
    let ups = monotone_runs(&chart.upper, |s| s > h, |prev, cur| cur >= prev);
    let downs = monotone_runs(&chart.lower, |s| s < -h, |prev, cur| cur <= prev);
    let tagged = ups
        .into_iter()
        .map(|r| (r, Direction::Upper))
        .chain(downs.into_iter().map(|r| (r, Direction::Lower)));
    for ((a, b), dir) in tagged {
        let length = (b - a + 1) as i64 * window_minutes;
        if length > params.lambda_min {
            report
                .intervals
                .push(ChangeInterval::new(offsets[a], offsets[b], dir));
        }
    }
    report.intervals.sort_by_key(|i| (i.start_k, i.end_k));
    Ok(report)
}

/// 2.5th and 97.5th nearest-rank percentiles of the defined values whose offsets
/// fall in `[-360, -360 + 60 * baseline_hours)`.
pub fn baseline_ci(series: &[Option<f64>], offsets: &[i64], baseline_hours: i64) -> Result<(f64, f64)> {
    let start = -360;
    let end = start + 60 * baseline_hours;
    let values: Vec<f64> = series
        .iter()
        .zip(offsets)
        .filter(|(_, &k)| k >= start && k < end)
        .filter_map(|(v, _)| *v)
        .collect();
    if values.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "baseline [{start}, {end}) holds {} defined windows",
            values.len()
        )));
    }
    Ok((percentile(&values, 2.5)?, percentile(&values, 97.5)?))
}

/// Maximal interval around `k = 0` where the series stays strictly above
/// (positive cohort) or below (negative cohort) its median.
pub fn median_excursion(series: &[Option<f64>], offsets: &[i64], window_minutes: i64, polarity: Polarity) -> Result<ChangeReport> {
    let mut report = ChangeReport::empty(Method::MedianExcursion);
    let defined: Vec<f64> = series.iter().flatten().copied().collect();
    let q2 = median(&defined).ok_or_else(|| Error::InsufficientData("series has no defined window".into()))?;
    let Some(zero) = offsets.iter().position(|&k| k <= 0 && 0 < k + window_minutes) else {
        return Err(Error::InvalidInput("series does not cover t0".into()));
    };
    let beyond = |i: usize| match (series[i], polarity) {
        (Some(v), Polarity::Positive) => v > q2,
        (Some(v), Polarity::Negative) => v < q2,
        (None, _) => false,
    };
    if !beyond(zero) {
        let msg = format!("value at t0 is not {} the median {q2}", match polarity {
            Polarity::Positive => "above",
            Polarity::Negative => "below",
        });
        log::warn!("{msg}");
        report.warning = Some(msg);
        return Ok(report);
    }
    let mut lo = zero;
    while lo > 0 && beyond(lo - 1) {
        lo -= 1;
    }
    let mut hi = zero;
    while hi + 1 < series.len() && beyond(hi + 1) {
        hi += 1;
    }
    report.intervals.push(ChangeInterval::new(
        offsets[lo],
        offsets[hi],
        Direction::of(polarity),
    ));
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpan {
    pub method: Method,
    pub span: Option<(i64, i64)>,
    pub duration_minutes: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationEstimate {
    pub polarity: Polarity,
    pub methods: Vec<MethodSpan>,
    pub average_span: Option<(i64, i64)>,
    pub average_duration: Option<i64>,
    /// Methods without an interval covering `t0`.
    pub excluded: Vec<Method>,
}

/// The interval of `report` that covers `t0`, preferring the polarity's direction
/// and then the longest one.
pub fn covering_interval(report: &ChangeReport, polarity: Polarity) -> Option<ChangeInterval> {
    let want = Direction::of(polarity);
    report
        .intervals
        .iter()
        .filter(|i| i.covers(0))
        .max_by_key(|i| (i.direction == want, i.end_k - i.start_k))
        .copied()
}

/// Averages the `t0`-covering span of every method: mean of starts and mean of
/// ends, each rounded half away from zero; duration counts both endpoints.
pub fn estimate_duration(reports: &[ChangeReport], polarity: Polarity) -> DurationEstimate {
    let mut methods = Vec::new();
    let mut excluded = Vec::new();
    let (mut starts, mut ends) = (Vec::new(), Vec::new());
    for r in reports {
        match covering_interval(r, polarity) {
            Some(i) => {
                starts.push(i.start_k as f64);
                ends.push(i.end_k as f64);
                methods.push(MethodSpan {
                    method: r.method,
                    span: Some((i.start_k, i.end_k)),
                    duration_minutes: Some(i.end_k - i.start_k + 1),
                });
            }
            None => {
                excluded.push(r.method);
                methods.push(MethodSpan {
                    method: r.method,
                    span: None,
                    duration_minutes: None,
                });
            }
        }
    }
    let average_span = match (mean(&starts), mean(&ends)) {
        (Some(s), Some(e)) => Some((round_half_away(s), round_half_away(e))),
        _ => None,
    };
    DurationEstimate {
        polarity,
        methods,
        average_span,
        average_duration: average_span.map(|(s, e)| e - s + 1),
        excluded,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn offsets(n: usize, first: i64) -> Vec<i64> {
        (0..n as i64).map(|i| first + i).collect()
    }

    fn params(t: f64, k: f64) -> CusumParams {
        CusumParams::new(t, k, DEFAULT_H, DEFAULT_LAMBDA_MINUTES).unwrap()
    }

    fn span_report(method: Method, a: i64, b: i64, dir: Direction) -> ChangeReport {
        ChangeReport {
            method,
            intervals: vec![ChangeInterval::new(a, b, dir)],
            warning: None,
        }
    }

    #[test]
    fn constant_series_at_target() {
        let x = vec![Some(0.12); 721];
        let chart = cusum_chart(&x, &params(0.12, 0.01));
        assert!(chart.upper.iter().all(|&s| s == 0.0));
        assert!(chart.lower.iter().all(|&s| s == 0.0));
        let r = cusum(&x, &offsets(721, -360), 1, &params(0.12, 0.01)).unwrap();
        assert!(r.intervals.is_empty());
    }

    #[test]
    fn step_series_detected_near_step() {
        let (t, k) = (0.1, 0.01);
        let mut x = vec![Some(t); 100];
        x.extend(vec![Some(t + 10.0 * k); 60]);
        let r = cusum(&x, &offsets(160, 0), 1, &params(t, k)).unwrap();
        assert_eq!(r.intervals.len(), 1);
        let i = r.intervals[0];
        assert_eq!(i.direction, Direction::Upper);
        assert!((i.start_k - 100).abs() <= 3, "{i:?}");
        assert_eq!(i.end_k, 159);
    }

    #[test]
    fn short_series_is_empty() {
        let x = vec![Some(1.0); 30];
        let r = cusum(&x, &offsets(30, 0), 1, &params(0.0, 0.01)).unwrap();
        assert!(r.intervals.is_empty());
    }

    #[test]
    fn runs_shorter_than_lambda_dropped() {
        let mut x = vec![Some(0.0); 50];
        x.extend(vec![Some(1.0); 40]);
        x.extend(vec![Some(-100.0); 50]);
        // 40 rising windows: not strictly longer than 40 minutes
        let r = cusum(&x, &offsets(140, 0), 1, &params(0.0, 0.01)).unwrap();
        assert!(r.intervals.iter().all(|i| i.direction == Direction::Lower), "{r:?}");
    }

    #[test]
    fn baseline_cases() {
        let x = vec![Some(0.3); 721];
        assert_eq!(baseline_ci(&x, &offsets(721, -360), 3).unwrap(), (0.3, 0.3));
        let ramp: Vec<Option<f64>> = (0..721).map(|i| Some(i as f64)).collect();
        // 180 values 0..179: rank ceil(4.5) = 5 and ceil(175.5) = 176
        assert_eq!(baseline_ci(&ramp, &offsets(721, -360), 3).unwrap(), (4.0, 175.0));
        assert!(baseline_ci(&vec![None; 721], &offsets(721, -360), 3).is_err());
    }

    #[test]
    fn triangular_bump() {
        let off = offsets(721, -360);
        let x: Vec<Option<f64>> = off.iter().map(|&k| Some((11 - k.abs()).max(0) as f64)).collect();
        let r = median_excursion(&x, &off, 1, Polarity::Positive).unwrap();
        assert_eq!(r.intervals, vec![ChangeInterval::new(-10, 10, Direction::Upper)]);
        assert_eq!(r.intervals[0].duration_minutes, 21);

        let neg: Vec<Option<f64>> = x.iter().map(|v| v.map(|v| -v)).collect();
        let r = median_excursion(&neg, &off, 1, Polarity::Negative).unwrap();
        assert_eq!((r.intervals[0].start_k, r.intervals[0].end_k), (-10, 10));

        let r = median_excursion(&x, &off, 1, Polarity::Negative).unwrap();
        assert!(r.intervals.is_empty());
        assert!(r.warning.is_some());
    }

    #[test]
    fn duration_average_identity() {
        let reports = [
            span_report(Method::Cusum, -20, 30, Direction::Upper),
            span_report(Method::CiDivergence, -20, 30, Direction::Upper),
            span_report(Method::MedianExcursion, -20, 30, Direction::Upper),
        ];
        let d = estimate_duration(&reports, Polarity::Positive);
        assert_eq!(d.average_span, Some((-20, 30)));
        assert_eq!(d.average_duration, Some(51));
    }

    #[test]
    fn duration_excludes_non_covering() {
        let reports = [
            span_report(Method::Cusum, 5, 30, Direction::Upper),
            span_report(Method::MedianExcursion, -10, 10, Direction::Upper),
        ];
        let d = estimate_duration(&reports, Polarity::Positive);
        assert_eq!(d.excluded, vec![Method::Cusum]);
        assert_eq!(d.average_span, Some((-10, 10)));
        let none = estimate_duration(&[ChangeReport::empty(Method::Cusum)], Polarity::Negative);
        assert_eq!(none.average_span, None);
    }

    fn brute_force(x: &[f64], t: f64, k: f64) -> (Vec<f64>, Vec<f64>) {
        let mut up = vec![0.0; x.len() + 1];
        let mut lo = vec![0.0; x.len() + 1];
        for i in 1..=x.len() {
            up[i] = f64::max(0.0, up[i - 1] + x[i - 1] - (t + k));
            lo[i] = f64::min(0.0, lo[i - 1] + x[i - 1] - (t - k));
        }
        (up[1..].to_vec(), lo[1..].to_vec())
    }

    proptest! {
        #[test]
        fn chart_matches_recursion(x in proptest::collection::vec(-1.0f64..1.0, 1..800), t in -0.5f64..0.5, k in 0.0f64..0.2) {
            let p = CusumParams::new(t, k, DEFAULT_H, DEFAULT_LAMBDA_MINUTES).unwrap();
            let chart = cusum_chart(&x.iter().map(|v| Some(*v)).collect::<Vec<_>>(), &p);
            let (up, lo) = brute_force(&x, t, k);
            prop_assert_eq!(&chart.upper, &up);
            prop_assert_eq!(&chart.lower, &lo);
            prop_assert!(chart.upper.iter().all(|&s| s >= 0.0));
            prop_assert!(chart.lower.iter().all(|&s| s <= 0.0));
        }

        #[test]
        fn translation_invariance(x in proptest::collection::vec(-8i32..8, 100..400), c in -4i32..4) {
            // dyadic values keep the shifted arithmetic exact
            let xs: Vec<Option<f64>> = x.iter().map(|&v| Some(v as f64 / 8.0)).collect();
            let shifted: Vec<Option<f64>> = x.iter().map(|&v| Some((v + c * 8) as f64 / 8.0)).collect();
            let off = offsets(xs.len(), -50);
            let p = CusumParams::new(0.125, 0.25, 0.5, 10).unwrap();
            let q = CusumParams::new(0.125 + c as f64, 0.25, 0.5, 10).unwrap();
            prop_assert_eq!(cusum_chart(&xs, &p), cusum_chart(&shifted, &q));
            prop_assert_eq!(cusum(&xs, &off, 1, &p).unwrap(), cusum(&shifted, &off, 1, &q).unwrap());
        }

        #[test]
        fn median_interval_contains_zero(x in proptest::collection::vec(-1.0f64..1.0, 721)) {
            let off = offsets(721, -360);
            let xs: Vec<Option<f64>> = x.into_iter().map(Some).collect();
            for pol in [Polarity::Positive, Polarity::Negative] {
                let r = median_excursion(&xs, &off, 1, pol).unwrap();
                prop_assert!(r.intervals.len() <= 1);
                if let Some(i) = r.intervals.first() {
                    prop_assert!(i.covers(0));
                }
            }
        }
    }
}
