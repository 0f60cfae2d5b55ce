//! Alignment of scored messages on `t0` and aggregation into offset windows.

use serde::{Deserialize, Serialize};

use crate::affect::{AnchoredTimeline, Cohort};
use crate::ingest::Gender;
use crate::sentiment::ValenceScorer;
use crate::stats::{mean, sample_std};
use crate::time::offset_minutes;
use crate::{Error, Polarity, Result, SCHEMA_VERSION};

pub const DEFAULT_ANALYSIS_MINUTES: i64 = 360;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredMessage {
    pub utc_time: i64,
    pub tz_offset_minutes: i32,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTimeline {
    pub subject_id: String,
    pub t0: i64,
    pub gender: Gender,
    /// Messages inside the analysis window (anchor excluded).
    pub messages: Vec<ScoredMessage>,
    /// Remaining messages of the context horizon.
    pub context: Vec<ScoredMessage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCohort {
    pub polarity: Polarity,
    pub timelines: Vec<ScoredTimeline>,
}

impl ScoredCohort {
    pub fn restricted_to(&self, gender: Gender) -> ScoredCohort {
        ScoredCohort {
            polarity: self.polarity,
            timelines: self
                .timelines
                .iter()
                .filter(|t| t.gender == gender)
                .cloned()
                .collect(),
        }
    }

    pub fn message_count(&self) -> usize {
        self.timelines.iter().map(|t| t.messages.len()).sum()
    }
}

/// Persisted output of the scoring stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoredCohorts {
    pub schema_version: u32,
    pub cohorts: Vec<ScoredCohort>,
}

impl ScoredCohorts {
    pub fn new(cohorts: Vec<ScoredCohort>) -> Self {
        ScoredCohorts {
            schema_version: SCHEMA_VERSION,
            cohorts,
        }
    }

    pub fn get(&self, polarity: Polarity) -> Option<&ScoredCohort> {
        self.cohorts.iter().find(|c| c.polarity == polarity)
    }
}

fn score_timeline<S: ValenceScorer + ?Sized>(t: &AnchoredTimeline, scorer: &S) -> ScoredTimeline {
    let scored = |msgs: &[crate::ingest::Message]| {
        msgs.iter()
            .map(|m| ScoredMessage {
                utc_time: m.utc_time,
                tz_offset_minutes: m.tz_offset_minutes.unwrap_or(0),
                score: scorer.score(&m.text).value(),
            })
            .collect()
    };
    ScoredTimeline {
        subject_id: t.subject_id.clone(),
        t0: t.anchor.t0,
        gender: t.gender,
        messages: scored(&t.messages),
        context: scored(&t.context),
    }
}

/// Scores every message of every timeline.
pub fn score_cohort<S: ValenceScorer + ?Sized>(cohort: &Cohort, scorer: &S) -> ScoredCohort {
    #[cfg(feature = "parallel")]
    let timelines = {
        use rayon::prelude::*;
        cohort
            .timelines
            .par_iter()
            .map(|t| score_timeline(t, scorer))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let timelines = cohort
        .timelines
        .iter()
        .map(|t| score_timeline(t, scorer))
        .collect();
    ScoredCohort {
        polarity: cohort.polarity,
        timelines,
    }
}

/// Contiguous, non-overlapping windows `[k, k + w)` covering the analysis span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowGrid {
    pub window_minutes: i64,
    pub analysis_minutes: i64,
}

impl WindowGrid {
    pub fn new(window_minutes: i64, analysis_minutes: i64) -> Result<Self> {
        if window_minutes < 1 {
            return Err(Error::InvalidInput(format!("window of {window_minutes} minutes")));
        }
        if analysis_minutes < 1 {
            return Err(Error::InvalidInput(format!("analysis span of {analysis_minutes} minutes")));
        }
        Ok(WindowGrid {
            window_minutes,
            analysis_minutes,
        })
    }

    fn first_index(&self) -> i64 {
        (-self.analysis_minutes).div_euclid(self.window_minutes)
    }

    fn last_index(&self) -> i64 {
        self.analysis_minutes.div_euclid(self.window_minutes)
    }

    pub fn len(&self) -> usize {
        (self.last_index() - self.first_index() + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn offsets(&self) -> Vec<i64> {
        (self.first_index()..=self.last_index())
            .map(|i| i * self.window_minutes)
            .collect()
    }

    /// Window slot for a message at `offset` whole minutes, if inside the span.
    pub fn slot(&self, offset: i64) -> Option<usize> {
        if offset < -self.analysis_minutes || offset > self.analysis_minutes {
            return None;
        }
        Some((offset.div_euclid(self.window_minutes) - self.first_index()) as usize)
    }

    pub fn slot_of_time(&self, t: i64, t0: i64) -> Option<usize> {
        self.slot(offset_minutes(t, t0))
    }
}

/// Per-window aggregates of one cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSeries {
    pub polarity: Polarity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<Gender>,
    pub window_minutes: i64,
    pub offsets: Vec<i64>,
    /// `None` marks a window without messages.
    pub mean_valence: Vec<Option<f64>>,
    pub count: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<Vec<f64>>,
}

impl WindowSeries {
    pub fn grid(&self) -> WindowGrid {
        let analysis = self
            .offsets
            .first()
            .map(|o| -o)
            .unwrap_or(DEFAULT_ANALYSIS_MINUTES)
            .max(self.offsets.last().copied().unwrap_or(0));
        WindowGrid {
            window_minutes: self.window_minutes,
            analysis_minutes: analysis.max(1),
        }
    }

    pub fn total_count(&self) -> usize {
        self.count.iter().sum()
    }

    pub fn index_of(&self, offset: i64) -> Option<usize> {
        self.offsets.iter().position(|&o| o == offset)
    }

    pub fn without_values(mut self) -> Self {
        self.values.clear();
        self
    }
}

/// Bins every analysis-window message by its whole-minute offset from `t0`.
pub fn window_series(cohort: &ScoredCohort, window_minutes: i64) -> Result<WindowSeries> {
    window_series_on(cohort, WindowGrid::new(window_minutes, DEFAULT_ANALYSIS_MINUTES)?)
}

pub fn window_series_on(cohort: &ScoredCohort, grid: WindowGrid) -> Result<WindowSeries> {
    let mut values = vec![Vec::new(); grid.len()];
    for t in &cohort.timelines {
        for m in &t.messages {
            if let Some(slot) = grid.slot_of_time(m.utc_time, t.t0) {
                values[slot].push(m.score);
            }
        }
    }
    Ok(WindowSeries {
        polarity: cohort.polarity,
        gender: None,
        window_minutes: grid.window_minutes,
        offsets: grid.offsets(),
        mean_valence: values.iter().map(|v| mean(v)).collect(),
        count: values.iter().map(Vec::len).collect(),
        values,
    })
}

/// Centered moving average over `span` windows; missing windows are skipped.
///
/// Window `i` averages the defined values in `[i - span/2, i + span - span/2 - 1]`
/// (truncated at the series edges).
pub fn rolling_mean(series: &[Option<f64>], span: usize) -> Result<Vec<Option<f64>>> {
    if span < 1 {
        return Err(Error::InvalidInput("rolling span must be at least 1".into()));
    }
    let back = span / 2;
    let ahead = span - back - 1;
    let n = series.len();
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub(back);
            let hi = (i + ahead).min(n.saturating_sub(1));
            let (sum, count) = series[lo..=hi]
                .iter()
                .flatten()
                .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
            (count > 0).then(|| sum / count as f64)
        })
        .collect())
}

/// A subject's standardized per-window valence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectZSeries {
    pub subject_id: String,
    /// Offsets of the windows that hold at least one message.
    pub offsets: Vec<i64>,
    pub z: Vec<f64>,
}

/// Converts a subject's per-window mean valence to z-scores (sample sigma).
pub fn subject_z(timeline: &ScoredTimeline, grid: WindowGrid) -> Result<SubjectZSeries> {
    let mut sums = vec![(0.0, 0usize); grid.len()];
    for m in &timeline.messages {
        if let Some(slot) = grid.slot_of_time(m.utc_time, timeline.t0) {
            sums[slot].0 += m.score;
            sums[slot].1 += 1;
        }
    }
    let offsets_all = grid.offsets();
    let (offsets, values): (Vec<i64>, Vec<f64>) = sums
        .iter()
        .zip(offsets_all)
        .filter(|((_, c), _)| *c > 0)
        .map(|((s, c), o)| (o, s / *c as f64))
        .unzip();
    let (Some(m), Some(sd)) = (mean(&values), sample_std(&values)) else {
        return Err(Error::InsufficientData(format!(
            "{}: fewer than two scored windows",
            timeline.subject_id
        )));
    };
    if sd <= f64::EPSILON * m.abs().max(1.0) {
        return Err(Error::InsufficientData(format!(
            "{}: constant valence series",
            timeline.subject_id
        )));
    }
    Ok(SubjectZSeries {
        subject_id: timeline.subject_id.clone(),
        offsets,
        z: values.iter().map(|v| (v - m) / sd).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakValue {
    pub subject_id: String,
    pub peak_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakReport {
    pub schema_version: u32,
    pub polarity: Polarity,
    pub span: (i64, i64),
    pub peaks: Vec<PeakValue>,
    /// Subjects whose series was constant or too short.
    pub degenerate: usize,
    /// Subjects without any scored window inside the span.
    pub outside_span: usize,
}

impl PeakReport {
    pub fn values(&self) -> Vec<f64> {
        self.peaks.iter().map(|p| p.peak_z).collect()
    }
}

/// Extreme z-score of every subject inside `span` (inclusive window offsets):
/// the maximum for a positive cohort, the minimum for a negative one.
pub fn peak_values(cohort: &ScoredCohort, span: (i64, i64), grid: WindowGrid) -> PeakReport {
    let mut report = PeakReport {
        schema_version: SCHEMA_VERSION,
        polarity: cohort.polarity,
        span,
        peaks: Vec::new(),
        degenerate: 0,
        outside_span: 0,
    };
    for t in &cohort.timelines {
        let Ok(z) = subject_z(t, grid) else {
            report.degenerate += 1;
            continue;
        };
        let inside = z
            .offsets
            .iter()
            .zip(&z.z)
            .filter(|(o, _)| **o >= span.0 && **o <= span.1)
            .map(|(_, v)| *v);
        let peak = match cohort.polarity {
            Polarity::Positive => inside.fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v)))),
            Polarity::Negative => inside.fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v)))),
        };
        match peak {
            Some(peak_z) => report.peaks.push(PeakValue {
                subject_id: t.subject_id.clone(),
                peak_z,
            }),
            None => report.outside_span += 1,
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn timeline(id: &str, t0: i64, msgs: &[(i64, f64)]) -> ScoredTimeline {
        ScoredTimeline {
            subject_id: id.into(),
            t0,
            gender: Gender::Unknown,
            messages: msgs
                .iter()
                .map(|&(dt, score)| ScoredMessage {
                    utc_time: t0 + dt,
                    tz_offset_minutes: 0,
                    score,
                })
                .collect(),
            context: Vec::new(),
        }
    }

    fn cohort(timelines: Vec<ScoredTimeline>) -> ScoredCohort {
        ScoredCohort {
            polarity: Polarity::Positive,
            timelines,
        }
    }

    #[test]
    fn grid_shapes() {
        assert_eq!(WindowGrid::new(1, 360).unwrap().len(), 721);
        let g10 = WindowGrid::new(10, 360).unwrap();
        assert_eq!(g10.len(), 73);
        assert_eq!(g10.offsets()[0], -360);
        assert_eq!(*g10.offsets().last().unwrap(), 360);
        assert_eq!(g10.slot(-1), Some(35));
        assert_eq!(g10.slot(0), Some(36));
        assert_eq!(g10.slot(361), None);
        assert!(WindowGrid::new(0, 360).is_err());
    }

    #[test]
    fn single_message_at_plus_three() {
        let s = window_series(&cohort(vec![timeline("a", 1_000_000, &[(180, 0.4)])]), 1).unwrap();
        let i = s.index_of(3).unwrap();
        assert_eq!(s.count[i], 1);
        assert_eq!(s.mean_valence[i], Some(0.4));
        assert_eq!(s.total_count(), 1);
        assert_eq!(s.mean_valence[i - 1], None);
    }

    #[test]
    fn message_at_t0_lands_in_window_zero() {
        let s = window_series(&cohort(vec![timeline("a", 1_000_000, &[(0, 0.2), (-1, 0.1)])]), 1).unwrap();
        assert_eq!(s.count[s.index_of(0).unwrap()], 1);
        assert_eq!(s.count[s.index_of(-1).unwrap()], 1);
    }

    #[test]
    fn rolling_mean_cases() {
        let c = vec![Some(0.3); 50];
        assert!(rolling_mean(&c, 10).unwrap().iter().all(|v| (v.unwrap() - 0.3).abs() < 1e-15));
        assert!(rolling_mean(&c, 0).is_err());

        // impulse oracle: direct convolution with a box of width 10
        let mut impulse = vec![Some(0.0); 40];
        impulse[20] = Some(1.0);
        let smoothed = rolling_mean(&impulse, 10).unwrap();
        for (i, v) in smoothed.iter().enumerate() {
            let expected = if (16..=25).contains(&i) { 0.1 } else { 0.0 };
            assert!((v.unwrap() - expected).abs() < 1e-15, "{i}: {v:?}");
        }

        // missing windows are skipped, not treated as zero
        let gappy = vec![Some(1.0), None, Some(3.0)];
        assert_eq!(rolling_mean(&gappy, 3).unwrap(), vec![Some(1.0), Some(2.0), Some(3.0)]);
        assert_eq!(rolling_mean(&[None, None], 3).unwrap(), vec![None, None]);
    }

    #[test]
    fn smoothing_keeps_symmetric_peak_location() {
        let series: Vec<Option<f64>> = (-100i64..=100)
            .map(|k| Some(0.1 + 0.05 * (-(k as f64).abs() / 10.0).exp()))
            .collect();
        let smoothed = rolling_mean(&series, 11).unwrap();
        let argmax = smoothed
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.unwrap().total_cmp(&b.1.unwrap()))
            .unwrap()
            .0;
        assert_eq!(argmax, 100);
    }

    #[test]
    fn z_scores() {
        let grid = WindowGrid::new(1, 360).unwrap();
        let z = subject_z(&timeline("a", 0, &[(0, 0.0), (60, 1.0)]), grid).unwrap();
        assert!((z.z[0] + std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((z.z[1] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(subject_z(&timeline("b", 0, &[(0, 0.5), (60, 0.5), (120, 0.5)]), grid).is_err());
        assert!(subject_z(&timeline("c", 0, &[(0, 0.5)]), grid).is_err());
    }

    #[test]
    fn impulse_peak() {
        // n windows with a single 1 among zeros: mean 1/n, sample variance 1/n,
        // so the impulse has z = (n - 1) / sqrt(n).
        let mut msgs: Vec<(i64, f64)> = (0..9).map(|i| (-600 * (i + 1), 0.0)).collect();
        msgs.push((0, 1.0));
        let grid = WindowGrid::new(1, 360).unwrap();
        let z = subject_z(&timeline("a", 0, &msgs), grid).unwrap();
        let m = z.z.iter().cloned().fold(f64::MIN, f64::max);
        let expected = 9.0 / 10f64.sqrt();
        assert!((m - expected).abs() < 1e-12, "{m}");
        let report = peak_values(&cohort(vec![timeline("a", 0, &msgs)]), (-5, 5), grid);
        assert!((report.peaks[0].peak_z - expected).abs() < 1e-12);

        let report = peak_values(&cohort(vec![timeline("a", 0, &msgs)]), (10, 20), grid);
        assert!(report.peaks.is_empty());
        assert_eq!(report.outside_span, 1);
    }

    proptest! {
        #[test]
        fn binning_matches_floor_oracle(msgs in proptest::collection::vec((-21_600i64..=21_600, -1.0f64..1.0), 1..1000), w in prop::sample::select(vec![1i64, 5, 10, 15])) {
            let c = cohort(vec![timeline("a", 5_000_000, &msgs)]);
            let s = window_series(&c, w).unwrap();
            // conservation
            prop_assert_eq!(s.total_count(), msgs.len());
            // brute-force binning oracle
            for (secs, _) in &msgs {
                let minute = (*secs as f64 / 60.0).floor() as i64;
                let window_start = (minute as f64 / w as f64).floor() as i64 * w;
                let i = s.index_of(window_start).unwrap();
                let expected = msgs.iter().filter(|(o, _)| {
                    let m = (*o as f64 / 60.0).floor() as i64;
                    (m as f64 / w as f64).floor() as i64 * w == window_start
                }).count();
                prop_assert_eq!(s.count[i], expected);
            }
            for (i, vals) in s.values.iter().enumerate() {
                prop_assert_eq!(vals.len(), s.count[i]);
                if let Some(m) = s.mean_valence[i] {
                    let oracle = vals.iter().sum::<f64>() / vals.len() as f64;
                    prop_assert!((m - oracle).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn z_series_standardized(vals in proptest::collection::vec(-1.0f64..1.0, 3..200)) {
            let msgs: Vec<(i64, f64)> = vals.iter().enumerate().map(|(i, v)| (i as i64 * 60 - 21_000, *v)).collect();
            let grid = WindowGrid::new(1, 360).unwrap();
            if let Ok(z) = subject_z(&timeline("a", 0, &msgs), grid) {
                let m = mean(&z.z).unwrap();
                let sd = sample_std(&z.z).unwrap();
                prop_assert!(m.abs() < 1e-9);
                prop_assert!((sd - 1.0).abs() < 1e-9);
            }
        }
    }
}
