//! Stratified null samples and percentile bootstrap intervals.
//!
//! The null sample for a window draws, with replacement, as many scores as the
//! window observed, from the cohort's own messages around `t0`, matching each
//! observed message's local weekday and hour. Every random draw comes from a
//! ChaCha stream keyed by the window index, so results do not depend on how the
//! work is scheduled across threads.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::changepoint::{ChangeInterval, ChangeReport, Direction, Method};
use crate::epoch::{ScoredCohort, ScoredMessage, WindowGrid, WindowSeries};
use crate::stats::{mean, percentile_sorted};
use crate::time::{local_hour, local_weekday, offset_minutes};
use crate::{Error, Result};

pub const DEFAULT_REPLICATES: usize = 10_000;

/// Stream tags keep the sampling and bootstrap generators apart.
const NULL_STREAM: u64 = 1 << 32;
const OBSERVED_BOOT_STREAM: u64 = 2 << 32;
const NULL_BOOT_STREAM: u64 = 3 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StratumKey {
    /// Monday = 0.
    pub weekday: u8,
    pub local_hour: u8,
}

impl StratumKey {
    pub fn of(m: &ScoredMessage) -> Self {
        StratumKey {
            weekday: local_weekday(m.utc_time, m.tz_offset_minutes),
            local_hour: local_hour(m.utc_time, m.tz_offset_minutes),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NullOptions {
    /// Leave the analysis window itself out of the candidate pool.
    pub exclude_analysis_window: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fallbacks {
    /// Draws taken from the same weekday at any hour.
    pub weekday: usize,
    /// Draws taken from the whole pool.
    pub any: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullSample {
    pub window_minutes: i64,
    pub offsets: Vec<i64>,
    pub values: Vec<Vec<f64>>,
    /// Stratum of every drawn value, parallel to `values`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub strata: Vec<Vec<StratumKey>>,
    pub fallbacks: Fallbacks,
    pub seed: u64,
}

impl NullSample {
    pub fn means(&self) -> Vec<Option<f64>> {
        self.values.iter().map(|v| mean(v)).collect()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.values.iter().map(Vec::len).collect()
    }
}

struct Pool {
    by_stratum: BTreeMap<StratumKey, Vec<f64>>,
    by_weekday: Vec<Vec<(StratumKey, f64)>>,
    all: Vec<(StratumKey, f64)>,
}

impl Pool {
    fn build(cohort: &ScoredCohort, opts: NullOptions) -> Pool {
        let mut by_stratum: BTreeMap<StratumKey, Vec<f64>> = BTreeMap::new();
        let mut by_weekday = vec![Vec::new(); 7];
        let mut all = Vec::new();
        for t in &cohort.timelines {
            let analysis = (!opts.exclude_analysis_window).then_some(t.messages.iter()).into_iter().flatten();
            for m in analysis.chain(&t.context) {
                let key = StratumKey::of(m);
                by_stratum.entry(key).or_default().push(m.score);
                by_weekday[key.weekday as usize].push((key, m.score));
                all.push((key, m.score));
            }
        }
        Pool {
            by_stratum,
            by_weekday,
            all,
        }
    }

    fn draw(&self, key: StratumKey, rng: &mut ChaCha8Rng, fallbacks: &mut Fallbacks) -> (StratumKey, f64) {
        if let Some(pool) = self.by_stratum.get(&key).filter(|p| !p.is_empty()) {
            return (key, pool[rng.random_range(0..pool.len())]);
        }
        let day = &self.by_weekday[key.weekday as usize];
        if !day.is_empty() {
            fallbacks.weekday += 1;
            return day[rng.random_range(0..day.len())];
        }
        fallbacks.any += 1;
        self.all[rng.random_range(0..self.all.len())]
    }
}

fn window_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws a stratum-matched null sample for every window of `series`.
pub fn build_null(cohort: &ScoredCohort, series: &WindowSeries, seed: u64, opts: NullOptions) -> Result<NullSample> {
    if cohort.timelines.is_empty() {
        return Err(Error::InsufficientData("cohort is empty".into()));
    }
    let grid = WindowGrid::new(series.window_minutes, series.grid().analysis_minutes)?;
    if grid.offsets() != series.offsets {
        return Err(Error::InvalidInput("series offsets do not form a standard window grid".into()));
    }
    let mut observed: Vec<Vec<StratumKey>> = vec![Vec::new(); grid.len()];
    for t in &cohort.timelines {
        for m in &t.messages {
            if let Some(slot) = grid.slot(offset_minutes(m.utc_time, t.t0)) {
                observed[slot].push(StratumKey::of(m));
            }
        }
    }
    if observed.iter().map(Vec::len).ne(series.count.iter().copied()) {
        return Err(Error::InvalidInput("window counts do not match the cohort".into()));
    }
    let pool = Pool::build(cohort, opts);
    if pool.all.is_empty() && observed.iter().any(|o| !o.is_empty()) {
        return Err(Error::InsufficientData("null candidate pool is empty".into()));
    }

    let mut fallbacks = Fallbacks::default();
    let mut values = Vec::with_capacity(grid.len());
    let mut strata = Vec::with_capacity(grid.len());
    for (i, keys) in observed.iter_mut().enumerate() {
        keys.sort();
        let mut rng = window_rng(seed, NULL_STREAM + i as u64);
        let (k, v): (Vec<StratumKey>, Vec<f64>) =
            keys.iter().map(|&key| pool.draw(key, &mut rng, &mut fallbacks)).unzip();
        strata.push(k);
        values.push(v);
    }
    if fallbacks.weekday + fallbacks.any > 0 {
        log::info!(
            "null sample fallbacks: {} same-weekday, {} whole-pool",
            fallbacks.weekday,
            fallbacks.any
        );
    }
    Ok(NullSample {
        window_minutes: series.window_minutes,
        offsets: series.offsets.clone(),
        values,
        strata,
        fallbacks,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p5: f64,
    pub p50: f64,
    pub p95: f64,
}

/// Means of `replicates` resamples (with replacement) of `values`.
fn replicate_means(values: &[f64], replicates: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = values.len();
    let mut means: Vec<f64> = (0..replicates)
        .map(|_| {
            let mut sum = 0.0;
            for _ in 0..n {
                sum += values[rng.random_range(0..n)];
            }
            sum / n as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    means
}

fn summarize(sorted: &[f64]) -> Percentiles {
    Percentiles {
        p5: percentile_sorted(sorted, 5.0).unwrap(),
        p50: percentile_sorted(sorted, 50.0).unwrap(),
        p95: percentile_sorted(sorted, 95.0).unwrap(),
    }
}

/// Sorted means of `replicates` resamples with replacement; the distribution
/// behind [`bootstrap_ci`].
pub fn bootstrap_distribution(values: &[f64], replicates: usize, seed: u64) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::InsufficientData("bootstrap of an empty sample".into()));
    }
    if replicates == 0 {
        return Err(Error::InvalidInput("bootstrap needs at least one replicate".into()));
    }
    Ok(replicate_means(values, replicates, &mut window_rng(seed, 0)))
}

/// Nearest-rank 5th, 50th and 95th percentiles of bootstrapped means.
pub fn bootstrap_ci(values: &[f64], replicates: usize, seed: u64) -> Result<Percentiles> {
    Ok(summarize(&bootstrap_distribution(values, replicates, seed)?))
}

/// Per-window bootstrap percentiles; empty windows stay undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub window_minutes: i64,
    pub offsets: Vec<i64>,
    pub p5: Vec<Option<f64>>,
    pub p50: Vec<Option<f64>>,
    pub p95: Vec<Option<f64>>,
    pub replicate_count: usize,
    pub seed: u64,
}

fn bootstrap_windows(
    window_minutes: i64,
    offsets: &[i64],
    values: &[Vec<f64>],
    replicates: usize,
    seed: u64,
    stream: u64,
) -> Result<BootstrapResult> {
    if replicates == 0 {
        return Err(Error::InvalidInput("bootstrap needs at least one replicate".into()));
    }
    let one = |(i, v): (usize, &Vec<f64>)| {
        (!v.is_empty()).then(|| summarize(&replicate_means(v, replicates, &mut window_rng(seed, stream + i as u64))))
    };
    #[cfg(feature = "parallel")]
    let per_window: Vec<Option<Percentiles>> = {
        use rayon::prelude::*;
        values.par_iter().enumerate().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let per_window: Vec<Option<Percentiles>> = values.iter().enumerate().map(one).collect();
    Ok(BootstrapResult {
        window_minutes,
        offsets: offsets.to_vec(),
        p5: per_window.iter().map(|p| p.map(|p| p.p5)).collect(),
        p50: per_window.iter().map(|p| p.map(|p| p.p50)).collect(),
        p95: per_window.iter().map(|p| p.map(|p| p.p95)).collect(),
        replicate_count: replicates,
        seed,
    })
}

/// Bootstraps every window of an observed series (needs the retained values).
pub fn bootstrap_observed(series: &WindowSeries, replicates: usize, seed: u64) -> Result<BootstrapResult> {
    if series.values.len() != series.offsets.len() {
        return Err(Error::InvalidInput("series was stored without per-window values".into()));
    }
    bootstrap_windows(series.window_minutes, &series.offsets, &series.values, replicates, seed, OBSERVED_BOOT_STREAM)
}

pub fn bootstrap_null(null: &NullSample, replicates: usize, seed: u64) -> Result<BootstrapResult> {
    bootstrap_windows(null.window_minutes, &null.offsets, &null.values, replicates, seed, NULL_BOOT_STREAM)
}

/// Runs of consecutive windows whose observed and null percentile bands are disjoint.
pub fn ci_divergence(observed: &BootstrapResult, null: &BootstrapResult) -> Result<ChangeReport> {
    if observed.offsets != null.offsets {
        return Err(Error::InvalidInput("observed and null bootstraps use different grids".into()));
    }
    let side = |i: usize| match (observed.p5[i], observed.p95[i], null.p5[i], null.p95[i]) {
        (Some(o5), _, _, Some(n95)) if o5 > n95 => Some(Direction::Upper),
        (_, Some(o95), Some(n5), _) if o95 < n5 => Some(Direction::Lower),
        _ => None,
    };
    let mut report = ChangeReport::empty(Method::CiDivergence);
    let mut run: Option<(usize, Direction)> = None;
    for i in 0..=observed.offsets.len() {
        let s = if i < observed.offsets.len() { side(i) } else { None };
        if let Some((start, dir)) = run {
            if s == Some(dir) {
                continue;
            }
            report
                .intervals
                .push(ChangeInterval::new(observed.offsets[start], observed.offsets[i - 1], dir));
            run = None;
        }
        if let Some(dir) = s {
            run = Some((i, dir));
        }
    }
    Ok(report)
}
