//! Stage functions, persisted artifacts and the end-to-end runner.
//!
//! Every stage is a pure function from its input artifacts to its output
//! artifact. The CLI subcommands and [`run_pipeline`] call the same functions,
//! so re-running a stage on persisted inputs reproduces its persisted output.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::affect::{detect, Cohorts, DetectConfig, FilterReport};
use crate::changepoint::{
    baseline_ci, covering_interval, cusum, estimate_duration, median_excursion, ChangeReport, CusumParams,
    DurationEstimate, Method, DEFAULT_H, DEFAULT_LAMBDA_MINUTES,
};
use crate::epoch::{
    peak_values, rolling_mean, score_cohort, window_series, window_series_on, PeakReport, ScoredCohort,
    ScoredCohorts, WindowGrid, WindowSeries,
};
use crate::fitting::{fit_episode, EpisodeFits};
use crate::ingest::{parse_files, Corpus, Gender, ParseReport, RawTimeline};
use crate::mixture::{contrary_fraction, select_k, Selection};
use crate::nullmodel::{bootstrap_null, bootstrap_observed, build_null, ci_divergence, BootstrapResult, Fallbacks, NullOptions};
use crate::rdd::{difference_series, gender_change_spans, rdd_fit, DiffSeries, GenderCell, GenderSpanRow, RddResult};
use crate::report;
use crate::sentiment::{load_lexicon, Lexicon, ValenceScorer};
use crate::stats::{median, percentile};
use crate::{Error, Polarity, Result, SCHEMA_VERSION};

const POLARITIES: [Polarity; 2] = [Polarity::Positive, Polarity::Negative];
const GENDERS: [Gender; 2] = [Gender::Female, Gender::Male];

/// Reads a JSON artifact.
pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes a JSON artifact (pretty-printed, trailing newline).
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name.to_string(),
        source: Box::new(e),
    })
}

// ---------------------------------------------------------------- epoch

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesEntry {
    #[serde(flatten)]
    pub series: WindowSeries,
    pub smoothed: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesFile {
    pub schema_version: u32,
    pub window_minutes: i64,
    pub smoothing_span: usize,
    pub entries: Vec<SeriesEntry>,
}

impl SeriesFile {
    pub fn find(&self, polarity: Polarity, gender: Option<Gender>) -> Option<&SeriesEntry> {
        self.entries
            .iter()
            .find(|e| e.series.polarity == polarity && e.series.gender == gender)
    }
}

fn cohort_cells(scored: &ScoredCohorts, genders: bool) -> Vec<(Polarity, Option<Gender>, ScoredCohort)> {
    let mut cells = Vec::new();
    for c in &scored.cohorts {
        cells.push((c.polarity, None, c.clone()));
        if genders {
            for g in GENDERS {
                cells.push((c.polarity, Some(g), c.restricted_to(g)));
            }
        }
    }
    cells
}

/// Window series of every cohort (and of every gender cell when `genders`).
pub fn epoch_stage(scored: &ScoredCohorts, window_minutes: i64, smoothing_span: usize, keep_values: bool, genders: bool) -> Result<SeriesFile> {
    let mut entries = Vec::new();
    for (_, gender, cohort) in cohort_cells(scored, genders) {
        let mut series = window_series(&cohort, window_minutes)?;
        series.gender = gender;
        if !keep_values {
            series.values.clear();
        }
        let smoothed = rolling_mean(&series.mean_valence, smoothing_span)?;
        entries.push(SeriesEntry { series, smoothed });
    }
    Ok(SeriesFile {
        schema_version: SCHEMA_VERSION,
        window_minutes,
        smoothing_span,
        entries,
    })
}

// ---------------------------------------------------------------- null

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullEntry {
    pub polarity: Polarity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<Gender>,
    /// Null means on the series grid, raw and smoothed.
    pub null_means: Vec<Option<f64>>,
    pub null_smoothed: Vec<Option<f64>>,
    pub fallbacks: Fallbacks,
    /// Bootstrap bands on the coarser interval grid (absent with zero replicates).
    pub observed: Option<BootstrapResult>,
    pub null: Option<BootstrapResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullFile {
    pub schema_version: u32,
    pub window_minutes: i64,
    pub ci_window_minutes: i64,
    pub smoothing_span: usize,
    pub replicates: usize,
    pub seed: u64,
    pub exclude_analysis_window: bool,
    pub entries: Vec<NullEntry>,
}

impl NullFile {
    pub fn find(&self, polarity: Polarity, gender: Option<Gender>) -> Option<&NullEntry> {
        self.entries.iter().find(|e| e.polarity == polarity && e.gender == gender)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullSettings {
    pub replicates: usize,
    pub seed: u64,
    pub ci_window_minutes: i64,
    pub options: NullOptions,
}

fn cell_seed(seed: u64, polarity: Polarity, gender: Option<Gender>) -> u64 {
    let p = match polarity {
        Polarity::Positive => 1,
        Polarity::Negative => 2,
    };
    let g = match gender {
        None => 0,
        Some(Gender::Female) => 1,
        Some(Gender::Male) => 2,
        Some(Gender::Unknown) => 3,
    };
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (p << 8 | g)
}

/// Null samples on the series grid, plus observed and null bootstrap bands on
/// the interval grid.
pub fn null_stage(scored: &ScoredCohorts, series: &SeriesFile, settings: &NullSettings) -> Result<NullFile> {
    let genders = series.entries.iter().any(|e| e.series.gender.is_some());
    let mut entries = Vec::new();
    for (polarity, gender, cohort) in cohort_cells(scored, genders) {
        let Some(entry) = series.find(polarity, gender) else {
            continue;
        };
        let seed = cell_seed(settings.seed, polarity, gender);
        if cohort.timelines.is_empty() {
            entries.push(NullEntry {
                polarity,
                gender,
                null_means: vec![None; entry.series.offsets.len()],
                null_smoothed: vec![None; entry.series.offsets.len()],
                fallbacks: Fallbacks::default(),
                observed: None,
                null: None,
            });
            continue;
        }
        let null = build_null(&cohort, &entry.series, seed, settings.options)?;
        let null_means = null.means();
        let null_smoothed = rolling_mean(&null_means, series.smoothing_span)?;
        let mut fallbacks = null.fallbacks;
        let (observed, null_boot) = if settings.replicates > 0 {
            let grid = WindowGrid::new(settings.ci_window_minutes, entry.series.grid().analysis_minutes)?;
            let coarse = window_series_on(&cohort, grid)?;
            let coarse_null = build_null(&cohort, &coarse, seed ^ 0x5151, settings.options)?;
            fallbacks.weekday += coarse_null.fallbacks.weekday;
            fallbacks.any += coarse_null.fallbacks.any;
            (
                Some(bootstrap_observed(&coarse, settings.replicates, seed)?),
                Some(bootstrap_null(&coarse_null, settings.replicates, seed)?),
            )
        } else {
            (None, None)
        };
        entries.push(NullEntry {
            polarity,
            gender,
            null_means,
            null_smoothed,
            fallbacks,
            observed,
            null: null_boot,
        });
    }
    Ok(NullFile {
        schema_version: SCHEMA_VERSION,
        window_minutes: series.window_minutes,
        ci_window_minutes: settings.ci_window_minutes,
        smoothing_span: series.smoothing_span,
        replicates: settings.replicates,
        seed: settings.seed,
        exclude_analysis_window: settings.options.exclude_analysis_window,
        entries,
    })
}

// ---------------------------------------------------------------- change

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChangeSettings {
    pub threshold: f64,
    pub lambda_minutes: i64,
    pub baseline_hours: i64,
    /// Run CUSUM on raw window means instead of the smoothed series.
    pub raw: bool,
}

impl Default for ChangeSettings {
    fn default() -> Self {
        ChangeSettings {
            threshold: DEFAULT_H,
            lambda_minutes: DEFAULT_LAMBDA_MINUTES,
            baseline_hours: 3,
            raw: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeEntry {
    pub polarity: Polarity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<Gender>,
    pub cusum_params: Option<CusumParams>,
    pub baseline_ci: Option<(f64, f64)>,
    pub reports: Vec<ChangeReport>,
    pub durations: DurationEstimate,
}

impl ChangeEntry {
    pub fn report(&self, method: Method) -> Option<&ChangeReport> {
        self.reports.iter().find(|r| r.method == method)
    }

    /// The CUSUM interval covering `t0`.
    pub fn cusum_span(&self) -> Option<(i64, i64)> {
        self.report(Method::Cusum)
            .and_then(|r| covering_interval(r, self.polarity))
            .map(|i| (i.start_k, i.end_k))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeFile {
    pub schema_version: u32,
    pub settings: ChangeSettings,
    pub entries: Vec<ChangeEntry>,
}

impl ChangeFile {
    pub fn find(&self, polarity: Polarity, gender: Option<Gender>) -> Option<&ChangeEntry> {
        self.entries.iter().find(|e| e.polarity == polarity && e.gender == gender)
    }
}

/// CUSUM, interval divergence and median excursion for every series entry.
pub fn change_stage(series: &SeriesFile, null: &NullFile, settings: &ChangeSettings) -> Result<ChangeFile> {
    let mut entries = Vec::new();
    for entry in &series.entries {
        let s = &entry.series;
        let Some(n) = null.find(s.polarity, s.gender) else {
            continue;
        };
        let x = if settings.raw { &s.mean_valence } else { &entry.smoothed };
        let reference = if settings.raw { &n.null_means } else { &n.null_smoothed };
        let mut reports = Vec::new();
        let params = CusumParams::from_null(reference, settings.threshold, settings.lambda_minutes).ok();
        reports.push(match &params {
            Some(p) => cusum(x, &s.offsets, s.window_minutes, p)?,
            None => ChangeReport {
                warning: Some("null series too short for CUSUM parameters".into()),
                ..ChangeReport::empty(Method::Cusum)
            },
        });
        reports.push(match (&n.observed, &n.null) {
            (Some(o), Some(b)) => ci_divergence(o, b)?,
            _ => ChangeReport {
                warning: Some("no bootstrap bands".into()),
                ..ChangeReport::empty(Method::CiDivergence)
            },
        });
        reports.push(match median_excursion(&entry.smoothed, &s.offsets, s.window_minutes, s.polarity) {
            Ok(r) => r,
            Err(e) => ChangeReport {
                warning: Some(e.to_string()),
                ..ChangeReport::empty(Method::MedianExcursion)
            },
        });
        let durations = estimate_duration(&reports, s.polarity);
        entries.push(ChangeEntry {
            polarity: s.polarity,
            gender: s.gender,
            cusum_params: params,
            baseline_ci: baseline_ci(&entry.smoothed, &s.offsets, settings.baseline_hours).ok(),
            reports,
            durations,
        });
    }
    Ok(ChangeFile {
        schema_version: SCHEMA_VERSION,
        settings: *settings,
        entries,
    })
}

// ---------------------------------------------------------------- fits

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitsFile {
    pub schema_version: u32,
    pub cohorts: Vec<EpisodeFits>,
    /// Cohorts skipped for lack of a CUSUM span around `t0`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<Polarity>,
}

/// Curve fits over each pooled cohort's CUSUM span.
pub fn fit_stage(series: &SeriesFile, change: &ChangeFile) -> Result<FitsFile> {
    let mut cohorts = Vec::new();
    let mut skipped = Vec::new();
    for p in POLARITIES {
        let (Some(s), Some(c)) = (series.find(p, None), change.find(p, None)) else {
            continue;
        };
        match c.cusum_span().filter(|(a, b)| *a < 0 && *b > 0) {
            Some(span) => cohorts.push(fit_episode(&s.smoothed, &s.series.offsets, span, p)?),
            None => skipped.push(p),
        }
    }
    Ok(FitsFile {
        schema_version: SCHEMA_VERSION,
        cohorts,
        skipped,
    })
}

// ---------------------------------------------------------------- peaks and mixtures

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeaksFile {
    pub schema_version: u32,
    pub cohorts: Vec<PeakReport>,
}

/// Per-subject peak z-scores inside each pooled cohort's CUSUM span.
pub fn peaks_stage(scored: &ScoredCohorts, change: &ChangeFile, window_minutes: i64) -> Result<PeaksFile> {
    let grid = WindowGrid::new(window_minutes, crate::epoch::DEFAULT_ANALYSIS_MINUTES)?;
    let mut cohorts = Vec::new();
    for c in &scored.cohorts {
        if let Some(span) = change.find(c.polarity, None).and_then(ChangeEntry::cusum_span) {
            cohorts.push(peak_values(c, span, grid));
        }
    }
    Ok(PeaksFile {
        schema_version: SCHEMA_VERSION,
        cohorts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakSummary {
    pub n: usize,
    pub median: f64,
    /// Nearest-rank 2.5th and 97.5th percentiles.
    pub ci: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmEntry {
    pub polarity: Polarity,
    pub peaks: PeakSummary,
    pub contrary_fraction: f64,
    pub selection: Selection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFile {
    pub schema_version: u32,
    pub k_max: usize,
    pub seed: u64,
    pub cohorts: Vec<GmmEntry>,
}

pub fn gmm_stage(peaks: &PeaksFile, k_max: usize, seed: u64) -> Result<GmmFile> {
    let mut cohorts = Vec::new();
    for report in &peaks.cohorts {
        let values = report.values();
        if values.len() <= 3 {
            log::warn!("{} cohort: {} peaks, mixture skipped", report.polarity, values.len());
            continue;
        }
        let mut selection = select_k(&values, k_max, seed)?;
        for f in &mut selection.fits {
            f.trace.clear();
        }
        cohorts.push(GmmEntry {
            polarity: report.polarity,
            peaks: PeakSummary {
                n: values.len(),
                median: median(&values).unwrap_or(f64::NAN),
                ci: (percentile(&values, 2.5)?, percentile(&values, 97.5)?),
            },
            contrary_fraction: contrary_fraction(&values, report.polarity)?,
            selection,
        });
    }
    Ok(GmmFile {
        schema_version: SCHEMA_VERSION,
        k_max,
        seed,
        cohorts,
    })
}

// ---------------------------------------------------------------- rdd

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RddEntry {
    pub polarity: Polarity,
    pub window_minutes: i64,
    pub difference: DiffSeries,
    pub fit: RddResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RddFile {
    pub schema_version: u32,
    pub cohorts: Vec<RddEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gender_spans: Vec<GenderSpanRow>,
}

pub fn rdd_entry(male: &WindowSeries, female: &WindowSeries) -> Result<RddEntry> {
    if male.polarity != female.polarity {
        return Err(Error::InvalidInput("male and female series differ in polarity".into()));
    }
    let difference = difference_series(male, female)?;
    let fit = rdd_fit(&difference, 0)?;
    Ok(RddEntry {
        polarity: male.polarity,
        window_minutes: male.window_minutes,
        difference,
        fit,
    })
}

/// Regression discontinuity on the interval grid plus the gender span table.
pub fn rdd_stage(scored: &ScoredCohorts, change: &ChangeFile, window_minutes: i64) -> Result<RddFile> {
    let mut cohorts = Vec::new();
    let mut cells = Vec::new();
    for c in &scored.cohorts {
        let m = window_series(&c.restricted_to(Gender::Male), window_minutes)?;
        let f = window_series(&c.restricted_to(Gender::Female), window_minutes)?;
        match rdd_entry(&m, &f) {
            Ok(e) => cohorts.push(e),
            Err(e) => log::warn!("{} cohort: regression discontinuity skipped: {e}", c.polarity),
        }
        for g in GENDERS {
            if let Some(e) = change.find(c.polarity, Some(g)) {
                cells.push(GenderCell {
                    gender: g,
                    polarity: c.polarity,
                    cusum: e.report(Method::Cusum).cloned().unwrap_or(ChangeReport::empty(Method::Cusum)),
                    ci_divergence: e
                        .report(Method::CiDivergence)
                        .cloned()
                        .unwrap_or(ChangeReport::empty(Method::CiDivergence)),
                });
            }
        }
    }
    Ok(RddFile {
        schema_version: SCHEMA_VERSION,
        cohorts,
        gender_spans: gender_change_spans(&cells),
    })
}

// ---------------------------------------------------------------- volumes and durations

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeEntry {
    pub polarity: Polarity,
    pub window_minutes: i64,
    pub offsets: Vec<i64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumesFile {
    pub schema_version: u32,
    pub cohorts: Vec<VolumeEntry>,
}

pub fn volumes(scored: &ScoredCohorts, window_minutes: i64) -> Result<VolumesFile> {
    let mut cohorts = Vec::new();
    for c in &scored.cohorts {
        let s = window_series(c, window_minutes)?;
        cohorts.push(VolumeEntry {
            polarity: c.polarity,
            window_minutes,
            offsets: s.offsets,
            counts: s.count,
        });
    }
    Ok(VolumesFile {
        schema_version: SCHEMA_VERSION,
        cohorts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationsFile {
    pub schema_version: u32,
    pub cohorts: Vec<DurationEstimate>,
}

pub fn durations(change: &ChangeFile) -> DurationsFile {
    DurationsFile {
        schema_version: SCHEMA_VERSION,
        cohorts: POLARITIES
            .iter()
            .filter_map(|&p| change.find(p, None))
            .map(|e| e.durations.clone())
            .collect(),
    }
}

// ---------------------------------------------------------------- scoring

pub fn score_stage<S: ValenceScorer + ?Sized>(cohorts: &Cohorts, scorer: &S) -> ScoredCohorts {
    ScoredCohorts::new(POLARITIES.iter().map(|&p| score_cohort(cohorts.get(p), scorer)).collect())
}

// ---------------------------------------------------------------- configuration

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Detect,
    Score,
    Epoch,
    Null,
    Change,
    Fit,
    Mixture,
    Rdd,
    Plots,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Ingest,
        Stage::Detect,
        Stage::Score,
        Stage::Epoch,
        Stage::Null,
        Stage::Change,
        Stage::Fit,
        Stage::Mixture,
        Stage::Rdd,
        Stage::Plots,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Detect => "detect",
            Stage::Score => "score",
            Stage::Epoch => "epoch",
            Stage::Null => "null",
            Stage::Change => "change",
            Stage::Fit => "fit",
            Stage::Mixture => "mixture",
            Stage::Rdd => "rdd",
            Stage::Plots => "plots",
        }
    }

    pub fn parse(name: &str) -> Result<Stage> {
        Stage::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown stage {name:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub window_minutes: i64,
    pub ci_window_minutes: i64,
    pub smoothing_span: usize,
    pub threshold: f64,
    pub lambda_minutes: i64,
    pub baseline_hours: i64,
    pub cusum_on_raw: bool,
    pub replicates: usize,
    pub seed: u64,
    pub exclude_analysis_window_from_null: bool,
    pub k_max: usize,
    pub gender: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            window_minutes: 1,
            ci_window_minutes: 10,
            smoothing_span: 10,
            threshold: DEFAULT_H,
            lambda_minutes: DEFAULT_LAMBDA_MINUTES,
            baseline_hours: 3,
            cusum_on_raw: false,
            replicates: crate::nullmodel::DEFAULT_REPLICATES,
            seed: 42,
            exclude_analysis_window_from_null: false,
            k_max: 5,
            gender: false,
        }
    }
}

impl AnalysisConfig {
    fn null_settings(&self) -> NullSettings {
        NullSettings {
            replicates: self.replicates,
            seed: self.seed,
            ci_window_minutes: self.ci_window_minutes,
            options: NullOptions {
                exclude_analysis_window: self.exclude_analysis_window_from_null,
            },
        }
    }

    fn change_settings(&self) -> ChangeSettings {
        ChangeSettings {
            threshold: self.threshold,
            lambda_minutes: self.lambda_minutes,
            baseline_hours: self.baseline_hours,
            raw: self.cusum_on_raw,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// JSON Lines corpus files.
    pub corpus: Vec<PathBuf>,
    /// Lexicon file; the bundled lexicon when absent.
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    /// Pattern and filter config; the bundled defaults when absent.
    #[serde(default)]
    pub patterns: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

impl RunConfig {
    /// Parses TOML; relative paths resolve against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.corpus.iter_mut().for_each(fix);
        cfg.lexicon.iter_mut().for_each(fix);
        cfg.patterns.iter_mut().for_each(fix);
        fix(&mut cfg.output_dir);
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn check_paths(&self) -> Result<()> {
        let missing = self
            .corpus
            .iter()
            .chain(&self.lexicon)
            .chain(&self.patterns)
            .find(|p| !p.exists());
        match missing {
            Some(p) => Err(Error::Config(format!("{} does not exist", p.display()))),
            None if self.corpus.is_empty() => Err(Error::Config("no corpus files configured".into())),
            None => Ok(()),
        }
    }
}

// ---------------------------------------------------------------- in-memory run

/// Everything a full run produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultBundle {
    pub parse: Option<ParseReport>,
    pub filters: Option<FilterReport>,
    pub series: Option<SeriesFile>,
    pub null: Option<NullFile>,
    pub change: Option<ChangeFile>,
    pub fits: Option<FitsFile>,
    pub peaks: Option<PeaksFile>,
    pub gmm: Option<GmmFile>,
    pub rdd: Option<RddFile>,
    pub volumes: Option<VolumesFile>,
    pub durations: Option<DurationsFile>,
}

impl ResultBundle {
    fn empty() -> Self {
        ResultBundle {
            parse: None,
            filters: None,
            series: None,
            null: None,
            change: None,
            fits: None,
            peaks: None,
            gmm: None,
            rdd: None,
            volumes: None,
            durations: None,
        }
    }
}

/// Analysis stages after ingest, computed in memory up to and including `last`.
pub fn analyze(timelines: &[RawTimeline], lexicon: &Lexicon, detect_cfg: &DetectConfig, cfg: &AnalysisConfig, last: Stage) -> Result<ResultBundle> {
    let mut bundle = ResultBundle::empty();
    if last < Stage::Detect {
        return Ok(bundle);
    }
    let cohorts = detect(timelines, detect_cfg);
    bundle.filters = Some(cohorts.report.clone());
    if last < Stage::Score {
        return Ok(bundle);
    }
    let scored = score_stage(&cohorts, lexicon);
    drop(cohorts);
    if last < Stage::Epoch {
        return Ok(bundle);
    }
    let series = stage("epoch", epoch_stage(&scored, cfg.window_minutes, cfg.smoothing_span, false, cfg.gender))?;
    bundle.volumes = Some(stage("epoch", volumes(&scored, cfg.window_minutes))?);
    bundle.series = Some(series);
    if last < Stage::Null {
        return Ok(bundle);
    }
    let series = bundle.series.as_ref().unwrap();
    let null = stage("null", null_stage(&scored, series, &cfg.null_settings()))?;
    bundle.null = Some(null);
    if last < Stage::Change {
        return Ok(bundle);
    }
    let change = stage("change", change_stage(series, bundle.null.as_ref().unwrap(), &cfg.change_settings()))?;
    bundle.durations = Some(durations(&change));
    bundle.change = Some(change);
    if last < Stage::Fit {
        return Ok(bundle);
    }
    let change = bundle.change.as_ref().unwrap();
    bundle.fits = Some(stage("fit", fit_stage(series, change))?);
    if last < Stage::Mixture {
        return Ok(bundle);
    }
    let peaks = stage("mixture", peaks_stage(&scored, change, cfg.window_minutes))?;
    bundle.gmm = Some(stage("mixture", gmm_stage(&peaks, cfg.k_max, cfg.seed))?);
    bundle.peaks = Some(peaks);
    if last < Stage::Rdd || !cfg.gender {
        return Ok(bundle);
    }
    bundle.rdd = Some(stage("rdd", rdd_stage(&scored, change, cfg.ci_window_minutes))?);
    Ok(bundle)
}

// ---------------------------------------------------------------- persisted run

fn json<T: Serialize>(value: &T) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(value)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Done,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: StageStatus,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub complete: bool,
    pub stages: Vec<StageRecord>,
}

struct Writer<'a> {
    dir: &'a Path,
    manifest: Manifest,
    requested: &'a [Stage],
}

impl Writer<'_> {
    fn record(&mut self, stage: Stage, status: StageStatus, outputs: Vec<String>, error: Option<String>) {
        self.manifest.stages.push(StageRecord {
            stage,
            status,
            outputs,
            error,
        });
    }

    fn emit(&mut self, stage: Stage, files: &[(&str, serde_json::Value)]) -> Result<()> {
        if !self.requested.contains(&stage) {
            return Ok(());
        }
        for (name, value) in files {
            write_json(self.dir.join(name), value)?;
        }
        self.record(stage, StageStatus::Done, files.iter().map(|f| f.0.to_string()).collect(), None);
        Ok(())
    }

    fn finish(mut self) -> Result<Manifest> {
        self.manifest.stages.sort_by_key(|r| r.stage);
        self.manifest.complete = self
            .requested
            .iter()
            .all(|s| self.manifest.stages.iter().any(|r| r.stage == *s && r.status != StageStatus::Failed));
        write_json(self.dir.join("manifest.json"), &self.manifest)?;
        Ok(self.manifest)
    }
}

/// Runs the requested stages (all when `stages` is empty) and writes their
/// artifacts into the output directory together with `manifest.json`.
///
/// A failing stage aborts the run; artifacts written so far stay on disk and the
/// manifest records the failure.
pub fn run_pipeline(config: &RunConfig, stages: &[Stage]) -> Result<(ResultBundle, Manifest)> {
    config.check_paths()?;
    let requested: Vec<Stage> = if stages.is_empty() { Stage::ALL.to_vec() } else { stages.to_vec() };
    let last = *requested.iter().max().unwrap();
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut w = Writer {
        dir,
        manifest: Manifest {
            schema_version: SCHEMA_VERSION,
            complete: false,
            stages: Vec::new(),
        },
        requested: &requested,
    };
    let outcome = run_stages(config, &mut w, last);
    match outcome {
        Ok(bundle) => {
            for s in &requested {
                if !w.manifest.stages.iter().any(|r| r.stage == *s) {
                    w.record(*s, StageStatus::Skipped, Vec::new(), None);
                }
            }
            let manifest = w.finish()?;
            Ok((bundle, manifest))
        }
        Err(e) => {
            let failed = match &e {
                Error::Stage { stage, .. } => Stage::parse(stage).unwrap_or(last),
                _ => last,
            };
            w.record(failed, StageStatus::Failed, Vec::new(), Some(e.to_string()));
            w.finish()?;
            Err(e)
        }
    }
}

fn run_stages(config: &RunConfig, w: &mut Writer<'_>, last: Stage) -> Result<ResultBundle> {
    let cfg = &config.analysis;
    let (timelines, parse) = stage("ingest", parse_files(&config.corpus))?;
    w.emit(Stage::Ingest, &[("ingest_report.json", json(&parse)?)])?;
    let lexicon = stage(
        "score",
        match &config.lexicon {
            Some(p) => load_lexicon(p),
            None => Ok(Lexicon::reference()),
        },
    )?;
    let detect_cfg = stage(
        "detect",
        match &config.patterns {
            Some(p) => DetectConfig::load(p),
            None => Ok(DetectConfig::default()),
        },
    )?;
    let mut bundle = analyze(&timelines, &lexicon, &detect_cfg, cfg, last)?;
    bundle.parse = Some(parse);
    if last >= Stage::Score {
        // scores stay in memory; later artifacts carry them
        w.emit(Stage::Score, &[])?;
    }
    if let Some(f) = &bundle.filters {
        w.emit(Stage::Detect, &[("filters.json", json(f)?)])?;
    }
    if let (Some(s), Some(v)) = (&bundle.series, &bundle.volumes) {
        w.emit(Stage::Epoch, &[("series.json", json(s)?), ("volumes.json", json(v)?)])?;
    }
    if let Some(n) = &bundle.null {
        w.emit(Stage::Null, &[("null.json", json(n)?)])?;
    }
    if let (Some(c), Some(d)) = (&bundle.change, &bundle.durations) {
        w.emit(Stage::Change, &[("change.json", json(c)?), ("durations.json", json(d)?)])?;
    }
    if let Some(f) = &bundle.fits {
        w.emit(Stage::Fit, &[("fits.json", json(f)?)])?;
    }
    if let (Some(p), Some(g)) = (&bundle.peaks, &bundle.gmm) {
        w.emit(Stage::Mixture, &[("peaks.json", json(p)?), ("gmm.json", json(g)?)])?;
    }
    if let Some(r) = &bundle.rdd {
        w.emit(Stage::Rdd, &[("rdd.json", json(r)?)])?;
    }
    if last >= Stage::Plots && w.requested.contains(&Stage::Plots) {
        let written = stage("plots", report::write_plots(&bundle, w.dir))?;
        w.record(Stage::Plots, StageStatus::Done, written, None);
    }
    Ok(bundle)
}

/// Loads a persisted corpus artifact.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    read_json(path)
}

/// Reads whichever artifacts exist in a run's output directory.
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<ResultBundle> {
    fn opt<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<Option<T>> {
        let path = dir.join(name);
        if path.exists() {
            read_json(path).map(Some)
        } else {
            Ok(None)
        }
    }
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::Config(format!("{} is not a directory", dir.display())));
    }
    Ok(ResultBundle {
        parse: opt(dir, "ingest_report.json")?,
        filters: opt(dir, "filters.json")?,
        series: opt(dir, "series.json")?,
        null: opt(dir, "null.json")?,
        change: opt(dir, "change.json")?,
        fits: opt(dir, "fits.json")?,
        peaks: opt(dir, "peaks.json")?,
        gmm: opt(dir, "gmm.json")?,
        rdd: opt(dir, "rdd.json")?,
        volumes: opt(dir, "volumes.json")?,
        durations: opt(dir, "durations.json")?,
    })
}

/// Loads cohorts that may or may not carry scores yet; unscored cohorts are
/// scored with `lexicon`.
pub fn load_scored(path: impl AsRef<Path>, lexicon: impl FnOnce() -> Result<Lexicon>) -> Result<ScoredCohorts> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if value.get("cohorts").is_some() {
        return Ok(serde_json::from_value(value)?);
    }
    let cohorts: Cohorts = serde_json::from_value(value)?;
    Ok(score_stage(&cohorts, &lexicon()?))
}
