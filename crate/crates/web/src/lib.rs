//! Three interactive operations for the static demo page in `www/`.
//!
//! Each operation is a plain function taking and returning JSON strings so it
//! can be tested natively; the `#[wasm_bindgen]` wrappers only convert errors.

use std::cell::OnceCell;

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use affectflow::affect::{classify, DetectConfig, Detection, PatternConfig};
use affectflow::changepoint::{ChangeInterval, Method};
use affectflow::fitting::ModelFit;
use affectflow::ingest::Gender;
use affectflow::mixture::select_k;
use affectflow::pipeline::{analyze, AnalysisConfig, Stage};
use affectflow::sentiment::{Lexicon, ValenceScorer};
use affectflow::synthgen::{generate_with_bank, EpisodeSpec, TextBank};
use affectflow::Polarity;

thread_local! {
    static LEXICON: OnceCell<Lexicon> = const { OnceCell::new() };
    static BANK: OnceCell<TextBank> = const { OnceCell::new() };
}

fn with_lexicon<T>(f: impl FnOnce(&Lexicon) -> T) -> T {
    LEXICON.with(|cell| f(cell.get_or_init(Lexicon::reference)))
}

fn with_bank<T>(f: impl FnOnce(&TextBank) -> T) -> Result<T, String> {
    BANK.with(|cell| {
        if cell.get().is_none() {
            let bank = with_lexicon(TextBank::new).map_err(|e| e.to_string())?;
            let _ = cell.set(bank);
        }
        Ok(f(cell.get().unwrap()))
    })
}

#[derive(Debug, Serialize)]
pub struct TextReport {
    pub valence: f64,
    /// "positive", "negative", "conflict" or "none".
    pub label: String,
    pub adjective: Option<String>,
    pub booster: Option<String>,
}

pub fn score_text_json(text: &str) -> String {
    let valence = with_lexicon(|l| l.score(text).value());
    let (label, adjective, booster) = match classify(text, &PatternConfig::default()) {
        Detection::None => ("none".to_string(), None, None),
        Detection::Conflict => ("conflict".to_string(), None, None),
        Detection::Label(p) => (p.polarity.to_string(), Some(p.adjective), p.booster),
    };
    serde_json::to_string(&TextReport {
        valence,
        label,
        adjective,
        booster,
    })
    .expect("report serializes")
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct SimulationRequest {
    pub baseline: f64,
    pub rise_amplitude: f64,
    pub rise_rate: f64,
    pub decay_amplitude: f64,
    pub decay_rate: f64,
    pub onset: f64,
    pub end: f64,
    pub noise_sigma: f64,
    pub subjects: usize,
    pub seed: u64,
    pub threshold: f64,
    pub lambda_minutes: i64,
}

impl Default for SimulationRequest {
    fn default() -> Self {
        let e = EpisodeSpec::reference_positive().episode;
        SimulationRequest {
            baseline: e.baseline,
            rise_amplitude: e.rise_amplitude,
            rise_rate: e.rise_rate,
            decay_amplitude: e.decay_amplitude,
            decay_rate: e.decay_rate,
            onset: e.onset,
            end: e.end,
            noise_sigma: 0.05,
            subjects: 2000,
            seed: 7,
            threshold: affectflow::changepoint::DEFAULT_H,
            lambda_minutes: affectflow::changepoint::DEFAULT_LAMBDA_MINUTES,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct FitSummary {
    pub model: String,
    pub sse: f64,
    pub curve: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct SimulationReport {
    pub offsets: Vec<i64>,
    pub expected: Vec<f64>,
    pub smoothed: Vec<Option<f64>>,
    pub null: Vec<Option<f64>>,
    pub cusum: Vec<ChangeInterval>,
    pub span: Option<(i64, i64)>,
    pub median_span: Option<(i64, i64)>,
    pub fits: Vec<FitSummary>,
    pub half_life: Option<f64>,
    pub warnings: Vec<String>,
}

/// Plants an episode in a synthetic positive cohort and runs the pipeline up
/// to curve fitting. Bootstraps are skipped to keep the page responsive.
pub fn simulate_json(request: &str) -> Result<String, String> {
    let req: SimulationRequest = if request.trim().is_empty() {
        SimulationRequest::default()
    } else {
        serde_json::from_str(request).map_err(|e| e.to_string())?
    };
    if req.subjects == 0 || req.subjects > 50_000 {
        return Err("subjects must be between 1 and 50000".into());
    }
    let mut spec = EpisodeSpec::reference_positive();
    spec.episode.baseline = req.baseline;
    spec.episode.rise_amplitude = req.rise_amplitude;
    spec.episode.rise_rate = req.rise_rate;
    spec.episode.decay_amplitude = req.decay_amplitude;
    spec.episode.decay_rate = req.decay_rate;
    spec.episode.onset = req.onset;
    spec.episode.end = req.end;
    spec.episode.noise_sigma = req.noise_sigma;
    spec.validate().map_err(|e| e.to_string())?;

    let timelines = with_bank(|bank| generate_with_bank(&spec, req.subjects, req.seed, bank))?.map_err(|e| e.to_string())?;
    let cfg = AnalysisConfig {
        replicates: 0,
        threshold: req.threshold,
        lambda_minutes: req.lambda_minutes,
        seed: req.seed,
        ..AnalysisConfig::default()
    };
    let bundle = with_lexicon(|l| analyze(&timelines, l, &DetectConfig::default(), &cfg, Stage::Fit)).map_err(|e| e.to_string())?;

    let series = bundle.series.as_ref().and_then(|s| s.find(Polarity::Positive, None)).ok_or("no series")?;
    let null = bundle.null.as_ref().and_then(|n| n.find(Polarity::Positive, None)).ok_or("no null")?;
    let change = bundle.change.as_ref().and_then(|c| c.find(Polarity::Positive, None)).ok_or("no change points")?;
    let offsets = series.series.offsets.clone();
    let mut warnings: Vec<String> = change
        .reports
        .iter()
        .filter(|r| r.method != Method::CiDivergence)
        .filter_map(|r| r.warning.clone())
        .collect();
    let mut fits = Vec::new();
    let mut half_life = None;
    if let Some(f) = bundle.fits.as_ref().and_then(|f| f.cohorts.first()) {
        half_life = f.half_life.as_ref().map(|h| h.minutes);
        for m in &f.ranked {
            let curve = offsets
                .iter()
                .map(|&k| {
                    let t = k as f64;
                    if k < f.span.0 || k > f.span.1 {
                        return f64::NAN;
                    }
                    match m {
                        ModelFit::TwoExponentials { rise, decay, .. } => {
                            if k < 0 {
                                rise.eval(t)
                            } else {
                                decay.eval(t)
                            }
                        }
                        ModelFit::Single { fit } => fit.eval(t),
                    }
                })
                .collect();
            fits.push(FitSummary {
                model: m.name(),
                sse: m.sse(),
                curve,
            });
        }
    } else {
        warnings.push("no CUSUM span around t0, curves not fitted".into());
    }
    let report = SimulationReport {
        expected: offsets.iter().map(|&k| spec.expected(k as f64, Gender::Unknown)).collect(),
        smoothed: series.smoothed.clone(),
        null: null.null_smoothed.clone(),
        cusum: change.report(Method::Cusum).map(|r| r.intervals.clone()).unwrap_or_default(),
        span: change.cusum_span(),
        median_span: change
            .durations
            .methods
            .iter()
            .find(|m| m.method == Method::MedianExcursion)
            .and_then(|m| m.span),
        offsets,
        fits,
        half_life,
        warnings,
    };
    // Points outside the fitted span are NaN and serialize as null.
    serde_json::to_string(&report).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
pub struct MixtureReport {
    pub k: usize,
    pub k_aic: usize,
    pub k_bic: usize,
    pub aic: Vec<f64>,
    pub bic: Vec<f64>,
    pub components: Vec<(f64, f64, f64)>,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub values: Vec<f64>,
}

/// Fits mixtures with 1..=`k_max` components to numbers separated by commas,
/// whitespace or newlines.
pub fn fit_mixture_json(values: &str, k_max: usize, seed: u64) -> Result<String, String> {
    let xs = values
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| format!("not a number: {s:?}")))
        .collect::<Result<Vec<f64>, String>>()?;
    if xs.len() < 4 {
        return Err("need at least 4 values".into());
    }
    if !(1..=8).contains(&k_max) {
        return Err("k_max must be between 1 and 8".into());
    }
    let sel = select_k(&xs, k_max, seed).map_err(|e| e.to_string())?;
    let best = sel.fits.iter().find(|f| f.k == sel.k).ok_or("no selected fit")?;
    let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let pad = 0.1 * (hi - lo).max(1e-6);
    let grid: Vec<f64> = (0..=200).map(|i| lo - pad + (hi - lo + 2.0 * pad) * i as f64 / 200.0).collect();
    let report = MixtureReport {
        k: sel.k,
        k_aic: sel.k_aic,
        k_bic: sel.k_bic,
        aic: sel.fits.iter().map(|f| f.aic).collect(),
        bic: sel.fits.iter().map(|f| f.bic).collect(),
        components: best.components.iter().map(|c| (c.weight, c.mu, c.sigma)).collect(),
        density: grid.iter().map(|&x| best.density(x)).collect(),
        grid,
        values: xs,
    };
    serde_json::to_string(&report).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = scoreText)]
pub fn score_text(text: &str) -> String {
    score_text_json(text)
}

#[wasm_bindgen(js_name = simulateEpisode)]
pub fn simulate_episode(request: &str) -> Result<String, JsError> {
    simulate_json(request).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = fitMixture)]
pub fn fit_mixture(values: &str, k_max: usize, seed: u64) -> Result<String, JsError> {
    fit_mixture_json(values, k_max, seed).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scores_and_labels_text() {
        let v: serde_json::Value = serde_json::from_str(&score_text_json("I feel so happy today")).unwrap();
        assert_eq!(v["label"], "positive");
        assert_eq!(v["adjective"], "happy");
        assert!(v["valence"].as_f64().unwrap() > 0.0);
        let v: serde_json::Value = serde_json::from_str(&score_text_json("nothing much")).unwrap();
        assert_eq!(v["label"], "none");
    }

    #[test]
    fn mixture_finds_two_groups() {
        let mut text = String::new();
        for i in 0..60 {
            let jitter = (i % 7) as f64 * 0.05;
            text.push_str(&format!("{} {} ", -2.0 + jitter, 3.0 + jitter));
        }
        let v: serde_json::Value = serde_json::from_str(&fit_mixture_json(&text, 4, 1).unwrap()).unwrap();
        assert_eq!(v["k"], 2);
        assert!(fit_mixture_json("1, 2, x", 3, 1).is_err());
        assert!(fit_mixture_json("1 2", 3, 1).is_err());
    }

    #[test]
    fn simulation_reports_span_and_fits() {
        let req = r#"{"subjects": 1500, "noise_sigma": 0.03}"#;
        let v: serde_json::Value = serde_json::from_str(&simulate_json(req).unwrap()).unwrap();
        assert_eq!(v["offsets"].as_array().unwrap().len(), 721);
        let span = v["span"].as_array().expect("span found");
        assert!(span[0].as_i64().unwrap() < 0 && span[1].as_i64().unwrap() > 0);
        assert_eq!(v["fits"].as_array().unwrap().len(), 4);
        assert!(simulate_json(r#"{"subjects": 0}"#).is_err());
        assert!(simulate_json(r#"{"rise_rate": -1}"#).is_err());
    }
}
