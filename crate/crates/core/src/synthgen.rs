//! Synthetic corpora with a planted emotional episode around each anchor.
//!
//! Every subject posts one affect-labeling statement at `t0` and a fixed number
//! of other messages over the surrounding context horizon. A message posted at
//! offset `t` minutes carries text whose valence score follows the episode
//! curve plus Gaussian noise:
//!
//! ```text
//! b + A_rise  * exp(rate_rise  * t)   for onset <= t < 0
//! b + A_decay * exp(rate_decay * t)   for 0 <= t <= end
//! b                                   elsewhere
//! ```
//!
//! Texts are assembled from plain lexicon tokens and neutral filler words so
//! the scorer recovers each target within [`TEXT_TOLERANCE`].

use std::collections::HashSet;
use std::f64::consts::PI;
use std::path::Path;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::affect::PatternConfig;
use crate::ingest::{Gender, Message, RawTimeline};
use crate::sentiment::{denormalize, Lexicon, ValenceScorer};
use crate::{Error, Polarity, Result};

/// Largest allowed gap between a target score and the score of its text.
pub const TEXT_TOLERANCE: f64 = 0.02;
/// Targets are clamped to this magnitude before text construction.
pub const MAX_TARGET: f64 = 0.95;
const QUANTUM: f64 = 0.001;
const MAX_TOKENS: usize = 10;

const FILLERS: [&str; 16] = [
    "today", "went", "home", "after", "lunch", "with", "then", "back", "work", "again",
    "train", "station", "coffee", "morning", "evening", "walked",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Episode {
    pub polarity: Polarity,
    pub baseline: f64,
    pub rise_amplitude: f64,
    pub rise_rate: f64,
    pub decay_amplitude: f64,
    pub decay_rate: f64,
    pub onset: f64,
    pub end: f64,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Posting {
    /// Non-anchor messages per subject over the context horizon.
    pub messages_per_subject: usize,
    pub context_hours: i64,
    /// Relative swing of the posting rate over the local day.
    pub circadian_amplitude: f64,
    pub circadian_peak_hour: f64,
    /// Posting-rate multiplier at `t0`, decaying with `volume_width_minutes`.
    pub volume_multiplier: f64,
    pub volume_width_minutes: f64,
    /// First local calendar day that hosts anchors.
    pub start_date: String,
    pub days: u32,
    pub tz_offsets: Vec<i32>,
    /// Share of anchors that carry a booster.
    pub booster_share: f64,
}

impl Default for Posting {
    fn default() -> Self {
        Posting {
            messages_per_subject: 48,
            context_hours: 24,
            circadian_amplitude: 0.4,
            circadian_peak_hour: 20.0,
            volume_multiplier: 2.0,
            volume_width_minutes: 60.0,
            start_date: "2014-03-03".into(),
            days: 28,
            tz_offsets: vec![-480, -300, 0, 60, 330, 540],
            booster_share: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenderMix {
    /// Attach gender labels; otherwise every subject is unknown.
    pub labeled: bool,
    pub female_share: f64,
    /// Added to the baseline of male subjects.
    pub male_baseline_shift: f64,
    /// Multiplies both episode amplitudes of male subjects.
    pub male_amplitude_scale: f64,
}

impl Default for GenderMix {
    fn default() -> Self {
        GenderMix {
            labeled: false,
            female_share: 0.5,
            male_baseline_shift: 0.0,
            male_amplitude_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeSpec {
    pub episode: Episode,
    #[serde(default)]
    pub posting: Posting,
    #[serde(default)]
    pub gender: GenderMix,
}

impl EpisodeSpec {
    /// Rise and decay fitted to the positive cohort.
    pub fn reference_positive() -> Self {
        EpisodeSpec {
            episode: Episode {
                polarity: Polarity::Positive,
                baseline: 0.14,
                rise_amplitude: 0.043,
                rise_rate: 0.183,
                decay_amplitude: 0.042,
                decay_rate: -0.057,
                onset: -38.0,
                end: 53.0,
                noise_sigma: 0.15,
            },
            posting: Posting::default(),
            gender: GenderMix::default(),
        }
    }

    /// Flat corpus: no episode and no noise.
    pub fn flat(polarity: Polarity, baseline: f64) -> Self {
        let mut spec = Self::reference_positive();
        spec.episode = Episode {
            polarity,
            baseline,
            rise_amplitude: 0.0,
            rise_rate: 0.1,
            decay_amplitude: 0.0,
            decay_rate: -0.1,
            onset: -30.0,
            end: 30.0,
            noise_sigma: 0.0,
        };
        spec
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: EpisodeSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.episode;
        let p = &self.posting;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(e.onset < 0.0 && e.end > 0.0) {
            return bad("episode needs onset < 0 < end");
        }
        if !(e.noise_sigma >= 0.0) {
            return bad("noise_sigma must be non-negative");
        }
        if !(e.rise_rate > 0.0 && e.decay_rate < 0.0) {
            return bad("rise_rate must be positive and decay_rate negative");
        }
        if p.days == 0 || p.tz_offsets.is_empty() || p.context_hours < 1 {
            return bad("posting needs days, tz_offsets and a context horizon");
        }
        if p.tz_offsets.iter().any(|tz| tz.abs() > 18 * 60) {
            return bad("tz offset beyond 18 hours");
        }
        if !(0.0..1.0).contains(&p.circadian_amplitude) || !(p.volume_multiplier >= 1.0) || !(p.volume_width_minutes > 0.0) {
            return bad("posting profile out of range");
        }
        if !(0.0..=1.0).contains(&self.gender.female_share) || !(0.0..=1.0).contains(&p.booster_share) {
            return bad("shares must lie in [0, 1]");
        }
        NaiveDate::parse_from_str(&p.start_date, "%Y-%m-%d").map_err(|e| Error::Config(format!("start_date: {e}")))?;
        Ok(())
    }

    /// Expected valence at offset `t` minutes for a subject of `gender`.
    pub fn expected(&self, t: f64, gender: Gender) -> f64 {
        let e = &self.episode;
        let (shift, scale) = if gender == Gender::Male {
            (self.gender.male_baseline_shift, self.gender.male_amplitude_scale)
        } else {
            (0.0, 1.0)
        };
        let bump = if t >= e.onset && t < 0.0 {
            e.rise_amplitude * (e.rise_rate * t).exp()
        } else if t >= 0.0 && t <= e.end {
            e.decay_amplitude * (e.decay_rate * t).exp()
        } else {
            0.0
        };
        e.baseline + shift + scale * bump
    }

    fn rate(&self, offset_seconds: f64, local_hour: f64) -> f64 {
        let p = &self.posting;
        let circadian = 1.0 + p.circadian_amplitude * (2.0 * PI * (local_hour - p.circadian_peak_hour) / 24.0).cos();
        let minutes = offset_seconds.abs() / 60.0;
        let volume = 1.0 + (p.volume_multiplier - 1.0) * (-minutes / p.volume_width_minutes).exp();
        circadian * volume
    }
}

/// Texts for every quantized target score.
pub struct TextBank {
    texts: Vec<String>,
}

impl TextBank {
    pub fn new(lexicon: &Lexicon) -> Result<Self> {
        let blocked: HashSet<&str> = ["no", "least", "kind", "but", "of", "like", "feel", "feeling", "sort"].into();
        let mut pool: Vec<(f64, &str)> = lexicon
            .entries
            .iter()
            .filter(|(k, r)| {
                k.len() >= 3
                    && k.chars().all(|c| c.is_ascii_lowercase())
                    && r.abs() >= 0.1
                    && !lexicon.boosters.contains_key(*k)
                    && !lexicon.negators.contains(*k)
                    && !blocked.contains(k.as_str())
            })
            .map(|(k, r)| (*r, k.as_str()))
            .collect();
        pool.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
        let fillers: Vec<&str> = FILLERS
            .iter()
            .copied()
            .filter(|f| lexicon.rating(f).is_none() && !lexicon.boosters.contains_key(*f) && !lexicon.negators.contains(*f))
            .collect();
        if pool.is_empty() || fillers.len() < 2 {
            return Err(Error::InvalidInput("lexicon offers no plain tokens for text construction".into()));
        }
        let steps = (MAX_TARGET / QUANTUM).round() as i64;
        let mut texts = Vec::with_capacity(2 * steps as usize + 1);
        for q in -steps..=steps {
            let target = q as f64 * QUANTUM;
            let text = compose(denormalize(target), &pool, &fillers, q);
            let got = lexicon.score(&text).value();
            if (got - target).abs() > TEXT_TOLERANCE {
                return Err(Error::InfeasibleScore(target));
            }
            texts.push(text);
        }
        Ok(TextBank { texts })
    }

    /// Text whose score lies within [`TEXT_TOLERANCE`] of `target` (clamped).
    pub fn text(&self, target: f64) -> &str {
        let steps = (MAX_TARGET / QUANTUM).round() as i64;
        let q = (target.clamp(-MAX_TARGET, MAX_TARGET) / QUANTUM).round() as i64;
        &self.texts[(q + steps) as usize]
    }
}

/// Greedy choice of rated tokens whose ratings sum close to `sum`.
fn compose(sum: f64, pool: &[(f64, &str)], fillers: &[&str], salt: i64) -> String {
    let max_rating = pool.iter().map(|p| p.0.abs()).fold(0.0, f64::max);
    let mut rem = sum;
    let mut chosen: Vec<&str> = Vec::new();
    while chosen.len() < MAX_TOKENS {
        let want = if rem.abs() > max_rating { rem.signum() * max_rating } else { rem };
        let i = pool.partition_point(|p| p.0 < want);
        let pick = [i.checked_sub(1), (i < pool.len()).then_some(i)]
            .into_iter()
            .flatten()
            .min_by(|&a, &b| (pool[a].0 - want).abs().total_cmp(&(pool[b].0 - want).abs()))
            .expect("pool is not empty");
        if (rem - pool[pick].0).abs() >= rem.abs() {
            break;
        }
        rem -= pool[pick].0;
        chosen.push(pool[pick].1);
    }
    let offset = salt.rem_euclid(fillers.len() as i64) as usize;
    let mut words = vec![fillers[offset]];
    for (j, token) in chosen.iter().enumerate() {
        words.push(token);
        words.push(fillers[(offset + j + 1) % fillers.len()]);
    }
    words.join(" ")
}

fn subject_rng(seed: u64, subject: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(subject as u64);
    rng
}

fn generate_subject(spec: &EpisodeSpec, i: usize, seed: u64, bank: &TextBank, patterns: &PatternConfig, day0: i64) -> RawTimeline {
    let mut rng = subject_rng(seed, i);
    let p = &spec.posting;
    let tag = if spec.episode.polarity == Polarity::Positive { "p" } else { "n" };
    let subject_id = format!("{tag}{i:06}");
    let gender = if spec.gender.labeled {
        if rng.random::<f64>() < spec.gender.female_share {
            Gender::Female
        } else {
            Gender::Male
        }
    } else {
        Gender::Unknown
    };
    let tz = p.tz_offsets[rng.random_range(0..p.tz_offsets.len())];
    // anchors rotate through the calendar so every local day hosts the same number
    let local_day = day0 + (i as i64 % p.days as i64);
    let local_t0 = local_day * 86_400 + rng.random_range(0..86_400);
    let t0 = local_t0 - tz as i64 * 60;

    let adjectives = match spec.episode.polarity {
        Polarity::Positive => &patterns.positive_adjectives,
        Polarity::Negative => &patterns.negative_adjectives,
    };
    let adjective = &adjectives[rng.random_range(0..adjectives.len())];
    let anchor_text = if rng.random::<f64>() < p.booster_share && !patterns.boosters.is_empty() {
        let booster = &patterns.boosters[rng.random_range(0..patterns.boosters.len())];
        format!("I feel {booster} {adjective}")
    } else {
        format!("I feel {adjective}")
    };
    let mut messages = Vec::with_capacity(p.messages_per_subject + 1);
    let mk = |id: String, utc_time: i64, text: String| Message {
        subject_id: subject_id.clone(),
        message_id: id,
        utc_time,
        tz_offset_minutes: Some(tz),
        text,
        is_repost: false,
        gender_label: gender,
    };
    messages.push(mk(format!("{subject_id}-a"), t0, anchor_text));

    let horizon = (p.context_hours * 3600) as f64;
    let bound = (1.0 + p.circadian_amplitude) * p.volume_multiplier;
    let noise = Normal::new(0.0, spec.episode.noise_sigma).expect("validated sigma");
    for j in 0..p.messages_per_subject {
        let offset = loop {
            let s = rng.random_range(-horizon..horizon).floor();
            let local_hour = ((local_t0 as f64 + s).rem_euclid(86_400.0)) / 3600.0;
            if rng.random::<f64>() * bound < spec.rate(s, local_hour) {
                break s as i64;
            }
        };
        let minutes = offset as f64 / 60.0;
        let target = spec.expected(minutes, gender) + noise.sample(&mut rng);
        messages.push(mk(format!("{subject_id}-{j:04}"), t0 + offset, bank.text(target).to_string()));
    }
    messages.sort_by(|a, b| a.utc_time.cmp(&b.utc_time).then_with(|| a.message_id.cmp(&b.message_id)));
    RawTimeline { subject_id, messages }
}

/// Generates `n_subjects` timelines; identical inputs give identical output.
pub fn generate_cohort(spec: &EpisodeSpec, n_subjects: usize, seed: u64, lexicon: &Lexicon) -> Result<Vec<RawTimeline>> {
    spec.validate()?;
    let bank = TextBank::new(lexicon)?;
    generate_with_bank(spec, n_subjects, seed, &bank)
}

pub fn generate_with_bank(spec: &EpisodeSpec, n_subjects: usize, seed: u64, bank: &TextBank) -> Result<Vec<RawTimeline>> {
    spec.validate()?;
    let patterns = PatternConfig::default();
    let date = NaiveDate::parse_from_str(&spec.posting.start_date, "%Y-%m-%d").map_err(|e| Error::Config(e.to_string()))?;
    let day0 = date.signed_duration_since(NaiveDate::from_ymd_opt(1970, 1, 1).unwrap()).num_days();
    let one = |i: usize| generate_subject(spec, i, seed, bank, &patterns, day0);
    #[cfg(feature = "parallel")]
    let timelines = {
        use rayon::prelude::*;
        (0..n_subjects).into_par_iter().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let timelines = (0..n_subjects).map(one).collect();
    Ok(timelines)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affect::{detect_affect_label, scan_corpus};
    use std::sync::OnceLock;

    fn lexicon() -> &'static Lexicon {
        static L: OnceLock<Lexicon> = OnceLock::new();
        L.get_or_init(Lexicon::reference)
    }

    fn bank() -> &'static TextBank {
        static B: OnceLock<TextBank> = OnceLock::new();
        B.get_or_init(|| TextBank::new(lexicon()).unwrap())
    }

    #[test]
    fn bank_meets_tolerance() {
        for q in -950..=950 {
            let target = q as f64 / 1000.0;
            let s = lexicon().score(bank().text(target)).value();
            assert!((s - target).abs() <= TEXT_TOLERANCE, "{target}: {s}");
        }
        assert_eq!(lexicon().score(bank().text(0.0)).value(), 0.0);
    }

    #[test]
    fn flat_corpus() {
        let spec = EpisodeSpec::flat(Polarity::Positive, 0.14);
        let t = generate_with_bank(&spec, 20, 1, bank()).unwrap();
        for tl in &t {
            for m in &tl.messages[..] {
                if detect_affect_label(&m.text, &PatternConfig::default()).is_some() {
                    continue;
                }
                let s = lexicon().score(&m.text).value();
                assert!((s - 0.14).abs() <= TEXT_TOLERANCE, "{}: {s}", m.text);
            }
        }
    }

    #[test]
    fn one_anchor_per_subject() {
        let spec = EpisodeSpec::reference_positive();
        let t = generate_with_bank(&spec, 200, 3, bank()).unwrap();
        let scan = scan_corpus(&t, &PatternConfig::default());
        assert_eq!(scan.labels.len(), 200);
        assert!(scan.labels.iter().all(|l| l.label.polarity == Polarity::Positive));
        assert!(t.iter().all(|tl| tl.messages.len() == 49));
    }

    #[test]
    fn deterministic() {
        let spec = EpisodeSpec::reference_positive();
        let a = generate_with_bank(&spec, 50, 9, bank()).unwrap();
        let b = generate_with_bank(&spec, 50, 9, bank()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_with_bank(&spec, 50, 10, bank()).unwrap());
    }

    #[test]
    fn spec_round_trip() {
        let spec = EpisodeSpec::reference_positive();
        assert_eq!(EpisodeSpec::from_toml(&spec.to_toml()).unwrap(), spec);
        let minimal = r#"
            [episode]
            polarity = "negative"
            baseline = 0.1
            rise_amplitude = -0.019
            rise_rate = 0.05
            decay_amplitude = -1.0
            decay_rate = -0.003
            onset = -63
            end = 9
            noise_sigma = 0.1
        "#;
        let spec = EpisodeSpec::from_toml(minimal).unwrap();
        assert_eq!(spec.posting, Posting::default());
        assert!(EpisodeSpec::from_toml(&minimal.replace("onset = -63", "onset = 5")).is_err());
    }

    #[test]
    fn curve_shape() {
        let spec = EpisodeSpec::reference_positive();
        assert!((spec.expected(0.0, Gender::Unknown) - 0.182).abs() < 1e-12);
        assert!((spec.expected(-1.0, Gender::Unknown) - (0.14 + 0.043 * (-0.183f64).exp())).abs() < 1e-12);
        assert_eq!(spec.expected(-100.0, Gender::Unknown), 0.14);
        assert_eq!(spec.expected(60.0, Gender::Unknown), 0.14);
    }

    #[test]
    fn window_means_follow_curve() {
        let mut spec = EpisodeSpec::reference_positive();
        spec.posting.messages_per_subject = 200;
        let t = generate_with_bank(&spec, 400, 5, bank()).unwrap();
        // 20-minute bins across the episode and the baseline
        let mut bins: std::collections::BTreeMap<i64, (f64, f64, usize)> = Default::default();
        for tl in &t {
            let t0 = tl.messages.iter().find(|m| m.message_id.ends_with("-a")).unwrap().utc_time;
            for m in tl.messages.iter().filter(|m| !m.message_id.ends_with("-a")) {
                let minutes = (m.utc_time - t0) as f64 / 60.0;
                if minutes.abs() > 360.0 {
                    continue;
                }
                let e = bins.entry((minutes / 20.0).floor() as i64).or_default();
                e.0 += lexicon().score(&m.text).value();
                e.1 += spec.expected(minutes, Gender::Unknown);
                e.2 += 1;
            }
        }
        for (bin, (s, e, n)) in bins {
            let tol = 3.0 * (0.15 + TEXT_TOLERANCE) / (n as f64).sqrt();
            assert!(((s - e) / n as f64).abs() <= tol, "bin {bin}: {} vs {}", s / n as f64, e / n as f64);
        }
    }
}
