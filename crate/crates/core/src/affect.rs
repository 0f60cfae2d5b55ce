//! Detection of explicit affect-labeling statements and cohort construction.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ingest::{Gender, Message, RawTimeline};
use crate::stats::percentile;
use crate::time::{local_day, SECONDS_PER_HOUR, SECONDS_PER_MINUTE};
use crate::{Error, Polarity, Result, SCHEMA_VERSION};

const DEFAULT_CONFIG: &str = include_str!("../data/patterns.toml");

/// Vocabulary of the `<prefix> [booster] <adjective>` pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternConfig {
    pub prefixes: Vec<String>,
    pub boosters: Vec<String>,
    pub positive_adjectives: Vec<String>,
    pub negative_adjectives: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub drop_reposts: bool,
    pub oversharer_percentile: f64,
    pub day_low_percentile: f64,
    pub day_high_percentile: f64,
    pub remove_prefix_messages: bool,
    pub require_timezone: bool,
    pub exclusion_hours: i64,
    pub analysis_minutes: i64,
    pub context_hours: i64,
}

/// Pattern vocabulary plus filter thresholds, as stored in `patterns.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    #[serde(flatten)]
    pub patterns: PatternConfig,
    pub filters: FilterConfig,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig::from_toml(DEFAULT_CONFIG).expect("bundled pattern config is valid")
    }
}

impl Default for PatternConfig {
    fn default() -> Self {
        DetectConfig::default().patterns
    }
}

impl Default for FilterConfig {
    fn default() -> Self {
        DetectConfig::default().filters
    }
}

impl DetectConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: DetectConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.patterns.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn default_toml() -> &'static str {
        DEFAULT_CONFIG
    }
}

impl PatternConfig {
    pub fn validate(&self) -> Result<()> {
        let all = self
            .prefixes
            .iter()
            .chain(&self.boosters)
            .chain(&self.positive_adjectives)
            .chain(&self.negative_adjectives);
        for word in all {
            if word.to_lowercase() != *word || word.trim().is_empty() {
                return Err(Error::Config(format!("pattern entry {word:?} must be non-empty lowercase")));
            }
        }
        let positive: HashSet<_> = self.positive_adjectives.iter().collect();
        if let Some(both) = self.negative_adjectives.iter().find(|a| positive.contains(a)) {
            return Err(Error::Config(format!("adjective {both:?} listed with both polarities")));
        }
        if self.prefixes.is_empty() {
            return Err(Error::Config("no prefixes configured".into()));
        }
        Ok(())
    }

    fn compiled(&self) -> Matcher<'_> {
        Matcher {
            prefixes: self.prefixes.iter().map(|p| tokenize(p)).collect(),
            boosters: self.boosters.iter().map(String::as_str).collect(),
            adjectives: self
                .positive_adjectives
                .iter()
                .map(|a| (a.as_str(), Polarity::Positive))
                .chain(
                    self.negative_adjectives
                        .iter()
                        .map(|a| (a.as_str(), Polarity::Negative)),
                )
                .collect(),
        }
    }
}

/// Lowercased whitespace tokens with leading and trailing punctuation removed.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| {
            t.replace('\u{2019}', "'")
                .trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

struct Matcher<'a> {
    prefixes: Vec<Vec<String>>,
    boosters: HashSet<&'a str>,
    adjectives: HashMap<&'a str, Polarity>,
}

impl Matcher<'_> {
    fn prefix_at(&self, tokens: &[String], i: usize) -> Option<usize> {
        self.prefixes
            .iter()
            .find(|p| tokens[i..].starts_with(p))
            .map(Vec::len)
    }

    fn contains_prefix(&self, tokens: &[String]) -> bool {
        (0..tokens.len()).any(|i| self.prefix_at(tokens, i).is_some())
    }

    fn matches(&self, tokens: &[String]) -> Vec<AffectPayload> {
        let mut found = Vec::new();
        for i in 0..tokens.len() {
            let Some(len) = self.prefix_at(tokens, i) else {
                continue;
            };
            let next = tokens.get(i + len).map(String::as_str);
            let after = tokens.get(i + len + 1).map(String::as_str);
            let hit = match (next, after) {
                (Some(b), Some(a)) if self.boosters.contains(b) && self.adjectives.contains_key(a) => {
                    Some((a, Some(b)))
                }
                (Some(a), _) if self.adjectives.contains_key(a) => Some((a, None)),
                _ => None,
            };
            if let Some((adjective, booster)) = hit {
                found.push(AffectPayload {
                    polarity: self.adjectives[adjective],
                    adjective: adjective.to_string(),
                    booster: booster.map(str::to_string),
                });
            }
        }
        found
    }
}

/// Polarity, adjective and optional booster of a matched statement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffectPayload {
    pub polarity: Polarity,
    pub adjective: String,
    pub booster: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Detection {
    None,
    Label(AffectPayload),
    /// Both a positive and a negative statement in one message.
    Conflict,
}

/// Classifies a message text, distinguishing conflicting statements from no match.
pub fn classify(text: &str, cfg: &PatternConfig) -> Detection {
    let matcher = cfg.compiled();
    classify_with(&matcher, text)
}

fn classify_with(matcher: &Matcher<'_>, text: &str) -> Detection {
    let found = matcher.matches(&tokenize(text));
    let Some(first) = found.first() else {
        return Detection::None;
    };
    if found.iter().any(|p| p.polarity != first.polarity) {
        Detection::Conflict
    } else {
        Detection::Label(first.clone())
    }
}

/// Returns the first affect-labeling statement in `text`, if any.
///
/// Texts containing statements of both polarities yield `None`.
pub fn detect_affect_label(text: &str, cfg: &PatternConfig) -> Option<AffectPayload> {
    match classify(text, cfg) {
        Detection::Label(p) => Some(p),
        _ => None,
    }
}

/// Whether any configured prefix appears as a token sequence in `text`.
pub fn contains_prefix(text: &str, cfg: &PatternConfig) -> bool {
    cfg.compiled().contains_prefix(&tokenize(text))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffectLabel {
    pub polarity: Polarity,
    pub adjective: String,
    pub booster: Option<String>,
    pub message_id: String,
    pub t0: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectLabel {
    pub subject_id: String,
    pub label: AffectLabel,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scan {
    pub labels: Vec<SubjectLabel>,
    /// Non-repost messages holding statements of both polarities (dropped).
    pub conflicts: usize,
    /// Repost messages that would otherwise have matched.
    pub reposts_skipped: usize,
}

/// Finds every affect-labeling statement among non-repost messages.
pub fn scan_corpus(timelines: &[RawTimeline], cfg: &PatternConfig) -> Scan {
    let matcher = cfg.compiled();
    let mut scan = Scan::default();
    for timeline in timelines {
        for m in &timeline.messages {
            match classify_with(&matcher, &m.text) {
                Detection::None => {}
                _ if m.is_repost => scan.reposts_skipped += 1,
                Detection::Conflict => scan.conflicts += 1,
                Detection::Label(p) => scan.labels.push(SubjectLabel {
                    subject_id: timeline.subject_id.clone(),
                    label: AffectLabel {
                        polarity: p.polarity,
                        adjective: p.adjective,
                        booster: p.booster,
                        message_id: m.message_id.clone(),
                        t0: m.utc_time,
                    },
                }),
            }
        }
    }
    scan
}

/// A subject's messages around one anchor statement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchoredTimeline {
    pub subject_id: String,
    pub anchor: AffectLabel,
    /// Messages with `utc_time` in `[t0 - analysis, t0 + analysis]`, anchor excluded.
    pub messages: Vec<Message>,
    /// Messages within the context horizon (default 24 h) but outside the
    /// analysis window; together with `messages` they form the null-model pool.
    pub context: Vec<Message>,
    pub gender: Gender,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub polarity: Polarity,
    pub timelines: Vec<AnchoredTimeline>,
}

impl Cohort {
    pub fn empty(polarity: Polarity) -> Self {
        Cohort {
            polarity,
            timelines: Vec::new(),
        }
    }

    pub fn restricted_to(&self, gender: Gender) -> Cohort {
        Cohort {
            polarity: self.polarity,
            timelines: self
                .timelines
                .iter()
                .filter(|t| t.gender == gender)
                .cloned()
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Reposts,
    Oversharers,
    UnusualDays,
    PrefixMessages,
    NoTimezone,
    NearbyExpressions,
}

impl FilterKind {
    /// Position in the published filter list (1-based).
    pub fn listed_position(self) -> u8 {
        match self {
            FilterKind::Reposts => 1,
            FilterKind::Oversharers => 2,
            FilterKind::UnusualDays => 3,
            FilterKind::PrefixMessages => 4,
            FilterKind::NoTimezone => 5,
            FilterKind::NearbyExpressions => 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterStep {
    pub filter: FilterKind,
    pub listed_position: u8,
    pub subjects_removed: usize,
    pub anchors_removed: usize,
    pub messages_removed: usize,
    /// Cutoff values used by percentile filters.
    pub thresholds: Vec<f64>,
}

/// Per-filter casualties, in the order the filters were applied.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub input_subjects: usize,
    pub input_messages: usize,
    pub input_labels: usize,
    pub conflicts: usize,
    pub steps: Vec<FilterStep>,
    pub positive_timelines: usize,
    pub negative_timelines: usize,
}

impl FilterReport {
    pub fn step(&self, kind: FilterKind) -> Option<&FilterStep> {
        self.steps.iter().find(|s| s.filter == kind)
    }
}

/// Persisted output of the detection stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cohorts {
    pub schema_version: u32,
    pub positive: Cohort,
    pub negative: Cohort,
    pub report: FilterReport,
}

impl Cohorts {
    pub fn get(&self, polarity: Polarity) -> &Cohort {
        match polarity {
            Polarity::Positive => &self.positive,
            Polarity::Negative => &self.negative,
        }
    }
}

struct Working<'a> {
    subject_id: &'a str,
    gender: Gender,
    messages: Vec<&'a Message>,
    anchors: Vec<&'a AffectLabel>,
    all_labels: Vec<&'a AffectLabel>,
}

/// Applies the six timeline filters and splits anchors into cohorts.
///
/// Filters run in listed order except that the timezone filter runs before
/// the unusual-days filter, because days are bucketed in local time.
pub fn build_cohorts(
    timelines: &[RawTimeline],
    scan: &Scan,
    patterns: &PatternConfig,
    filters: &FilterConfig,
) -> (Cohort, Cohort, FilterReport) {
    let matcher = patterns.compiled();
    let mut report = FilterReport {
        input_subjects: timelines.len(),
        input_messages: timelines.iter().map(|t| t.messages.len()).sum(),
        input_labels: scan.labels.len(),
        conflicts: scan.conflicts,
        ..FilterReport::default()
    };

    let mut labels_by_subject: HashMap<&str, Vec<&AffectLabel>> = HashMap::new();
    for sl in &scan.labels {
        labels_by_subject
            .entry(sl.subject_id.as_str())
            .or_default()
            .push(&sl.label);
    }
    let mut work: Vec<Working<'_>> = timelines
        .iter()
        .filter_map(|t| {
            let labels = labels_by_subject.get(t.subject_id.as_str())?;
            Some(Working {
                subject_id: &t.subject_id,
                gender: t.gender(),
                messages: t.messages.iter().collect(),
                anchors: labels.clone(),
                all_labels: labels.clone(),
            })
        })
        .collect();

    // (1) reposts
    let mut step = new_step(FilterKind::Reposts);
    if filters.drop_reposts {
        for w in &mut work {
            let before = w.messages.len();
            w.messages.retain(|m| !m.is_repost);
            step.messages_removed += before - w.messages.len();
        }
    }
    report.steps.push(step);

    // (2) subjects posting a larger share of expressions than the cutoff percentile
    let mut step = new_step(FilterKind::Oversharers);
    let fractions: Vec<f64> = work
        .iter()
        .map(|w| w.all_labels.len() as f64 / w.messages.len().max(1) as f64)
        .collect();
    if let Ok(cutoff) = percentile(&fractions, filters.oversharer_percentile) {
        step.thresholds.push(cutoff);
        let mut keep = fractions.iter().map(|f| *f <= cutoff);
        remove_subjects(&mut work, &mut step, |_| keep.next().unwrap_or(true));
    }
    report.steps.push(step);

    // (5) subjects without timezone information
    let mut step = new_step(FilterKind::NoTimezone);
    if filters.require_timezone {
        remove_subjects(&mut work, &mut step, |w| {
            w.messages.iter().all(|m| m.tz_offset_minutes.is_some())
        });
    }
    report.steps.push(step);

    // (3) anchors on days with unusually few or many expressions
    let mut step = new_step(FilterKind::UnusualDays);
    let anchor_day = |a: &AffectLabel, w: &Working<'_>| {
        let tz = w
            .messages
            .iter()
            .find(|m| m.message_id == a.message_id)
            .and_then(|m| m.tz_offset_minutes)
            .unwrap_or(0);
        local_day(a.t0, tz)
    };
    let mut per_day: BTreeMap<i64, usize> = BTreeMap::new();
    for w in &work {
        for a in &w.anchors {
            *per_day.entry(anchor_day(a, w)).or_default() += 1;
        }
    }
    let counts: Vec<f64> = per_day.values().map(|&c| c as f64).collect();
    if let (Ok(low), Ok(high)) = (
        percentile(&counts, filters.day_low_percentile),
        percentile(&counts, filters.day_high_percentile),
    ) {
        step.thresholds = vec![low, high];
        for w in &mut work {
            let before = w.anchors.len();
            let days: Vec<i64> = w.anchors.iter().map(|a| anchor_day(a, w)).collect();
            let mut i = 0;
            w.anchors.retain(|_| {
                let c = per_day[&days[i]] as f64;
                i += 1;
                c >= low && c <= high
            });
            step.anchors_removed += before - w.anchors.len();
        }
        drop_anchorless(&mut work, &mut step);
    }
    report.steps.push(step);

    // (4) remaining non-anchor messages that still contain a prefix
    let mut step = new_step(FilterKind::PrefixMessages);
    if filters.remove_prefix_messages {
        for w in &mut work {
            let anchor_ids: HashSet<&str> = w.anchors.iter().map(|a| a.message_id.as_str()).collect();
            let before = w.messages.len();
            w.messages.retain(|m| {
                anchor_ids.contains(m.message_id.as_str()) || !matcher.contains_prefix(&tokenize(&m.text))
            });
            step.messages_removed += before - w.messages.len();
        }
    }
    report.steps.push(step);

    // (6) anchors with another expression within the exclusion window
    let mut step = new_step(FilterKind::NearbyExpressions);
    let horizon = filters.exclusion_hours * SECONDS_PER_HOUR;
    for w in &mut work {
        let before = w.anchors.len();
        let all = w.all_labels.clone();
        w.anchors.retain(|a| {
            !all.iter()
                .any(|o| o.message_id != a.message_id && (o.t0 - a.t0).abs() <= horizon)
        });
        step.anchors_removed += before - w.anchors.len();
    }
    drop_anchorless(&mut work, &mut step);
    report.steps.push(step);

    let mut positive = Cohort::empty(Polarity::Positive);
    let mut negative = Cohort::empty(Polarity::Negative);
    let analysis = filters.analysis_minutes * SECONDS_PER_MINUTE;
    let context = filters.context_hours * SECONDS_PER_HOUR;
    for w in &work {
        let mut anchors = w.anchors.clone();
        anchors.sort_by_key(|a| a.t0);
        for a in anchors {
            let mut inside = Vec::new();
            let mut outside = Vec::new();
            for m in &w.messages {
                if m.message_id == a.message_id {
                    continue;
                }
                let d = (m.utc_time - a.t0).abs();
                if d <= analysis {
                    inside.push((*m).clone());
                } else if d <= context {
                    outside.push((*m).clone());
                }
            }
            let timeline = AnchoredTimeline {
                subject_id: w.subject_id.to_string(),
                anchor: a.clone(),
                messages: inside,
                context: outside,
                gender: w.gender,
            };
            match a.polarity {
                Polarity::Positive => positive.timelines.push(timeline),
                Polarity::Negative => negative.timelines.push(timeline),
            }
        }
    }
    report.positive_timelines = positive.timelines.len();
    report.negative_timelines = negative.timelines.len();
    (positive, negative, report)
}

fn new_step(filter: FilterKind) -> FilterStep {
    FilterStep {
        filter,
        listed_position: filter.listed_position(),
        subjects_removed: 0,
        anchors_removed: 0,
        messages_removed: 0,
        thresholds: Vec::new(),
    }
}

fn remove_subjects(work: &mut Vec<Working<'_>>, step: &mut FilterStep, mut keep: impl FnMut(&Working<'_>) -> bool) {
    work.retain(|w| {
        let k = keep(w);
        if !k {
            step.subjects_removed += 1;
            step.anchors_removed += w.anchors.len();
        }
        k
    });
}

fn drop_anchorless(work: &mut Vec<Working<'_>>, step: &mut FilterStep) {
    let before = work.len();
    work.retain(|w| !w.anchors.is_empty());
    step.subjects_removed += before - work.len();
}

/// Re-checks the per-timeline filter predicates on a built timeline.
pub fn verify_timeline(t: &AnchoredTimeline, patterns: &PatternConfig, filters: &FilterConfig) -> Result<()> {
    let matcher = patterns.compiled();
    let analysis = filters.analysis_minutes * SECONDS_PER_MINUTE;
    let context = filters.context_hours * SECONDS_PER_HOUR;
    let fail = |why: &str| Err(Error::InvalidInput(format!("{}: {why}", t.subject_id)));
    for m in &t.messages {
        if m.message_id == t.anchor.message_id {
            return fail("anchor present among messages");
        }
        if (m.utc_time - t.anchor.t0).abs() > analysis {
            return fail("message outside analysis window");
        }
    }
    for m in t.messages.iter().chain(&t.context) {
        if filters.drop_reposts && m.is_repost {
            return fail("repost retained");
        }
        if filters.remove_prefix_messages && matcher.contains_prefix(&tokenize(&m.text)) {
            return fail("message still contains an affect prefix");
        }
        if filters.require_timezone && m.tz_offset_minutes.is_none() {
            return fail("message without timezone");
        }
        let d = (m.utc_time - t.anchor.t0).abs();
        if d > context {
            return fail("message outside context window");
        }
    }
    Ok(())
}

/// Runs scan and filters together, producing the persisted detection artifact.
pub fn detect(timelines: &[RawTimeline], cfg: &DetectConfig) -> Cohorts {
    let scan = scan_corpus(timelines, &cfg.patterns);
    let (positive, negative, report) = build_cohorts(timelines, &scan, &cfg.patterns, &cfg.filters);
    Cohorts {
        schema_version: SCHEMA_VERSION,
        positive,
        negative,
        report,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> PatternConfig {
        PatternConfig::default()
    }

    #[test]
    fn default_config_shape() {
        let c = DetectConfig::default();
        assert_eq!(c.patterns.boosters.len(), 46);
        assert_eq!(c.patterns.positive_adjectives.len(), 4);
        assert_eq!(c.patterns.negative_adjectives.len(), 6);
        assert!(c.patterns.negative_adjectives.contains(&"unhappy".to_string()));
        assert_eq!(c.filters.exclusion_hours, 24);
    }

    #[test]
    fn detects_listed_examples() {
        let p = detect_affect_label("I feel so happy today", &cfg()).unwrap();
        assert_eq!(p.polarity, Polarity::Positive);
        assert_eq!(p.adjective, "happy");
        assert_eq!(p.booster.as_deref(), Some("so"));

        assert_eq!(detect_affect_label("I feel like a train hit me", &cfg()), None);
        assert_eq!(detect_affect_label("the weather is great", &cfg()), None);

        let p = detect_affect_label("I'm feeling terrible", &cfg()).unwrap();
        assert_eq!(p.polarity, Polarity::Negative);
        assert_eq!(p.adjective, "terrible");
        assert_eq!(p.booster, None);
    }

    #[test]
    fn grammar_edges() {
        let c = cfg();
        assert_eq!(detect_affect_label("I feel very very good", &c), None);
        assert!(detect_affect_label("i am feeling AWESOME!!!", &c).is_some());
        assert!(detect_affect_label("ugh, I feel bad.", &c).is_some());
        assert!(detect_affect_label("I\u{2019}m feeling great", &c).is_some());
        assert_eq!(detect_affect_label("I feel goodish", &c), None);
        assert_eq!(detect_affect_label("I don't feel good", &c), None);
        assert_eq!(classify("I feel good but I feel sad", &c), Detection::Conflict);
        assert!(matches!(classify("I feel good and I feel great", &c), Detection::Label(_)));
    }

    #[test]
    fn rejects_bad_config() {
        let mut c = cfg();
        c.negative_adjectives.push("good".into());
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.boosters.push("Very".into());
        assert!(c.validate().is_err());
    }
}
