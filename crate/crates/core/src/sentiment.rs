//! Rule-based valence scoring.
//!
//! The default engine reproduces the published VADER rules: lexicon
//! ratings on a -4..+4 scale, degree boosters, negation, ALL-CAPS emphasis,
//! contrastive "but", exclamation and question-mark emphasis, and the
//! `s / sqrt(s^2 + 15)` normalization into [-1, 1]. Emoji translation is not
//! performed.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const BOOSTER_INCREMENT: f64 = 0.293;
pub const CAPS_INCREMENT: f64 = 0.733;
pub const NEGATION_SCALAR: f64 = -0.74;
pub const NORMALIZATION_ALPHA: f64 = 15.0;
const EXCLAMATION_INCREMENT: f64 = 0.292;
const QUESTION_INCREMENT: f64 = 0.18;
const QUESTION_CAP: f64 = 0.96;
const MAX_EXCLAMATIONS: usize = 4;

const REFERENCE_LEXICON: &str = include_str!("../data/vader_lexicon.tsv");

/// Degree adverbs that raise intensity.
pub const INCREMENTING_BOOSTERS: [&str; 60] = [
    "absolutely", "amazingly", "awfully", "completely", "considerable", "considerably",
    "decidedly", "deeply", "effing", "enormous", "enormously", "entirely", "especially",
    "exceptional", "exceptionally", "extreme", "extremely", "fabulously", "flipping",
    "flippin", "frackin", "fracking", "fricking", "frickin", "frigging", "friggin", "fully",
    "fuckin", "fucking", "fuggin", "fugging", "greatly", "hella", "highly", "hugely",
    "incredible", "incredibly", "intensely", "major", "majorly", "more", "most",
    "particularly", "purely", "quite", "really", "remarkably", "so", "substantially",
    "thoroughly", "total", "totally", "tremendous", "tremendously", "uber", "unbelievably",
    "unusually", "utter", "utterly", "very",
];

/// Degree adverbs that dampen intensity; multi-word entries only act as n-grams.
pub const DAMPENING_BOOSTERS: [&str; 24] = [
    "almost", "barely", "hardly", "just enough", "kind of", "kinda", "kindof", "kind-of",
    "less", "little", "marginal", "marginally", "occasional", "occasionally", "partly",
    "scarce", "scarcely", "slight", "slightly", "somewhat", "sort of", "sorta", "sortof",
    "sort-of",
];

pub const NEGATORS: [&str; 59] = [
    "aint", "arent", "cannot", "cant", "couldnt", "darent", "didnt", "doesnt", "ain't",
    "aren't", "can't", "couldn't", "daren't", "didn't", "doesn't", "dont", "hadnt", "hasnt",
    "havent", "isnt", "mightnt", "mustnt", "neither", "don't", "hadn't", "hasn't", "haven't",
    "isn't", "mightn't", "mustn't", "neednt", "needn't", "never", "none", "nope", "nor", "not",
    "nothing", "nowhere", "oughtnt", "shant", "shouldnt", "uhuh", "wasnt", "werent", "oughtn't",
    "shan't", "shouldn't", "uh-uh", "wasn't", "weren't", "without", "wont", "wouldnt", "won't",
    "wouldn't", "rarely", "seldom", "despite",
];

const SPECIAL_CASES: [(&str, f64); 9] = [
    ("the shit", 3.0),
    ("the bomb", 3.0),
    ("bad ass", 1.5),
    ("badass", 1.5),
    ("bus stop", 0.0),
    ("yeah right", -2.0),
    ("kiss of death", -1.5),
    ("to die for", 3.0),
    ("beating heart", 3.5),
];

/// Token ratings plus the modifier vocabularies the rules consult.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    pub entries: HashMap<String, f64>,
    pub boosters: HashMap<String, f64>,
    pub negators: HashSet<String>,
}

impl Lexicon {
    /// Builds a lexicon from ratings, attaching the standard boosters and negators.
    pub fn with_entries(entries: HashMap<String, f64>) -> Result<Self> {
        let boosters = INCREMENTING_BOOSTERS
            .iter()
            .map(|b| (b.to_string(), BOOSTER_INCREMENT))
            .chain(
                DAMPENING_BOOSTERS
                    .iter()
                    .map(|b| (b.to_string(), -BOOSTER_INCREMENT)),
            )
            .collect();
        let negators = NEGATORS.iter().map(|n| n.to_string()).collect();
        let lexicon = Lexicon {
            entries,
            boosters,
            negators,
        };
        lexicon.check()?;
        Ok(lexicon)
    }

    /// The bundled VADER lexicon.
    pub fn reference() -> Self {
        let (lexicon, _) = parse_lexicon(REFERENCE_LEXICON.as_bytes())
            .expect("bundled lexicon is well formed");
        lexicon
    }

    pub fn rating(&self, token: &str) -> Option<f64> {
        self.entries.get(token).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn check(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Lexicon {
                line: 0,
                reason: "lexicon is empty".into(),
            });
        }
        if let Some(both) = self.boosters.keys().find(|b| self.negators.contains(*b)) {
            return Err(Error::Lexicon {
                line: 0,
                reason: format!("{both:?} is both booster and negator"),
            });
        }
        Ok(())
    }
}

/// Raw text of the bundled lexicon file.
pub fn reference_lexicon_text() -> &'static str {
    REFERENCE_LEXICON
}

/// Parses `<token>\t<mean_rating>` rows; extra columns are ignored.
///
/// Returns the lexicon and the tokens that appeared more than once (the last
/// row wins).
pub fn parse_lexicon<R: BufRead>(reader: R) -> Result<(Lexicon, Vec<String>)> {
    let mut entries = HashMap::new();
    let mut duplicates = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let token = fields.next().unwrap_or_default();
        let rating = fields.next().ok_or_else(|| Error::Lexicon {
            line: idx + 1,
            reason: "expected <token>\\t<rating>".into(),
        })?;
        let rating: f64 = rating.trim().parse().map_err(|_| Error::Lexicon {
            line: idx + 1,
            reason: format!("rating {rating:?} is not a number"),
        })?;
        if !rating.is_finite() || token.is_empty() {
            return Err(Error::Lexicon {
                line: idx + 1,
                reason: "empty token or non-finite rating".into(),
            });
        }
        if entries.insert(token.to_string(), rating).is_some() {
            duplicates.push(token.to_string());
        }
    }
    Ok((Lexicon::with_entries(entries)?, duplicates))
}

pub fn load_lexicon(path: impl AsRef<Path>) -> Result<Lexicon> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let (lexicon, duplicates) = parse_lexicon(BufReader::new(file))?;
    for token in &duplicates {
        log::warn!("{}: duplicate token {token:?}, keeping the last rating", path.display());
    }
    Ok(lexicon)
}

/// Valence in [-1, 1]; 0 when no lexicon token is present.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct ValenceScore(pub f64);

impl ValenceScore {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Anything that maps a message text to a valence score.
pub trait ValenceScorer: Send + Sync {
    fn score(&self, text: &str) -> ValenceScore;
}

impl ValenceScorer for Lexicon {
    fn score(&self, text: &str) -> ValenceScore {
        score(text, self)
    }
}

pub fn normalize(sum: f64) -> f64 {
    (sum / (sum * sum + NORMALIZATION_ALPHA).sqrt()).clamp(-1.0, 1.0)
}

/// Inverse of [`normalize`] on the open interval (-1, 1).
pub fn denormalize(score: f64) -> f64 {
    score * (NORMALIZATION_ALPHA / (1.0 - score * score)).sqrt()
}

const PUNCTUATION: &[char] = &[
    '!', '"', '#', '$', '%', '&', '\'', '(', ')', '*', '+', ',', '-', '.', '/', ':', ';', '<',
    '=', '>', '?', '@', '[', '\\', ']', '^', '_', '`', '{', '|', '}', '~',
];

/// Whitespace tokens with surrounding punctuation removed, unless stripping
/// leaves two characters or fewer (emoticons survive intact).
pub fn tokenize(text: &str) -> Vec<&str> {
    text.split_whitespace()
        .map(|tok| {
            let stripped = tok.trim_matches(PUNCTUATION);
            if stripped.chars().count() <= 2 {
                tok
            } else {
                stripped
            }
        })
        .collect()
}

fn is_upper(s: &str) -> bool {
    let mut cased = false;
    for c in s.chars() {
        if c.is_lowercase() {
            return false;
        }
        if c.is_uppercase() {
            cased = true;
        }
    }
    cased
}

fn is_negated(word: &str, negators: &HashSet<String>) -> bool {
    negators.contains(word) || word.contains("n't")
}

struct Sentence<'a> {
    words: Vec<&'a str>,
    lower: Vec<String>,
    cap_differential: bool,
}

impl<'a> Sentence<'a> {
    fn new(text: &'a str) -> Self {
        let words = tokenize(text);
        let lower = words.iter().map(|w| w.to_lowercase()).collect();
        let caps = words.iter().filter(|w| is_upper(w)).count();
        let differential = words.len() - caps;
        Sentence {
            cap_differential: differential > 0 && differential < words.len(),
            words,
            lower,
        }
    }
}

/// Scores `text` against `lexicon`.
pub fn score(text: &str, lexicon: &Lexicon) -> ValenceScore {
    let text = text.trim();
    let sentence = Sentence::new(text);
    let n = sentence.words.len();
    let mut sentiments = Vec::with_capacity(n);
    for i in 0..n {
        let lower = sentence.lower[i].as_str();
        if lexicon.boosters.contains_key(lower)
            || (lower == "kind" && i + 1 < n && sentence.lower[i + 1] == "of")
        {
            sentiments.push(0.0);
            continue;
        }
        sentiments.push(token_valence(&sentence, i, lexicon));
    }
    but_check(&sentence.lower, &mut sentiments);
    if sentiments.is_empty() {
        return ValenceScore(0.0);
    }
    let mut sum: f64 = sentiments.iter().sum();
    let emphasis = punctuation_emphasis(text);
    if sum > 0.0 {
        sum += emphasis;
    } else if sum < 0.0 {
        sum -= emphasis;
    }
    ValenceScore(normalize(sum))
}

fn token_valence(s: &Sentence<'_>, i: usize, lexicon: &Lexicon) -> f64 {
    let lower = s.lower[i].as_str();
    let Some(rating) = lexicon.rating(lower) else {
        return 0.0;
    };
    let in_lexicon = |j: usize| lexicon.entries.contains_key(s.lower[j].as_str());
    let mut valence = rating;

    // "no" in front of another rated word acts as a negator, not a rating.
    if lower == "no" && i + 1 < s.words.len() && in_lexicon(i + 1) {
        valence = 0.0;
    }
    if (i > 0 && s.lower[i - 1] == "no")
        || (i > 1 && s.lower[i - 2] == "no")
        || (i > 2 && s.lower[i - 3] == "no" && matches!(s.lower[i - 1].as_str(), "or" | "nor"))
    {
        valence = rating * NEGATION_SCALAR;
    }

    if is_upper(s.words[i]) && s.cap_differential {
        if valence > 0.0 {
            valence += CAPS_INCREMENT;
        } else {
            valence -= CAPS_INCREMENT;
        }
    }

    for start in 0..3 {
        if i > start && !in_lexicon(i - (start + 1)) {
            let mut scalar = booster_scalar(s.words[i - (start + 1)], &s.lower[i - (start + 1)], valence, s.cap_differential, lexicon);
            if start == 1 {
                scalar *= 0.95;
            } else if start == 2 {
                scalar *= 0.9;
            }
            valence += scalar;
            valence = negation_check(valence, &s.lower, start, i, &lexicon.negators);
            if start == 2 {
                valence = special_idioms(valence, &s.lower, i, lexicon);
            }
        }
    }
    least_check(valence, &s.lower, i, lexicon)
}

fn booster_scalar(word: &str, lower: &str, valence: f64, cap_differential: bool, lexicon: &Lexicon) -> f64 {
    let Some(&base) = lexicon.boosters.get(lower) else {
        return 0.0;
    };
    let mut scalar = if valence < 0.0 { -base } else { base };
    if is_upper(word) && cap_differential {
        if valence > 0.0 {
            scalar += CAPS_INCREMENT;
        } else {
            scalar -= CAPS_INCREMENT;
        }
    }
    scalar
}

fn negation_check(valence: f64, lower: &[String], start: usize, i: usize, negators: &HashSet<String>) -> f64 {
    let w = |back: usize| lower[i - back].as_str();
    match start {
        0 => {
            if is_negated(w(1), negators) {
                return valence * NEGATION_SCALAR;
            }
        }
        1 => {
            if w(2) == "never" && matches!(w(1), "so" | "this") {
                return valence * 1.25;
            } else if w(2) == "without" && w(1) == "doubt" {
                return valence;
            } else if is_negated(w(2), negators) {
                return valence * NEGATION_SCALAR;
            }
        }
        _ => {
            // Mirrors the reference operator precedence: (never && so/this) || so/this.
            if (w(3) == "never" && matches!(w(2), "so" | "this")) || matches!(w(1), "so" | "this") {
                return valence * 1.25;
            } else if w(3) == "without" && (w(2) == "doubt" || w(1) == "doubt") {
                return valence;
            } else if is_negated(w(3), negators) {
                return valence * NEGATION_SCALAR;
            }
        }
    }
    valence
}

fn special_idioms(mut valence: f64, lower: &[String], i: usize, lexicon: &Lexicon) -> f64 {
    let special = |seq: &str| SPECIAL_CASES.iter().find(|(k, _)| *k == seq).map(|(_, v)| *v);
    let one_zero = format!("{} {}", lower[i - 1], lower[i]);
    let two_one_zero = format!("{} {} {}", lower[i - 2], lower[i - 1], lower[i]);
    let two_one = format!("{} {}", lower[i - 2], lower[i - 1]);
    let three_two_one = format!("{} {} {}", lower[i - 3], lower[i - 2], lower[i - 1]);
    let three_two = format!("{} {}", lower[i - 3], lower[i - 2]);
    for seq in [&one_zero, &two_one_zero, &two_one, &three_two_one, &three_two] {
        if let Some(v) = special(seq) {
            valence = v;
            break;
        }
    }
    if lower.len() - 1 > i {
        if let Some(v) = special(&format!("{} {}", lower[i], lower[i + 1])) {
            valence = v;
        }
    }
    if lower.len() - 1 > i + 1 {
        if let Some(v) = special(&format!("{} {} {}", lower[i], lower[i + 1], lower[i + 2])) {
            valence = v;
        }
    }
    for ngram in [&three_two_one, &three_two, &two_one] {
        if let Some(b) = lexicon.boosters.get(ngram.as_str()) {
            valence += b;
        }
    }
    valence
}

fn least_check(valence: f64, lower: &[String], i: usize, lexicon: &Lexicon) -> f64 {
    let prev_is_least = |i: usize| lower[i - 1] == "least" && !lexicon.entries.contains_key("least");
    if i > 1 && prev_is_least(i) {
        if lower[i - 2] != "at" && lower[i - 2] != "very" {
            return valence * NEGATION_SCALAR;
        }
    } else if i > 0 && prev_is_least(i) {
        return valence * NEGATION_SCALAR;
    }
    valence
}

/// Contrastive "but": halves sentiment before the first "but" and boosts it after.
///
/// Each value is located by its first equal occurrence, as the reference
/// implementation does, so repeated values are rescaled at that position.
fn but_check(lower: &[String], sentiments: &mut [f64]) {
    let Some(bi) = lower.iter().position(|w| w == "but") else {
        return;
    };
    for j in 0..sentiments.len() {
        let value = sentiments[j];
        let si = sentiments
            .iter()
            .position(|v| *v == value)
            .unwrap_or(j);
        if si < bi {
            sentiments[si] = value * 0.5;
        } else if si > bi {
            sentiments[si] = value * 1.5;
        }
    }
}

fn punctuation_emphasis(text: &str) -> f64 {
    let exclamations = text.matches('!').count().min(MAX_EXCLAMATIONS);
    let questions = text.matches('?').count();
    let question_emphasis = match questions {
        0 | 1 => 0.0,
        2 | 3 => questions as f64 * QUESTION_INCREMENT,
        _ => QUESTION_CAP,
    };
    exclamations as f64 * EXCLAMATION_INCREMENT + question_emphasis
}
