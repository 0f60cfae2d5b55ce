//! JSON Lines message records grouped into per-subject timelines.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, SCHEMA_VERSION};

pub const MAX_TEXT_CHARS: usize = 2_000;
const MAX_RECORDED_ERRORS: usize = 1_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
    #[default]
    Unknown,
}

/// One timestamped text item from one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub subject_id: String,
    pub message_id: String,
    /// Epoch seconds; RFC 3339 on the wire.
    #[serde(with = "rfc3339_seconds")]
    pub utc_time: i64,
    #[serde(default)]
    pub tz_offset_minutes: Option<i32>,
    pub text: String,
    #[serde(default)]
    pub is_repost: bool,
    #[serde(default)]
    pub gender_label: Gender,
}

impl Message {
    pub fn local_time(&self) -> Option<i64> {
        self.tz_offset_minutes
            .map(|tz| crate::time::local_seconds(self.utc_time, tz))
    }

    fn validate(&self) -> Result<()> {
        if self.subject_id.is_empty() {
            return Err(Error::InvalidInput("empty subject_id".into()));
        }
        if self.message_id.is_empty() {
            return Err(Error::InvalidInput("empty message_id".into()));
        }
        if self.text.chars().count() > MAX_TEXT_CHARS {
            return Err(Error::InvalidInput(format!(
                "text longer than {MAX_TEXT_CHARS} characters"
            )));
        }
        if let Some(tz) = self.tz_offset_minutes {
            if tz.abs() > 18 * 60 {
                return Err(Error::InvalidInput(format!("tz offset {tz} out of range")));
            }
        }
        Ok(())
    }
}

mod rfc3339_seconds {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &i64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&crate::time::format_rfc3339(*t))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<i64, D::Error> {
        let raw = String::deserialize(d)?;
        crate::time::parse_rfc3339(&raw).map_err(serde::de::Error::custom)
    }
}

/// A subject's messages, ascending by time, without duplicate ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTimeline {
    pub subject_id: String,
    pub messages: Vec<Message>,
}

impl RawTimeline {
    pub fn gender(&self) -> Gender {
        self.messages
            .iter()
            .map(|m| m.gender_label)
            .find(|g| *g != Gender::Unknown)
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineError {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub lines: usize,
    pub valid: usize,
    pub blank: usize,
    pub malformed: usize,
    pub duplicates: usize,
    /// First malformed lines with their reasons (capped).
    pub errors: Vec<LineError>,
}

/// Persisted corpus: all timelines plus the ingest report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Corpus {
    pub schema_version: u32,
    pub timelines: Vec<RawTimeline>,
}

impl Corpus {
    pub fn new(timelines: Vec<RawTimeline>) -> Self {
        Corpus {
            schema_version: SCHEMA_VERSION,
            timelines,
        }
    }

    pub fn message_count(&self) -> usize {
        self.timelines.iter().map(|t| t.messages.len()).sum()
    }

    pub fn messages(&self) -> impl Iterator<Item = &Message> {
        self.timelines.iter().flat_map(|t| t.messages.iter())
    }
}

/// Reads line-delimited message records.
///
/// Malformed lines are skipped and counted. Only a failure to read the
/// stream itself is fatal. Timelines come back ordered by `subject_id`.
pub fn parse_corpus<R: BufRead>(reader: R) -> Result<(Vec<RawTimeline>, ParseReport)> {
    let mut report = ParseReport::default();
    let mut messages = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        report.lines += 1;
        if line.trim().is_empty() {
            report.blank += 1;
            continue;
        }
        let parsed = serde_json::from_str::<Message>(&line)
            .map_err(Error::from)
            .and_then(|m| m.validate().map(|_| m));
        match parsed {
            Ok(m) => {
                report.valid += 1;
                messages.push(m);
            }
            Err(e) => {
                report.malformed += 1;
                if report.errors.len() < MAX_RECORDED_ERRORS {
                    report.errors.push(LineError {
                        line: idx + 1,
                        reason: e.to_string(),
                    });
                }
            }
        }
    }
    let (timelines, duplicates) = group_messages(messages);
    report.duplicates = duplicates;
    Ok((timelines, report))
}

/// Parses several files as one stream of records.
pub fn parse_files<P: AsRef<Path>>(paths: &[P]) -> Result<(Vec<RawTimeline>, ParseReport)> {
    let mut total = ParseReport::default();
    let mut messages = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let (timelines, report) = parse_corpus(BufReader::new(file))?;
        let offset = total.lines;
        total.lines += report.lines;
        total.valid += report.valid;
        total.blank += report.blank;
        total.malformed += report.malformed;
        total.errors.extend(report.errors.into_iter().map(|mut e| {
            e.line += offset;
            e
        }));
        messages.extend(timelines.into_iter().flat_map(|t| t.messages));
    }
    total.errors.truncate(MAX_RECORDED_ERRORS);
    let (timelines, duplicates) = group_messages(messages);
    total.duplicates = duplicates;
    Ok((timelines, total))
}

/// Groups by subject, sorts, and drops duplicate message ids.
///
/// Returns the number of dropped duplicates. Within a subject the earliest
/// copy wins; across subjects the copy in the lexicographically first subject wins.
pub fn group_messages(messages: Vec<Message>) -> (Vec<RawTimeline>, usize) {
    let input = messages.len();
    let mut by_subject: BTreeMap<String, Vec<Message>> = BTreeMap::new();
    for m in messages {
        by_subject.entry(m.subject_id.clone()).or_default().push(m);
    }
    let mut seen = HashSet::new();
    let mut timelines = Vec::with_capacity(by_subject.len());
    for (subject_id, msgs) in by_subject {
        let mut timeline = sort_and_dedupe(RawTimeline {
            subject_id,
            messages: msgs,
        });
        timeline
            .messages
            .retain(|m| seen.insert(m.message_id.clone()));
        if !timeline.messages.is_empty() {
            timelines.push(timeline);
        }
    }
    let kept: usize = timelines.iter().map(|t| t.messages.len()).sum();
    (timelines, input - kept)
}

/// Sorts ascending by time (stable) and keeps the first copy of each message id.
pub fn sort_and_dedupe(mut timeline: RawTimeline) -> RawTimeline {
    timeline.messages.sort_by_key(|m| m.utc_time);
    let mut seen = HashSet::new();
    timeline
        .messages
        .retain(|m| seen.insert(m.message_id.clone()));
    timeline
}

pub fn write_jsonl<'a, W: Write>(
    mut out: W,
    messages: impl IntoIterator<Item = &'a Message>,
) -> Result<()> {
    for m in messages {
        serde_json::to_writer(&mut out, m)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(subject: &str, id: &str, time: &str) -> String {
        format!(
            r#"{{"subject_id":"{subject}","message_id":"{id}","utc_time":"{time}","tz_offset_minutes":-300,"text":"hello","is_repost":false}}"#
        )
    }

    #[test]
    fn groups_three_lines_into_two_subjects() {
        let input = [
            line("a", "1", "2011-01-01T10:00:00Z"),
            line("b", "2", "2011-01-01T09:00:00Z"),
            line("a", "3", "2011-01-01T08:00:00Z"),
        ]
        .join("\n");
        let (timelines, report) = parse_corpus(input.as_bytes()).unwrap();
        assert_eq!(timelines.len(), 2);
        assert_eq!(timelines[0].subject_id, "a");
        let ids: Vec<_> = timelines[0].messages.iter().map(|m| m.message_id.as_str()).collect();
        assert_eq!(ids, ["3", "1"]);
        assert_eq!(timelines[1].messages.len(), 1);
        assert_eq!(report.valid, 3);
        assert_eq!(report.malformed, 0);
        assert_eq!(timelines[0].messages[0].gender_label, Gender::Unknown);
    }

    #[test]
    fn empty_stream() {
        let (timelines, report) = parse_corpus(&b""[..]).unwrap();
        assert!(timelines.is_empty());
        assert_eq!(report.malformed, 0);
        assert_eq!(report.lines, 0);
    }

    #[test]
    fn bad_timestamp_is_skipped() {
        let input = [
            line("a", "1", "2011-01-01T10:00:00Z"),
            line("a", "2", "not a time"),
            line("a", "3", "2011-01-01T11:00:00Z"),
        ]
        .join("\n");
        let (timelines, report) = parse_corpus(input.as_bytes()).unwrap();
        assert_eq!(report.malformed, 1);
        assert_eq!(report.errors[0].line, 2);
        assert_eq!(timelines[0].messages.len(), 2);
    }

    #[test]
    fn overlong_text_is_malformed() {
        let text = "x".repeat(MAX_TEXT_CHARS + 1);
        let input = format!(
            r#"{{"subject_id":"a","message_id":"1","utc_time":"2011-01-01T10:00:00Z","tz_offset_minutes":null,"text":"{text}","is_repost":false}}"#
        );
        let (_, report) = parse_corpus(input.as_bytes()).unwrap();
        assert_eq!(report.malformed, 1);
    }

    fn msg(id: &str, t: i64) -> Message {
        Message {
            subject_id: "s".into(),
            message_id: id.into(),
            utc_time: t,
            tz_offset_minutes: Some(0),
            text: String::new(),
            is_repost: false,
            gender_label: Gender::Unknown,
        }
    }

    #[test]
    fn sort_and_dedupe_cases() {
        let sorted = RawTimeline {
            subject_id: "s".into(),
            messages: (0..5).map(|i| msg(&i.to_string(), i * 10)).collect(),
        };
        assert_eq!(sort_and_dedupe(sorted.clone()), sorted);

        let mut reversed = sorted.clone();
        reversed.messages.reverse();
        assert_eq!(sort_and_dedupe(reversed), sorted);

        let dup = RawTimeline {
            subject_id: "s".into(),
            messages: vec![msg("x", 50), msg("y", 20), msg("x", 10)],
        };
        let out = sort_and_dedupe(dup);
        assert_eq!(out.messages.len(), 2);
        let x = out.messages.iter().find(|m| m.message_id == "x").unwrap();
        assert_eq!(x.utc_time, 10);
    }

    #[test]
    fn duplicates_are_counted() {
        let input = [
            line("a", "1", "2011-01-01T10:00:00Z"),
            line("a", "1", "2011-01-01T09:00:00Z"),
            line("b", "1", "2011-01-01T09:00:00Z"),
        ]
        .join("\n");
        let (timelines, report) = parse_corpus(input.as_bytes()).unwrap();
        assert_eq!(report.duplicates, 2);
        assert_eq!(timelines.len(), 1);
        assert_eq!(timelines[0].messages[0].utc_time, crate::time::parse_rfc3339("2011-01-01T09:00:00Z").unwrap());
    }
}
