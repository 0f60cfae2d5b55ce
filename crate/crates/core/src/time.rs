//! Epoch-second timestamps and the local-time fields derived from them.

use chrono::{DateTime, SecondsFormat, Utc};

use crate::{Error, Result};

pub const SECONDS_PER_MINUTE: i64 = 60;
pub const SECONDS_PER_HOUR: i64 = 3_600;
pub const SECONDS_PER_DAY: i64 = 86_400;

/// Parses an RFC 3339 timestamp into whole epoch seconds (sub-second parts truncate).
pub fn parse_rfc3339(s: &str) -> Result<i64> {
    DateTime::parse_from_rfc3339(s)
        .map(|dt| dt.timestamp())
        .map_err(|e| Error::InvalidInput(format!("bad timestamp {s:?}: {e}")))
}

pub fn format_rfc3339(epoch_seconds: i64) -> String {
    DateTime::<Utc>::from_timestamp(epoch_seconds, 0)
        .map(|dt| dt.to_rfc3339_opts(SecondsFormat::Secs, true))
        .unwrap_or_else(|| epoch_seconds.to_string())
}

pub fn local_seconds(utc: i64, tz_offset_minutes: i32) -> i64 {
    utc + i64::from(tz_offset_minutes) * SECONDS_PER_MINUTE
}

/// Days since 1970-01-01 in local time.
pub fn local_day(utc: i64, tz_offset_minutes: i32) -> i64 {
    local_seconds(utc, tz_offset_minutes).div_euclid(SECONDS_PER_DAY)
}

/// Monday = 0 ... Sunday = 6.
pub fn local_weekday(utc: i64, tz_offset_minutes: i32) -> u8 {
    // 1970-01-01 was a Thursday.
    (local_day(utc, tz_offset_minutes) + 3).rem_euclid(7) as u8
}

pub fn local_hour(utc: i64, tz_offset_minutes: i32) -> u8 {
    (local_seconds(utc, tz_offset_minutes).rem_euclid(SECONDS_PER_DAY) / SECONDS_PER_HOUR) as u8
}

/// Whole-minute offset of `t` from `t0`, rounded toward negative infinity.
pub fn offset_minutes(t: i64, t0: i64) -> i64 {
    (t - t0).div_euclid(SECONDS_PER_MINUTE)
}
