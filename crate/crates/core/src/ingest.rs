//! Event parsing and removal of accounts with physically impossible movement.

use std::collections::HashSet;
use std::io::BufRead;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine_miles, GeoPoint};
use crate::par::Exec;

/// Movement faster than this (miles per minute) marks an event as spoofed.
pub const MAX_SPEED_MILES_PER_MINUTE: f64 = 0.5;
/// Accounts with a strictly larger violating fraction are dropped.
pub const MAX_VIOLATING_FRACTION: f64 = 0.05;
/// Floor on the time delta, in minutes, so simultaneous events have a finite speed.
pub const MIN_INTERVAL_MINUTES: f64 = 1.0 / 60.0;
/// Displacements up to this many miles count as staying put.
pub const SAME_PLACE_MILES: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEvent {
    pub user_id: String,
    /// Seconds since the Unix epoch, UTC.
    pub ts: i64,
    pub point: GeoPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserEvents {
    pub user_id: String,
    /// Sorted by timestamp.
    pub events: Vec<RawEvent>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ParseReport {
    pub lines: usize,
    pub parsed: usize,
    pub skipped: usize,
    pub duplicates: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    Csv,
    Json,
}

#[derive(Deserialize)]
struct JsonRecord {
    user: serde_json::Value,
    ts: serde_json::Value,
    lat: f64,
    lon: f64,
}

/// Parse a timestamp as RFC 3339, a naive ISO 8601 date-time (taken as UTC),
/// or integer epoch seconds.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    s.parse::<i64>().ok()
}

pub fn format_timestamp(ts: i64) -> String {
    DateTime::from_timestamp(ts, 0)
        .map(|d| d.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_else(|| ts.to_string())
}

fn parse_csv_line(line: &str) -> Option<RawEvent> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 4 || fields[0].is_empty() {
        return None;
    }
    let ts = parse_timestamp(fields[1])?;
    let lat = fields[2].parse().ok()?;
    let lon = fields[3].parse().ok()?;
    let point = GeoPoint::new(lat, lon).ok()?;
    Some(RawEvent {
        user_id: fields[0].to_string(),
        ts,
        point,
    })
}

fn parse_json_line(line: &str) -> Option<RawEvent> {
    let rec: JsonRecord = serde_json::from_str(line).ok()?;
    let user_id = match rec.user {
        serde_json::Value::String(s) if !s.is_empty() => s,
        serde_json::Value::Number(n) => n.to_string(),
        _ => return None,
    };
    let ts = match rec.ts {
        serde_json::Value::String(s) => parse_timestamp(&s)?,
        serde_json::Value::Number(n) => n.as_i64()?,
        _ => return None,
    };
    let point = GeoPoint::new(rec.lat, rec.lon).ok()?;
    Some(RawEvent { user_id, ts, point })
}

fn is_csv_header(line: &str) -> bool {
    let first = line.split(',').next().unwrap_or("").trim().to_ascii_lowercase();
    matches!(first.as_str(), "user_id" | "user")
}

/// Parse line-delimited events, CSV or JSON, detected from the first
/// non-blank line. Malformed lines are counted and skipped; exact duplicates
/// are dropped. Output is sorted by user, then timestamp.
pub fn parse_events<R: BufRead>(reader: R) -> Result<(Vec<RawEvent>, ParseReport)> {
    let mut report = ParseReport::default();
    let mut format = None;
    let mut events = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::data(format!("line {}", lineno + 1), e.to_string()))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fmt = *format.get_or_insert(if trimmed.starts_with('{') {
            EventFormat::Json
        } else {
            EventFormat::Csv
        });
        if fmt == EventFormat::Csv && report.lines == 0 && is_csv_header(trimmed) {
            report.lines += 1;
            continue;
        }
        report.lines += 1;
        let parsed = match fmt {
            EventFormat::Csv => parse_csv_line(trimmed),
            EventFormat::Json => parse_json_line(trimmed),
        };
        match parsed {
            Some(e) => events.push(e),
            None => report.skipped += 1,
        }
    }
    events.sort_by(|a, b| {
        a.user_id
            .cmp(&b.user_id)
            .then(a.ts.cmp(&b.ts))
            .then(a.point.lat.total_cmp(&b.point.lat))
            .then(a.point.lon.total_cmp(&b.point.lon))
    });
    let before = events.len();
    events.dedup();
    report.duplicates = before - events.len();
    report.parsed = events.len();
    Ok((events, report))
}

/// Split a user-sorted event list into per-user groups.
pub fn group_by_user(events: Vec<RawEvent>) -> Vec<UserEvents> {
    let mut groups: Vec<UserEvents> = Vec::new();
    for e in events {
        match groups.last_mut() {
            Some(g) if g.user_id == e.user_id => g.events.push(e),
            _ => groups.push(UserEvents {
                user_id: e.user_id.clone(),
                events: vec![e],
            }),
        }
    }
    for g in &mut groups {
        g.events.sort_by_key(|e| e.ts);
    }
    groups
}

/// True when moving from `e1` to `e2` would need more than 0.5 miles per minute.
pub fn speed_violation(e1: &RawEvent, e2: &RawEvent) -> bool {
    let miles = haversine_miles(e1.point, e2.point);
    if miles <= SAME_PLACE_MILES {
        return false;
    }
    let minutes = ((e2.ts - e1.ts).abs() as f64 / 60.0).max(MIN_INTERVAL_MINUTES);
    miles / minutes > MAX_SPEED_MILES_PER_MINUTE
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountVerdict {
    pub user_id: String,
    pub total_events: usize,
    pub violating_events: usize,
    /// On the caller-supplied exclusion list.
    pub listed: bool,
    pub excluded: bool,
}

impl AccountVerdict {
    pub fn violating_fraction(&self) -> f64 {
        if self.total_events == 0 {
            0.0
        } else {
            self.violating_events as f64 / self.total_events as f64
        }
    }
}

pub fn assess_account(user: &UserEvents, listed: bool) -> AccountVerdict {
    // a violation belongs to the later event of the pair
    let violating_events = user
        .events
        .windows(2)
        .filter(|w| speed_violation(&w[0], &w[1]))
        .count();
    let total_events = user.events.len();
    let too_fast = total_events > 0 && violating_events as f64 / total_events as f64 > MAX_VIOLATING_FRACTION;
    AccountVerdict {
        user_id: user.user_id.clone(),
        total_events,
        violating_events,
        listed,
        excluded: too_fast || listed,
    }
}

/// Drop accounts whose share of speed-violating events exceeds 5%, plus any
/// account on `exclude`.
pub fn filter_spoofed_accounts(
    users: Vec<UserEvents>,
    exclude: &HashSet<String>,
    exec: Exec,
) -> (Vec<UserEvents>, Vec<AccountVerdict>) {
    let verdicts = exec.map(&users, |u| assess_account(u, exclude.contains(&u.user_id)));
    let retained = users
        .into_iter()
        .zip(&verdicts)
        .filter(|(_, v)| !v.excluded)
        .map(|(u, _)| u)
        .collect();
    (retained, verdicts)
}
