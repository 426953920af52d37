//! Fixed-resolution timelines: slotting events, stay and home interpolation,
//! and the daytime inclusion rule.
//!
//! Time is measured in local seconds (UTC shifted by a [`LocalClock`]) from a
//! study start that falls on a Monday at 00:00. A slot `q` covers the instants
//! closer to `q * r` hours than to any other multiple of `r`; exact midpoints
//! go to the earlier slot.

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{GridCell, GridSpec};
use crate::ingest::RawEvent;

pub const SECONDS_PER_HOUR: i64 = 3600;
/// Consecutive same-cell events at most this far apart are treated as one stay.
pub const MAX_STAY_SECONDS: i64 = 6 * SECONDS_PER_HOUR;
pub const DAY_START_HOUR: u32 = 8;
pub const NIGHT_START_HOUR: u32 = 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Resolution {
    OneHour,
    TwoHours,
}

impl TryFrom<u32> for Resolution {
    type Error = Error;

    fn try_from(h: u32) -> Result<Self> {
        match h {
            1 => Ok(Resolution::OneHour),
            2 => Ok(Resolution::TwoHours),
            other => Err(Error::InvalidResolution(other)),
        }
    }
}

impl From<Resolution> for u32 {
    fn from(r: Resolution) -> u32 {
        r.hours()
    }
}

impl Resolution {
    pub fn hours(self) -> u32 {
        match self {
            Resolution::OneHour => 1,
            Resolution::TwoHours => 2,
        }
    }

    pub fn slot_seconds(self) -> i64 {
        i64::from(self.hours()) * SECONDS_PER_HOUR
    }

    pub fn slots_per_day(self) -> u32 {
        24 / self.hours()
    }

    pub fn slots_per_week(self) -> u32 {
        168 / self.hours()
    }

    /// Slot-of-day values whose centre lies in daytime hours 8..=22.
    pub fn daytime_slots(self) -> Vec<u32> {
        (0..self.slots_per_day())
            .filter(|&h| is_daytime_hour(h * self.hours()))
            .collect()
    }
}

pub fn is_daytime_hour(hour: u32) -> bool {
    (DAY_START_HOUR..=NIGHT_START_HOUR).contains(&hour)
}

/// The home window runs from 22:00 to 08:00 the next morning.
pub fn is_night_hour(hour: u32) -> bool {
    !(DAY_START_HOUR..NIGHT_START_HOUR).contains(&hour)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DayType {
    Weekday,
    Weekend,
}

impl DayType {
    pub fn of_day(d: u32) -> DayType {
        if d < 5 {
            DayType::Weekday
        } else {
            DayType::Weekend
        }
    }

    pub fn index(self) -> usize {
        match self {
            DayType::Weekday => 0,
            DayType::Weekend => 1,
        }
    }
}

/// Fixed UTC offset plus an optional daylight-saving window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalClock {
    #[serde(default)]
    pub utc_offset_minutes: i32,
    #[serde(default)]
    pub dst: Option<DstRule>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DstRule {
    /// UTC instant (epoch seconds) at which daylight saving starts.
    pub start_utc: i64,
    /// UTC instant at which it ends; open-ended when absent.
    #[serde(default)]
    pub end_utc: Option<i64>,
    #[serde(default = "default_dst_shift")]
    pub shift_minutes: i32,
}

fn default_dst_shift() -> i32 {
    60
}

impl LocalClock {
    pub fn to_local(&self, utc: i64) -> i64 {
        let mut t = utc + i64::from(self.utc_offset_minutes) * 60;
        if let Some(dst) = self.dst {
            if utc >= dst.start_utc && dst.end_utc.is_none_or(|end| utc < end) {
                t += i64::from(dst.shift_minutes) * 60;
            }
        }
        t
    }
}

/// The study window: a Monday start (local midnight) and a whole number of weeks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyWindow {
    pub start: NaiveDate,
    pub weeks: u32,
}

impl StudyWindow {
    pub fn new(start: NaiveDate, weeks: u32) -> Result<Self> {
        if start.weekday() != Weekday::Mon {
            return Err(Error::Config(format!("study start {start} is not a Monday")));
        }
        if weeks == 0 {
            return Err(Error::Config("study window must span at least one week".into()));
        }
        Ok(StudyWindow { start, weeks })
    }

    /// Local seconds of the start instant.
    pub fn start_local(&self) -> i64 {
        self.start.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp()
    }

    /// Smallest window covering the given local timestamps.
    pub fn covering(local_ts: impl IntoIterator<Item = i64>) -> Option<Self> {
        let (mut lo, mut hi) = (i64::MAX, i64::MIN);
        for t in local_ts {
            lo = lo.min(t);
            hi = hi.max(t);
        }
        if lo > hi {
            return None;
        }
        let first = chrono::DateTime::from_timestamp(lo, 0)?.date_naive();
        let start = first - chrono::Duration::days(i64::from(first.weekday().num_days_from_monday()));
        let start_local = start.and_hms_opt(0, 0, 0)?.and_utc().timestamp();
        let weeks = ((hi - start_local) / (7 * 24 * SECONDS_PER_HOUR) + 1) as u32;
        Some(StudyWindow { start, weeks })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeIndex {
    /// Global slot index from the study start.
    pub q: u32,
    /// Slot of week.
    pub k: u32,
    /// Slot of day.
    pub h: u32,
    /// Day of week, Monday = 0.
    pub d: u32,
    pub w: u32,
}

impl TimeIndex {
    pub fn from_q(q: u32, r: Resolution) -> TimeIndex {
        let spw = r.slots_per_week();
        let spd = r.slots_per_day();
        let k = q % spw;
        TimeIndex {
            q,
            k,
            h: k % spd,
            d: k / spd,
            w: q / spw,
        }
    }

    pub fn hour(&self, r: Resolution) -> u32 {
        self.h * r.hours()
    }

    pub fn day_type(&self) -> DayType {
        DayType::of_day(self.d)
    }
}

/// Map a local timestamp to its nearest slot; midpoints round down.
pub fn time_index(local_ts: i64, r: Resolution, study_start_local: i64) -> Result<TimeIndex> {
    let t = local_ts - study_start_local;
    if t < 0 {
        return Err(Error::BeforeStudyStart {
            ts: local_ts,
            start: study_start_local,
        });
    }
    let len = r.slot_seconds();
    let q = t / len + i64::from(t % len > len / 2);
    let q = u32::try_from(q).map_err(|_| Error::data("time_index", "timestamp too far past study start"))?;
    Ok(TimeIndex::from_q(q, r))
}

/// Local-time interval `(lo, hi]` mapped to slot `q` (for `q = 0` the interval is closed at 0).
pub fn slot_interval(q: u32, r: Resolution, study_start_local: i64) -> (i64, i64) {
    let len = r.slot_seconds();
    let center = study_start_local + i64::from(q) * len;
    (center - len / 2, center + len / 2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Observed,
    StayInterp,
    HomeInterp,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Observed => "observed",
            Provenance::StayInterp => "stay_interp",
            Provenance::HomeInterp => "home_interp",
        }
    }

    pub fn parse(s: &str) -> Option<Provenance> {
        match s {
            "observed" => Some(Provenance::Observed),
            "stay_interp" => Some(Provenance::StayInterp),
            "home_interp" => Some(Provenance::HomeInterp),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub cell: GridCell,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignedTimeline {
    pub user_id: String,
    pub resolution: Resolution,
    pub window: StudyWindow,
    pub slots: Vec<Option<Slot>>,
}

impl AssignedTimeline {
    pub fn empty(user_id: impl Into<String>, resolution: Resolution, window: StudyWindow) -> Self {
        let n = window.weeks as usize * resolution.slots_per_week() as usize;
        AssignedTimeline {
            user_id: user_id.into(),
            resolution,
            window,
            slots: vec![None; n],
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn cell(&self, q: usize) -> Option<GridCell> {
        self.slots.get(q).copied().flatten().map(|s| s.cell)
    }

    pub fn index(&self, q: usize) -> TimeIndex {
        TimeIndex::from_q(q as u32, self.resolution)
    }

    pub fn assigned_count(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn count_by(&self, provenance: Provenance) -> usize {
        self.slots
            .iter()
            .filter(|s| s.is_some_and(|s| s.provenance == provenance))
            .count()
    }

    pub fn is_daytime(&self, q: usize) -> bool {
        is_daytime_hour(self.index(q).hour(self.resolution))
    }

    /// Fraction of daytime slots with no assigned location.
    pub fn daytime_empty_fraction(&self) -> f64 {
        let (mut total, mut empty) = (0usize, 0usize);
        for q in 0..self.len() {
            if self.is_daytime(q) {
                total += 1;
                empty += usize::from(self.slots[q].is_none());
            }
        }
        if total == 0 {
            0.0
        } else {
            empty as f64 / total as f64
        }
    }

    pub fn distinct_cells(&self) -> usize {
        let mut cells: Vec<GridCell> = self.slots.iter().flatten().map(|s| s.cell).collect();
        cells.sort_unstable();
        cells.dedup();
        cells.len()
    }

    /// Copy with the given slots cleared.
    pub fn masked(&self, hidden: impl IntoIterator<Item = usize>) -> AssignedTimeline {
        let mut out = self.clone();
        for q in hidden {
            if let Some(s) = out.slots.get_mut(q) {
                *s = None;
            }
        }
        out
    }
}

/// One event placed on the grid and the slot axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlottedEvent {
    pub q: u32,
    pub cell: GridCell,
    pub local_ts: i64,
}

/// Place events on the grid and the slot axis; events outside the box or
/// the study window are dropped. Output keeps timestamp order.
pub fn slot_events(
    events: &[RawEvent],
    spec: &GridSpec,
    clock: &LocalClock,
    window: &StudyWindow,
    r: Resolution,
) -> Vec<SlottedEvent> {
    let start = window.start_local();
    let n_slots = window.weeks * r.slots_per_week();
    let mut out: Vec<SlottedEvent> = events
        .iter()
        .filter_map(|e| {
            let cell = spec.assign(e.point).ok()?;
            let local_ts = clock.to_local(e.ts);
            let idx = time_index(local_ts, r, start).ok()?;
            (idx.q < n_slots).then_some(SlottedEvent {
                q: idx.q,
                cell,
                local_ts,
            })
        })
        .collect();
    out.sort_by_key(|e| e.local_ts);
    out
}

/// Observed timeline: each slot holds the cell of its event nearest the slot
/// centre, earliest event on ties.
pub fn build_assigned_timeline(
    user_id: &str,
    events: &[SlottedEvent],
    r: Resolution,
    window: &StudyWindow,
) -> AssignedTimeline {
    let mut tl = AssignedTimeline::empty(user_id, r, *window);
    let start = window.start_local();
    let len = r.slot_seconds();
    let mut best: Vec<Option<(i64, i64)>> = vec![None; tl.len()];
    for e in events {
        let q = e.q as usize;
        let center = start + i64::from(e.q) * len;
        let key = ((e.local_ts - center).abs(), e.local_ts);
        if best[q].is_none_or(|b| key < b) {
            best[q] = Some(key);
            tl.slots[q] = Some(Slot {
                cell: e.cell,
                provenance: Provenance::Observed,
            });
        }
    }
    tl
}

/// Fill empty slots strictly between consecutive same-cell events that are
/// at most six hours apart.
pub fn interpolate_stay(tl: &AssignedTimeline, events: &[SlottedEvent]) -> AssignedTimeline {
    let mut out = tl.clone();
    for pair in events.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if a.cell != b.cell || b.local_ts - a.local_ts > MAX_STAY_SECONDS {
            continue;
        }
        for q in (a.q + 1)..b.q {
            let slot = &mut out.slots[q as usize];
            if slot.is_none() {
                *slot = Some(Slot {
                    cell: a.cell,
                    provenance: Provenance::StayInterp,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HomeMap {
    /// Indexed by the day `d` whose night (22:00 on `d` to 08:00 on `d+1`) it covers.
    pub by_day: [Option<GridCell>; 7],
    pub fallback: Option<GridCell>,
}

impl HomeMap {
    pub fn for_day(&self, d: u32) -> Option<GridCell> {
        self.by_day[d as usize % 7].or(self.fallback)
    }
}

/// Day that owns the night window containing slot `q`, if `q` is a night slot.
pub fn night_owner(idx: &TimeIndex, r: Resolution) -> Option<u32> {
    let hour = idx.hour(r);
    if !is_night_hour(hour) {
        None
    } else if hour >= NIGHT_START_HOUR {
        Some(idx.d)
    } else {
        Some((idx.d + 6) % 7)
    }
}

/// Most frequent cell; ties go to the smaller cell index.
pub fn modal_cell(counts: &BTreeMap<GridCell, u32>) -> Option<GridCell> {
    counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(c, _)| *c)
}

/// Modal night cell per day of week, plus a day-independent fallback.
pub fn infer_home(tl: &AssignedTimeline) -> HomeMap {
    let mut per_day: [BTreeMap<GridCell, u32>; 7] = Default::default();
    let mut all = BTreeMap::new();
    for (q, slot) in tl.slots.iter().enumerate() {
        let Some(slot) = slot else { continue };
        if slot.provenance == Provenance::HomeInterp {
            continue;
        }
        if let Some(d) = night_owner(&tl.index(q), tl.resolution) {
            *per_day[d as usize].entry(slot.cell).or_insert(0) += 1;
            *all.entry(slot.cell).or_insert(0) += 1;
        }
    }
    HomeMap {
        by_day: std::array::from_fn(|d| modal_cell(&per_day[d])),
        fallback: modal_cell(&all),
    }
}

/// Fill every empty night slot with the home for its night.
pub fn fill_home_nights(tl: &AssignedTimeline, homes: &HomeMap) -> AssignedTimeline {
    let mut out = tl.clone();
    for q in 0..out.len() {
        if out.slots[q].is_some() {
            continue;
        }
        let idx = out.index(q);
        if let Some(cell) = night_owner(&idx, out.resolution).and_then(|d| homes.for_day(d)) {
            out.slots[q] = Some(Slot {
                cell,
                provenance: Provenance::HomeInterp,
            });
        }
    }
    out
}

/// A user is included when every daytime slot-of-day has at least one
/// assigned location somewhere in the study.
pub fn inclusion_check(tl: &AssignedTimeline) -> bool {
    let r = tl.resolution;
    let mut seen = vec![false; r.slots_per_day() as usize];
    for (q, slot) in tl.slots.iter().enumerate() {
        if slot.is_some() {
            seen[tl.index(q).h as usize] = true;
        }
    }
    r.daytime_slots().into_iter().all(|h| seen[h as usize])
}

/// Full per-user preprocessing: slotting, stay interpolation, then home fill.
pub fn preprocess_user(
    user_id: &str,
    events: &[RawEvent],
    spec: &GridSpec,
    clock: &LocalClock,
    window: &StudyWindow,
    r: Resolution,
) -> AssignedTimeline {
    let slotted = slot_events(events, spec, clock, window, r);
    let observed = build_assigned_timeline(user_id, &slotted, r, window);
    let stayed = interpolate_stay(&observed, &slotted);
    let homes = infer_home(&stayed);
    fill_home_nights(&stayed, &homes)
}
