//! Synthetic cohorts: groups of users sharing a weekly schedule, perturbed
//! by group outings and per-slot noise, observed sparsely.

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{build_grid_spec, BBox, GeoPoint, GridCell, GridSpec};
use crate::ingest::RawEvent;
use crate::par::{user_seed, Exec};
use crate::timeline::{is_daytime_hour, Resolution, StudyWindow, TimeIndex};

pub const NYC_CENTER: GeoPoint = GeoPoint { lat: 40.7128, lon: -74.0060 };
/// Places are drawn from cells whose centres lie within this many miles of
/// the box centre on both axes, so one-hour hops never look like spoofing.
pub const PLACE_REACH_MILES: f64 = 10.0;
const SCHEDULE_SALT: u64 = 11;
const USER_SALT: u64 = 12;
const OUTING_HOURS: [u32; 3] = [2, 3, 4];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortConfig {
    pub n_users: usize,
    pub n_groups: usize,
    pub center: GeoPoint,
    pub side_miles: f64,
    /// Spacing of the place lattice; ground-truth cells live on this grid.
    pub cell_size: f64,
    pub resolution: Resolution,
    pub weeks: u32,
    pub start: NaiveDate,
    /// Per-slot probability of being somewhere random instead.
    pub epsilon: f64,
    /// Part of `epsilon` spent on outings the whole group takes together.
    pub group_share: f64,
    /// Per-slot probability of an observation.
    pub keep_rate: f64,
    /// Guarantee one observation for every daytime hour.
    pub force_daytime: bool,
    /// Events scatter uniformly within this radius of their place.
    pub place_radius_miles: f64,
    pub seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            n_users: 100,
            n_groups: 10,
            center: NYC_CENTER,
            side_miles: 29.0,
            cell_size: 1.0,
            resolution: Resolution::OneHour,
            weeks: 26,
            start: NaiveDate::from_ymd_opt(2014, 1, 6).expect("valid date"),
            epsilon: 0.15,
            group_share: 0.5,
            keep_rate: 0.15,
            force_daytime: true,
            place_radius_miles: 0.25,
            seed: 0,
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_users == 0 || self.n_groups == 0 || self.n_groups > self.n_users {
            return bad("need 1 <= n_groups <= n_users");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.group_share) {
            return bad("group_share must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.keep_rate) {
            return bad("keep_rate must lie in [0, 1]");
        }
        if self.weeks == 0 {
            return bad("weeks must be positive");
        }
        if !(self.place_radius_miles >= 0.0 && self.place_radius_miles < self.cell_size / 2.0) {
            return bad("place_radius_miles must be below half a cell");
        }
        Ok(())
    }

    pub fn bbox(&self) -> BBox {
        BBox::square_miles(self.center, self.side_miles)
    }

    pub fn grid(&self) -> Result<GridSpec> {
        build_grid_spec(self.bbox(), self.cell_size)
    }

    pub fn window(&self) -> Result<StudyWindow> {
        StudyWindow::new(self.start, self.weeks)
    }
}

/// Shared weekly plan of one group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSchedule {
    pub home: GridCell,
    pub work: GridCell,
    pub evening: GridCell,
    /// Weekend leisure blocks as `(first hour, cell)`, ascending, covering 10:00-19:59.
    pub leisure: Vec<(u32, GridCell)>,
    /// At most one per day, ascending by day.
    pub outings: Vec<Outing>,
}

/// A block of hours the group spends at one place on one day of the study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outing {
    /// Days since the study start.
    pub day: u32,
    pub start_hour: u32,
    pub hours: u32,
    pub cell: GridCell,
}

impl GroupSchedule {
    /// Cell at `hour` on day `d` (0 = Monday).
    pub fn at(&self, d: u32, hour: u32) -> GridCell {
        if d < 5 {
            match hour {
                0..=7 | 22..=23 => self.home,
                8..=17 => self.work,
                _ => self.evening,
            }
        } else {
            match hour {
                10..=19 => self
                    .leisure
                    .iter()
                    .rev()
                    .find(|(start, _)| hour >= *start)
                    .map_or(self.home, |e| e.1),
                _ => self.home,
            }
        }
    }

    /// Cell at `hour` of study day `day`, outings included.
    pub fn on(&self, day: u32, hour: u32) -> GridCell {
        if let Ok(i) = self.outings.binary_search_by_key(&day, |o| o.day) {
            let o = &self.outings[i];
            if hour >= o.start_hour && hour < o.start_hour + o.hours {
                return o.cell;
            }
        }
        self.at(day % 7, hour)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthTimeline {
    pub user_id: String,
    pub group: usize,
    pub home: GridCell,
    /// Cell per slot, no gaps.
    pub cells: Vec<GridCell>,
    /// Sparse observations, sorted by time.
    pub events: Vec<RawEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCohort {
    pub config: CohortConfig,
    pub spec: GridSpec,
    pub groups: Vec<GroupSchedule>,
    pub users: Vec<GroundTruthTimeline>,
}

impl SynthCohort {
    pub fn events(&self) -> Vec<RawEvent> {
        self.users.iter().flat_map(|u| u.events.iter().cloned()).collect()
    }

    pub fn window(&self) -> StudyWindow {
        self.config.window().expect("validated at generation")
    }
}

pub fn user_id(i: usize) -> String {
    format!("u{i:04}")
}

/// Lattice cells eligible as places.
pub fn place_cells(spec: &GridSpec, center: GeoPoint) -> Vec<GridCell> {
    let probe = |c: GridCell| {
        let p = spec.center(c);
        let north = (p.lat - center.lat) * crate::geo::miles_per_degree_lat();
        let east = (p.lon - center.lon) * crate::geo::miles_per_degree_lat() * center.lat.to_radians().cos();
        north.abs() <= PLACE_REACH_MILES && east.abs() <= PLACE_REACH_MILES
    };
    (0..spec.n_cells()).map(GridCell).filter(|&c| probe(c)).collect()
}

fn group_schedules(cfg: &CohortConfig, places: &[GridCell]) -> Result<Vec<GroupSchedule>> {
    if cfg.n_groups > places.len() {
        return Err(Error::Config(format!(
            "{} groups need distinct work places but only {} exist",
            cfg.n_groups,
            places.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(user_seed(cfg.seed, "schedule", SCHEDULE_SALT));
    let mut shuffled = places.to_vec();
    shuffled.shuffle(&mut rng);
    let (work, rest) = shuffled.split_at(cfg.n_groups);
    let mut others = rest.iter().cycle();
    let mut next_other = || *others.next().unwrap_or(&work[0]);
    // expected outing hours per day match the group share of ε over all 24 hours
    let mean_hours = OUTING_HOURS.iter().sum::<u32>() as f64 / OUTING_HOURS.len() as f64;
    let outing_rate = (cfg.epsilon * cfg.group_share * 24.0 / mean_hours).min(1.0);
    Ok(work
        .iter()
        .map(|&work| {
            let home = next_other();
            let evening = next_other();
            let n_leisure = rng.gen_range(1..=3usize);
            let mut starts = vec![10u32];
            let mut cuts: Vec<u32> = (11..=19).collect();
            cuts.shuffle(&mut rng);
            starts.extend(cuts.into_iter().take(n_leisure - 1));
            starts.sort_unstable();
            let leisure = starts.into_iter().map(|s| (s, next_other())).collect();
            let mut outings = Vec::new();
            for day in 0..cfg.weeks * 7 {
                let coin: f64 = rng.gen();
                let hours = OUTING_HOURS[rng.gen_range(0..OUTING_HOURS.len())];
                let start_hour = rng.gen_range(9..=22 - hours);
                let cell = places[rng.gen_range(0..places.len())];
                if coin < outing_rate {
                    outings.push(Outing {
                        day,
                        start_hour,
                        hours,
                        cell,
                    });
                }
            }
            GroupSchedule {
                home,
                work,
                evening,
                leisure,
                outings,
            }
        })
        .collect())
}

fn jitter(rng: &mut ChaCha8Rng, spec: &GridSpec, place: GridCell, radius: f64) -> GeoPoint {
    let c = spec.center(place);
    if radius == 0.0 {
        return c;
    }
    let r = radius * rng.gen::<f64>().sqrt();
    let theta = rng.gen::<f64>() * std::f64::consts::TAU;
    spec.offset(c, r * theta.sin(), r * theta.cos())
}

fn generate_user(
    cfg: &CohortConfig,
    spec: &GridSpec,
    window: &StudyWindow,
    places: &[GridCell],
    group: usize,
    schedule: &GroupSchedule,
    index: usize,
) -> GroundTruthTimeline {
    let id = user_id(index);
    let mut rng = ChaCha8Rng::seed_from_u64(user_seed(cfg.seed, &id, USER_SALT));
    let r = cfg.resolution;
    let n = (window.weeks * r.slots_per_week()) as usize;
    let personal = cfg.epsilon * (1.0 - cfg.group_share);
    let mut cells = Vec::with_capacity(n);
    for q in 0..n {
        let idx = TimeIndex::from_q(q as u32, r);
        let planned = schedule.on(idx.w * 7 + idx.d, idx.hour(r));
        // draw the noise coin even when ε = 0 so streams line up across ε
        let coin: f64 = rng.gen();
        let pick = rng.gen_range(0..places.len());
        cells.push(if coin < personal { places[pick] } else { planned });
    }
    let mut observed = vec![false; n];
    for o in observed.iter_mut() {
        *o = rng.gen::<f64>() < cfg.keep_rate;
    }
    if cfg.force_daytime {
        let per_day = r.slots_per_day() as usize;
        let days = n / per_day;
        for h in 0..per_day {
            if !is_daytime_hour(h as u32 * r.hours()) {
                continue;
            }
            let covered = (0..days).any(|day| observed[day * per_day + h]);
            if !covered {
                let day = rng.gen_range(0..days);
                observed[day * per_day + h] = true;
            }
        }
    }
    let start = window.start_local();
    let events = (0..n)
        .filter(|&q| observed[q])
        .map(|q| RawEvent {
            user_id: id.clone(),
            ts: start + q as i64 * r.slot_seconds(),
            point: jitter(&mut rng, spec, cells[q], cfg.place_radius_miles),
        })
        .collect();
    GroundTruthTimeline {
        user_id: id,
        group,
        home: schedule.home,
        cells,
        events,
    }
}

/// Generate a cohort; users are assigned to groups round-robin.
pub fn generate_cohort(cfg: &CohortConfig, exec: Exec) -> Result<SynthCohort> {
    cfg.validate()?;
    let spec = cfg.grid()?;
    let window = cfg.window()?;
    let places = place_cells(&spec, cfg.center);
    let groups = group_schedules(cfg, &places)?;
    let users = exec.map_range(cfg.n_users, |i| {
        let g = i % cfg.n_groups;
        generate_user(cfg, &spec, &window, &places, g, &groups[g], i)
    });
    Ok(SynthCohort {
        config: *cfg,
        spec,
        groups,
        users,
    })
}

/// Re-observe a ground-truth timeline: one event at each kept slot time.
pub fn sparsify(gt: &GroundTruthTimeline, cfg: &CohortConfig, spec: &GridSpec, keep_rate: f64, seed: u64) -> Vec<RawEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(user_seed(seed, &gt.user_id, USER_SALT + 1));
    let r = cfg.resolution;
    let start = cfg.window().map(|w| w.start_local()).unwrap_or(0);
    let mut keep: Vec<bool> = (0..gt.cells.len()).map(|_| rng.gen::<f64>() < keep_rate).collect();
    if cfg.force_daytime {
        let per_day = r.slots_per_day() as usize;
        let days = gt.cells.len() / per_day;
        for h in (0..per_day).filter(|&h| is_daytime_hour(h as u32 * r.hours())) {
            if !(0..days).any(|d| keep[d * per_day + h]) {
                keep[rng.gen_range(0..days) * per_day + h] = true;
            }
        }
    }
    (0..gt.cells.len())
        .filter(|&q| keep[q])
        .map(|q| RawEvent {
            user_id: gt.user_id.clone(),
            ts: start + q as i64 * r.slot_seconds(),
            point: jitter(&mut rng, spec, gt.cells[q], cfg.place_radius_miles),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeline::{build_assigned_timeline, slot_events, LocalClock};

    fn small(n_users: usize, n_groups: usize) -> CohortConfig {
        CohortConfig {
            n_users,
            n_groups,
            weeks: 4,
            ..CohortConfig::default()
        }
    }

    #[test]
    fn noiseless_group_members_identical() {
        let cfg = CohortConfig { epsilon: 0.0, ..small(6, 2) };
        let c = generate_cohort(&cfg, Exec::Sequential).unwrap();
        assert_eq!(c.users[0].cells, c.users[2].cells);
        assert_eq!(c.users[1].cells, c.users[5].cells);
        assert_ne!(c.users[0].cells, c.users[1].cells);
        // nights at home
        for (q, cell) in c.users[0].cells.iter().enumerate() {
            if q % 24 < 7 {
                assert_eq!(*cell, c.users[0].home);
            }
        }
    }

    #[test]
    fn outings_are_shared_by_the_group() {
        let cfg = CohortConfig { group_share: 1.0, ..small(6, 2) };
        let c = generate_cohort(&cfg, Exec::Sequential).unwrap();
        assert_eq!(c.users[0].cells, c.users[4].cells);
        let g = &c.groups[0];
        assert!(!g.outings.is_empty());
        let mut daytime = 0;
        let mut off_plan = 0;
        for (q, cell) in c.users[0].cells.iter().enumerate() {
            let (day, hour) = (q as u32 / 24, q as u32 % 24);
            assert_eq!(*cell, g.on(day, hour));
            if is_daytime_hour(hour) {
                daytime += 1;
                off_plan += usize::from(*cell != g.at(day % 7, hour));
            }
            if hour < 9 {
                assert_eq!(*cell, g.at(day % 7, hour));
            }
        }
        // ε·24 outing hours a day land in the 15 daytime hours
        let share = off_plan as f64 / daytime as f64;
        assert!(share > 0.1 && share < 0.35, "{share}");
    }

    #[test]
    fn one_group_per_user_has_distinct_work() {
        let cfg = small(30, 30);
        let c = generate_cohort(&cfg, Exec::Sequential).unwrap();
        let mut works: Vec<_> = c.groups.iter().map(|g| g.work).collect();
        works.sort();
        works.dedup();
        assert_eq!(works.len(), 30);
    }

    #[test]
    fn reproducible_across_runs_and_exec() {
        let cfg = small(8, 3);
        let a = serde_json::to_string(&generate_cohort(&cfg, Exec::Sequential).unwrap()).unwrap();
        let b = serde_json::to_string(&generate_cohort(&cfg, Exec::Parallel).unwrap()).unwrap();
        assert_eq!(a, b);
        let other = generate_cohort(&CohortConfig { seed: 1, ..cfg }, Exec::Sequential).unwrap();
        assert_ne!(a, serde_json::to_string(&other).unwrap());
    }

    #[test]
    fn events_lie_on_ground_truth() {
        let cfg = small(5, 2);
        let c = generate_cohort(&cfg, Exec::Sequential).unwrap();
        let w = c.window();
        for u in &c.users {
            for e in &u.events {
                let q = ((e.ts - w.start_local()) / 3600) as usize;
                assert_eq!(c.spec.assign(e.point).unwrap(), u.cells[q]);
            }
        }
    }

    #[test]
    fn keep_rate_one_observes_everything() {
        let cfg = CohortConfig { keep_rate: 1.0, ..small(2, 1) };
        let c = generate_cohort(&cfg, Exec::Sequential).unwrap();
        assert_eq!(c.users[0].events.len(), c.users[0].cells.len());
        let again = sparsify(&c.users[0], &cfg, &c.spec, 1.0, 9);
        assert_eq!(again.len(), c.users[0].cells.len());
    }

    #[test]
    fn keep_rate_zero_forces_one_per_daytime_hour() {
        let cfg = CohortConfig { keep_rate: 0.0, ..small(2, 1) };
        let c = generate_cohort(&cfg, Exec::Sequential).unwrap();
        let daytime_hours = (0..24).filter(|&h| is_daytime_hour(h)).count();
        for u in &c.users {
            assert_eq!(u.events.len(), daytime_hours);
            let mut hours: Vec<i64> = u.events.iter().map(|e| (e.ts / 3600).rem_euclid(24)).collect();
            hours.sort();
            hours.dedup();
            assert_eq!(hours.len(), daytime_hours);
        }
        let unforced = CohortConfig { force_daytime: false, ..cfg };
        assert!(generate_cohort(&unforced, Exec::Sequential).unwrap().events().is_empty());
    }

    #[test]
    fn daytime_emptiness_matches_binomial_expectation() {
        let cfg = CohortConfig { n_users: 20, n_groups: 4, ..CohortConfig::default() };
        let c = generate_cohort(&cfg, Exec::Parallel).unwrap();
        let w = c.window();
        let clock = LocalClock::default();
        let mut empty = 0.0;
        for u in &c.users {
            let slotted = slot_events(&u.events, &c.spec, &clock, &w, cfg.resolution);
            let tl = build_assigned_timeline(&u.user_id, &slotted, cfg.resolution, &w);
            empty += tl.daytime_empty_fraction();
        }
        let mean = empty / c.users.len() as f64;
        assert!((mean - 0.85).abs() < 0.01, "{mean}");
    }

    #[test]
    fn group_places_are_distinct() {
        let c = generate_cohort(&small(40, 40), Exec::Sequential).unwrap();
        for g in &c.groups {
            assert_eq!(g.leisure[0].0, 10);
            let mut cells: Vec<_> = g.leisure.iter().map(|e| e.1).collect();
            cells.extend([g.home, g.work, g.evening]);
            let n = cells.len();
            cells.sort();
            cells.dedup();
            assert_eq!(cells.len(), n, "places within a group are distinct");
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(CohortConfig { n_groups: 0, ..small(2, 1) }.validate().is_err());
        assert!(CohortConfig { epsilon: 1.5, ..small(2, 1) }.validate().is_err());
        assert!(CohortConfig { place_radius_miles: 0.6, ..small(2, 1) }.validate().is_err());
        assert!(generate_cohort(&small(500, 500), Exec::Sequential).is_err());
    }
}
