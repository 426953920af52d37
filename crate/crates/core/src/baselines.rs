//! Comparison models: home/work switching, order-0 and order-1 Markov chains
//! with stratum fallback, a distance-plus-community POI recommender, and a
//! NextPlace-style delay-embedding predictor.
//!
//! All models consume the same training timelines as ILC and emit ranked
//! candidates for empty slots.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::geo::{GridCell, GridSpec};
use crate::probability::{community_prob, BehaviorTables, Neighbor, ProbList, Strata};
use crate::timeline::{is_night_hour, modal_cell, AssignedTimeline, Resolution, TimeIndex};

/// Ranked candidates for one slot; empty means no prediction.
pub type Ranked = Vec<(GridCell, f64)>;

fn key_at(s: Strata, q: usize, r: Resolution) -> u32 {
    s.key(&TimeIndex::from_q(q as u32, r))
}

fn counts_to_ranked(counts: &[(GridCell, u32)], k: usize) -> Ranked {
    ProbList::from_counts(counts).top(k)
}

// ---------------------------------------------------------------------------
// Home-Work

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct HomeWorkProfile {
    pub home: Option<GridCell>,
    pub work: Option<GridCell>,
}

impl HomeWorkProfile {
    pub fn fit(training: &AssignedTimeline) -> Self {
        let mut night = BTreeMap::new();
        let mut day = BTreeMap::new();
        for (q, slot) in training.slots.iter().enumerate() {
            let Some(slot) = slot else { continue };
            let hour = training.index(q).hour(training.resolution);
            let bucket = if is_night_hour(hour) { &mut night } else { &mut day };
            *bucket.entry(slot.cell).or_insert(0u32) += 1;
        }
        HomeWorkProfile {
            home: modal_cell(&night),
            work: modal_cell(&day),
        }
    }
}

pub fn home_work_predict(profile: &HomeWorkProfile, q: usize, r: Resolution) -> Option<GridCell> {
    let hour = TimeIndex::from_q(q as u32, r).hour(r);
    if is_night_hour(hour) {
        profile.home.or(profile.work)
    } else {
        profile.work.or(profile.home)
    }
}

/// Home-Work ranking: the predicted cell first, then the other side.
pub fn home_work_ranked(profile: &HomeWorkProfile, q: usize, r: Resolution) -> Ranked {
    let Some(first) = home_work_predict(profile, q, r) else {
        return Vec::new();
    };
    let mut out = vec![(first, 1.0)];
    for other in [profile.home, profile.work].into_iter().flatten() {
        if other != first && out.len() < 2 {
            out.push((other, 0.0));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Markov order 0 and order 1

/// Most frequent cell at the slot's week key, falling back to the day-type
/// key and then the hour key.
pub fn markov0_ranked(tables: &BehaviorTables, q: usize, k: usize) -> Ranked {
    for s in Strata::ALL {
        let counts = tables.indep_counts(s, key_at(s, q, tables.resolution));
        if !counts.is_empty() {
            return counts_to_ranked(counts, k);
        }
    }
    Vec::new()
}

pub fn markov0_predict(tables: &BehaviorTables, q: usize) -> Option<GridCell> {
    markov0_ranked(tables, q, 1).first().map(|e| e.0)
}

/// Order-1 chain over the whole timeline. Empty slots take the most frequent
/// successor of the previous slot's cell (given or predicted) under the first
/// stratum with data; a slot without one stays empty, and so does the chain
/// until the next given slot.
pub fn markov1_ranked(tables: &BehaviorTables, training: &AssignedTimeline, k: usize) -> Vec<Ranked> {
    let r = tables.resolution;
    let mut current: Vec<Option<GridCell>> = training.slots.iter().map(|s| s.map(|s| s.cell)).collect();
    let mut out = vec![Vec::new(); current.len()];
    for q in 0..current.len() {
        if current[q].is_some() {
            continue;
        }
        let Some(from) = q.checked_sub(1).and_then(|p| current[p]) else {
            continue;
        };
        for s in Strata::ALL {
            let counts = tables.next_counts(s, key_at(s, q - 1, r), from);
            if !counts.is_empty() {
                let ranked = counts_to_ranked(counts, k);
                current[q] = Some(ranked[0].0);
                out[q] = ranked;
                break;
            }
        }
    }
    out
}

pub fn markov1_predict(tables: &BehaviorTables, training: &AssignedTimeline) -> Vec<Option<GridCell>> {
    markov1_ranked(tables, training, 1)
        .into_iter()
        .map(|r| r.first().map(|e| e.0))
        .collect()
}

// ---------------------------------------------------------------------------
// Collaborative POI recommendation

/// Distance model `w = a · d^b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub a: f64,
    pub b: f64,
}

impl PowerLaw {
    pub const DEGENERATE: PowerLaw = PowerLaw { a: 1.0, b: -1.0 };

    pub fn weight(&self, d: f64) -> f64 {
        self.a * d.powf(self.b)
    }
}

pub const POWER_LAW_BINS: usize = 12;

/// Least-squares fit of `log w = log a + b log d` over logarithmically binned
/// distances, `w` being the empirical density per bin. Non-positive distances
/// are ignored; with fewer than two occupied bins the fit is degenerate.
pub fn fit_power_law(distances: &[f64]) -> PowerLaw {
    let ds: Vec<f64> = distances.iter().copied().filter(|d| d.is_finite() && *d > 0.0).collect();
    if ds.is_empty() {
        return PowerLaw::DEGENERATE;
    }
    let lo = ds.iter().copied().fold(f64::INFINITY, f64::min).ln();
    let hi = ds.iter().copied().fold(f64::NEG_INFINITY, f64::max).ln();
    if hi - lo < 1e-12 {
        return PowerLaw::DEGENERATE;
    }
    let width = (hi - lo) / POWER_LAW_BINS as f64;
    let mut counts = [0usize; POWER_LAW_BINS];
    for d in &ds {
        let i = (((d.ln() - lo) / width) as usize).min(POWER_LAW_BINS - 1);
        counts[i] += 1;
    }
    let n = ds.len() as f64;
    let points: Vec<(f64, f64)> = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(i, &c)| {
            let left = (lo + i as f64 * width).exp();
            let right = (lo + (i + 1) as f64 * width).exp();
            let center = (left * right).sqrt();
            let density = c as f64 / (n * (right - left));
            (center.ln(), density.ln())
        })
        .collect();
    if points.len() < 2 {
        return PowerLaw::DEGENERATE;
    }
    let m = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / m;
    let my = points.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return PowerLaw::DEGENERATE;
    }
    let b = sxy / sxx;
    PowerLaw {
        a: (my - b * mx).exp(),
        b,
    }
}

/// Distances between consecutive assigned slots that change cell.
pub fn transition_distances(training: &AssignedTimeline, spec: &GridSpec) -> Vec<f64> {
    let mut out = Vec::new();
    let mut last: Option<GridCell> = None;
    for cell in training.slots.iter().flatten().map(|s| s.cell) {
        if let Some(prev) = last {
            if prev != cell {
                out.push(spec.center_distance(prev, cell));
            }
        }
        last = Some(cell);
    }
    out
}

pub fn poi_fit(training: &[AssignedTimeline], spec: &GridSpec) -> PowerLaw {
    let all: Vec<f64> = training.iter().flat_map(|t| transition_distances(t, spec)).collect();
    fit_power_law(&all)
}

pub const DEFAULT_POI_GAMMA: f64 = 0.5;

/// Per-user state for the POI model.
#[derive(Debug, Clone)]
pub struct PoiUser {
    cells: Vec<Option<GridCell>>,
    /// Candidate cells with visit counts over the user and their neighbours, per day type.
    candidates: [Vec<(GridCell, u32)>; 2],
    resolution: Resolution,
}

impl PoiUser {
    pub fn new(user: usize, cohort_cells: &[Vec<u32>], neighbors: &[Vec<Neighbor>; 2], r: Resolution) -> Self {
        let own = &cohort_cells[user];
        let candidates = [0, 1].map(|dt| {
            let mut counts: HashMap<u32, u32> = HashMap::new();
            let members = std::iter::once(user).chain(neighbors[dt].iter().map(|n| n.user));
            for u in members {
                for &c in &cohort_cells[u] {
                    if c != u32::MAX {
                        *counts.entry(c).or_insert(0) += 1;
                    }
                }
            }
            let mut v: Vec<(GridCell, u32)> = counts.into_iter().map(|(c, n)| (GridCell(c), n)).collect();
            v.sort_by_key(|e| e.0);
            v
        });
        PoiUser {
            cells: own.iter().map(|&c| (c != u32::MAX).then_some(GridCell(c))).collect(),
            candidates,
            resolution: r,
        }
    }

    /// Cell of the nearest assigned slot other than `q`; the earlier one on ties.
    pub fn anchor(&self, q: usize) -> Option<GridCell> {
        let n = self.cells.len();
        for dist in 1..n {
            if let Some(c) = q.checked_sub(dist).and_then(|p| self.cells[p]) {
                return Some(c);
            }
            if let Some(c) = self.cells.get(q + dist).copied().flatten() {
                return Some(c);
            }
            if dist > q && q + dist >= n {
                break;
            }
        }
        None
    }

    /// Geographic list: visit frequency times the power-law distance weight
    /// from the anchor, normalised. Distances are floored at half a cell.
    pub fn geographic(&self, q: usize, anchor: GridCell, law: &PowerLaw, spec: &GridSpec) -> ProbList {
        let dt = TimeIndex::from_q(q as u32, self.resolution).day_type().index();
        let floor = spec.cell_size / 2.0;
        ProbList::from_pairs(self.candidates[dt].iter().map(|&(c, n)| {
            let d = spec.center_distance(anchor, c).max(floor);
            (c, f64::from(n) * law.weight(d))
        }))
        .normalized()
    }
}

/// `γ·geo + (1-γ)·community`; either side alone when the other is missing.
#[allow(clippy::too_many_arguments)]
pub fn poi_ranked(
    user: &PoiUser,
    q: usize,
    law: &PowerLaw,
    spec: &GridSpec,
    neighbors: &[Neighbor],
    cohort_cells: &[Vec<u32>],
    gamma: f64,
    k: usize,
) -> Ranked {
    let community = community_prob(q, neighbors, cohort_cells);
    let geo = user
        .anchor(q)
        .map_or_else(ProbList::new, |a| user.geographic(q, a, law, spec));
    let score = match (geo.is_empty(), community.is_empty()) {
        (true, true) => return Vec::new(),
        (false, true) => geo,
        (true, false) => community,
        (false, false) => ProbList::weighted_sum(&[(gamma, &geo), (1.0 - gamma, &community)]),
    };
    score.top(k)
}

// ---------------------------------------------------------------------------
// NextPlace

pub const EMBEDDING_DIMENSION: usize = 3;
pub const NEXTPLACE_NEIGHBORS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Visit {
    pub start: u32,
    /// Run length in slots, at least 1.
    pub duration: u32,
}

/// Visits per cell, each list ordered by start slot.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitHistory {
    pub visits: BTreeMap<GridCell, Vec<Visit>>,
    pub resolution: Option<Resolution>,
}

/// Maximal runs of consecutive same-cell assigned slots become visits.
pub fn nextplace_fit(training: &AssignedTimeline) -> VisitHistory {
    let mut visits: BTreeMap<GridCell, Vec<Visit>> = BTreeMap::new();
    let mut q = 0;
    let n = training.len();
    while q < n {
        let Some(cell) = training.cell(q) else {
            q += 1;
            continue;
        };
        let start = q;
        while q < n && training.cell(q) == Some(cell) {
            q += 1;
        }
        visits.entry(cell).or_default().push(Visit {
            start: start as u32,
            duration: (q - start) as u32,
        });
    }
    VisitHistory {
        visits,
        resolution: Some(training.resolution),
    }
}

/// Delay embedding of visit start times, expressed as slot of week, with
/// dimension 3 and a lag of one visit. Vector `i` ends at visit `i`.
pub fn delay_embed(visits: &[Visit], r: Resolution) -> Vec<[f64; EMBEDDING_DIMENSION]> {
    let spw = r.slots_per_week();
    let phase: Vec<f64> = visits.iter().map(|v| f64::from(v.start % spw)).collect();
    if phase.len() < EMBEDDING_DIMENSION {
        return Vec::new();
    }
    (EMBEDDING_DIMENSION - 1..phase.len())
        .map(|i| std::array::from_fn(|j| phase[i + 1 + j - EMBEDDING_DIMENSION]))
        .collect()
}

fn circular_distance(a: &[f64; EMBEDDING_DIMENSION], b: &[f64; EMBEDDING_DIMENSION], period: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (x - y).abs() % period;
            d.min(period - d).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

/// One-step-ahead predictions for one cell: for each visit with enough
/// history, the next visit's start and duration are averaged over the
/// successors of the nearest earlier embedding vectors. Returns `(start, duration)`.
pub fn nextplace_cell_predictions(visits: &[Visit], r: Resolution) -> Vec<(u32, u32)> {
    let emb = delay_embed(visits, r);
    let period = f64::from(r.slots_per_week());
    let offset = EMBEDDING_DIMENSION - 1;
    let mut out = Vec::new();
    // emb[e] ends at visit e + offset; it has a successor when e + offset + 1 < visits.len()
    for cur in 1..emb.len() {
        let mut cands: Vec<(f64, usize)> = (0..cur).map(|e| (circular_distance(&emb[cur], &emb[e], period), e)).collect();
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
        cands.truncate(NEXTPLACE_NEIGHBORS);
        let m = cands.len() as f64;
        let (mut gap, mut dur) = (0.0, 0.0);
        for &(_, e) in &cands {
            let v = offset + e;
            gap += f64::from(visits[v + 1].start - visits[v].start);
            dur += f64::from(visits[v + 1].duration);
        }
        let here = visits[offset + cur];
        let start = f64::from(here.start) + (gap / m).round();
        out.push((start as u32, ((dur / m).round() as u32).max(1)));
    }
    out
}

/// Mark predicted visits on empty slots. A slot claimed by several cells
/// goes to the cell with more visits, then to the smaller cell.
pub fn nextplace_predict(history: &VisitHistory, training: &AssignedTimeline) -> Vec<Option<GridCell>> {
    let r = training.resolution;
    let n = training.len();
    let mut claims: Vec<Option<(usize, GridCell)>> = vec![None; n];
    for (&cell, visits) in &history.visits {
        if visits.len() < EMBEDDING_DIMENSION + 1 {
            continue;
        }
        let weight = visits.len();
        for (start, duration) in nextplace_cell_predictions(visits, r) {
            for q in start..start.saturating_add(duration) {
                let q = q as usize;
                if q >= n || training.slots[q].is_some() {
                    continue;
                }
                let better = match claims[q] {
                    None => true,
                    Some((w, c)) => weight > w || (weight == w && cell < c),
                };
                if better {
                    claims[q] = Some((weight, cell));
                }
            }
        }
    }
    claims.into_iter().map(|c| c.map(|(_, cell)| cell)).collect()
}
