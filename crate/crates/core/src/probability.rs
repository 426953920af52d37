//! Behaviour tables and the probability lists built from them.
//!
//! Every predictor speaks [`ProbList`]: a sparse cell → weight map. Individual
//! lists come from per-user count tables stratified three ways (week-specific,
//! day-type-specific, hour-specific); community lists come from the most
//! similar other users.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::geo::GridCell;
use crate::par::Exec;
use crate::timeline::{AssignedTimeline, DayType, Resolution, TimeIndex};

/// Sparse list of cells and non-negative weights, kept sorted by cell.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbList {
    entries: Vec<(GridCell, f64)>,
}

impl ProbList {
    pub fn new() -> Self {
        ProbList::default()
    }

    /// Build from arbitrary pairs; duplicate cells are summed and
    /// non-positive or non-finite weights dropped.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (GridCell, f64)>) -> Self {
        let mut entries: Vec<(GridCell, f64)> = pairs.into_iter().filter(|(_, w)| w.is_finite() && *w > 0.0).collect();
        entries.sort_by_key(|e| e.0);
        let mut merged: Vec<(GridCell, f64)> = Vec::with_capacity(entries.len());
        for (c, w) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == c => last.1 += w,
                _ => merged.push((c, w)),
            }
        }
        ProbList { entries: merged }
    }

    pub fn point(cell: GridCell) -> Self {
        ProbList {
            entries: vec![(cell, 1.0)],
        }
    }

    /// Normalised distribution from integer counts.
    pub fn from_counts(counts: &[(GridCell, u32)]) -> Self {
        let total: u64 = counts.iter().map(|c| u64::from(c.1)).sum();
        if total == 0 {
            return ProbList::new();
        }
        ProbList::from_pairs(counts.iter().map(|&(c, n)| (c, f64::from(n) / total as f64)))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[(GridCell, f64)] {
        &self.entries
    }

    pub fn get(&self, cell: GridCell) -> f64 {
        self.entries
            .binary_search_by_key(&cell, |e| e.0)
            .map_or(0.0, |i| self.entries[i].1)
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    pub fn scaled(&self, factor: f64) -> ProbList {
        if factor <= 0.0 {
            return ProbList::new();
        }
        ProbList {
            entries: self.entries.iter().map(|&(c, w)| (c, w * factor)).collect(),
        }
    }

    pub fn normalized(&self) -> ProbList {
        let total = self.total();
        if total > 0.0 {
            self.scaled(1.0 / total)
        } else {
            ProbList::new()
        }
    }

    /// Entrywise sum of weighted lists.
    pub fn weighted_sum(parts: &[(f64, &ProbList)]) -> ProbList {
        ProbList::from_pairs(
            parts
                .iter()
                .filter(|(w, _)| *w > 0.0)
                .flat_map(|(w, p)| p.entries.iter().map(move |&(c, x)| (c, x * w))),
        )
    }

    /// Highest weight, ties to the smaller cell.
    pub fn argmax(&self) -> Option<GridCell> {
        self.top(1).first().map(|e| e.0)
    }

    /// Up to `k` entries by descending weight, ties to the smaller cell.
    pub fn top(&self, k: usize) -> Vec<(GridCell, f64)> {
        let mut v = self.entries.clone();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        v.truncate(k);
        v
    }
}

/// Stratification of the behaviour tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strata {
    /// Keyed by slot of week.
    WeekSpecific,
    /// Keyed by slot of day and weekday/weekend.
    DayTypeSpecific,
    /// Keyed by slot of day alone.
    HourSpecific,
}

impl Strata {
    pub const ALL: [Strata; 3] = [Strata::WeekSpecific, Strata::DayTypeSpecific, Strata::HourSpecific];

    pub fn key(self, idx: &TimeIndex) -> u32 {
        match self {
            Strata::WeekSpecific => idx.k,
            Strata::DayTypeSpecific => idx.h * 2 + idx.day_type().index() as u32,
            Strata::HourSpecific => idx.h,
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

type Row = Vec<(GridCell, u32)>;

fn bump(row: &mut Row, cell: GridCell) {
    match row.binary_search_by_key(&cell, |e| e.0) {
        Ok(i) => row[i].1 += 1,
        Err(i) => row.insert(i, (cell, 1)),
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StratumTables {
    /// `(key of the earlier slot, cell there)` → counts of the cell one slot later.
    pub next: HashMap<(u32, GridCell), Row>,
    /// `(key of the later slot, cell there)` → counts of the cell one slot earlier.
    pub prev: HashMap<(u32, GridCell), Row>,
    /// key → counts of cells at that key.
    pub indep: HashMap<u32, Row>,
}

/// Per-user conditional and marginal visit counts under all three strata.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorTables {
    pub resolution: Resolution,
    strata: [StratumTables; 3],
}

impl BehaviorTables {
    pub fn stratum(&self, s: Strata) -> &StratumTables {
        &self.strata[s.slot()]
    }

    pub fn next_counts(&self, s: Strata, key: u32, from: GridCell) -> &[(GridCell, u32)] {
        self.stratum(s).next.get(&(key, from)).map_or(&[], Vec::as_slice)
    }

    pub fn prev_counts(&self, s: Strata, key: u32, from: GridCell) -> &[(GridCell, u32)] {
        self.stratum(s).prev.get(&(key, from)).map_or(&[], Vec::as_slice)
    }

    pub fn indep_counts(&self, s: Strata, key: u32) -> &[(GridCell, u32)] {
        self.stratum(s).indep.get(&key).map_or(&[], Vec::as_slice)
    }

    pub fn is_empty(&self) -> bool {
        self.strata.iter().all(|t| t.indep.is_empty())
    }
}

/// Accumulate counts from every assigned slot and every adjacent pair of
/// assigned slots. Callers pass the training timeline.
pub fn build_tables(tl: &AssignedTimeline) -> BehaviorTables {
    let mut strata: [StratumTables; 3] = Default::default();
    let r = tl.resolution;
    for q in 0..tl.len() {
        let Some(here) = tl.cell(q) else { continue };
        let idx = TimeIndex::from_q(q as u32, r);
        for s in Strata::ALL {
            bump(strata[s.slot()].indep.entry(s.key(&idx)).or_default(), here);
        }
        if let Some(next) = tl.cell(q + 1) {
            let nidx = TimeIndex::from_q(q as u32 + 1, r);
            for s in Strata::ALL {
                let t = &mut strata[s.slot()];
                bump(t.next.entry((s.key(&idx), here)).or_default(), next);
                bump(t.prev.entry((s.key(&nidx), next)).or_default(), here);
            }
        }
    }
    BehaviorTables { resolution: r, strata }
}

/// Distribution of the cell following `from` at the slot keyed `key`.
pub fn next_loc_prob(tables: &BehaviorTables, s: Strata, key: u32, from: GridCell) -> ProbList {
    ProbList::from_counts(tables.next_counts(s, key, from))
}

/// Distribution of the cell preceding `to` at the slot keyed `key`.
pub fn prev_loc_prob(tables: &BehaviorTables, s: Strata, key: u32, to: GridCell) -> ProbList {
    ProbList::from_counts(tables.prev_counts(s, key, to))
}

pub fn indep_loc_prob(tables: &BehaviorTables, s: Strata, key: u32) -> ProbList {
    ProbList::from_counts(tables.indep_counts(s, key))
}

/// `(λa·Pa + λb·Pb + Pc) / 3`.
pub fn combine_individual(pa: &ProbList, pb: &ProbList, pc: &ProbList, lambda_a: f64, lambda_b: f64) -> ProbList {
    ProbList::weighted_sum(&[(lambda_a / 3.0, pa), (lambda_b / 3.0, pb), (1.0 / 3.0, pc)])
}

/// Entrywise mean of the three strata lists.
pub fn combine_strata(ws: &ProbList, rs: &ProbList, hs: &ProbList) -> ProbList {
    ProbList::weighted_sum(&[(1.0 / 3.0, ws), (1.0 / 3.0, rs), (1.0 / 3.0, hs)])
}

/// `(1-β)·P_I + β·P_C`, falling back to whichever side is non-empty.
pub fn blend(individual: &ProbList, community: &ProbList, beta: f64) -> ProbList {
    if community.is_empty() {
        return individual.clone();
    }
    if individual.is_empty() {
        return community.clone();
    }
    ProbList::weighted_sum(&[(1.0 - beta, individual), (beta, community)])
}

/// Compact cell vector, `u32::MAX` for empty slots.
pub fn compact_cells(tl: &AssignedTimeline) -> Vec<u32> {
    tl.slots.iter().map(|s| s.map_or(u32::MAX, |s| s.cell.0)).collect()
}

/// Share of co-assigned slots where both users are in the same cell,
/// optionally restricted to one day type.
pub fn similarity_compact(a: &[u32], b: &[u32], r: Resolution, day_type: Option<DayType>) -> f64 {
    let spw = r.slots_per_week() as usize;
    let spd = r.slots_per_day() as usize;
    let (mut both, mut same) = (0u32, 0u32);
    for (q, (&x, &y)) in a.iter().zip(b).enumerate() {
        if x == u32::MAX || y == u32::MAX {
            continue;
        }
        if let Some(dt) = day_type {
            if DayType::of_day(((q % spw) / spd) as u32) != dt {
                continue;
            }
        }
        both += 1;
        same += u32::from(x == y);
    }
    if both == 0 {
        0.0
    } else {
        f64::from(same) / f64::from(both)
    }
}

pub fn similarity(a: &AssignedTimeline, b: &AssignedTimeline) -> f64 {
    similarity_compact(&compact_cells(a), &compact_cells(b), a.resolution, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    /// Position of the neighbour in the cohort.
    pub user: usize,
    pub similarity: f64,
}

/// The `m` most similar users, ties to the smaller cohort position (cohorts
/// are sorted by user id). `scores[i]` is the similarity to user `i`.
pub fn top_m_neighbors(user: usize, scores: &[f64], m: usize) -> Vec<Neighbor> {
    let mut v: Vec<Neighbor> = scores
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != user)
        .map(|(i, &s)| Neighbor { user: i, similarity: s })
        .collect();
    v.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then(a.user.cmp(&b.user)));
    v.truncate(m);
    v
}

/// Similarity-weighted vote of the neighbours' cells at slot `q`, normalised.
pub fn community_prob(q: usize, neighbors: &[Neighbor], cohort: &[Vec<u32>]) -> ProbList {
    ProbList::from_pairs(neighbors.iter().filter_map(|n| {
        let c = *cohort[n.user].get(q)?;
        (c != u32::MAX).then_some((GridCell(c), n.similarity))
    }))
    .normalized()
}

/// Training-slot view of a cohort with per-day-type neighbour lists.
#[derive(Debug, Clone)]
pub struct Community {
    pub resolution: Resolution,
    pub cells: Vec<Vec<u32>>,
    /// `neighbors[user][day_type.index()]`.
    pub neighbors: Vec<[Vec<Neighbor>; 2]>,
}

impl Community {
    /// Pairwise similarities per day type, then the top `m` for each user.
    pub fn build(timelines: &[AssignedTimeline], m: usize, exec: Exec) -> Community {
        let resolution = timelines.first().map_or(Resolution::OneHour, |t| t.resolution);
        let cells: Vec<Vec<u32>> = exec.map(timelines, compact_cells);
        let n = cells.len();
        let neighbors = if m == 0 {
            vec![[Vec::new(), Vec::new()]; n]
        } else {
            let matrices: Vec<[Vec<f64>; 2]> = exec.map_range(n, |i| {
                [DayType::Weekday, DayType::Weekend].map(|dt| {
                    (0..n)
                        .map(|j| {
                            if i == j {
                                0.0
                            } else {
                                similarity_compact(&cells[i], &cells[j], resolution, Some(dt))
                            }
                        })
                        .collect()
                })
            });
            exec.map_range(n, |i| {
                [0, 1].map(|dt| {
                    top_m_neighbors(i, &matrices[i][dt], m)
                        .into_iter()
                        .filter(|nb| nb.similarity > 0.0)
                        .collect()
                })
            })
        };
        Community {
            resolution,
            cells,
            neighbors,
        }
    }

    pub fn prob(&self, user: usize, q: usize) -> ProbList {
        let dt = TimeIndex::from_q(q as u32, self.resolution).day_type();
        community_prob(q, &self.neighbors[user][dt.index()], &self.cells)
    }
}
