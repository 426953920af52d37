//! Intermediate location computing.
//!
//! Gaps are filled in two stages. For each stratum a forward pass walks the
//! timeline left to right, filling each empty slot with the most likely next
//! location given the slot before it (falling back to the independent list),
//! and a backward pass does the mirror image. Each empty slot is then scored
//! from the conditional lists anchored on its neighbours, real or
//! intermediate, discounted by `(1 - α)^(n - 1)` for an anchor `n` slots from
//! the nearest real observation, and blended with the community list.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::GridCell;
use crate::probability::{
    blend, build_tables, combine_individual, combine_strata, indep_loc_prob, next_loc_prob, prev_loc_prob,
    BehaviorTables, Community, ProbList, Strata,
};
use crate::timeline::{infer_home, modal_cell, AssignedTimeline, HomeMap, Resolution, TimeIndex};

pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_K_TOP: usize = 3;

/// `(1 - α)^(n - 1)` for an anchor `n ≥ 1` steps away.
pub fn information_loss(n: u32, alpha: f64) -> f64 {
    (1.0 - alpha).powi(n.saturating_sub(1) as i32)
}

/// Argmax of `l1`, or of `l2` when `l1` is empty.
pub fn inter(l1: &ProbList, l2: &ProbList) -> Option<GridCell> {
    l1.argmax().or_else(|| l2.argmax())
}

/// Up to `k` candidates by weight, ties to the smaller cell.
pub fn top_k(p: &ProbList, k: usize) -> Vec<(GridCell, f64)> {
    p.top(k)
}

/// Normalised counts with one occurrence of `own` removed.
fn without(counts: &[(GridCell, u32)], own: Option<GridCell>) -> ProbList {
    match own {
        Some(cell) if counts.iter().any(|e| e.0 == cell) => {
            let total: u32 = counts.iter().map(|e| e.1).sum::<u32>() - 1;
            if total == 0 {
                return ProbList::new();
            }
            ProbList::from_pairs(counts.iter().map(|&(c, n)| {
                let n = if c == cell { n - 1 } else { n };
                (c, f64::from(n) / f64::from(total))
            }))
        }
        _ => ProbList::from_counts(counts),
    }
}

fn key_at(s: Strata, q: usize, r: Resolution) -> u32 {
    s.key(&TimeIndex::from_q(q as u32, r))
}

/// Forward intermediate pass for one stratum.
pub fn forward_pass(cells: &[Option<GridCell>], s: Strata, tables: &BehaviorTables) -> Vec<Option<GridCell>> {
    let r = tables.resolution;
    let mut out = cells.to_vec();
    for q in 0..out.len() {
        if out[q].is_some() {
            continue;
        }
        let conditional = match q.checked_sub(1).and_then(|p| out[p].map(|c| (p, c))) {
            Some((p, from)) => next_loc_prob(tables, s, key_at(s, p, r), from),
            None => ProbList::new(),
        };
        out[q] = inter(&conditional, &indep_loc_prob(tables, s, key_at(s, q, r)));
    }
    out
}

/// Backward intermediate pass for one stratum.
pub fn backward_pass(cells: &[Option<GridCell>], s: Strata, tables: &BehaviorTables) -> Vec<Option<GridCell>> {
    let r = tables.resolution;
    let mut out = cells.to_vec();
    for q in (0..out.len()).rev() {
        if out[q].is_some() {
            continue;
        }
        let conditional = match out.get(q + 1).copied().flatten() {
            Some(from) => prev_loc_prob(tables, s, key_at(s, q + 1, r), from),
            None => ProbList::new(),
        };
        out[q] = inter(&conditional, &indep_loc_prob(tables, s, key_at(s, q, r)));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    GivenData,
    Predicted,
    /// No list had any mass; the home or modal cell was used.
    Fallback,
    Unfilled,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::GivenData => "given",
            Source::Predicted => "predicted",
            Source::Fallback => "fallback",
            Source::Unfilled => "unfilled",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotPrediction {
    pub cell: Option<GridCell>,
    /// Ranked candidates with their blended scores.
    pub top: Vec<(GridCell, f64)>,
    pub source: Source,
}

impl SlotPrediction {
    pub fn unfilled() -> Self {
        SlotPrediction {
            cell: None,
            top: Vec::new(),
            source: Source::Unfilled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletedTimeline {
    pub user_id: String,
    pub resolution: Resolution,
    pub slots: Vec<SlotPrediction>,
}

impl CompletedTimeline {
    pub fn unfilled_count(&self) -> usize {
        self.slots.iter().filter(|s| s.source == Source::Unfilled).count()
    }
}

/// Per-(slot-of-week) community weight for one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaTable(pub Vec<f64>);

impl BetaTable {
    pub fn constant(beta: f64, r: Resolution) -> Self {
        BetaTable(vec![beta; r.slots_per_week() as usize])
    }

    pub fn get(&self, k: u32) -> f64 {
        self.0.get(k as usize).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IlcParams {
    pub alpha: f64,
    pub k_top: usize,
}

impl Default for IlcParams {
    fn default() -> Self {
        IlcParams {
            alpha: DEFAULT_ALPHA,
            k_top: DEFAULT_K_TOP,
        }
    }
}

/// Everything ILC needs about one user: tables, both passes for every
/// stratum, and distances to the nearest real observation on each side.
#[derive(Debug, Clone)]
pub struct IlcUser {
    pub user_id: String,
    pub resolution: Resolution,
    pub tables: BehaviorTables,
    cells: Vec<Option<GridCell>>,
    forward: [Vec<Option<GridCell>>; 3],
    backward: [Vec<Option<GridCell>>; 3],
    /// Slots between `q` and the nearest assigned slot before it.
    left_gap: Vec<Option<u32>>,
    right_gap: Vec<Option<u32>>,
    homes: HomeMap,
    modal: Option<GridCell>,
}

impl IlcUser {
    /// Build tables and passes from a training timeline.
    pub fn new(training: &AssignedTimeline) -> Self {
        let tables = build_tables(training);
        Self::with_tables(training, tables).expect("tables built from the same timeline")
    }

    pub fn with_tables(training: &AssignedTimeline, tables: BehaviorTables) -> Result<Self> {
        if tables.resolution != training.resolution || (tables.is_empty() && training.assigned_count() > 0) {
            return Err(Error::MissingTables(training.user_id.clone()));
        }
        let cells: Vec<Option<GridCell>> = training.slots.iter().map(|s| s.map(|s| s.cell)).collect();
        let forward = Strata::ALL.map(|s| forward_pass(&cells, s, &tables));
        let backward = Strata::ALL.map(|s| backward_pass(&cells, s, &tables));
        let n = cells.len();
        let mut left_gap = vec![None; n];
        let mut last = None;
        for q in 0..n {
            left_gap[q] = last.map(|p: usize| (q - p) as u32);
            if cells[q].is_some() {
                last = Some(q);
            }
        }
        let mut right_gap = vec![None; n];
        let mut next = None;
        for q in (0..n).rev() {
            right_gap[q] = next.map(|p: usize| (p - q) as u32);
            if cells[q].is_some() {
                next = Some(q);
            }
        }
        let mut counts = std::collections::BTreeMap::new();
        for c in cells.iter().flatten() {
            *counts.entry(*c).or_insert(0u32) += 1;
        }
        Ok(IlcUser {
            user_id: training.user_id.clone(),
            resolution: training.resolution,
            homes: infer_home(training),
            modal: modal_cell(&counts),
            tables,
            cells,
            forward,
            backward,
            left_gap,
            right_gap,
        })
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn given(&self, q: usize) -> Option<GridCell> {
        self.cells[q]
    }

    pub fn forward(&self, s: Strata) -> &[Option<GridCell>] {
        &self.forward[s as usize]
    }

    pub fn backward(&self, s: Strata) -> &[Option<GridCell>] {
        &self.backward[s as usize]
    }

    /// Anchor distances `(n_left, n_right)` for slot `q`.
    pub fn anchor_distances(&self, q: usize) -> (Option<u32>, Option<u32>) {
        (self.left_gap[q], self.right_gap[q])
    }

    /// Individual list for slot `q`, computed as if `q` were missing.
    pub fn individual(&self, q: usize, alpha: f64) -> ProbList {
        self.individual_inner(q, alpha, None)
    }

    /// Individual list for an assigned slot with its own counts taken out of
    /// the tables, so the slot can score its own prediction.
    pub fn self_prediction(&self, q: usize, alpha: f64) -> ProbList {
        self.individual_inner(q, alpha, self.cells[q])
    }

    fn individual_inner(&self, q: usize, alpha: f64, own: Option<GridCell>) -> ProbList {
        let r = self.resolution;
        let (n_left, n_right) = self.anchor_distances(q);
        let per_stratum = Strata::ALL.map(|s| {
            let si = s as usize;
            let pa = match (n_left, q.checked_sub(1)) {
                (Some(_), Some(p)) => match self.cells[p] {
                    Some(from) => without(self.tables.next_counts(s, key_at(s, p, r), from), own),
                    None => self.forward[si][p]
                        .map_or_else(ProbList::new, |from| next_loc_prob(&self.tables, s, key_at(s, p, r), from)),
                },
                _ => ProbList::new(),
            };
            let pb = match n_right {
                Some(_) => {
                    let nq = q + 1;
                    match self.cells[nq] {
                        Some(from) => without(self.tables.prev_counts(s, key_at(s, nq, r), from), own),
                        None => self.backward[si][nq]
                            .map_or_else(ProbList::new, |from| prev_loc_prob(&self.tables, s, key_at(s, nq, r), from)),
                    }
                }
                None => ProbList::new(),
            };
            let pc = without(self.tables.indep_counts(s, key_at(s, q, r)), own);
            let la = n_left.map_or(0.0, |n| information_loss(n, alpha));
            let lb = n_right.map_or(0.0, |n| information_loss(n, alpha));
            combine_individual(&pa, &pb, &pc, la, lb)
        });
        combine_strata(&per_stratum[0], &per_stratum[1], &per_stratum[2])
    }

    fn fallback_cell(&self, q: usize) -> Option<GridCell> {
        let d = TimeIndex::from_q(q as u32, self.resolution).d;
        self.homes.for_day(d).or(self.modal)
    }

    /// Prediction for slot `q` given its community list and β.
    pub fn predict(&self, q: usize, community: &ProbList, beta: f64, params: &IlcParams) -> SlotPrediction {
        let blended = blend(&self.individual(q, params.alpha), community, beta);
        if let Some(cell) = blended.argmax() {
            return SlotPrediction {
                cell: Some(cell),
                top: top_k(&blended, params.k_top),
                source: Source::Predicted,
            };
        }
        match self.fallback_cell(q) {
            Some(cell) => SlotPrediction {
                cell: Some(cell),
                top: vec![(cell, 0.0)],
                source: Source::Fallback,
            },
            None => SlotPrediction::unfilled(),
        }
    }
}

/// Fill every empty slot of a training timeline.
///
/// `community` supplies the cohort and this user's position in it; without
/// it the community term is empty and β has no effect.
pub fn complete_timeline(
    training: &AssignedTimeline,
    tables: BehaviorTables,
    community: Option<(&Community, usize)>,
    beta: &BetaTable,
    params: &IlcParams,
) -> Result<CompletedTimeline> {
    let user = IlcUser::with_tables(training, tables)?;
    let slots = (0..user.len())
        .map(|q| match user.given(q) {
            Some(cell) => SlotPrediction {
                cell: Some(cell),
                top: vec![(cell, 1.0)],
                source: Source::GivenData,
            },
            None => {
                let pc = community.map_or_else(ProbList::new, |(c, i)| c.prob(i, q));
                let k = TimeIndex::from_q(q as u32, user.resolution).k;
                user.predict(q, &pc, beta.get(k), params)
            }
        })
        .collect();
    Ok(CompletedTimeline {
        user_id: training.user_id.clone(),
        resolution: training.resolution,
        slots,
    })
}
