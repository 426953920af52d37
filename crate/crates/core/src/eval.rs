//! Train/test splitting, parameter tuning and metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geo::GridCell;
use crate::ilc::SlotPrediction;
use crate::par::user_seed;
use crate::probability::{blend, ProbList};
use crate::timeline::AssignedTimeline;

pub const DEFAULT_TRAIN_RATIO: f64 = 0.7;
pub const ALPHA_HOLDOUT: f64 = 0.1;
const SPLIT_SALT: u64 = 1;
const HOLDOUT_SALT: u64 = 2;

/// Held-out slots of one user, ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSplit {
    pub user_id: String,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitMask {
    pub users: Vec<UserSplit>,
}

fn bernoulli_daytime(tl: &AssignedTimeline, p: f64, seed: u64, salt: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(user_seed(seed, &tl.user_id, salt));
    let mut out = Vec::new();
    for q in 0..tl.len() {
        if tl.slots[q].is_none() || !tl.is_daytime(q) {
            continue;
        }
        // one draw per eligible slot keeps the mask a function of (seed, user, slot)
        let u: f64 = rng.gen();
        if u < p {
            out.push(q);
        }
    }
    out
}

/// Each assigned daytime slot goes to test with probability `1 - ratio`.
/// Night slots always stay in training.
pub fn split(tl: &AssignedTimeline, ratio: f64, seed: u64) -> UserSplit {
    UserSplit {
        user_id: tl.user_id.clone(),
        test: bernoulli_daytime(tl, 1.0 - ratio, seed, SPLIT_SALT),
    }
}

/// Second-level holdout of training slots used when tuning α.
pub fn holdout(training: &AssignedTimeline, fraction: f64, seed: u64) -> Vec<usize> {
    bernoulli_daytime(training, fraction, seed, HOLDOUT_SALT)
}

/// Test cells, in the order of `test`.
pub fn truth_at(tl: &AssignedTimeline, test: &[usize]) -> Vec<GridCell> {
    test.iter()
        .map(|&q| tl.cell(q).expect("test slots are assigned"))
        .collect()
}

pub fn alpha_grid() -> Vec<f64> {
    (0..=10).map(|i| f64::from(i) * 0.05).collect()
}

pub fn beta_grid() -> Vec<f64> {
    (0..=20).map(|i| f64::from(i) * 0.05).collect()
}

/// Best candidate by accuracy, ties to the earlier (smaller) candidate.
/// `score` returns `(hits, total)`.
pub fn tune_alpha(candidates: &[f64], score: impl Fn(f64) -> (usize, usize)) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for &a in candidates {
        let (hits, total) = score(a);
        let acc = if total == 0 { 0.0 } else { hits as f64 / total as f64 };
        if best.is_none_or(|(_, b)| acc > b) {
            best = Some((a, acc));
        }
    }
    best.map(|b| b.0)
}

/// One training slot scored for β: the individual list computed without the
/// slot, the community list there, and the observed cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaSample {
    pub individual: ProbList,
    pub community: ProbList,
    pub truth: GridCell,
}

/// β maximising top-1 accuracy of the blended list over `samples`. Equal
/// accuracies are separated by the mean blended share of the true cell over
/// the samples the individual list gets wrong, then by the smaller β.
/// `None` when there are no samples.
pub fn tune_beta(samples: &[BetaSample]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let misses: Vec<&BetaSample> = samples
        .iter()
        .filter(|s| s.individual.argmax() != Some(s.truth))
        .collect();
    let mut best: Option<(f64, usize, f64)> = None;
    for beta in beta_grid() {
        let hits = samples
            .iter()
            .filter(|s| blend(&s.individual, &s.community, beta).argmax() == Some(s.truth))
            .count();
        let recovered: f64 = misses
            .iter()
            .map(|s| {
                let b = blend(&s.individual, &s.community, beta);
                let total = b.total();
                if total > 0.0 {
                    b.get(s.truth) / total
                } else {
                    0.0
                }
            })
            .sum();
        let better = match best {
            None => true,
            Some((_, h, m)) => hits > h || (hits == h && recovered > m + 1e-12),
        };
        if better {
            best = Some((beta, hits, recovered));
        }
    }
    best.map(|b| b.0)
}

/// Hit counts of one model on one user.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserScore {
    pub user_id: String,
    pub test_points: usize,
    pub predicted: usize,
    pub top1: usize,
    pub top3: usize,
    /// Distinct cells in the user's full assigned timeline.
    pub distinct_cells: usize,
}

impl UserScore {
    pub fn accuracy(&self) -> Option<f64> {
        (self.predicted > 0).then(|| 100.0 * self.top1 as f64 / self.predicted as f64)
    }
}

/// Score aligned predictions against held-out cells.
pub fn score_user(user_id: &str, truth: &[GridCell], predictions: &[SlotPrediction], distinct_cells: usize) -> UserScore {
    assert_eq!(truth.len(), predictions.len(), "one prediction per test slot");
    let mut s = UserScore {
        user_id: user_id.to_owned(),
        test_points: truth.len(),
        distinct_cells,
        ..UserScore::default()
    };
    for (t, p) in truth.iter().zip(predictions) {
        let Some(cell) = p.cell else { continue };
        s.predicted += 1;
        if cell == *t {
            s.top1 += 1;
        }
        if cell == *t || p.top.iter().take(3).any(|e| e.0 == *t) {
            s.top3 += 1;
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserAccuracy {
    pub user_id: String,
    pub test_points: usize,
    pub predicted: usize,
    /// Percentage over this user's predicted points; absent without predictions.
    pub top1_acc: Option<f64>,
    pub distinct_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: String,
    pub test_points: usize,
    pub predicted_points: usize,
    /// Percentages over predicted test points.
    pub top1_acc: f64,
    pub top3_acc: f64,
    /// Predicted test points over all test points, in percent.
    pub filled_pct: f64,
    /// Percentages over all test points, unfilled counting as misses.
    pub top1_acc_all: f64,
    pub top3_acc_all: f64,
    /// Mean of per-user top-1 accuracies.
    pub macro_top1_acc: f64,
    /// Set when nothing was predicted and the accuracies are placeholders.
    pub accuracy_undefined: bool,
    pub per_user: Vec<UserAccuracy>,
}

fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

pub fn evaluate(model: &str, scores: &[UserScore]) -> ModelReport {
    let test: usize = scores.iter().map(|s| s.test_points).sum();
    let predicted: usize = scores.iter().map(|s| s.predicted).sum();
    let top1: usize = scores.iter().map(|s| s.top1).sum();
    let top3: usize = scores.iter().map(|s| s.top3).sum();
    let per_user: Vec<UserAccuracy> = scores
        .iter()
        .map(|s| UserAccuracy {
            user_id: s.user_id.clone(),
            test_points: s.test_points,
            predicted: s.predicted,
            top1_acc: s.accuracy(),
            distinct_cells: s.distinct_cells,
        })
        .collect();
    let defined: Vec<f64> = per_user.iter().filter_map(|u| u.top1_acc).collect();
    ModelReport {
        model: model.to_owned(),
        test_points: test,
        predicted_points: predicted,
        top1_acc: pct(top1, predicted),
        top3_acc: pct(top3, predicted),
        filled_pct: pct(predicted, test),
        top1_acc_all: pct(top1, test),
        top3_acc_all: pct(top3, test),
        macro_top1_acc: if defined.is_empty() {
            0.0
        } else {
            defined.iter().sum::<f64>() / defined.len() as f64
        },
        accuracy_undefined: predicted == 0,
        per_user,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub users: usize,
    pub alpha: f64,
    pub models: Vec<ModelReport>,
}

impl EvalReport {
    pub fn model(&self, name: &str) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.model == name)
    }
}

/// Empirical CDF of per-user top-1 accuracy: `(accuracy, fraction of users ≤ it)`.
pub fn accuracy_cdf(report: &ModelReport) -> Vec<(f64, f64)> {
    let mut acc: Vec<f64> = report.per_user.iter().filter_map(|u| u.top1_acc).collect();
    acc.sort_by(f64::total_cmp);
    let n = acc.len() as f64;
    acc.iter().enumerate().map(|(i, &a)| (a, (i + 1) as f64 / n)).collect()
}

/// `(distinct cells, top-1 accuracy)` per user with predictions.
pub fn distinct_location_pairs(report: &ModelReport) -> Vec<(usize, f64)> {
    report
        .per_user
        .iter()
        .filter_map(|u| u.top1_acc.map(|a| (u.distinct_cells, a)))
        .collect()
}
