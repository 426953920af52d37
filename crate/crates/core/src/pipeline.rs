//! End-to-end orchestration: preprocessing, splitting, tuning, inference
//! and evaluation for every model, plus parameter sweeps.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    home_work_ranked, markov0_ranked, markov1_ranked, nextplace_fit, nextplace_predict, poi_fit, poi_ranked,
    HomeWorkProfile, PoiUser, PowerLaw, DEFAULT_POI_GAMMA,
};
use crate::error::{Error, Result};
use crate::eval::{
    alpha_grid, evaluate, holdout, score_user, split, truth_at, tune_alpha, tune_beta, BetaSample, EvalReport,
    ModelReport, SplitMask, UserScore, ALPHA_HOLDOUT, DEFAULT_TRAIN_RATIO,
};
use crate::geo::{build_grid_spec, BBox, GridCell, GridSpec};
use crate::ilc::{BetaTable, IlcParams, IlcUser, SlotPrediction, Source, DEFAULT_ALPHA, DEFAULT_K_TOP};
use crate::ingest::{filter_spoofed_accounts, group_by_user, AccountVerdict, RawEvent};
use crate::par::{user_seed, Exec};
use crate::probability::{compact_cells, Community, ProbList};
use crate::timeline::{
    inclusion_check, preprocess_user, AssignedTimeline, LocalClock, Resolution, StudyWindow, TimeIndex,
};

pub const DEFAULT_M: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Ilc,
    HomeWork,
    Markov0,
    Markov1,
    Poi,
    NextPlace,
}

impl Model {
    pub const ALL: [Model; 6] = [
        Model::Ilc,
        Model::HomeWork,
        Model::Markov0,
        Model::Markov1,
        Model::Poi,
        Model::NextPlace,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Model::Ilc => "ilc",
            Model::HomeWork => "homework",
            Model::Markov0 => "markov0",
            Model::Markov1 => "markov1",
            Model::Poi => "poi",
            Model::NextPlace => "nextplace",
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Model> {
        Model::ALL
            .into_iter()
            .find(|m| m.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown model {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    pub train_ratio: f64,
    pub seed: u64,
    /// Fixed α, or tuned on a training holdout when absent.
    pub alpha: Option<f64>,
    pub m: usize,
    pub k_top: usize,
    /// Fixed β for every slot, or tuned per user and slot of week when absent.
    pub beta: Option<f64>,
    /// Fixed POI mixing weight, or tuned on a training holdout when absent.
    pub poi_gamma: Option<f64>,
    pub exec: Exec,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            train_ratio: DEFAULT_TRAIN_RATIO,
            seed: 0,
            alpha: Some(DEFAULT_ALPHA),
            m: DEFAULT_M,
            k_top: DEFAULT_K_TOP,
            beta: None,
            poi_gamma: Some(DEFAULT_POI_GAMMA),
            exec: Exec::Parallel,
        }
    }
}

/// Everything needed to turn raw events into timelines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Setup {
    pub bbox: BBox,
    pub cell_size: f64,
    pub resolution: Resolution,
    pub clock: LocalClock,
    /// Derived from the events when absent.
    pub window: Option<StudyWindow>,
    pub exclude: Vec<String>,
}

impl Setup {
    pub fn grid(&self) -> Result<GridSpec> {
        build_grid_spec(self.bbox, self.cell_size)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub users_total: usize,
    pub excluded_spoofing: usize,
    pub excluded_listed: usize,
    pub failed_inclusion: usize,
    pub included: usize,
    pub events_total: usize,
    /// Mean share of empty daytime slots among included users, after interpolation.
    pub mean_daytime_empty: f64,
    pub verdicts: Vec<AccountVerdict>,
}

/// Included users' assigned timelines, sorted by user id.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedCohort {
    pub spec: GridSpec,
    pub resolution: Resolution,
    pub window: StudyWindow,
    pub timelines: Vec<AssignedTimeline>,
}

pub fn preprocess(events: Vec<RawEvent>, setup: &Setup, exec: Exec) -> Result<(PreparedCohort, PreprocessReport)> {
    let spec = setup.grid()?;
    let window = match setup.window {
        Some(w) => w,
        None => StudyWindow::covering(events.iter().map(|e| setup.clock.to_local(e.ts))).unwrap_or(
            StudyWindow::new(chrono::NaiveDate::from_ymd_opt(2014, 1, 6).expect("valid date"), 1)?,
        ),
    };
    let events_total = events.len();
    let mut events = events;
    events.sort_by(|a, b| a.user_id.cmp(&b.user_id).then(a.ts.cmp(&b.ts)));
    let users = group_by_user(events);
    let exclude: HashSet<String> = setup.exclude.iter().cloned().collect();
    let (retained, verdicts) = filter_spoofed_accounts(users, &exclude, exec);
    let r = setup.resolution;
    let built = exec.map(&retained, |u| {
        let tl = preprocess_user(&u.user_id, &u.events, &spec, &setup.clock, &window, r);
        let ok = inclusion_check(&tl);
        (tl, ok)
    });
    let failed = built.iter().filter(|b| !b.1).count();
    let timelines: Vec<AssignedTimeline> = built.into_iter().filter(|b| b.1).map(|b| b.0).collect();
    let mean_daytime_empty = if timelines.is_empty() {
        0.0
    } else {
        timelines.iter().map(AssignedTimeline::daytime_empty_fraction).sum::<f64>() / timelines.len() as f64
    };
    let report = PreprocessReport {
        users_total: verdicts.len(),
        excluded_spoofing: verdicts.iter().filter(|v| v.excluded && !v.listed).count(),
        excluded_listed: verdicts.iter().filter(|v| v.listed).count(),
        failed_inclusion: failed,
        included: timelines.len(),
        events_total,
        mean_daytime_empty,
        verdicts,
    };
    Ok((
        PreparedCohort {
            spec,
            resolution: r,
            window,
            timelines,
        },
        report,
    ))
}

/// Training timelines with their held-out slots and true cells.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitCohort {
    pub mask: SplitMask,
    pub training: Vec<AssignedTimeline>,
    pub truth: Vec<Vec<GridCell>>,
}

pub fn split_cohort(cohort: &PreparedCohort, ratio: f64, seed: u64, exec: Exec) -> SplitCohort {
    let parts = exec.map(&cohort.timelines, |tl| {
        let s = split(tl, ratio, seed);
        let truth = truth_at(tl, &s.test);
        let training = tl.masked(s.test.iter().copied());
        (s, training, truth)
    });
    let mut out = SplitCohort {
        mask: SplitMask::default(),
        training: Vec::with_capacity(parts.len()),
        truth: Vec::with_capacity(parts.len()),
    };
    for (s, training, truth) in parts {
        out.mask.users.push(s);
        out.training.push(training);
        out.truth.push(truth);
    }
    out
}

/// Apply an existing mask; users missing from it get no test slots.
pub fn apply_mask(cohort: &PreparedCohort, mask: &SplitMask) -> Result<SplitCohort> {
    let by_user: HashMap<&str, &Vec<usize>> = mask.users.iter().map(|u| (u.user_id.as_str(), &u.test)).collect();
    let mut out = SplitCohort {
        mask: SplitMask::default(),
        training: Vec::new(),
        truth: Vec::new(),
    };
    for tl in &cohort.timelines {
        let test: Vec<usize> = by_user.get(tl.user_id.as_str()).map(|v| v.to_vec()).unwrap_or_default();
        if let Some(&q) = test.iter().find(|&&q| tl.slots.get(q).is_none_or(Option::is_none)) {
            return Err(Error::data("split mask", format!("user {} slot {q} is not assigned", tl.user_id)));
        }
        out.truth.push(truth_at(tl, &test));
        out.training.push(tl.masked(test.iter().copied()));
        out.mask.users.push(crate::eval::UserSplit {
            user_id: tl.user_id.clone(),
            test,
        });
    }
    Ok(out)
}

/// Per-model predictions, aligned with each user's test slots.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub model: Model,
    pub predictions: Vec<Vec<SlotPrediction>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub alpha: f64,
    pub poi_gamma: Option<f64>,
    pub power_law: Option<PowerLaw>,
    pub outputs: Vec<ModelOutput>,
    pub report: EvalReport,
}

fn ranked_prediction(top: Vec<(GridCell, f64)>) -> SlotPrediction {
    match top.first() {
        Some(&(cell, _)) => SlotPrediction {
            cell: Some(cell),
            top,
            source: Source::Predicted,
        },
        None => SlotPrediction::unfilled(),
    }
}

fn point_prediction(cell: Option<GridCell>) -> SlotPrediction {
    ranked_prediction(cell.map(|c| vec![(c, 1.0)]).unwrap_or_default())
}

/// Leave-one-out samples of every assigned daytime training slot, keyed by slot of week.
pub fn beta_samples(
    user: &IlcUser,
    training: &AssignedTimeline,
    community: Option<(&Community, usize)>,
    alpha: f64,
) -> BTreeMap<u32, Vec<BetaSample>> {
    let mut out: BTreeMap<u32, Vec<BetaSample>> = BTreeMap::new();
    for q in 0..training.len() {
        let Some(truth) = training.cell(q) else { continue };
        if !training.is_daytime(q) {
            continue;
        }
        let k = training.index(q).k;
        out.entry(k).or_default().push(BetaSample {
            individual: user.self_prediction(q, alpha),
            community: community.map_or_else(ProbList::new, |(c, i)| c.prob(i, q)),
            truth,
        });
    }
    out
}

/// Tuned β per slot of week. Samples without a community list say nothing
/// about the blend; `None` where no sample has one.
pub fn tune_user_betas(samples: &BTreeMap<u32, Vec<BetaSample>>, r: Resolution) -> Vec<Option<f64>> {
    let mut out = vec![None; r.slots_per_week() as usize];
    for (&k, s) in samples {
        let informative: Vec<BetaSample> = s.iter().filter(|s| !s.community.is_empty()).cloned().collect();
        out[k as usize] = tune_beta(&informative);
    }
    out
}

/// Fill gaps with the cohort mean for the same (day type, hour), else 0.5.
pub fn resolve_betas(tuned: &[Vec<Option<f64>>], r: Resolution) -> Vec<BetaTable> {
    let spw = r.slots_per_week() as usize;
    let spd = r.slots_per_day() as usize;
    let mut sums: HashMap<(usize, usize), (f64, usize)> = HashMap::new();
    for user in tuned {
        for (k, b) in user.iter().enumerate() {
            if let Some(b) = b {
                let idx = TimeIndex::from_q(k as u32, r);
                let e = sums.entry((idx.day_type().index(), k % spd)).or_insert((0.0, 0));
                e.0 += b;
                e.1 += 1;
            }
        }
    }
    tuned
        .iter()
        .map(|user| {
            BetaTable(
                (0..spw)
                    .map(|k| {
                        user[k].unwrap_or_else(|| {
                            let idx = TimeIndex::from_q(k as u32, r);
                            sums.get(&(idx.day_type().index(), k % spd))
                                .map_or(0.5, |&(s, n)| s / n as f64)
                        })
                    })
                    .collect(),
            )
        })
        .collect()
}

/// Cohort-wide α by P_I-only accuracy on a holdout of training slots.
pub fn tune_cohort_alpha(training: &[AssignedTimeline], candidates: &[f64], seed: u64, exec: Exec) -> f64 {
    let per_user: Vec<Vec<(usize, usize)>> = exec.map(training, |tl| {
        let held = holdout(tl, ALPHA_HOLDOUT, seed);
        if held.is_empty() {
            return vec![(0, 0); candidates.len()];
        }
        let inner = tl.masked(held.iter().copied());
        let user = IlcUser::new(&inner);
        let empty = ProbList::new();
        candidates
            .iter()
            .map(|&alpha| {
                let params = IlcParams { alpha, k_top: 1 };
                let hits = held
                    .iter()
                    .filter(|&&q| user.predict(q, &empty, 0.0, &params).cell == tl.cell(q))
                    .count();
                (hits, held.len())
            })
            .collect()
    });
    tune_alpha(candidates, |a| {
        let i = candidates.iter().position(|&c| c == a).expect("candidate");
        per_user
            .iter()
            .fold((0, 0), |acc, v| (acc.0 + v[i].0, acc.1 + v[i].1))
    })
    .unwrap_or(DEFAULT_ALPHA)
}

pub fn gamma_grid() -> Vec<f64> {
    (0..=10).map(|i| f64::from(i) * 0.1).collect()
}

fn tune_poi_gamma(
    training: &[AssignedTimeline],
    community: &Community,
    law: &PowerLaw,
    spec: &GridSpec,
    seed: u64,
    exec: Exec,
) -> f64 {
    let held: Vec<Vec<usize>> = exec.map(training, |tl| holdout(tl, ALPHA_HOLDOUT, seed));
    let inner_cells: Vec<Vec<u32>> = exec.map_range(training.len(), |i| {
        compact_cells(&training[i].masked(held[i].iter().copied()))
    });
    let r = community.resolution;
    let grid = gamma_grid();
    let per_user: Vec<Vec<usize>> = exec.map_range(training.len(), |i| {
        let user = PoiUser::new(i, &inner_cells, &community.neighbors[i], r);
        grid.iter()
            .map(|&g| {
                held[i]
                    .iter()
                    .filter(|&&q| {
                        let dt = TimeIndex::from_q(q as u32, r).day_type().index();
                        let ranked = poi_ranked(&user, q, law, spec, &community.neighbors[i][dt], &inner_cells, g, 1);
                        ranked.first().map(|e| e.0) == training[i].cell(q)
                    })
                    .count()
            })
            .collect()
    });
    let total: usize = held.iter().map(Vec::len).sum();
    tune_alpha(&grid, |g| {
        let i = grid.iter().position(|&c| c == g).expect("candidate");
        (per_user.iter().map(|v| v[i]).sum(), total)
    })
    .unwrap_or(DEFAULT_POI_GAMMA)
}

/// Train every requested model on the split, predict the held-out slots and score them.
pub fn run_models(cohort: &PreparedCohort, split: &SplitCohort, models: &[Model], params: &PipelineParams) -> Result<RunOutput> {
    let exec = params.exec;
    let r = cohort.resolution;
    let training = &split.training;
    let tests: Vec<&Vec<usize>> = split.mask.users.iter().map(|u| &u.test).collect();
    let needs_community = models.iter().any(|m| matches!(m, Model::Ilc | Model::Poi));
    let community = needs_community.then(|| Community::build(training, params.m, exec));
    let needs_ilc = models.iter().any(|m| matches!(m, Model::Ilc | Model::Markov0 | Model::Markov1));
    let ilc_users: Vec<IlcUser> = if needs_ilc {
        exec.map(training, IlcUser::new)
    } else {
        Vec::new()
    };
    let alpha = match params.alpha {
        Some(a) => a,
        None if models.contains(&Model::Ilc) => tune_cohort_alpha(training, &alpha_grid(), params.seed, exec),
        None => DEFAULT_ALPHA,
    };
    let ilc_params = IlcParams {
        alpha,
        k_top: params.k_top,
    };
    let mut outputs = Vec::new();
    let mut poi_gamma = None;
    let mut power_law = None;
    for &model in models {
        let predictions: Vec<Vec<SlotPrediction>> = match model {
            Model::Ilc => {
                let community = community.as_ref().expect("built for ilc");
                let betas: Vec<BetaTable> = match params.beta {
                    Some(b) => vec![BetaTable::constant(b, r); training.len()],
                    None => {
                        let tuned = exec.map_range(training.len(), |i| {
                            let samples = beta_samples(&ilc_users[i], &training[i], Some((community, i)), alpha);
                            tune_user_betas(&samples, r)
                        });
                        resolve_betas(&tuned, r)
                    }
                };
                exec.map_range(training.len(), |i| {
                    tests[i]
                        .iter()
                        .map(|&q| {
                            let k = TimeIndex::from_q(q as u32, r).k;
                            ilc_users[i].predict(q, &community.prob(i, q), betas[i].get(k), &ilc_params)
                        })
                        .collect()
                })
            }
            Model::HomeWork => exec.map_range(training.len(), |i| {
                let profile = HomeWorkProfile::fit(&training[i]);
                tests[i]
                    .iter()
                    .map(|&q| ranked_prediction(home_work_ranked(&profile, q, r)))
                    .collect()
            }),
            Model::Markov0 => exec.map_range(training.len(), |i| {
                tests[i]
                    .iter()
                    .map(|&q| ranked_prediction(markov0_ranked(&ilc_users[i].tables, q, params.k_top)))
                    .collect()
            }),
            Model::Markov1 => exec.map_range(training.len(), |i| {
                let mut all = markov1_ranked(&ilc_users[i].tables, &training[i], params.k_top);
                tests[i]
                    .iter()
                    .map(|&q| ranked_prediction(std::mem::take(&mut all[q])))
                    .collect()
            }),
            Model::Poi => {
                let community = community.as_ref().expect("built for poi");
                let law = poi_fit(training, &cohort.spec);
                let gamma = params
                    .poi_gamma
                    .unwrap_or_else(|| tune_poi_gamma(training, community, &law, &cohort.spec, params.seed, exec));
                poi_gamma = Some(gamma);
                power_law = Some(law);
                exec.map_range(training.len(), |i| {
                    let user = PoiUser::new(i, &community.cells, &community.neighbors[i], r);
                    tests[i]
                        .iter()
                        .map(|&q| {
                            let dt = TimeIndex::from_q(q as u32, r).day_type().index();
                            ranked_prediction(poi_ranked(
                                &user,
                                q,
                                &law,
                                &cohort.spec,
                                &community.neighbors[i][dt],
                                &community.cells,
                                gamma,
                                params.k_top,
                            ))
                        })
                        .collect()
                })
            }
            Model::NextPlace => exec.map_range(training.len(), |i| {
                let pred = nextplace_predict(&nextplace_fit(&training[i]), &training[i]);
                tests[i].iter().map(|&q| point_prediction(pred[q])).collect()
            }),
        };
        outputs.push(ModelOutput { model, predictions });
    }
    let distinct: Vec<usize> = cohort.timelines.iter().map(AssignedTimeline::distinct_cells).collect();
    let models_report = outputs
        .iter()
        .map(|o| score_model(o.model.as_str(), split, &o.predictions, &distinct))
        .collect();
    Ok(RunOutput {
        alpha,
        poi_gamma,
        power_law,
        report: EvalReport {
            seed: params.seed,
            users: training.len(),
            alpha,
            models: models_report,
        },
        outputs,
    })
}

/// Score predictions for any model, including externally produced ones.
pub fn score_model(name: &str, split: &SplitCohort, predictions: &[Vec<SlotPrediction>], distinct: &[usize]) -> ModelReport {
    let scores: Vec<UserScore> = split
        .mask
        .users
        .iter()
        .enumerate()
        .map(|(i, u)| score_user(&u.user_id, &split.truth[i], &predictions[i], distinct[i]))
        .collect();
    evaluate(name, &scores)
}

/// Split, train, predict and evaluate in one call.
pub fn run(cohort: &PreparedCohort, models: &[Model], params: &PipelineParams) -> Result<(SplitCohort, RunOutput)> {
    let split = split_cohort(cohort, params.train_ratio, params.seed, params.exec);
    let out = run_models(cohort, &split, models, params)?;
    Ok((split, out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationAxis {
    M,
    Users,
    Grid,
    Resolution,
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "m" => Ok(AblationAxis::M),
            "users" => Ok(AblationAxis::Users),
            "grid" => Ok(AblationAxis::Grid),
            "r" | "r_i" | "resolution" => Ok(AblationAxis::Resolution),
            other => Err(Error::Config(format!("unknown ablation axis {other:?}"))),
        }
    }
}

impl AblationAxis {
    pub fn default_values(self) -> Vec<f64> {
        match self {
            AblationAxis::M => vec![0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0],
            AblationAxis::Users => vec![5.0, 10.0, 50.0, 100.0, 200.0],
            AblationAxis::Grid => vec![1.0, 0.5, 0.1],
            AblationAxis::Resolution => vec![1.0, 2.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub axis: AblationAxis,
    pub value: f64,
    pub replications: usize,
    pub users: usize,
    pub top1_acc: f64,
    pub top3_acc: f64,
    pub filled_pct: f64,
}

fn ilc_point(axis: AblationAxis, value: f64, reports: &[ModelReport], users: usize) -> AblationPoint {
    let n = reports.len().max(1) as f64;
    AblationPoint {
        axis,
        value,
        replications: reports.len(),
        users,
        top1_acc: reports.iter().map(|r| r.top1_acc).sum::<f64>() / n,
        top3_acc: reports.iter().map(|r| r.top3_acc).sum::<f64>() / n,
        filled_pct: reports.iter().map(|r| r.filled_pct).sum::<f64>() / n,
    }
}

fn ilc_report(cohort: &PreparedCohort, params: &PipelineParams) -> Result<ModelReport> {
    let (_, out) = run(cohort, &[Model::Ilc], params)?;
    Ok(out.report.models.into_iter().next().expect("one model"))
}

/// Sweep one axis with ILC. The user-count axis averages `replications`
/// random subsets per point; other axes run once.
pub fn ablate(
    events: &[RawEvent],
    setup: &Setup,
    params: &PipelineParams,
    axis: AblationAxis,
    values: &[f64],
    replications: usize,
) -> Result<Vec<AblationPoint>> {
    let mut out = Vec::new();
    match axis {
        AblationAxis::M => {
            let (cohort, _) = preprocess(events.to_vec(), setup, params.exec)?;
            let split = split_cohort(&cohort, params.train_ratio, params.seed, params.exec);
            for &v in values {
                let p = PipelineParams { m: v as usize, ..*params };
                let out_v = run_models(&cohort, &split, &[Model::Ilc], &p)?;
                out.push(ilc_point(axis, v, &out_v.report.models, cohort.timelines.len()));
            }
        }
        AblationAxis::Users => {
            let (cohort, _) = preprocess(events.to_vec(), setup, params.exec)?;
            for &v in values {
                let n = (v as usize).min(cohort.timelines.len());
                let mut reports = Vec::new();
                for rep in 0..replications.max(1) {
                    let mut rng = ChaCha8Rng::seed_from_u64(user_seed(params.seed, "users", rep as u64 + 1));
                    let mut idx: Vec<usize> = (0..cohort.timelines.len()).collect();
                    idx.shuffle(&mut rng);
                    idx.truncate(n);
                    idx.sort_unstable();
                    let sub = PreparedCohort {
                        timelines: idx.iter().map(|&i| cohort.timelines[i].clone()).collect(),
                        ..cohort.clone()
                    };
                    reports.push(ilc_report(&sub, params)?);
                }
                out.push(ilc_point(axis, v, &reports, n));
            }
        }
        AblationAxis::Grid => {
            for &v in values {
                let s = Setup { cell_size: v, ..setup.clone() };
                let (cohort, _) = preprocess(events.to_vec(), &s, params.exec)?;
                let report = ilc_report(&cohort, params)?;
                out.push(ilc_point(axis, v, &[report], cohort.timelines.len()));
            }
        }
        AblationAxis::Resolution => {
            for &v in values {
                let r = Resolution::try_from(v as u32)?;
                let s = Setup { resolution: r, ..setup.clone() };
                let (cohort, _) = preprocess(events.to_vec(), &s, params.exec)?;
                let report = ilc_report(&cohort, params)?;
                out.push(ilc_point(axis, v, &[report], cohort.timelines.len()));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_cohort, CohortConfig};

    fn setup_for(cfg: &CohortConfig) -> Setup {
        Setup {
            bbox: cfg.bbox(),
            cell_size: cfg.cell_size,
            resolution: cfg.resolution,
            clock: LocalClock::default(),
            window: Some(cfg.window().unwrap()),
            exclude: Vec::new(),
        }
    }

    fn small() -> CohortConfig {
        CohortConfig {
            n_users: 12,
            n_groups: 3,
            weeks: 6,
            keep_rate: 0.3,
            ..CohortConfig::default()
        }
    }

    #[test]
    fn model_names_round_trip() {
        for m in Model::ALL {
            assert_eq!(m.as_str().parse::<Model>().unwrap(), m);
        }
        assert!("rnn".parse::<Model>().is_err());
    }

    #[test]
    fn preprocess_counts_add_up() {
        let cfg = small();
        let c = generate_cohort(&cfg, Exec::Sequential).unwrap();
        let mut s = setup_for(&cfg);
        s.exclude = vec!["u0003".into()];
        let (cohort, report) = preprocess(c.events(), &s, Exec::Parallel).unwrap();
        assert_eq!(report.users_total, 12);
        assert_eq!(report.excluded_listed, 1);
        assert_eq!(report.excluded_spoofing, 0);
        assert_eq!(report.included + report.failed_inclusion, 11);
        assert_eq!(cohort.timelines.len(), report.included);
        assert!(cohort.timelines.windows(2).all(|w| w[0].user_id < w[1].user_id));
    }

    #[test]
    fn empty_input_gives_empty_cohort() {
        let cfg = small();
        let (cohort, report) = preprocess(Vec::new(), &setup_for(&cfg), Exec::Sequential).unwrap();
        assert!(cohort.timelines.is_empty());
        assert_eq!(report.included, 0);
        let (_, out) = run(&cohort, &Model::ALL, &PipelineParams::default()).unwrap();
        assert_eq!(out.report.models.len(), 6);
        assert!(out.report.models.iter().all(|m| m.accuracy_undefined));
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let cfg = small();
        let c = generate_cohort(&cfg, Exec::Sequential).unwrap();
        let (cohort, _) = preprocess(c.events(), &setup_for(&cfg), Exec::Sequential).unwrap();
        let seq = PipelineParams {
            exec: Exec::Sequential,
            alpha: None,
            poi_gamma: None,
            ..PipelineParams::default()
        };
        let par = PipelineParams { exec: Exec::Parallel, ..seq };
        let (_, a) = run(&cohort, &Model::ALL, &seq).unwrap();
        let (_, b) = run(&cohort, &Model::ALL, &par).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.outputs, b.outputs);
    }

    #[test]
    fn no_leakage_into_training() {
        let cfg = small();
        let c = generate_cohort(&cfg, Exec::Sequential).unwrap();
        let (cohort, _) = preprocess(c.events(), &setup_for(&cfg), Exec::Sequential).unwrap();
        let split = split_cohort(&cohort, 0.7, 5, Exec::Sequential);
        for (i, u) in split.mask.users.iter().enumerate() {
            assert_eq!(u.user_id, cohort.timelines[i].user_id);
            for &q in &u.test {
                assert!(split.training[i].slots[q].is_none());
            }
            assert_eq!(split.truth[i].len(), u.test.len());
        }
        let again = apply_mask(&cohort, &split.mask).unwrap();
        assert_eq!(again, split);
    }

    #[test]
    fn resolved_betas_fall_back() {
        let r = Resolution::OneHour;
        let mut a = vec![None; 168];
        a[10] = Some(1.0);
        let mut b = vec![None; 168];
        b[10] = Some(0.5);
        // Tuesday 10:00 shares (weekday, h = 10) with Monday 10:00
        let tables = resolve_betas(&[a, b], r);
        assert_eq!(tables[0].get(10), 1.0);
        assert_eq!(tables[1].get(10), 0.5);
        assert_eq!(tables[0].get(34), 0.75);
        assert_eq!(tables[0].get(5 * 24 + 10), 0.5);
        let lonely = resolve_betas(&[vec![None; 168]], r);
        assert_eq!(lonely[0].get(34), 0.5);
    }
}
