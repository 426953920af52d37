use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use gapfill::eval::{split, tune_beta, EvalReport};
use gapfill::geo::{GeoPoint, GridCell};
use gapfill::ilc::{information_loss, inter, IlcUser};
use gapfill::ingest::{assess_account, RawEvent, UserEvents};
use gapfill::par::Exec;
use gapfill::pipeline::{
    ablate, beta_samples, preprocess, run, split_cohort, AblationAxis, Model, PipelineParams, PreparedCohort, Setup,
};
use gapfill::probability::{Community, ProbList};
use gapfill::synth::{generate_cohort, CohortConfig};
use gapfill::timeline::{time_index, AssignedTimeline, LocalClock, Provenance, Resolution, Slot, StudyWindow};

const SEEDS: u64 = 10;

fn verdict(n: u32, what: &str, ok: bool, detail: &str) {
    println!("criterion {n} {what}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} {what}: {detail}");
}

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

fn prepared(cfg: &CohortConfig) -> PreparedCohort {
    let c = generate_cohort(cfg, Exec::Parallel).unwrap();
    preprocess(c.events(), &setup_for(cfg), Exec::Parallel).unwrap().0
}

fn params(seed: u64) -> PipelineParams {
    PipelineParams {
        seed,
        ..PipelineParams::default()
    }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// All models on the default noisy cohort, one run per seed.
fn default_runs() -> &'static [EvalReport] {
    static RUNS: OnceLock<Vec<EvalReport>> = OnceLock::new();
    RUNS.get_or_init(|| {
        (0..SEEDS)
            .map(|seed| {
                let cohort = prepared(&CohortConfig {
                    seed,
                    ..CohortConfig::default()
                });
                run(&cohort, &Model::ALL, &params(seed)).unwrap().1.report
            })
            .collect()
    })
}

// Modal cell over training slots sharing the slot of week, then (day type,
// hour), then hour; ties to the smaller cell.
fn markov0_oracle(tl: &AssignedTimeline, q: usize) -> Option<GridCell> {
    let per_day = tl.resolution.slots_per_day() as usize;
    let per_week = per_day * 7;
    let weekend = |x: usize| (x % per_week) / per_day >= 5;
    let same: [Box<dyn Fn(usize) -> bool>; 3] = [
        Box::new(|x| x % per_week == q % per_week),
        Box::new(|x| x % per_day == q % per_day && weekend(x) == weekend(q)),
        Box::new(|x| x % per_day == q % per_day),
    ];
    for keep in &same {
        let mut counts: BTreeMap<GridCell, usize> = BTreeMap::new();
        for x in 0..tl.len() {
            if let Some(c) = tl.cell(x) {
                if keep(x) {
                    *counts.entry(c).or_default() += 1;
                }
            }
        }
        if let Some(best) = counts.values().max() {
            return counts.iter().find(|e| e.1 == best).map(|e| *e.0);
        }
    }
    None
}

#[test]
fn criterion_1_markov0_matches_brute_force() {
    let t = Instant::now();
    let cfg = CohortConfig {
        n_users: 50,
        seed: 3,
        ..CohortConfig::default()
    };
    let cohort = prepared(&cfg);
    let (split, out) = run(&cohort, &[Model::Markov0], &params(3)).unwrap();
    let preds = &out.outputs[0].predictions;
    let mut total = 0;
    let mut agree = 0;
    for (i, u) in split.mask.users.iter().enumerate() {
        for (j, &q) in u.test.iter().enumerate() {
            total += 1;
            agree += usize::from(preds[i][j].cell == markov0_oracle(&split.training[i], q));
        }
    }
    let elapsed = t.elapsed();
    verdict(
        1,
        "markov0 oracle equivalence",
        total > 0 && agree == total && elapsed < Duration::from_secs(10),
        &format!("{agree}/{total} slots agree, {elapsed:.1?}"),
    );
}

#[test]
fn criterion_2_noiseless_recovery() {
    let t = Instant::now();
    let cfg = CohortConfig {
        epsilon: 0.0,
        keep_rate: 0.3,
        ..CohortConfig::default()
    };
    let cohort = prepared(&cfg);
    let report = run(&cohort, &[Model::Ilc], &params(0)).unwrap().1.report;
    let ilc = report.model("ilc").unwrap();
    let elapsed = t.elapsed();
    verdict(
        2,
        "noiseless recovery",
        ilc.test_points > 0 && ilc.top1_acc == 100.0 && ilc.filled_pct == 100.0 && elapsed < Duration::from_secs(60),
        &format!(
            "top1 {:.2}%, filled {:.2}% over {} test slots, {elapsed:.1?}",
            ilc.top1_acc, ilc.filled_pct, ilc.test_points
        ),
    );
}

#[test]
fn criterion_3_fill_rate_ordering() {
    let mut ok = true;
    let mut worst_np = 0.0f64;
    for report in default_runs() {
        let fill = |m: &str| report.model(m).unwrap().filled_pct;
        let others = ["ilc", "homework", "markov0", "markov1", "poi"];
        ok &= fill("ilc") == 100.0 && fill("homework") == 100.0 && fill("markov0") == 100.0;
        ok &= fill("markov1") < 100.0;
        ok &= others.iter().all(|m| fill("nextplace") < fill(m));
        worst_np = worst_np.max(fill("nextplace"));
    }
    let r0 = &default_runs()[0];
    verdict(
        3,
        "fill-rate ordering",
        ok,
        &format!(
            "{SEEDS} seeds; seed 0 markov1 {:.2}%, poi {:.2}%, nextplace {:.2}%; max nextplace {worst_np:.2}%",
            r0.model("markov1").unwrap().filled_pct,
            r0.model("poi").unwrap().filled_pct,
            r0.model("nextplace").unwrap().filled_pct,
        ),
    );
}

#[test]
fn criterion_4_accuracy_ordering() {
    let runs = default_runs();
    // unfilled test slots count as misses, as in the published table
    let all = |m: &str| mean(runs.iter().map(|r| r.model(m).unwrap().top1_acc_all));
    let predicted = |m: &str| mean(runs.iter().map(|r| r.model(m).unwrap().top1_acc));
    let (ilc, hw, m1) = (all("ilc"), all("homework"), all("markov1"));
    let top3_ok = runs.iter().all(|r| {
        let m = r.model("ilc").unwrap();
        m.top3_acc >= m.top1_acc
    });
    verdict(
        4,
        "accuracy ordering",
        ilc - hw >= 1.0 && hw - m1 >= 1.0 && top3_ok,
        &format!(
            "ilc {ilc:.2} > homework {hw:.2} > markov1 {m1:.2} over all test slots; \
             over predicted slots only markov1 scores {:.2}; ilc top3 >= top1 on every run: {top3_ok}",
            predicted("markov1")
        ),
    );
}

#[test]
fn criterion_5_community_ablation() {
    let values = [0.0, 1.0, 20.0, 50.0];
    let mut acc = [0.0; 4];
    for seed in 0..SEEDS {
        let cfg = CohortConfig {
            seed,
            ..CohortConfig::default()
        };
        assert_eq!(cfg.n_groups, 10);
        let events = generate_cohort(&cfg, Exec::Parallel).unwrap().events();
        let points = ablate(&events, &setup_for(&cfg), &params(seed), AblationAxis::M, &values, 1).unwrap();
        for (a, p) in acc.iter_mut().zip(&points) {
            *a += p.top1_acc / SEEDS as f64;
        }
    }
    let first = acc[1] - acc[0];
    let late = acc[3] - acc[2];
    verdict(
        5,
        "community ablation",
        first > 0.0 && late < first,
        &format!(
            "m=0 {:.3}, m=1 {:.3}, m=20 {:.3}, m=50 {:.3}; gain from first user {first:.3}, from 20 to 50 {late:.3}",
            acc[0], acc[1], acc[2], acc[3]
        ),
    );
}

#[test]
fn criterion_6_resolution_and_grid_trends() {
    let mut by_r = [0.0; 2];
    let mut by_grid = [0.0; 3];
    for seed in 0..SEEDS {
        let cfg = CohortConfig {
            seed,
            ..CohortConfig::default()
        };
        let events = generate_cohort(&cfg, Exec::Parallel).unwrap().events();
        let setup = setup_for(&cfg);
        let p = params(seed);
        let r = ablate(&events, &setup, &p, AblationAxis::Resolution, &[1.0, 2.0], 1).unwrap();
        let g = ablate(&events, &setup, &p, AblationAxis::Grid, &[1.0, 0.5, 0.1], 1).unwrap();
        for (a, x) in by_r.iter_mut().zip(&r) {
            *a += x.top1_acc / SEEDS as f64;
        }
        for (a, x) in by_grid.iter_mut().zip(&g) {
            *a += x.top1_acc / SEEDS as f64;
        }
    }
    verdict(
        6,
        "resolution and grid trends",
        by_r[0] >= by_r[1] && by_grid[0] >= by_grid[1] && by_grid[1] >= by_grid[2],
        &format!(
            "r=1 {:.2} vs r=2 {:.2}; 1 mi {:.2}, 0.5 mi {:.2}, 0.1 mi {:.2}",
            by_r[0], by_r[1], by_grid[0], by_grid[1], by_grid[2]
        ),
    );
}

fn user_with_jumps(violations: usize) -> UserEvents {
    let home = GeoPoint { lat: 40.7, lon: -74.0 };
    let away = GeoPoint { lat: 41.7, lon: -74.0 };
    // each excursion costs two violations (out and back); an odd count ends away
    let mut away_at = Vec::new();
    for j in 0..violations / 2 {
        away_at.push(10 + 10 * j);
    }
    let trailing = violations % 2 == 1;
    let events = (0..100)
        .map(|i| RawEvent {
            user_id: "s".into(),
            ts: i as i64 * 3600,
            point: if away_at.contains(&i) || (trailing && i == 99) { away } else { home },
        })
        .collect();
    UserEvents {
        user_id: "s".into(),
        events,
    }
}

fn timeline(cells: &[(usize, u32)], weeks: u32) -> AssignedTimeline {
    let w = StudyWindow::new(NaiveDate::from_ymd_opt(2014, 1, 6).unwrap(), weeks).unwrap();
    let mut tl = AssignedTimeline::empty("u", Resolution::OneHour, w);
    for &(q, c) in cells {
        tl.slots[q] = Some(Slot {
            cell: GridCell(c),
            provenance: Provenance::Observed,
        });
    }
    tl
}

#[test]
fn criterion_7_unit_examples() {
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };

    check("lambda n=1", information_loss(1, 0.1) == 1.0);
    check("lambda n=2", (information_loss(2, 0.1) - 0.9).abs() < 1e-12);
    check("lambda n=3", (information_loss(3, 0.1) - 0.81).abs() < 1e-12);

    let (a, c) = (GridCell(1), GridCell(3));
    let l1 = ProbList::from_pairs([(a, 0.6), (GridCell(2), 0.4)]);
    let l2 = ProbList::point(c);
    let e = ProbList::new();
    check("inter both", inter(&l1, &l2) == Some(a));
    check("inter first only", inter(&l1, &e) == Some(a));
    check("inter second only", inter(&e, &l2) == Some(c));
    check("inter neither", inter(&e, &e).is_none());

    let six = assess_account(&user_with_jumps(6), false);
    let five = assess_account(&user_with_jumps(5), false);
    check("6 of 100 violating", six.violating_events == 6 && six.excluded);
    check("5 of 100 violating", five.violating_events == 5 && !five.excluded);

    // Tuesday 19:05 in a study starting Monday 00:00
    let start = 0;
    let ts = 24 * 3600 + 19 * 3600 + 5 * 60;
    let one = time_index(ts, Resolution::OneHour, start).unwrap();
    let two = time_index(ts, Resolution::TwoHours, start).unwrap();
    check("k=43 at one hour", one.k == 43 && one.h == 19 && one.d == 1);
    check("k=22 at two hours", two.k == 22 && two.h == 10 && two.d == 1);

    let cfg = CohortConfig {
        n_users: 12,
        n_groups: 3,
        weeks: 8,
        keep_rate: 0.3,
        ..CohortConfig::default()
    };
    let cohort = prepared(&cfg);
    let tl = &cohort.timelines[0];
    check("split determinism", split(tl, 0.7, 4) == split(tl, 0.7, 4));
    check("split depends on seed", split(tl, 0.7, 4) != split(tl, 0.7, 5));
    let s1 = split_cohort(&cohort, 0.7, 4, Exec::Sequential);
    let s2 = split_cohort(&cohort, 0.7, 4, Exec::Parallel);
    check("split independent of exec", s1 == s2);
    let mut leaks = 0;
    let mut lost = 0;
    for (i, u) in s1.mask.users.iter().enumerate() {
        let full = &cohort.timelines[i];
        for q in 0..full.len() {
            let held = u.test.binary_search(&q).is_ok();
            match (held, s1.training[i].cell(q)) {
                (true, Some(_)) => leaks += 1,
                (false, got) if got != full.cell(q) => lost += 1,
                _ => {}
            }
        }
        for (j, &q) in u.test.iter().enumerate() {
            if full.cell(q) != Some(s1.truth[i][j]) {
                lost += 1;
            }
        }
    }
    check("no test slot in training", leaks == 0);
    check("training and truth partition the timeline", lost == 0);

    verdict(
        7,
        "unit examples",
        failures.is_empty(),
        &if failures.is_empty() {
            "lambda, inter, speed boundary, slot examples, split audit".to_string()
        } else {
            format!("failed: {}", failures.join(", "))
        },
    );
}

#[test]
fn criterion_8_beta_tuning() {
    // Both users sit at A, A, B, B on Wednesday 12:00 of four weeks. Leaving a
    // week out always tips the individual list to the other cell, while the
    // neighbour reports the true one.
    let k = 2 * 24 + 12;
    let cells: Vec<(usize, u32)> = [1, 1, 2, 2].iter().enumerate().map(|(w, &c)| (w * 168 + k, c)).collect();
    let me = timeline(&cells, 4);
    let peer = AssignedTimeline {
        user_id: "v".into(),
        ..timeline(&cells, 4)
    };
    let cohort = [me.clone(), peer];
    let community = Community::build(&cohort, 1, Exec::Sequential);
    let user = IlcUser::new(&me);
    let with_peer = beta_samples(&user, &me, Some((&community, 0)), 0.1);
    let samples = &with_peer[&(k as u32)];
    let constructed = samples.len() == 4
        && samples.iter().all(|s| s.individual.argmax() != Some(s.truth) && s.community.argmax() == Some(s.truth));
    let tuned = tune_beta(samples);

    let alone = beta_samples(&user, &me, None, 0.1);
    let empty = &alone[&(k as u32)];
    let empty_ok = empty.iter().all(|s| s.community.is_empty());
    let tuned_empty = tune_beta(empty);

    verdict(
        8,
        "beta tuning",
        constructed && tuned == Some(1.0) && empty_ok && tuned_empty == Some(0.0),
        &format!("neighbour right, individual wrong: {tuned:?}; empty community: {tuned_empty:?}"),
    );
}
