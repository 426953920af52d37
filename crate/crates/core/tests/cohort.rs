use std::collections::BTreeSet;

use gapfill::par::Exec;
use gapfill::pipeline::{preprocess, Setup};
use gapfill::synth::{generate_cohort, CohortConfig, GroundTruthTimeline};
use gapfill::timeline::{is_daytime_hour, is_night_hour, LocalClock, Provenance};

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

#[test]
fn full_observation_reproduces_ground_truth() {
    let cfg = CohortConfig {
        n_users: 8,
        n_groups: 2,
        weeks: 3,
        keep_rate: 1.0,
        ..CohortConfig::default()
    };
    let c = generate_cohort(&cfg, Exec::Parallel).unwrap();
    let (cohort, report) = preprocess(c.events(), &setup_for(&cfg), Exec::Parallel).unwrap();
    assert_eq!(report.included, 8);
    for (tl, gt) in cohort.timelines.iter().zip(&c.users) {
        assert_eq!(tl.user_id, gt.user_id);
        for (q, slot) in tl.slots.iter().enumerate() {
            let slot = slot.expect("every slot observed");
            assert_eq!(slot.cell, gt.cells[q]);
            assert_eq!(slot.provenance, Provenance::Observed);
        }
    }
}

// Hours of day covered by an event, by a same-cell pair at most six hours
// apart, or at 22:00 through a home inferred from any night observation.
fn included_oracle(gt: &GroundTruthTimeline, start: i64) -> bool {
    let slots: Vec<usize> = gt.events.iter().map(|e| ((e.ts - start) / 3600) as usize).collect();
    let mut hours: BTreeSet<usize> = slots.iter().map(|q| q % 24).collect();
    for w in slots.windows(2) {
        if gt.cells[w[0]] == gt.cells[w[1]] && w[1] - w[0] <= 6 {
            hours.extend((w[0] + 1..w[1]).map(|q| q % 24));
        }
    }
    if slots.iter().any(|q| is_night_hour((q % 24) as u32)) {
        hours.insert(22);
    }
    (0..24).filter(|&h| is_daytime_hour(h as u32)).all(|h| hours.contains(&h))
}

#[test]
fn inclusion_count_matches_oracle() {
    let cfg = CohortConfig {
        n_users: 60,
        n_groups: 6,
        weeks: 4,
        keep_rate: 0.05,
        force_daytime: false,
        ..CohortConfig::default()
    };
    let c = generate_cohort(&cfg, Exec::Parallel).unwrap();
    let start = c.window().start_local();
    let expected: Vec<&str> = c
        .users
        .iter()
        .filter(|u| included_oracle(u, start))
        .map(|u| u.user_id.as_str())
        .collect();
    let (cohort, report) = preprocess(c.events(), &setup_for(&cfg), Exec::Sequential).unwrap();
    assert!(!expected.is_empty() && expected.len() < 60, "fixture should split the cohort");
    assert_eq!(report.included, expected.len());
    let got: Vec<&str> = cohort.timelines.iter().map(|t| t.user_id.as_str()).collect();
    assert_eq!(got, expected);
    assert_eq!(report.failed_inclusion, 60 - expected.len());
}
