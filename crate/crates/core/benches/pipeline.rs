use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gapfill::par::Exec;
use gapfill::pipeline::{preprocess, run, split_cohort, Model, PipelineParams, PreparedCohort, Setup};
use gapfill::probability::Community;
use gapfill::synth::{generate_cohort, CohortConfig};
use gapfill::timeline::LocalClock;

fn cohort() -> (CohortConfig, PreparedCohort, Setup) {
    let cfg = CohortConfig {
        n_users: 60,
        n_groups: 6,
        weeks: 12,
        ..CohortConfig::default()
    };
    let setup = Setup {
        bbox: cfg.bbox(),
        cell_size: cfg.cell_size,
        resolution: cfg.resolution,
        clock: LocalClock::default(),
        window: Some(cfg.window().unwrap()),
        exclude: Vec::new(),
    };
    let c = generate_cohort(&cfg, Exec::Parallel).unwrap();
    let (prepared, _) = preprocess(c.events(), &setup, Exec::Parallel).unwrap();
    (cfg, prepared, setup)
}

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn bench(c: &mut Criterion) {
    let (cfg, prepared, setup) = cohort();
    let events = generate_cohort(&cfg, Exec::Parallel).unwrap().events();
    let split = split_cohort(&prepared, 0.7, 0, Exec::Parallel);

    let mut g = c.benchmark_group("preprocess");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| preprocess(black_box(events.clone()), &setup, exec).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("community");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| Community::build(black_box(&split.training), 10, exec))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("ilc_run");
    g.sample_size(10);
    for (name, exec) in MODES {
        let params = PipelineParams {
            exec,
            ..PipelineParams::default()
        };
        g.bench_with_input(BenchmarkId::from_parameter(name), &params, |b, params| {
            b.iter(|| run(black_box(&prepared), &[Model::Ilc], params).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
