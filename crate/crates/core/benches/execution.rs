use carleman_lab::carleman::{geometric_s_grid, verify_ensemble};
use carleman_lab::stability::{make_initial_states, make_pair, paired_solves, Case, PairOptions, PairSpec};
use carleman_lab::weight::build_default_weight;
use carleman_lab::{Execution, SpaceTimeGrid};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn ensemble(c: &mut Criterion) {
    let g = SpaceTimeGrid::unit(1, 101, 201, 2.0).unwrap();
    let w = build_default_weight(&g, &[-0.1], 1.0, 100.0).unwrap();
    let sg = geometric_s_grid(1.0, 100.0, 12).unwrap();
    let mut group = c.benchmark_group("carleman_ensemble_20");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| verify_ensemble(&g, &w, &sg, 20, 1, exec).unwrap())
        });
    }
    group.finish();
}

fn paired(c: &mut Criterion) {
    let g = SpaceTimeGrid::unit(2, 31, 61, 2.0).unwrap();
    let pair = make_pair(&g, PairSpec::default_for(Case::Case2), 0.1, PairOptions::default()).unwrap();
    let states = make_initial_states(Case::Case2, &g, 1.0).unwrap();
    let mut group = c.benchmark_group("case2_paired_solves");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| paired_solves(&g, &pair, &states, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, ensemble, paired);
criterion_main!(benches);
