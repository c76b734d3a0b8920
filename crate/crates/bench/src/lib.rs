//! Benchmark bodies, shared by `benches/planning.rs`.

use std::hint::black_box;

use criterion::{BenchmarkId, Criterion, Throughput};
use specplan_core::simkit::{run_accuracy_k_grid, simulate_run, GridBase};
use specplan_core::{normalized_edit_distance, MatchPolicy};

const SHORT: (&str, &str) = ("collect from A", "request money from A");
const LONG: (&str, &str) = (
    "Search for round-trip flights from Boston to Denver departing on the 14th and returning on the 21st",
    "search round trip flights Boston -> Denver, depart 14th, return 21st, economy, nonstop preferred",
);

pub fn matching(c: &mut Criterion) {
    let mut g = c.benchmark_group("edit_distance");
    for (name, (a, b)) in [("short", SHORT), ("long", LONG)] {
        g.throughput(Throughput::Bytes((a.len() + b.len()) as u64));
        g.bench_with_input(BenchmarkId::from_parameter(name), &(a, b), |bench, (a, b)| {
            bench.iter(|| normalized_edit_distance(black_box(a), black_box(b)))
        });
    }
    g.finish();
    let policy = MatchPolicy::soft(0.3);
    c.bench_function("soft_match/long", |b| {
        b.iter(|| policy.matches(black_box(LONG.0), black_box(LONG.1)))
    });
}

pub fn simulation(c: &mut Criterion) {
    let base = GridBase::default();
    let mut g = c.benchmark_group("simulate_run");
    for (acc, k) in [(1.0, 10), (0.5, 4), (0.0, 1)] {
        let world = base.world(acc, 7);
        g.bench_with_input(BenchmarkId::new(format!("acc{acc}"), k), &k, |b, &k| {
            b.iter(|| simulate_run(&world, &base.approx_spec(), &base.target_spec(), k).unwrap())
        });
    }
    g.finish();
}

pub fn grid(c: &mut Criterion) {
    let base = GridBase::default();
    let mut g = c.benchmark_group("grid");
    g.sample_size(20);
    g.bench_function("cell/acc0.5_k5_10seeds", |b| {
        b.iter(|| run_accuracy_k_grid(&base, &[0.5], &[5], 10).unwrap())
    });
    g.finish();
}
