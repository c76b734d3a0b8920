use criterion::{criterion_group, criterion_main};

criterion_group!(benches, specplan_bench::matching, specplan_bench::simulation, specplan_bench::grid);
criterion_main!(benches);
