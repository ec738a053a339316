//! Throughput of complete honest protocol runs, one fresh world per run.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use momosim_bench::{bench_plan, bench_world};
use momosim_core::actors::honest_run;
use momosim_core::domain::ProtocolKind;

fn honest_runs(c: &mut Criterion) {
    let mut group = c.benchmark_group("honest_run");
    for kind in ProtocolKind::ALL {
        let plan = bench_plan(kind);
        group.bench_function(kind.as_str(), |b| {
            b.iter_batched(
                || bench_world(1),
                |mut world| {
                    let outcome = honest_run(&mut world, &plan).expect("run completes");
                    assert!(outcome.completed);
                    world
                },
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, honest_runs);
criterion_main!(benches);
