//! Single-trial cost for each adversary case; governs Monte-Carlo wall time.

use criterion::{criterion_group, criterion_main, Criterion};
use momosim_core::adversary::{run_trial, AttackCase, AttackConfig};

fn attack_trials(c: &mut Criterion) {
    let cfg = AttackConfig::default();
    let mut group = c.benchmark_group("attack_trial");
    for case in [
        AttackCase::CodeGuess,
        AttackCase::StaleReplay,
        AttackCase::AmountInflation,
        AttackCase::UnauthorizedCollector,
    ] {
        group.bench_function(case.as_str(), |b| {
            let mut seed = 0u64;
            b.iter(|| {
                seed = seed.wrapping_add(1);
                run_trial(case, &cfg, seed)
            })
        });
    }
    group.finish();
}

criterion_group!(benches, attack_trials);
criterion_main!(benches);
