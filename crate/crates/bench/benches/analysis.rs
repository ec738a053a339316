//! Cost of exact information measures on in-memory joint distributions.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use momosim_core::analysis::{
    merchant_example_joint, verify_identity, DiscreteJoint, VAR_CODE, VAR_SIDE_INFO, VAR_USER,
};

fn identity_checks(c: &mut Criterion) {
    let mut group = c.benchmark_group("identity_check");
    for code_bits in [4u8, 8, 12] {
        let joint = merchant_example_joint(code_bits);
        group.bench_function(format!("code_bits_{code_bits}"), |b| {
            b.iter(|| {
                let check = verify_identity(&joint).expect("identity holds");
                assert!(check.two_path_residual.abs() <= 1e-9);
                check
            })
        });
    }
    group.finish();
}

fn mutual_information(c: &mut Criterion) {
    let joint = merchant_example_joint(8);
    c.bench_function("conditional_mi/merchant_8bit", |b| {
        b.iter(|| {
            joint
                .conditional_mi(&[VAR_USER], &[VAR_CODE], &[VAR_SIDE_INFO])
                .expect("variables exist")
        })
    });
}

fn joint_from_samples(c: &mut Criterion) {
    let samples: Vec<Vec<String>> = (0..10_000u32)
        .map(|i| vec![format!("u{}", i % 8), format!("c{}", i % 16)])
        .collect();
    let variables = vec![VAR_USER.to_string(), VAR_CODE.to_string()];
    c.bench_function("joint_from_samples/10k", |b| {
        b.iter_batched(
            || (variables.clone(), samples.clone()),
            |(vars, rows)| DiscreteJoint::from_samples(vars, rows).expect("valid samples"),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, identity_checks, mutual_information, joint_from_samples);
criterion_main!(benches);
