//! Release gate: one test per acceptance criterion, each printing a single
//! pass/fail line. Run with `cargo test --test acceptance -- --nocapture` to
//! see every line even when all criteria pass.

use momosim_core::selftest;
use momosim_core::selftest::CriterionOutcome;

fn gate(outcome: CriterionOutcome) {
    println!("{outcome}");
    assert!(outcome.passed, "{outcome}");
}

#[test]
fn criterion_01_round_trip_delta() {
    gate(selftest::round_trip_delta());
}

#[test]
fn criterion_02_withdrawal_attack_cases() {
    gate(selftest::withdrawal_attack_cases());
}

#[test]
fn criterion_03_delegation_attack_cases() {
    gate(selftest::delegation_attack_cases());
}

#[test]
fn criterion_04_guessing_bound() {
    gate(selftest::guessing_bound());
}

#[test]
fn criterion_05_code_uniformity() {
    gate(selftest::code_uniformity());
}

#[test]
fn criterion_06_leakage_identity() {
    gate(selftest::identity_on_constructed_joints());
}

#[test]
fn criterion_07_data_minimization() {
    gate(selftest::data_minimization());
}

#[test]
fn criterion_08_fee_semantics() {
    gate(selftest::fee_semantics());
}

#[test]
fn criterion_09_lifecycle_and_conservation() {
    gate(selftest::lifecycle_and_conservation());
}

#[test]
fn criterion_10_determinism() {
    gate(selftest::determinism());
}

#[test]
fn criterion_11_delay_expiry() {
    gate(selftest::delay_expiry());
}
