//! Shared fixtures for the criterion benches.

use momosim_core::actors::RunPlan;
use momosim_core::domain::{Money, PersonId};
use momosim_core::domain::ProtocolKind;
use momosim_core::scenario::ScenarioConfig;
use momosim_core::simnet::{EventLog, SimWorld};

/// Demo population with logging off, so benches measure protocol work only.
pub fn bench_world(seed: u64) -> SimWorld {
    ScenarioConfig::demo()
        .build_world(Some(seed), EventLog::disabled())
        .expect("demo world builds")
}

pub fn bench_plan(kind: ProtocolKind) -> RunPlan {
    let mut plan = RunPlan::new(kind, PersonId(1), Money(50_000), "400200");
    if kind.is_delegated() {
        plan = plan.with_collector(PersonId(2));
    }
    plan
}
