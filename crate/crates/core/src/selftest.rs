//! Runnable acceptance checks: one function per release criterion, each
//! returning a pass/fail outcome with a one-line summary. The `acceptance`
//! integration test target and the `selftest` CLI subcommand both call these,
//! so the gate is identical everywhere.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rayon::prelude::*;

use crate::actors::honest_run;
use crate::actors::RunPlan;
use crate::adversary::{attack_success_rate, run_suite, AttackCase, AttackConfig};
use crate::analysis::{
    four_sigma_interval, merchant_example_joint, verify_identity, DiscreteJoint, EMPIRICAL_EPS,
    EXACT_EPS, VAR_AMOUNT, VAR_CODE, VAR_SIDE_INFO, VAR_USER,
};
use crate::domain::{
    AgentProfile, AttributeVector, CodeBits, InformalVariant, LogicalTime, Money, PersonId,
    ProtocolKind, Role, TransactionId, UserProfile,
};
use crate::protocols::{extract_view, Party, PII_FIELDS};
use crate::provider::{
    AuthCertificate, AuthMethod, Provider, ProviderConfig, ProviderEvent, RejectReason,
    SettleOutcome, TxnState,
};
use crate::rng::{substream, trial_seed};
use crate::scenario::{execute, write_outputs, ScenarioConfig};
use crate::simnet::{EventKind, EventLog, LatencyModel, NetworkConfig, SimWorld};

/// Result of one acceptance criterion.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CriterionOutcome {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CriterionOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] criterion {:2} {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail
        )
    }
}

/// Accumulates assertions for one criterion.
struct Check {
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Check {
    fn new() -> Check {
        Check {
            failures: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn require(&mut self, cond: bool, msg: impl fmt::Display) {
        if !cond {
            self.failures.push(msg.to_string());
        }
    }

    fn note(&mut self, msg: impl fmt::Display) {
        self.notes.push(msg.to_string());
    }

    fn outcome(self, id: u8, name: &'static str) -> CriterionOutcome {
        let passed = self.failures.is_empty();
        let detail = if passed {
            self.notes.join("; ")
        } else {
            self.failures.join("; ")
        };
        CriterionOutcome {
            id,
            name,
            passed,
            detail,
        }
    }
}

/// Run every criterion in order.
pub fn run_all() -> Vec<CriterionOutcome> {
    vec![
        round_trip_delta(),
        withdrawal_attack_cases(),
        delegation_attack_cases(),
        guessing_bound(),
        code_uniformity(),
        identity_on_constructed_joints(),
        data_minimization(),
        fee_semantics(),
        lifecycle_and_conservation(),
        determinism(),
        delay_expiry(),
    ]
}

pub fn all_passed(outcomes: &[CriterionOutcome]) -> bool {
    outcomes.iter().all(|o| o.passed)
}

/// Criterion 1: the privacy-preserving withdrawal costs exactly three extra
/// client-provider legs (1.5 round trips) over the current withdrawal.
pub fn round_trip_delta() -> CriterionOutcome {
    let mut check = Check::new();
    let baseline =
        crate::protocols::Choreography::for_kind(ProtocolKind::CurrentWithdrawal).message_count();
    let candidate =
        crate::protocols::Choreography::for_kind(ProtocolKind::PpWithdrawal).message_count();
    let leg_delta =
        candidate.client_provider_legs as i64 - baseline.client_provider_legs as i64;
    let trip_delta = candidate.round_trips - baseline.round_trips;
    check.require(leg_delta == 3, format!("leg delta {leg_delta}, expected 3"));
    check.require(
        trip_delta == 1.5,
        format!("round-trip delta {trip_delta}, expected 1.5"),
    );
    check.note(format!(
        "client legs {} -> {} (+{}), round trips {} -> {} (+{})",
        baseline.client_provider_legs,
        candidate.client_provider_legs,
        leg_delta,
        baseline.round_trips,
        candidate.round_trips,
        trip_delta
    ));
    check.outcome(1, "round-trip-delta")
}

fn deterministic_cases(
    check: &mut Check,
    cases: &[AttackCase],
    trials: u64,
    master_seed: u64,
) {
    let cfg = AttackConfig::default();
    let mut total = 0u64;
    for &case in cases {
        let report = run_suite(case, &cfg, master_seed, trials);
        check.require(
            report.successes == 0,
            format!("{}: {} successes in {trials} trials", case.as_str(), report.successes),
        );
        total += report.trials;
    }
    check.note(format!("{} cases x {trials} trials, 0 successes", cases.len()));
    let _ = total;
}

/// Criterion 2: deterministic withdrawal attack cases never succeed.
pub fn withdrawal_attack_cases() -> CriterionOutcome {
    let mut check = Check::new();
    deterministic_cases(
        &mut check,
        &[
            AttackCase::StolenPhoneExpiry,
            AttackCase::ForeignAccountAuth,
            AttackCase::StaleReplay,
            AttackCase::AmountInflation,
        ],
        1000,
        2026,
    );
    check.outcome(2, "withdrawal-attack-cases")
}

/// Criterion 3: deterministic delegated-withdrawal attack cases never
/// succeed, including a collector the sender never authorized.
pub fn delegation_attack_cases() -> CriterionOutcome {
    let mut check = Check::new();
    deterministic_cases(
        &mut check,
        &[
            AttackCase::DelegatedStolenPhoneExpiry,
            AttackCase::DelegatedForeignAccountAuth,
            AttackCase::DelegatedStaleReplay,
            AttackCase::DelegatedAmountInflation,
            AttackCase::UnauthorizedCollector,
        ],
        1000,
        2027,
    );
    check.outcome(3, "delegation-attack-cases")
}

/// Criterion 4: code guessing succeeds at the predicted 2^-l rate, and the
/// rate strictly decreases as the code grows.
pub fn guessing_bound() -> CriterionOutcome {
    let mut check = Check::new();
    let trials: u64 = 1 << 18;
    let mut rates = BTreeMap::new();
    for length in [4u8, 8, 12] {
        let cfg = AttackConfig {
            code_length: length,
            ..AttackConfig::default()
        };
        match attack_success_rate(AttackCase::CodeGuess, &cfg, 4040, trials) {
            Ok(est) => {
                if length == 8 {
                    let (lo, hi) = four_sigma_interval(est.expected_rate, trials);
                    check.require(
                        est.rate >= lo && est.rate <= hi,
                        format!("l=8 rate {:.6} outside [{:.6}, {:.6}]", est.rate, lo, hi),
                    );
                    check.require(est.within_bounds, "l=8 estimate flagged out of bounds");
                }
                rates.insert(length, est.rate);
            }
            Err(e) => check.require(false, format!("l={length}: {e}")),
        }
    }
    if rates.len() == 3 {
        check.require(
            rates[&4] > rates[&8] && rates[&8] > rates[&12],
            format!(
                "rates not strictly decreasing: {:.6} / {:.6} / {:.6}",
                rates[&4], rates[&8], rates[&12]
            ),
        );
        check.note(format!(
            "{trials} trials per length; rates l=4: {:.5}, l=8: {:.5}, l=12: {:.5}",
            rates[&4], rates[&8], rates[&12]
        ));
    }
    check.outcome(4, "guessing-bound")
}

const UNIFORMITY_USERS: usize = 8;
const UNIFORMITY_SHARDS: u64 = 64;
const UNIFORMITY_PER_SHARD: u64 = 1 << 14;

fn uniformity_shard(shard_seed: u64) -> [[u64; 16]; 8] {
    let config = ProviderConfig {
        code_length: 4,
        ..ProviderConfig::default()
    };
    let mut provider = Provider::new(config, shard_seed);
    for i in 0..UNIFORMITY_USERS as u64 {
        provider
            .register_user(
                UserProfile {
                    person: PersonId(i + 1),
                    name: format!("user-{}", i + 1),
                    phone_number: format!("07000000{:02}", i + 1),
                    national_id: format!("{:08}", 10_000_000 + i + 1),
                    pin: "1234".into(),
                    attributes: AttributeVector::new([], []),
                },
                Money(10_000_000),
            )
            .unwrap();
    }
    provider
        .register_agent(AgentProfile {
            person: PersonId(99),
            agent_number: "400200".into(),
            cash_drawer: Money(20_000_000),
            float_balance: Money(0),
        })
        .unwrap();

    let mut counts = [[0u64; 16]; 8];
    for i in 0..UNIFORMITY_PER_SHARD {
        let user = (i % UNIFORMITY_USERS as u64) + 1;
        let person = PersonId(user);
        let account = provider.account_of(person).unwrap();
        let now = LogicalTime(i);
        let cert = provider
            .authenticate(person, account, AuthMethod::PhoneSession, now)
            .unwrap();
        let txn = provider
            .initiate_withdrawal(&cert, ProtocolKind::PpWithdrawal, Money(1000), "400200", now)
            .unwrap();
        provider.confirm_with_pin(txn, "1234", now).unwrap();
        provider.issue_code(txn, now).unwrap();
        let code = provider.record(txn).unwrap().code.clone().unwrap().bits;
        counts[(user - 1) as usize][code.value as usize] += 1;
        let outcome = provider
            .settle_collection(txn, &code, Money(1000), PersonId(99), now)
            .unwrap();
        assert!(matches!(outcome, SettleOutcome::Settled { .. }));
        provider.drain_events();
        if i % 512 == 511 {
            provider.prune_terminal();
        }
    }
    counts
}

/// Criterion 5: issued codes are uniform over their range and carry no
/// information about who they were issued to.
pub fn code_uniformity() -> CriterionOutcome {
    let mut check = Check::new();
    let counts = (0..UNIFORMITY_SHARDS)
        .into_par_iter()
        .map(|shard| uniformity_shard(trial_seed(0xC0DE, "uniformity", shard)))
        .reduce(
            || [[0u64; 16]; 8],
            |mut acc, shard| {
                for u in 0..8 {
                    for c in 0..16 {
                        acc[u][c] += shard[u][c];
                    }
                }
                acc
            },
        );
    let total: u64 = UNIFORMITY_SHARDS * UNIFORMITY_PER_SHARD;
    let (lo, hi) = four_sigma_interval(1.0 / 16.0, total);
    let mut worst_dev = 0.0f64;
    for value in 0..16 {
        let count: u64 = (0..8).map(|u| counts[u][value]).sum();
        let freq = count as f64 / total as f64;
        worst_dev = worst_dev.max((freq - 1.0 / 16.0).abs());
        check.require(
            freq >= lo && freq <= hi,
            format!("code value {value}: frequency {freq:.6} outside [{lo:.6}, {hi:.6}]"),
        );
    }
    let rows: Vec<(Vec<String>, f64)> = (0..8)
        .flat_map(|u| {
            (0..16).map(move |c| {
                (
                    vec![format!("user-{}", u + 1), format!("{c:04b}")],
                    counts[u][c] as f64 / total as f64,
                )
            })
        })
        .collect();
    let joint = DiscreteJoint::new(vec![VAR_USER.into(), VAR_CODE.into()], rows).unwrap();
    let mi = joint.mutual_information(&[VAR_USER], &[VAR_CODE]).unwrap();
    check.require(
        mi <= EMPIRICAL_EPS,
        format!("I(issuer; code) = {mi:.6} bits > {EMPIRICAL_EPS}"),
    );
    check.note(format!(
        "{total} issuances over {UNIFORMITY_USERS} users; worst frequency deviation {worst_dev:.2e}, I(issuer; code) = {mi:.2e} bits"
    ));
    check.outcome(5, "code-uniformity")
}

/// Joint over (user, side info, code, amount) with uniform users, uniform
/// independent codes, and a per-user probability of the amount being large.
fn joint_from_table(users: &[(&str, &str, f64)], code_bits: u8) -> DiscreteJoint {
    let n_codes = 1u64 << code_bits;
    let p_user = 1.0 / users.len() as f64;
    let mut rows = Vec::new();
    for (user, side, p_large) in users {
        for (amount, p_amount) in [("large", *p_large), ("small", 1.0 - p_large)] {
            if p_amount == 0.0 {
                continue;
            }
            for code in 0..n_codes {
                rows.push((
                    vec![
                        user.to_string(),
                        side.to_string(),
                        format!("{code:0width$b}", width = code_bits as usize),
                        amount.to_string(),
                    ],
                    p_user * p_amount / n_codes as f64,
                ));
            }
        }
    }
    DiscreteJoint::new(
        vec![
            VAR_USER.into(),
            VAR_SIDE_INFO.into(),
            VAR_CODE.into(),
            VAR_AMOUNT.into(),
        ],
        rows,
    )
    .unwrap()
}

/// Criterion 6: the leakage identity holds on the worked merchant example and
/// on both degenerate joints, with both computation paths agreeing.
pub fn identity_on_constructed_joints() -> CriterionOutcome {
    let mut check = Check::new();

    let joints: [(&str, DiscreteJoint); 3] = [
        ("merchant-example", merchant_example_joint(8)),
        (
            // The amount reveals nothing: every user transacts identically.
            "constant-amount",
            joint_from_table(
                &[("a", "E1", 1.0), ("b", "E1", 1.0), ("c", "E2", 1.0), ("d", "E2", 1.0)],
                4,
            ),
        ),
        (
            // Side information already identifies the user: nothing left to leak.
            "side-info-identifies",
            joint_from_table(&[("a", "looks-a", 0.9), ("b", "looks-b", 0.1)], 4),
        ),
    ];

    for (name, joint) in &joints {
        match verify_identity(joint) {
            Ok(id) => {
                check.require(
                    id.chain_residual <= EXACT_EPS,
                    format!("{name}: chain residual {:.3e}", id.chain_residual),
                );
                check.require(
                    id.code_collapse_residual <= EXACT_EPS,
                    format!("{name}: collapse residual {:.3e}", id.code_collapse_residual),
                );
                check.require(
                    id.two_path_residual <= EXACT_EPS,
                    format!("{name}: two-path residual {:.3e}", id.two_path_residual),
                );
                check.require(
                    id.i_u_c <= EXACT_EPS,
                    format!("{name}: I(U;C) = {:.3e}", id.i_u_c),
                );
                match *name {
                    "merchant-example" => check.require(
                        id.i_u_x_given_vs > 0.25,
                        format!("expected positive amount leakage, got {:.4}", id.i_u_x_given_vs),
                    ),
                    "constant-amount" => check.require(
                        id.i_u_x_given_vs <= EXACT_EPS,
                        format!("constant amount must leak nothing, got {:.3e}", id.i_u_x_given_vs),
                    ),
                    "side-info-identifies" => check.require(
                        id.i_u_t_given_vs <= EXACT_EPS,
                        format!("no residual uncertainty expected, got {:.3e}", id.i_u_t_given_vs),
                    ),
                    _ => unreachable!(),
                }
            }
            Err(e) => check.require(false, format!("{name}: {e}")),
        }
    }
    check.note("3 joints, all residuals <= 1e-9".to_string());
    check.outcome(6, "leakage-identity")
}

fn demo_world(seed: u64, log: EventLog) -> SimWorld {
    ScenarioConfig::demo().build_world(Some(seed), log).unwrap()
}

/// Criterion 7: the agent's view kept and removed identity fields, per flow.
pub fn data_minimization() -> CriterionOutcome {
    let mut check = Check::new();
    let mut world = demo_world(17, EventLog::disabled());

    let mut agent_fields = |kind: ProtocolKind| -> Vec<String> {
        let mut plan = RunPlan::new(kind, PersonId(1), Money(50_000), "400200");
        if kind.is_delegated() {
            plan = plan.with_collector(PersonId(2));
        }
        let outcome = honest_run(&mut world, &plan).unwrap();
        assert!(outcome.completed);
        let view = extract_view(&outcome.transcript, Party::Agent);
        view.fields.keys().cloned().collect()
    };

    for kind in [ProtocolKind::PpWithdrawal, ProtocolKind::PpDelegated] {
        let fields = agent_fields(kind);
        let leaked: Vec<&str> = PII_FIELDS
            .iter()
            .copied()
            .filter(|pii| fields.iter().any(|f| f == pii))
            .collect();
        check.require(
            leaked.is_empty(),
            format!("{}: agent view contains {leaked:?}", kind.as_str()),
        );
    }

    let current = agent_fields(ProtocolKind::CurrentWithdrawal);
    for expected in ["name", "phone_number", "national_id"] {
        check.require(
            current.iter().any(|f| f == expected),
            format!("current withdrawal: agent view missing {expected}"),
        );
    }
    check.require(
        !current.iter().any(|f| f == "account_balance"),
        "current withdrawal: agent view must not include the balance",
    );
    check.note("agent views: pp flows carry no identity fields, current flow carries name/phone/id".to_string());
    check.outcome(7, "data-minimization")
}

fn fee_entries(world: &SimWorld) -> Vec<(u64, u64)> {
    world
        .log()
        .entries()
        .iter()
        .filter(|e| e.kind == EventKind::LedgerEntry)
        .filter(|e| e.payload.get("op").and_then(|v| v.as_str()) == Some("fee_charged"))
        .map(|e| {
            (
                e.payload.get("account").and_then(|v| v.as_u64()).unwrap(),
                e.payload.get("amount").and_then(|v| v.as_u64()).unwrap(),
            )
        })
        .collect()
}

/// Criterion 8: the delegated flow charges the sender exactly once, while the
/// informal transfer-then-withdraw workaround charges two fees.
pub fn fee_semantics() -> CriterionOutcome {
    let mut check = Check::new();

    let mut world = demo_world(19, EventLog::enabled());
    let sender_account = world.provider().account_of(PersonId(1)).unwrap();
    let collector_account = world.provider().account_of(PersonId(2)).unwrap();
    let plan = RunPlan::new(ProtocolKind::PpDelegated, PersonId(1), Money(50_000), "400200")
        .with_collector(PersonId(2));
    let outcome = honest_run(&mut world, &plan).unwrap();
    assert!(outcome.completed);
    let fees = fee_entries(&world);
    check.require(
        fees.len() == 1,
        format!("delegated flow charged {} fees, expected 1", fees.len()),
    );
    check.require(
        fees.iter().all(|(account, _)| *account == sender_account.0),
        "delegated flow fee must land on the sender",
    );

    let mut world = demo_world(19, EventLog::enabled());
    let plan = RunPlan::new(
        ProtocolKind::InformalDelegated(InformalVariant::P2pTransfer),
        PersonId(1),
        Money(50_000),
        "400200",
    )
    .with_collector(PersonId(2));
    let outcome = honest_run(&mut world, &plan).unwrap();
    assert!(outcome.completed);
    let fees = fee_entries(&world);
    check.require(
        fees.len() == 2,
        format!("informal transfer charged {} fees, expected 2", fees.len()),
    );
    let accounts: Vec<u64> = fees.iter().map(|(a, _)| *a).collect();
    check.require(
        accounts.contains(&sender_account.0) && accounts.contains(&collector_account.0),
        format!("informal fees hit accounts {accounts:?}, expected both parties"),
    );
    check.note("delegated: 1 fee to sender; informal transfer: 2 fees across both parties".to_string());
    check.outcome(8, "fee-semantics")
}

const MIX_SHARDS: u64 = 50;
const MIX_RUNS_PER_SHARD: u64 = 200;
const FUZZ_SEQUENCES: u64 = 10_000;
const FUZZ_OPS: u64 = 25;

fn mix_world(seed: u64) -> SimWorld {
    let mut provider = Provider::new(ProviderConfig::default(), seed);
    for i in 1u64..=3 {
        provider
            .register_user(
                UserProfile {
                    person: PersonId(i),
                    name: format!("user-{i}"),
                    phone_number: format!("071000000{i}"),
                    national_id: format!("{:08}", 20_000_000 + i),
                    pin: "1234".into(),
                    attributes: AttributeVector::new([], []),
                },
                Money(100_000_000),
            )
            .unwrap();
    }
    provider
        .register_agent(AgentProfile {
            person: PersonId(50),
            agent_number: "400200".into(),
            cash_drawer: Money(1_000_000_000),
            float_balance: Money(1_000_000_000),
        })
        .unwrap();
    SimWorld::new(provider, NetworkConfig::default(), seed, EventLog::disabled())
}

fn mixed_runs_shard(shard: u64) -> Result<u64, String> {
    let seed = trial_seed(0x11FE, "mixed-runs", shard);
    let mut world = mix_world(seed);
    let mut rng = substream(seed, "mix/choices");
    let initial_total = world.provider().emoney_total();
    let agent_person = world.provider().agent("400200").unwrap().person;
    let mut settled = 0u64;

    for run in 0..MIX_RUNS_PER_SHARD {
        let kind = ProtocolKind::ALL[rng.gen_range(0..ProtocolKind::ALL.len())];
        let initiator = PersonId(rng.gen_range(1..=3));
        let collector = PersonId(1 + (initiator.0 % 3));
        let amount = Money(rng.gen_range(1_000..=50_000));
        let mut plan = RunPlan::new(kind, initiator, amount, "400200");
        if kind.is_delegated() {
            plan = plan.with_collector(collector);
        }
        let outcome = honest_run(&mut world, &plan)
            .map_err(|e| format!("shard {shard} run {run} {}: {e}", kind.as_str()))?;
        if !outcome.completed {
            return Err(format!(
                "shard {shard} run {run} {} did not complete: {:?}",
                kind.as_str(),
                outcome.settle
            ));
        }
        if world.provider().emoney_total() != initial_total {
            return Err(format!(
                "shard {shard} run {run} {}: conservation broken",
                kind.as_str()
            ));
        }
        // Replaying the consumed code must be rejected, never paid twice.
        if let Some(txn) = outcome.txn {
            let record = world.provider().record(txn).unwrap();
            if record.state == TxnState::Settled && !record.kind.is_deposit() {
                let code = record.code.clone().unwrap().bits;
                let amount = record.amount;
                let replay = world
                    .provider_op(|p, now| p.settle_collection(txn, &code, amount, agent_person, now))
                    .map_err(|e| format!("shard {shard} run {run}: replay errored: {e}"))?;
                if replay != SettleOutcome::Rejected(RejectReason::Consumed) {
                    return Err(format!(
                        "shard {shard} run {run}: replay produced {replay:?}"
                    ));
                }
                settled += 1;
            }
        }
    }
    if world.provider().emoney_total() != initial_total {
        return Err(format!("shard {shard}: final conservation broken"));
    }
    world
        .provider()
        .audit_kyc()
        .map_err(|e| format!("shard {shard}: audit failed: {e}"))?;
    Ok(settled)
}

fn fuzz_sequence(seed: u64) -> Result<u64, String> {
    let mut provider = Provider::new(ProviderConfig::default(), seed);
    provider
        .register_user(
            UserProfile {
                person: PersonId(1),
                name: "user-1".into(),
                phone_number: "0710000001".into(),
                national_id: "30000001".into(),
                pin: "1234".into(),
                attributes: AttributeVector::new([], []),
            },
            Money(10_000_000),
        )
        .unwrap();
    provider
        .register_agent(AgentProfile {
            person: PersonId(50),
            agent_number: "400200".into(),
            cash_drawer: Money(100_000_000),
            float_balance: Money(100_000_000),
        })
        .unwrap();
    let account = provider.account_of(PersonId(1)).unwrap();
    let initial_total = provider.emoney_total();

    let mut rng = substream(seed, "fuzz/ops");
    let mut now = LogicalTime(0);
    let mut cert: Option<AuthCertificate> = None;
    let mut txns: Vec<TransactionId> = Vec::new();
    let mut executed = 0u64;

    for op in 0..FUZZ_OPS {
        let pick_txn = |rng: &mut rand_chacha::ChaCha8Rng, txns: &[TransactionId]| {
            if txns.is_empty() || rng.gen_bool(0.1) {
                TransactionId(rng.gen_range(0..1000))
            } else {
                txns[rng.gen_range(0..txns.len())]
            }
        };
        let pin = if rng.gen_bool(0.8) { "1234" } else { "9999" };
        match rng.gen_range(0..14u32) {
            0 => {
                let method = if rng.gen_bool(0.5) {
                    AuthMethod::Voice
                } else {
                    AuthMethod::PhoneSession
                };
                if let Ok(c) = provider.authenticate(PersonId(1), account, method, now) {
                    cert = Some(c);
                }
            }
            1 => {
                if let Some(c) = &cert {
                    let kind = ProtocolKind::ALL[rng.gen_range(0..ProtocolKind::ALL.len())];
                    let amount = Money(rng.gen_range(0..100_000));
                    let agent = if rng.gen_bool(0.9) { "400200" } else { "999999" };
                    if let Ok(t) = provider.initiate_withdrawal(c, kind, amount, agent, now) {
                        txns.push(t);
                    }
                }
            }
            2 => {
                if let Some(c) = &cert {
                    let kind = if rng.gen_bool(0.5) {
                        ProtocolKind::CurrentDeposit
                    } else {
                        ProtocolKind::PpDeposit
                    };
                    let amount = Money(rng.gen_range(0..100_000));
                    if let Ok(t) = provider.initiate_deposit(c, kind, amount, "400200", now) {
                        txns.push(t);
                    }
                }
            }
            3 => {
                if let Some(c) = &cert {
                    let phone = if rng.gen_bool(0.8) { "0710000001" } else { "0799999999" };
                    if let Ok(t) =
                        provider.initiate_delegated(c, Money(rng.gen_range(0..100_000)), phone, now)
                    {
                        txns.push(t);
                    }
                }
            }
            4 => {
                let t = pick_txn(&mut rng, &txns);
                let _ = provider.confirm_with_pin(t, pin, now);
            }
            5 => {
                let t = pick_txn(&mut rng, &txns);
                let _ = provider.issue_code(t, now);
            }
            6 => {
                let t = pick_txn(&mut rng, &txns);
                let _ = provider.assign_delegate(t, "0710000001", now);
            }
            7 | 8 => {
                let t = pick_txn(&mut rng, &txns);
                let (code, amount) = match provider.record(t) {
                    Some(r) if r.code.is_some() && rng.gen_bool(0.7) => {
                        (r.code.clone().unwrap().bits, r.amount)
                    }
                    _ => (
                        CodeBits::sample(&mut rng, 8),
                        Money(rng.gen_range(0..100_000)),
                    ),
                };
                let amount = if rng.gen_bool(0.8) {
                    amount
                } else {
                    Money(amount.0 + 1)
                };
                let deposit = provider.record(t).map(|r| r.kind.is_deposit()).unwrap_or(false);
                if deposit {
                    let _ = provider.settle_deposit(t, &code, amount, PersonId(50), now);
                } else {
                    let _ = provider.settle_collection(t, &code, amount, PersonId(50), now);
                }
            }
            9 => {
                provider.expire_codes(now);
            }
            10 => {
                now = LogicalTime(now.0 + rng.gen_range(0..=400));
            }
            11 => {
                provider.prune_terminal();
                txns.retain(|t| provider.record(*t).is_some());
            }
            12 => {
                let _ = provider.p2p_transfer(
                    account,
                    pin,
                    "0710000001",
                    Money(rng.gen_range(0..100_000)),
                    now,
                );
            }
            13 => {
                if let Some(c) = &cert {
                    let t = pick_txn(&mut rng, &txns);
                    let _ = provider.collector_confirm(t, c, pin, "400200", now);
                }
            }
            _ => unreachable!(),
        }
        executed += 1;

        for event in provider.drain_events() {
            if let ProviderEvent::Transition { txn, from, to, .. } = event {
                let defined = match from {
                    None => to == TxnState::Initiated,
                    Some(from) => from.can_go(to),
                };
                if !defined {
                    return Err(format!(
                        "seed {seed} op {op}: undefined transition {from:?} -> {to:?} on {txn:?}"
                    ));
                }
            }
        }
        if provider.emoney_total() != initial_total {
            return Err(format!("seed {seed} op {op}: conservation broken"));
        }
    }
    provider
        .audit_kyc()
        .map_err(|e| format!("seed {seed}: audit failed: {e}"))?;
    Ok(executed)
}

/// Criterion 9: conservation, single-use codes, and certificate audits hold
/// across ten thousand randomized honest runs, and random operation sequences
/// only ever move transactions along defined lifecycle edges.
pub fn lifecycle_and_conservation() -> CriterionOutcome {
    let mut check = Check::new();

    let mix: Result<Vec<u64>, String> = (0..MIX_SHARDS)
        .into_par_iter()
        .map(mixed_runs_shard)
        .collect();
    match mix {
        Ok(settled) => check.note(format!(
            "{} honest runs, {} replay checks, conservation and audits clean",
            MIX_SHARDS * MIX_RUNS_PER_SHARD,
            settled.iter().sum::<u64>()
        )),
        Err(e) => check.require(false, e),
    }

    let fuzz: Result<Vec<u64>, String> = (0..FUZZ_SEQUENCES)
        .into_par_iter()
        .map(|i| fuzz_sequence(trial_seed(0xF022, "fuzz", i)))
        .collect();
    match fuzz {
        Ok(ops) => check.note(format!(
            "{} fuzz sequences / {} ops, every transition defined",
            FUZZ_SEQUENCES,
            ops.iter().sum::<u64>()
        )),
        Err(e) => check.require(false, e),
    }
    check.outcome(9, "lifecycle-and-conservation")
}

/// Criterion 10: identical seed and scenario produce byte-identical logs and
/// reports.
pub fn determinism() -> CriterionOutcome {
    let mut check = Check::new();
    let config = ScenarioConfig::demo();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for dir in &dirs {
        match execute(&config, Some(11)).and_then(|run| write_outputs(dir.path(), &run)) {
            Ok(()) => {}
            Err(e) => check.require(false, format!("scenario failed: {e}")),
        }
    }
    for name in ["events.jsonl", "report.json"] {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap_or_default();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap_or_default();
        check.require(!a.is_empty(), format!("{name} is empty"));
        check.require(a == b, format!("{name} differs between identical invocations"));
    }
    check.note("events.jsonl and report.json byte-identical across two invocations".to_string());
    check.outcome(10, "determinism")
}

/// Criterion 11: when the code notification is delivered one tick after the
/// validity window, the honest withdrawal expires and refunds in full.
pub fn delay_expiry() -> CriterionOutcome {
    let mut check = Check::new();
    let window = ProviderConfig::default().validity_window.0;
    let mut world = {
        let config = ScenarioConfig::demo();
        let mut provider = Provider::new(config.provider.to_config(), 23);
        for u in &config.users {
            provider
                .register_user(
                    UserProfile {
                        person: PersonId(u.id),
                        name: u.name.clone(),
                        phone_number: u.phone_number.clone(),
                        national_id: u.national_id.clone(),
                        pin: u.pin.clone(),
                        attributes: AttributeVector::new(
                            u.attributes.clone(),
                            u.observable.iter().cloned(),
                        ),
                    },
                    Money(u.balance),
                )
                .unwrap();
        }
        for a in &config.agents {
            provider
                .register_agent(AgentProfile {
                    person: PersonId(a.id),
                    agent_number: a.agent_number.clone(),
                    cash_drawer: Money(a.cash_drawer),
                    float_balance: Money(a.float_balance),
                })
                .unwrap();
        }
        let net = NetworkConfig {
            latency: LatencyModel::PerLink {
                links: [((Role::Provider, Role::User), window + 1)]
                    .into_iter()
                    .collect(),
                default: 0,
            },
            drop_probability: 0.0,
        };
        SimWorld::new(provider, net, 23, EventLog::disabled())
    };

    let account = world.provider().account_of(PersonId(1)).unwrap();
    let balance_before = world.provider().registry().balance(account).unwrap();
    let total_before = world.provider().emoney_total();
    let plan = RunPlan::new(ProtocolKind::PpWithdrawal, PersonId(1), Money(50_000), "400200");
    match honest_run(&mut world, &plan) {
        Ok(outcome) => {
            check.require(!outcome.completed, "run completed despite the late code");
            check.require(
                outcome.settle == Some(SettleOutcome::Rejected(RejectReason::Expired)),
                format!("settle outcome {:?}, expected expiry rejection", outcome.settle),
            );
            check.require(
                outcome.final_state == Some(TxnState::Expired),
                format!("final state {:?}, expected expired", outcome.final_state),
            );
        }
        Err(e) => check.require(false, format!("run errored: {e}")),
    }
    let balance_after = world.provider().registry().balance(account).unwrap();
    let escrow_after = world.provider().registry().escrow(account).unwrap();
    check.require(
        balance_after == balance_before,
        format!("balance {balance_after} after refund, expected {balance_before}"),
    );
    check.require(escrow_after == Money(0), format!("escrow {escrow_after} not released"));
    check.require(
        world.provider().emoney_total() == total_before,
        "conservation broken across expiry",
    );
    check.note(format!(
        "code delayed to tick +{} (window {window}): expired, escrow refunded in full",
        window + 1
    ));
    check.outcome(11, "delay-expiry")
}
