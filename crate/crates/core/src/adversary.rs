//! Adversary strategies against withdrawal and delegated-withdrawal flows,
//! each expressed as an independent trial against a fresh provider, plus
//! Monte-Carlo estimation of attack success rates.
//!
//! Trials drive the provider directly with a manual clock instead of running
//! the full message simulation; the provider enforces the same state machine
//! either way, and direct drive keeps large campaigns cheap. Every trial gets
//! its own derived seed, so parallel estimation is order-independent and
//! reproducible.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

use crate::domain::{
    AgentProfile, AttributeVector, CodeBits, Duration, LogicalTime, Money, PersonId, ProtocolKind,
    TransactionId, UserProfile,
};
use crate::provider::{
    AuthMethod, OracleConfig, Provider, ProviderConfig, ProviderError, SettleOutcome,
};
use crate::rng::{substream, trial_seed};

#[derive(Debug, Error, PartialEq)]
pub enum AttackError {
    #[error("{case}: {got} trials is below the {required} required for a stable estimate")]
    InsufficientTrials {
        case: String,
        required: u64,
        got: u64,
    },
}

/// One adversary script. The plain cases target a withdrawal; the
/// `Delegated*` cases target the collection leg of a delegated withdrawal;
/// `UnauthorizedCollector` tries to collect a delegation addressed to someone
/// else; `BiometricImpersonation` measures raw oracle bypass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackCase {
    CodeGuess,
    StolenPhoneExpiry,
    ForeignAccountAuth,
    StaleReplay,
    AmountInflation,
    DelegatedCodeGuess,
    DelegatedStolenPhoneExpiry,
    DelegatedForeignAccountAuth,
    DelegatedStaleReplay,
    DelegatedAmountInflation,
    UnauthorizedCollector,
    BiometricImpersonation,
}

impl AttackCase {
    pub const ALL: [AttackCase; 12] = [
        AttackCase::CodeGuess,
        AttackCase::StolenPhoneExpiry,
        AttackCase::ForeignAccountAuth,
        AttackCase::StaleReplay,
        AttackCase::AmountInflation,
        AttackCase::DelegatedCodeGuess,
        AttackCase::DelegatedStolenPhoneExpiry,
        AttackCase::DelegatedForeignAccountAuth,
        AttackCase::DelegatedStaleReplay,
        AttackCase::DelegatedAmountInflation,
        AttackCase::UnauthorizedCollector,
        AttackCase::BiometricImpersonation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackCase::CodeGuess => "code-guess",
            AttackCase::StolenPhoneExpiry => "stolen-phone-expiry",
            AttackCase::ForeignAccountAuth => "foreign-account-auth",
            AttackCase::StaleReplay => "stale-replay",
            AttackCase::AmountInflation => "amount-inflation",
            AttackCase::DelegatedCodeGuess => "delegated-code-guess",
            AttackCase::DelegatedStolenPhoneExpiry => "delegated-stolen-phone-expiry",
            AttackCase::DelegatedForeignAccountAuth => "delegated-foreign-account-auth",
            AttackCase::DelegatedStaleReplay => "delegated-stale-replay",
            AttackCase::DelegatedAmountInflation => "delegated-amount-inflation",
            AttackCase::UnauthorizedCollector => "unauthorized-collector",
            AttackCase::BiometricImpersonation => "biometric-impersonation",
        }
    }

    /// Compact table-row id: p1c1..p1c5 for the withdrawal suite, p2c1..p2c6
    /// for the delegated suite. The biometric oracle case has none.
    pub fn alias(self) -> Option<&'static str> {
        match self {
            AttackCase::CodeGuess => Some("p1c1"),
            AttackCase::StolenPhoneExpiry => Some("p1c2"),
            AttackCase::ForeignAccountAuth => Some("p1c3"),
            AttackCase::StaleReplay => Some("p1c4"),
            AttackCase::AmountInflation => Some("p1c5"),
            AttackCase::DelegatedCodeGuess => Some("p2c1"),
            AttackCase::DelegatedStolenPhoneExpiry => Some("p2c2"),
            AttackCase::DelegatedForeignAccountAuth => Some("p2c3"),
            AttackCase::DelegatedStaleReplay => Some("p2c4"),
            AttackCase::DelegatedAmountInflation => Some("p2c5"),
            AttackCase::UnauthorizedCollector => Some("p2c6"),
            AttackCase::BiometricImpersonation => None,
        }
    }

    /// Accepts the kebab-case name or the compact alias, case-insensitively.
    pub fn from_str(s: &str) -> Option<AttackCase> {
        let lower = s.to_ascii_lowercase();
        AttackCase::ALL
            .into_iter()
            .find(|c| c.as_str() == lower || c.alias() == Some(lower.as_str()))
    }

    fn targets_delegation(self) -> bool {
        matches!(
            self,
            AttackCase::DelegatedCodeGuess
                | AttackCase::DelegatedStolenPhoneExpiry
                | AttackCase::DelegatedForeignAccountAuth
                | AttackCase::DelegatedStaleReplay
                | AttackCase::DelegatedAmountInflation
                | AttackCase::UnauthorizedCollector
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    pub code_length: u8,
    pub validity_window: Duration,
    /// Independent uniform guesses per trial for the guessing cases.
    pub guesses_per_trial: u32,
    /// Oracle false-accept rate, only exercised by biometric impersonation.
    pub far: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            code_length: 8,
            validity_window: Duration(300),
            guesses_per_trial: 1,
            far: 0.0,
        }
    }
}

impl AttackConfig {
    /// Success probability the design predicts for this case.
    pub fn expected_rate(&self, case: AttackCase) -> f64 {
        match case {
            AttackCase::CodeGuess | AttackCase::DelegatedCodeGuess => {
                let p = (0.5f64).powi(self.code_length as i32);
                1.0 - (1.0 - p).powi(self.guesses_per_trial as i32)
            }
            AttackCase::BiometricImpersonation => self.far,
            _ => 0.0,
        }
    }

    /// Trials needed before an estimate of this case is meaningful.
    pub fn required_trials(&self, case: AttackCase) -> u64 {
        match case {
            AttackCase::CodeGuess | AttackCase::DelegatedCodeGuess => {
                1u64 << (self.code_length as u64 + 6)
            }
            AttackCase::BiometricImpersonation if self.far > 0.0 => {
                ((16.0 / self.far).ceil() as u64).min(1 << 22)
            }
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub success: bool,
    /// How the attempt ended: a rejection label or "settled".
    pub label: String,
}

const VICTIM: PersonId = PersonId(1);
const COLLECTOR: PersonId = PersonId(2);
const ADVERSARY: PersonId = PersonId(3);
const AGENT_PERSON: PersonId = PersonId(50);
const AGENT_NUMBER: &str = "400200";
const AMOUNT: Money = Money(50_000);

fn user(person: PersonId, name: &str, phone: &str, nid: &str, pin: &str) -> UserProfile {
    UserProfile {
        person,
        name: name.into(),
        phone_number: phone.into(),
        national_id: nid.into(),
        pin: pin.into(),
        attributes: AttributeVector::default(),
    }
}

fn trial_provider(cfg: &AttackConfig, seed: u64) -> Provider {
    let mut provider = Provider::new(
        ProviderConfig {
            code_length: cfg.code_length,
            validity_window: cfg.validity_window,
            oracle: OracleConfig {
                far: cfg.far,
                frr: 0.0,
            },
            ..ProviderConfig::default()
        },
        seed,
    );
    provider
        .register_user(user(VICTIM, "Amina", "0712345678", "11111111", "1234"), Money(1_000_000))
        .unwrap();
    provider
        .register_user(user(COLLECTOR, "Bakari", "0722222222", "22222222", "5678"), Money(500_000))
        .unwrap();
    provider
        .register_user(user(ADVERSARY, "Mallory", "0733333333", "33333333", "9999"), Money(500_000))
        .unwrap();
    provider
        .register_agent(AgentProfile {
            person: AGENT_PERSON,
            agent_number: AGENT_NUMBER.into(),
            cash_drawer: Money(100_000_000),
            float_balance: Money(100_000_000),
        })
        .unwrap();
    provider
}

/// Honest victim withdrawal, driven to an issued code.
fn victim_code_issued(p: &mut Provider, t: LogicalTime) -> (TransactionId, CodeBits) {
    let account = p.account_of(VICTIM).unwrap();
    let cert = p.authenticate(VICTIM, account, AuthMethod::Voice, t).unwrap();
    let txn = p
        .initiate_withdrawal(&cert, ProtocolKind::PpWithdrawal, AMOUNT, AGENT_NUMBER, t)
        .unwrap();
    p.confirm_with_pin(txn, "1234", t).unwrap();
    p.issue_code(txn, t).unwrap();
    (txn, p.record(txn).unwrap().code.unwrap().bits)
}

/// Honest delegation from the victim to the collector, driven to the
/// collector's issued code.
fn delegation_code_issued(p: &mut Provider, t: LogicalTime) -> (TransactionId, CodeBits) {
    let sender_account = p.account_of(VICTIM).unwrap();
    let cert = p.authenticate(VICTIM, sender_account, AuthMethod::Voice, t).unwrap();
    let txn = p.initiate_delegated(&cert, AMOUNT, "0722222222", t).unwrap();
    p.confirm_with_pin(txn, "1234", t).unwrap();
    p.assign_delegate(txn, "0722222222", t).unwrap();
    let collector_account = p.account_of(COLLECTOR).unwrap();
    let ccert = p
        .authenticate(COLLECTOR, collector_account, AuthMethod::Voice, t)
        .unwrap();
    p.collector_confirm(txn, &ccert, "5678", AGENT_NUMBER, t).unwrap();
    (txn, p.record(txn).unwrap().code.unwrap().bits)
}

fn outcome_label(outcome: &SettleOutcome) -> (bool, String) {
    match outcome {
        SettleOutcome::Settled { .. } => (true, "settled".to_string()),
        SettleOutcome::Rejected(reason) => (false, reason.to_string()),
    }
}

/// Run one attack trial. Success means the adversary got a settlement (or a
/// certificate, for the pure authentication cases) they were not entitled to.
pub fn run_trial(case: AttackCase, cfg: &AttackConfig, seed: u64) -> TrialOutcome {
    let mut p = trial_provider(cfg, seed);
    let t0 = LogicalTime(0);
    let delegated = case.targets_delegation();
    match case {
        AttackCase::CodeGuess | AttackCase::DelegatedCodeGuess => {
            let (txn, _) = if delegated {
                delegation_code_issued(&mut p, t0)
            } else {
                victim_code_issued(&mut p, t0)
            };
            let mut rng: ChaCha8Rng = substream(seed, "attack/guess");
            let mut last = "wrong_code".to_string();
            for _ in 0..cfg.guesses_per_trial {
                let guess = CodeBits::sample(&mut rng, cfg.code_length);
                let outcome = p
                    .settle_collection(txn, &guess, AMOUNT, ADVERSARY, LogicalTime(1))
                    .unwrap();
                let (success, label) = outcome_label(&outcome);
                last = label;
                if success {
                    return TrialOutcome {
                        success: true,
                        label: last,
                    };
                }
            }
            TrialOutcome {
                success: false,
                label: last,
            }
        }
        AttackCase::StolenPhoneExpiry | AttackCase::DelegatedStolenPhoneExpiry => {
            let (txn, code) = if delegated {
                delegation_code_issued(&mut p, t0)
            } else {
                victim_code_issued(&mut p, t0)
            };
            let late = LogicalTime(cfg.validity_window.0 + 1);
            let outcome = p.settle_collection(txn, &code, AMOUNT, ADVERSARY, late).unwrap();
            let (success, label) = outcome_label(&outcome);
            TrialOutcome { success, label }
        }
        AttackCase::ForeignAccountAuth | AttackCase::DelegatedForeignAccountAuth => {
            let target = if delegated { COLLECTOR } else { VICTIM };
            let account = p.account_of(target).unwrap();
            match p.authenticate(ADVERSARY, account, AuthMethod::Voice, t0) {
                Err(ProviderError::AuthFailure { .. }) => TrialOutcome {
                    success: false,
                    label: "auth_failure".to_string(),
                },
                Err(e) => TrialOutcome {
                    success: false,
                    label: format!("error:{e}"),
                },
                Ok(cert) => {
                    // The oracle accepted an impostor; see how far it goes.
                    let settled = p
                        .initiate_withdrawal(
                            &cert,
                            ProtocolKind::PpWithdrawal,
                            AMOUNT,
                            AGENT_NUMBER,
                            t0,
                        )
                        .is_ok();
                    TrialOutcome {
                        success: settled,
                        label: "auth_accepted".to_string(),
                    }
                }
            }
        }
        AttackCase::StaleReplay | AttackCase::DelegatedStaleReplay => {
            let (txn, code) = if delegated {
                delegation_code_issued(&mut p, t0)
            } else {
                victim_code_issued(&mut p, t0)
            };
            let honest = if delegated { COLLECTOR } else { VICTIM };
            let first = p.settle_collection(txn, &code, AMOUNT, honest, t0).unwrap();
            assert!(matches!(first, SettleOutcome::Settled { .. }));
            let outcome = p
                .settle_collection(txn, &code, AMOUNT, ADVERSARY, LogicalTime(1))
                .unwrap();
            let (success, label) = outcome_label(&outcome);
            TrialOutcome { success, label }
        }
        AttackCase::AmountInflation | AttackCase::DelegatedAmountInflation => {
            let (txn, code) = if delegated {
                delegation_code_issued(&mut p, t0)
            } else {
                victim_code_issued(&mut p, t0)
            };
            let inflated = Money(AMOUNT.0 + 10_000);
            let outcome = p
                .settle_collection(txn, &code, inflated, ADVERSARY, LogicalTime(1))
                .unwrap();
            let (success, label) = outcome_label(&outcome);
            TrialOutcome { success, label }
        }
        AttackCase::UnauthorizedCollector => {
            let sender_account = p.account_of(VICTIM).unwrap();
            let cert = p
                .authenticate(VICTIM, sender_account, AuthMethod::Voice, t0)
                .unwrap();
            let txn = p.initiate_delegated(&cert, AMOUNT, "0722222222", t0).unwrap();
            p.confirm_with_pin(txn, "1234", t0).unwrap();
            p.assign_delegate(txn, "0722222222", t0).unwrap();

            let own_account = p.account_of(ADVERSARY).unwrap();
            let mcert = p
                .authenticate(ADVERSARY, own_account, AuthMethod::Voice, t0)
                .unwrap();
            if !p.list_delegated(&mcert).is_empty() {
                return TrialOutcome {
                    success: true,
                    label: "delegation_listed".to_string(),
                };
            }
            match p.collector_confirm(txn, &mcert, "9999", AGENT_NUMBER, t0) {
                Err(ProviderError::NotDelegated) => TrialOutcome {
                    success: false,
                    label: "not_delegated".to_string(),
                },
                Err(e) => TrialOutcome {
                    success: false,
                    label: format!("error:{e}"),
                },
                Ok(_) => TrialOutcome {
                    success: true,
                    label: "collected".to_string(),
                },
            }
        }
        AttackCase::BiometricImpersonation => {
            let account = p.account_of(VICTIM).unwrap();
            match p.authenticate(ADVERSARY, account, AuthMethod::Voice, t0) {
                Ok(_) => TrialOutcome {
                    success: true,
                    label: "auth_accepted".to_string(),
                },
                Err(_) => TrialOutcome {
                    success: false,
                    label: "auth_failure".to_string(),
                },
            }
        }
    }
}

/// Per-case tally over a deterministic batch of trial seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub case: AttackCase,
    pub trials: u64,
    pub successes: u64,
    pub labels: BTreeMap<String, u64>,
}

pub fn run_suite(case: AttackCase, cfg: &AttackConfig, master_seed: u64, trials: u64) -> SuiteReport {
    let mut labels: BTreeMap<String, u64> = BTreeMap::new();
    let mut successes = 0;
    for i in 0..trials {
        let outcome = run_trial(case, cfg, trial_seed(master_seed, case.as_str(), i));
        if outcome.success {
            successes += 1;
        }
        *labels.entry(outcome.label).or_insert(0) += 1;
    }
    SuiteReport {
        case,
        trials,
        successes,
        labels,
    }
}

/// Monte-Carlo estimate of a case's success rate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackEstimate {
    pub case: AttackCase,
    pub trials: u64,
    pub successes: u64,
    pub rate: f64,
    pub expected_rate: f64,
    /// Four standard deviations of the binomial at the expected rate.
    pub ci_half_width: f64,
    pub within_bounds: bool,
}

/// Estimate the success rate of `case` over `trials` independent trials,
/// in parallel. Cases with a positive expected rate demand enough trials for
/// the four-sigma interval to be meaningful.
pub fn attack_success_rate(
    case: AttackCase,
    cfg: &AttackConfig,
    master_seed: u64,
    trials: u64,
) -> Result<AttackEstimate, AttackError> {
    let required = cfg.required_trials(case);
    if trials < required {
        return Err(AttackError::InsufficientTrials {
            case: case.as_str().to_string(),
            required,
            got: trials,
        });
    }
    let successes: u64 = (0..trials)
        .into_par_iter()
        .map(|i| run_trial(case, cfg, trial_seed(master_seed, case.as_str(), i)).success as u64)
        .sum();
    let rate = successes as f64 / trials as f64;
    let expected = cfg.expected_rate(case);
    let sigma = (expected * (1.0 - expected) / trials as f64).sqrt();
    let ci_half_width = 4.0 * sigma;
    let within_bounds = if expected == 0.0 {
        successes == 0
    } else {
        (rate - expected).abs() <= ci_half_width
    };
    Ok(AttackEstimate {
        case,
        trials,
        successes,
        rate,
        expected_rate: expected,
        ci_half_width,
        within_bounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rate_cases_never_succeed_and_label_correctly() {
        let cfg = AttackConfig::default();
        let checks = [
            (AttackCase::StolenPhoneExpiry, "expired"),
            (AttackCase::ForeignAccountAuth, "auth_failure"),
            (AttackCase::StaleReplay, "consumed"),
            (AttackCase::AmountInflation, "wrong_amount"),
            (AttackCase::DelegatedStolenPhoneExpiry, "expired"),
            (AttackCase::DelegatedForeignAccountAuth, "auth_failure"),
            (AttackCase::DelegatedStaleReplay, "consumed"),
            (AttackCase::DelegatedAmountInflation, "wrong_amount"),
            (AttackCase::UnauthorizedCollector, "not_delegated"),
        ];
        for (case, label) in checks {
            let report = run_suite(case, &cfg, 17, 50);
            assert_eq!(report.successes, 0, "{case:?}");
            assert_eq!(
                report.labels.keys().collect::<Vec<_>>(),
                [label],
                "{case:?}"
            );
        }
    }

    #[test]
    fn guessing_hits_at_the_design_rate_for_short_codes() {
        // Four-bit codes keep the test cheap: p = 1/16.
        let cfg = AttackConfig {
            code_length: 4,
            ..AttackConfig::default()
        };
        let est = attack_success_rate(AttackCase::CodeGuess, &cfg, 3, 1 << 10).unwrap();
        assert!(est.successes > 0);
        assert!(est.within_bounds, "rate {} vs {}", est.rate, est.expected_rate);
    }

    #[test]
    fn multi_guess_raises_the_expected_rate() {
        let one = AttackConfig {
            code_length: 4,
            ..AttackConfig::default()
        };
        let four = AttackConfig {
            code_length: 4,
            guesses_per_trial: 4,
            ..AttackConfig::default()
        };
        assert!(four.expected_rate(AttackCase::CodeGuess) > one.expected_rate(AttackCase::CodeGuess));
        let est = attack_success_rate(AttackCase::CodeGuess, &four, 3, 1 << 10).unwrap();
        assert!(est.within_bounds, "rate {} vs {}", est.rate, est.expected_rate);
    }

    #[test]
    fn insufficient_trials_is_an_error_not_a_guess() {
        let cfg = AttackConfig::default();
        let out = attack_success_rate(AttackCase::CodeGuess, &cfg, 1, 100);
        assert_eq!(
            out.unwrap_err(),
            AttackError::InsufficientTrials {
                case: "code-guess".to_string(),
                required: 1 << 14,
                got: 100,
            }
        );
    }

    #[test]
    fn biometric_oracle_noise_is_isolated_to_its_own_case() {
        let leaky = AttackConfig {
            far: 0.05,
            ..AttackConfig::default()
        };
        let est =
            attack_success_rate(AttackCase::BiometricImpersonation, &leaky, 11, 2_000).unwrap();
        assert!(est.successes > 0);
        assert!(est.within_bounds, "rate {} vs {}", est.rate, est.expected_rate);
        // The other cases stay at zero even with a leaky oracle, because the
        // adversary scripts there never pass authentication.
        let report = run_suite(AttackCase::StaleReplay, &leaky, 11, 50);
        assert_eq!(report.successes, 0);
    }

    #[test]
    fn estimates_are_reproducible_across_runs() {
        let cfg = AttackConfig {
            code_length: 4,
            ..AttackConfig::default()
        };
        let a = attack_success_rate(AttackCase::CodeGuess, &cfg, 9, 1 << 10).unwrap();
        let b = attack_success_rate(AttackCase::CodeGuess, &cfg, 9, 1 << 10).unwrap();
        assert_eq!(a, b);
        let c = attack_success_rate(AttackCase::CodeGuess, &cfg, 10, 1 << 10).unwrap();
        assert_ne!(a.successes, c.successes);
    }

    #[test]
    fn case_names_round_trip() {
        for case in AttackCase::ALL {
            assert_eq!(AttackCase::from_str(case.as_str()), Some(case));
            if let Some(alias) = case.alias() {
                assert_eq!(AttackCase::from_str(alias), Some(case));
                assert_eq!(AttackCase::from_str(&alias.to_uppercase()), Some(case));
            }
        }
        assert_eq!(AttackCase::from_str("P1C4"), Some(AttackCase::StaleReplay));
        assert_eq!(AttackCase::from_str("no-such-case"), None);
    }
}
