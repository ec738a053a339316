//! Protocol choreographies: the step-by-step shape of each flow as a table of
//! network messages and over-the-counter observations, each with the exact
//! field set it carries.
//!
//! The tables drive three things. The runner executes them step by step; the
//! conformance checker replays a finished transcript against them; and the
//! analyzer counts legs and diffs per-party views to quantify what each flow
//! costs and reveals.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::domain::{ActorRef, InformalVariant, LogicalTime, Payload, ProtocolKind};

/// Role a participant plays inside one choreography. Withdrawals and deposits
/// bind User/Agent/Provider; delegated flows bind Sender/Collector instead of
/// User.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Party {
    User,
    Sender,
    Collector,
    Agent,
    Provider,
}

impl Party {
    pub fn is_customer_side(self) -> bool {
        matches!(self, Party::User | Party::Sender | Party::Collector)
    }
}

/// What one step does: a network message or a physical observation
/// (ID shown over the counter, a code read off a screen, shared credentials).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StepAction {
    Message { from: Party, to: Party },
    Observation { observer: Party, observed: Party },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Step {
    pub name: String,
    pub action: StepAction,
    pub fields: BTreeSet<String>,
}

/// Step names shared between the tables, the runner, and tests.
pub mod step {
    pub const SHOW_ID: &str = "show_id";
    pub const WITHDRAW_REQUEST: &str = "withdraw_request";
    pub const DEPOSIT_REQUEST: &str = "deposit_request";
    pub const TXN_SUMMARY: &str = "txn_summary";
    pub const PIN_CONFIRM: &str = "pin_confirm";
    pub const USER_CONFIRMATION: &str = "user_confirmation";
    pub const AGENT_NOTIFICATION: &str = "agent_notification";
    pub const CODE_COMPARE: &str = "code_compare";
    pub const HAND_CASH: &str = "hand_cash";
    pub const SETTLE_REQUEST: &str = "settle_request";
    pub const AUTH_INIT: &str = "auth_init";
    pub const AUTH_CHALLENGE: &str = "auth_challenge";
    pub const AUTH_RESPONSE: &str = "auth_response";
    pub const CODE_TO_USER: &str = "code_to_user";
    pub const CODE_TO_AGENT: &str = "code_to_agent";
    pub const DELEGATE_REQUEST: &str = "delegate_request";
    pub const DELEGATION_RECEIPT: &str = "delegation_receipt";
    pub const AUTH_INIT_COLLECTOR: &str = "auth_init_collector";
    pub const AUTH_CHALLENGE_COLLECTOR: &str = "auth_challenge_collector";
    pub const AUTH_RESPONSE_COLLECTOR: &str = "auth_response_collector";
    pub const LIST_REQUEST: &str = "list_request";
    pub const DELEGATION_LIST: &str = "delegation_list";
    pub const SELECT_TXN: &str = "select_txn";
    pub const PIN_CONFIRM_COLLECTOR: &str = "pin_confirm_collector";
    pub const CODE_TO_COLLECTOR: &str = "code_to_collector";
    pub const COMPLETION_TO_SENDER: &str = "completion_to_sender";
    pub const P2P_REQUEST: &str = "p2p_request";
    pub const P2P_RECEIPT: &str = "p2p_receipt";
    pub const P2P_NOTICE: &str = "p2p_notice";
    pub const SHARE_CREDENTIALS: &str = "share_credentials";
    pub const DEVICE_READ: &str = "device_read";
    pub const FORWARD_MSG: &str = "forward_msg";
    pub const SHOW_FORWARDED: &str = "show_forwarded";
}

/// Fields regarded as personally identifying when they appear in a view.
pub const PII_FIELDS: [&str; 4] = ["account_balance", "name", "national_id", "phone_number"];

/// Options that change a choreography's field sets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ChoreographyOptions {
    /// Forwarded-message delegation only: the sender deletes the balance line
    /// before forwarding, so the collector and agent never see it.
    pub redact_forwarded_balance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Choreography {
    pub kind: ProtocolKind,
    pub steps: Vec<Step>,
}

fn msg(name: &str, from: Party, to: Party, fields: &[&str]) -> Step {
    Step {
        name: name.to_string(),
        action: StepAction::Message { from, to },
        fields: fields.iter().map(|f| f.to_string()).collect(),
    }
}

fn obs(name: &str, observer: Party, observed: Party, fields: &[&str]) -> Step {
    Step {
        name: name.to_string(),
        action: StepAction::Observation { observer, observed },
        fields: fields.iter().map(|f| f.to_string()).collect(),
    }
}

impl Choreography {
    pub fn for_kind(kind: ProtocolKind) -> Choreography {
        Choreography::for_kind_opts(kind, &ChoreographyOptions::default())
    }

    pub fn for_kind_opts(kind: ProtocolKind, opts: &ChoreographyOptions) -> Choreography {
        use step::*;
        use Party::*;
        let steps = match kind {
            ProtocolKind::CurrentWithdrawal => vec![
                obs(SHOW_ID, Agent, User, &["national_id"]),
                msg(WITHDRAW_REQUEST, User, Provider, &["amount", "agent_number"]),
                msg(TXN_SUMMARY, Provider, User, &["amount", "agent_number", "fee"]),
                msg(PIN_CONFIRM, User, Provider, &["pin"]),
                msg(
                    USER_CONFIRMATION,
                    Provider,
                    User,
                    &["txn_code", "amount", "agent_number", "time", "account_balance"],
                ),
                msg(
                    AGENT_NOTIFICATION,
                    Provider,
                    Agent,
                    &["txn_code", "name", "phone_number", "amount", "time"],
                ),
                obs(CODE_COMPARE, Agent, User, &["txn_code", "amount"]),
                msg(SETTLE_REQUEST, Agent, Provider, &["txn_code", "amount"]),
            ],
            ProtocolKind::PpWithdrawal => vec![
                msg(AUTH_INIT, User, Provider, &["phone_number"]),
                msg(AUTH_CHALLENGE, Provider, User, &["challenge"]),
                msg(AUTH_RESPONSE, User, Provider, &["biometric_sample"]),
                msg(WITHDRAW_REQUEST, User, Provider, &["amount", "agent_number"]),
                msg(TXN_SUMMARY, Provider, User, &["amount", "agent_number", "fee"]),
                msg(PIN_CONFIRM, User, Provider, &["pin"]),
                msg(
                    CODE_TO_USER,
                    Provider,
                    User,
                    &["code", "amount", "agent_number", "time"],
                ),
                msg(CODE_TO_AGENT, Provider, Agent, &["code", "amount", "time"]),
                obs(CODE_COMPARE, Agent, User, &["code", "amount"]),
                msg(SETTLE_REQUEST, Agent, Provider, &["code", "amount"]),
            ],
            ProtocolKind::CurrentDeposit => vec![
                obs(SHOW_ID, Agent, User, &["national_id"]),
                msg(DEPOSIT_REQUEST, User, Provider, &["amount", "agent_number"]),
                msg(TXN_SUMMARY, Provider, User, &["amount", "agent_number", "fee"]),
                msg(PIN_CONFIRM, User, Provider, &["pin"]),
                msg(
                    USER_CONFIRMATION,
                    Provider,
                    User,
                    &["txn_code", "amount", "agent_number", "time", "account_balance"],
                ),
                msg(
                    AGENT_NOTIFICATION,
                    Provider,
                    Agent,
                    &["txn_code", "name", "phone_number", "amount", "time"],
                ),
                obs(CODE_COMPARE, Agent, User, &["txn_code", "amount"]),
                obs(HAND_CASH, Agent, User, &["amount"]),
                msg(SETTLE_REQUEST, Agent, Provider, &["txn_code", "amount"]),
            ],
            ProtocolKind::PpDeposit => vec![
                msg(AUTH_INIT, User, Provider, &["phone_number"]),
                msg(AUTH_CHALLENGE, Provider, User, &["challenge"]),
                msg(AUTH_RESPONSE, User, Provider, &["biometric_sample"]),
                msg(DEPOSIT_REQUEST, User, Provider, &["amount", "agent_number"]),
                msg(TXN_SUMMARY, Provider, User, &["amount", "agent_number", "fee"]),
                msg(PIN_CONFIRM, User, Provider, &["pin"]),
                msg(
                    CODE_TO_USER,
                    Provider,
                    User,
                    &["code", "amount", "agent_number", "time"],
                ),
                msg(CODE_TO_AGENT, Provider, Agent, &["code", "amount", "time"]),
                obs(CODE_COMPARE, Agent, User, &["code", "amount"]),
                obs(HAND_CASH, Agent, User, &["amount"]),
                msg(SETTLE_REQUEST, Agent, Provider, &["code", "amount"]),
            ],
            ProtocolKind::PpDelegated => vec![
                msg(AUTH_INIT, Sender, Provider, &["phone_number"]),
                msg(AUTH_CHALLENGE, Provider, Sender, &["challenge"]),
                msg(AUTH_RESPONSE, Sender, Provider, &["biometric_sample"]),
                msg(
                    DELEGATE_REQUEST,
                    Sender,
                    Provider,
                    &["amount", "collector_phone"],
                ),
                msg(
                    TXN_SUMMARY,
                    Provider,
                    Sender,
                    &["amount", "collector_phone_masked", "fee"],
                ),
                msg(PIN_CONFIRM, Sender, Provider, &["pin"]),
                msg(
                    DELEGATION_RECEIPT,
                    Provider,
                    Sender,
                    &["amount", "collector_phone_masked", "time"],
                ),
                msg(AUTH_INIT_COLLECTOR, Collector, Provider, &["phone_number"]),
                msg(AUTH_CHALLENGE_COLLECTOR, Provider, Collector, &["challenge"]),
                msg(
                    AUTH_RESPONSE_COLLECTOR,
                    Collector,
                    Provider,
                    &["biometric_sample"],
                ),
                msg(LIST_REQUEST, Collector, Provider, &["agent_number"]),
                msg(DELEGATION_LIST, Provider, Collector, &["delegations"]),
                msg(SELECT_TXN, Collector, Provider, &["selection"]),
                msg(PIN_CONFIRM_COLLECTOR, Collector, Provider, &["pin"]),
                msg(CODE_TO_COLLECTOR, Provider, Collector, &["code", "amount"]),
                msg(CODE_TO_AGENT, Provider, Agent, &["code", "amount", "time"]),
                obs(CODE_COMPARE, Agent, Collector, &["code", "amount"]),
                msg(SETTLE_REQUEST, Agent, Provider, &["code", "amount"]),
                msg(
                    COMPLETION_TO_SENDER,
                    Provider,
                    Sender,
                    &["amount", "time", "status"],
                ),
            ],
            ProtocolKind::InformalDelegated(InformalVariant::P2pTransfer) => vec![
                msg(
                    P2P_REQUEST,
                    Sender,
                    Provider,
                    &["amount", "collector_phone", "pin"],
                ),
                msg(
                    P2P_RECEIPT,
                    Provider,
                    Sender,
                    &["txn_code", "amount", "recipient_name", "time", "account_balance"],
                ),
                msg(
                    P2P_NOTICE,
                    Provider,
                    Collector,
                    &["txn_code", "amount", "sender_name", "sender_phone", "time"],
                ),
                obs(SHOW_ID, Agent, Collector, &["national_id"]),
                msg(
                    WITHDRAW_REQUEST,
                    Collector,
                    Provider,
                    &["amount", "agent_number"],
                ),
                msg(
                    TXN_SUMMARY,
                    Provider,
                    Collector,
                    &["amount", "agent_number", "fee"],
                ),
                msg(PIN_CONFIRM, Collector, Provider, &["pin"]),
                msg(
                    USER_CONFIRMATION,
                    Provider,
                    Collector,
                    &["txn_code", "amount", "agent_number", "time", "account_balance"],
                ),
                msg(
                    AGENT_NOTIFICATION,
                    Provider,
                    Agent,
                    &["txn_code", "name", "phone_number", "amount", "time"],
                ),
                obs(CODE_COMPARE, Agent, Collector, &["txn_code", "amount"]),
                msg(SETTLE_REQUEST, Agent, Provider, &["txn_code", "amount"]),
            ],
            ProtocolKind::InformalDelegated(InformalVariant::SharePhonePin) => vec![
                obs(
                    SHARE_CREDENTIALS,
                    Collector,
                    Sender,
                    &["phone_device", "pin", "national_id"],
                ),
                obs(SHOW_ID, Agent, Sender, &["national_id"]),
                msg(
                    WITHDRAW_REQUEST,
                    Sender,
                    Provider,
                    &["amount", "agent_number"],
                ),
                msg(
                    TXN_SUMMARY,
                    Provider,
                    Sender,
                    &["amount", "agent_number", "fee"],
                ),
                msg(PIN_CONFIRM, Sender, Provider, &["pin"]),
                msg(
                    USER_CONFIRMATION,
                    Provider,
                    Sender,
                    &["txn_code", "amount", "agent_number", "time", "account_balance"],
                ),
                msg(
                    AGENT_NOTIFICATION,
                    Provider,
                    Agent,
                    &["txn_code", "name", "phone_number", "amount", "time"],
                ),
                obs(
                    DEVICE_READ,
                    Collector,
                    Sender,
                    &["txn_code", "amount", "agent_number", "time", "account_balance"],
                ),
                obs(CODE_COMPARE, Agent, Collector, &["txn_code", "amount"]),
                msg(SETTLE_REQUEST, Agent, Provider, &["txn_code", "amount"]),
            ],
            ProtocolKind::InformalDelegated(InformalVariant::ForwardMessage) => {
                let forwarded: &[&str] = if opts.redact_forwarded_balance {
                    &["txn_code", "amount", "agent_number", "time"]
                } else {
                    &["txn_code", "amount", "agent_number", "time", "account_balance"]
                };
                vec![
                    msg(
                        WITHDRAW_REQUEST,
                        Sender,
                        Provider,
                        &["amount", "agent_number"],
                    ),
                    msg(
                        TXN_SUMMARY,
                        Provider,
                        Sender,
                        &["amount", "agent_number", "fee"],
                    ),
                    msg(PIN_CONFIRM, Sender, Provider, &["pin"]),
                    msg(
                        USER_CONFIRMATION,
                        Provider,
                        Sender,
                        &["txn_code", "amount", "agent_number", "time", "account_balance"],
                    ),
                    msg(
                        AGENT_NOTIFICATION,
                        Provider,
                        Agent,
                        &["txn_code", "name", "phone_number", "amount", "time"],
                    ),
                    msg(FORWARD_MSG, Sender, Collector, forwarded),
                    obs(SHOW_ID, Agent, Collector, &["national_id"]),
                    obs(SHOW_FORWARDED, Agent, Collector, forwarded),
                    obs(CODE_COMPARE, Agent, Collector, &["txn_code", "amount"]),
                    msg(SETTLE_REQUEST, Agent, Provider, &["txn_code", "amount"]),
                ]
            }
        };
        Choreography { kind, steps }
    }

    pub fn step(&self, name: &str) -> Option<&Step> {
        self.steps.iter().find(|s| s.name == name)
    }

    /// Count steps and legs. Client legs are messages between a customer-side
    /// party and the provider; the cost comparison between flows is stated in
    /// these legs (two legs per round trip).
    pub fn message_count(&self) -> MessageCount {
        let mut count = MessageCount {
            kind: self.kind,
            total_steps: self.steps.len(),
            message_steps: 0,
            observation_steps: 0,
            client_provider_legs: 0,
            agent_provider_legs: 0,
            peer_legs: 0,
            round_trips: 0.0,
        };
        for step in &self.steps {
            match step.action {
                StepAction::Message { from, to } => {
                    count.message_steps += 1;
                    let pair = (from, to);
                    let provider_end = from == Party::Provider || to == Party::Provider;
                    let customer_end = from.is_customer_side() || to.is_customer_side();
                    let agent_end = from == Party::Agent || to == Party::Agent;
                    if provider_end && customer_end {
                        count.client_provider_legs += 1;
                    } else if provider_end && agent_end {
                        count.agent_provider_legs += 1;
                    } else {
                        count.peer_legs += 1;
                    }
                    let _ = pair;
                }
                StepAction::Observation { .. } => count.observation_steps += 1,
            }
        }
        count.round_trips = count.client_provider_legs as f64 / 2.0;
        count
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MessageCount {
    pub kind: ProtocolKind,
    pub total_steps: usize,
    pub message_steps: usize,
    pub observation_steps: usize,
    pub client_provider_legs: usize,
    pub agent_provider_legs: usize,
    pub peer_legs: usize,
    pub round_trips: f64,
}

/// One executed message of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranscriptMessage {
    pub seq: u64,
    pub step: String,
    pub from: ActorRef,
    pub to: ActorRef,
    pub payload: Payload,
    pub sent_at: LogicalTime,
    pub delivered_at: Option<LogicalTime>,
}

/// One executed observation of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranscriptObservation {
    pub seq: u64,
    pub step: String,
    pub observer: ActorRef,
    pub observed: ActorRef,
    pub payload: Payload,
    pub at: LogicalTime,
}

/// Everything a finished run produced, in execution order.
///
/// `side_observations` holds physically visible attributes of co-present
/// participants (a uniform, a badge): real information flow, but not part of
/// the protocol, so conformance ignores it while views include it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transcript {
    pub kind: ProtocolKind,
    pub participants: BTreeMap<Party, ActorRef>,
    pub messages: Vec<TranscriptMessage>,
    pub observations: Vec<TranscriptObservation>,
    pub side_observations: Vec<TranscriptObservation>,
}

/// Every field value a party saw during a run: received message payloads plus
/// observations the party made. What a party sends is already known to them,
/// so views measure what a flow reveals, not what it carries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViewProfile {
    pub party: Party,
    pub fields: BTreeMap<String, BTreeSet<String>>,
}

fn value_string(v: &serde_json::Value) -> String {
    match v.as_str() {
        Some(s) => s.to_string(),
        None => v.to_string(),
    }
}

pub fn extract_view(transcript: &Transcript, party: Party) -> ViewProfile {
    let mut fields: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let actor = transcript.participants.get(&party);
    if let Some(actor) = actor {
        for m in &transcript.messages {
            if &m.to == actor && m.delivered_at.is_some() {
                for (k, v) in &m.payload {
                    fields.entry(k.clone()).or_default().insert(value_string(v));
                }
            }
        }
        for o in transcript
            .observations
            .iter()
            .chain(transcript.side_observations.iter())
        {
            if &o.observer == actor {
                for (k, v) in &o.payload {
                    fields.entry(k.clone()).or_default().insert(value_string(v));
                }
            }
        }
    }
    ViewProfile { party, fields }
}

/// Field-level difference between a baseline view and a candidate view.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViewDiff {
    pub removed: BTreeSet<String>,
    pub added: BTreeSet<String>,
    pub pii_removed: BTreeSet<String>,
    pub pii_added: BTreeSet<String>,
    /// Number of PII fields the candidate no longer reveals.
    pub data_minimization_score: usize,
}

pub fn diff_views(baseline: &ViewProfile, candidate: &ViewProfile) -> ViewDiff {
    let base: BTreeSet<&String> = baseline.fields.keys().collect();
    let cand: BTreeSet<&String> = candidate.fields.keys().collect();
    let removed: BTreeSet<String> = base.difference(&cand).map(|s| s.to_string()).collect();
    let added: BTreeSet<String> = cand.difference(&base).map(|s| s.to_string()).collect();
    let pii_removed: BTreeSet<String> = removed
        .iter()
        .filter(|f| PII_FIELDS.contains(&f.as_str()))
        .cloned()
        .collect();
    let pii_added: BTreeSet<String> = added
        .iter()
        .filter(|f| PII_FIELDS.contains(&f.as_str()))
        .cloned()
        .collect();
    let data_minimization_score = pii_removed.len();
    ViewDiff {
        removed,
        added,
        pii_removed,
        pii_added,
        data_minimization_score,
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConformanceError {
    #[error("transcript has {found} steps, choreography has {expected}")]
    StepCountMismatch { expected: usize, found: usize },
    #[error("step {index}: expected {expected:?}, found {found:?}")]
    StepMismatch {
        index: usize,
        expected: String,
        found: String,
    },
    #[error("step {step:?}: no participant bound for {party:?}")]
    ParticipantMissing { step: String, party: Party },
    #[error("step {step:?}: endpoint {found} does not match the bound {expected}")]
    EndpointMismatch {
        step: String,
        expected: ActorRef,
        found: ActorRef,
    },
    #[error("step {step:?}: payload fields {found:?} differ from {expected:?}")]
    FieldMismatch {
        step: String,
        expected: BTreeSet<String>,
        found: BTreeSet<String>,
    },
    #[error("step {step:?}: action kind differs from the choreography")]
    ActionMismatch { step: String },
}

enum Executed<'a> {
    Msg(&'a TranscriptMessage),
    Obs(&'a TranscriptObservation),
}

impl<'a> Executed<'a> {
    fn seq(&self) -> u64 {
        match self {
            Executed::Msg(m) => m.seq,
            Executed::Obs(o) => o.seq,
        }
    }
    fn step(&self) -> &str {
        match self {
            Executed::Msg(m) => &m.step,
            Executed::Obs(o) => &o.step,
        }
    }
    fn payload(&self) -> &Payload {
        match self {
            Executed::Msg(m) => &m.payload,
            Executed::Obs(o) => &o.payload,
        }
    }
}

/// Replay a transcript against its choreography: same steps in the same
/// order, endpoints matching the participant binding, and payload field sets
/// equal to the table's, field for field.
pub fn check_conformance(
    chor: &Choreography,
    transcript: &Transcript,
) -> Result<(), ConformanceError> {
    let mut executed: Vec<Executed> = transcript
        .messages
        .iter()
        .map(Executed::Msg)
        .chain(transcript.observations.iter().map(Executed::Obs))
        .collect();
    executed.sort_by_key(|e| e.seq());

    if executed.len() != chor.steps.len() {
        return Err(ConformanceError::StepCountMismatch {
            expected: chor.steps.len(),
            found: executed.len(),
        });
    }
    let resolve = |step: &Step, party: Party| -> Result<ActorRef, ConformanceError> {
        transcript
            .participants
            .get(&party)
            .copied()
            .ok_or(ConformanceError::ParticipantMissing {
                step: step.name.clone(),
                party,
            })
    };
    for (index, (spec, actual)) in chor.steps.iter().zip(executed.iter()).enumerate() {
        if spec.name != actual.step() {
            return Err(ConformanceError::StepMismatch {
                index,
                expected: spec.name.clone(),
                found: actual.step().to_string(),
            });
        }
        match (&spec.action, actual) {
            (StepAction::Message { from, to }, Executed::Msg(m)) => {
                let expected_from = resolve(spec, *from)?;
                let expected_to = resolve(spec, *to)?;
                if m.from != expected_from {
                    return Err(ConformanceError::EndpointMismatch {
                        step: spec.name.clone(),
                        expected: expected_from,
                        found: m.from,
                    });
                }
                if m.to != expected_to {
                    return Err(ConformanceError::EndpointMismatch {
                        step: spec.name.clone(),
                        expected: expected_to,
                        found: m.to,
                    });
                }
            }
            (StepAction::Observation { observer, observed }, Executed::Obs(o)) => {
                let expected_observer = resolve(spec, *observer)?;
                let expected_observed = resolve(spec, *observed)?;
                if o.observer != expected_observer {
                    return Err(ConformanceError::EndpointMismatch {
                        step: spec.name.clone(),
                        expected: expected_observer,
                        found: o.observer,
                    });
                }
                if o.observed != expected_observed {
                    return Err(ConformanceError::EndpointMismatch {
                        step: spec.name.clone(),
                        expected: expected_observed,
                        found: o.observed,
                    });
                }
            }
            _ => {
                return Err(ConformanceError::ActionMismatch {
                    step: spec.name.clone(),
                })
            }
        }
        let found: BTreeSet<String> = actual.payload().keys().cloned().collect();
        if found != spec.fields {
            return Err(ConformanceError::FieldMismatch {
                step: spec.name.clone(),
                expected: spec.fields.clone(),
                found,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::PersonId;
    use serde_json::json;

    fn fields(step: &Step) -> Vec<&str> {
        step.fields.iter().map(|s| s.as_str()).collect()
    }

    #[test]
    fn withdrawal_pair_leg_counts_differ_by_three() {
        let current = Choreography::for_kind(ProtocolKind::CurrentWithdrawal).message_count();
        let pp = Choreography::for_kind(ProtocolKind::PpWithdrawal).message_count();
        assert_eq!(current.client_provider_legs, 4);
        assert_eq!(pp.client_provider_legs, 7);
        assert_eq!(pp.client_provider_legs - current.client_provider_legs, 3);
        assert_eq!(current.round_trips, 2.0);
        assert_eq!(pp.round_trips, 3.5);
        assert_eq!(current.agent_provider_legs, 2);
        assert_eq!(pp.agent_provider_legs, 2);
    }

    #[test]
    fn deposit_pair_leg_counts_differ_by_three() {
        let current = Choreography::for_kind(ProtocolKind::CurrentDeposit).message_count();
        let pp = Choreography::for_kind(ProtocolKind::PpDeposit).message_count();
        assert_eq!(current.client_provider_legs, 4);
        assert_eq!(pp.client_provider_legs, 7);
    }

    #[test]
    fn delegated_flow_touches_both_customers() {
        let count = Choreography::for_kind(ProtocolKind::PpDelegated).message_count();
        assert_eq!(count.client_provider_legs, 16);
        assert_eq!(count.agent_provider_legs, 2);
        assert_eq!(count.peer_legs, 0);
        let forward = Choreography::for_kind(ProtocolKind::InformalDelegated(InformalVariant::ForwardMessage))
            .message_count();
        assert_eq!(forward.peer_legs, 1);
    }

    #[test]
    fn step_tables_have_expected_shapes() {
        for kind in ProtocolKind::ALL {
            let chor = Choreography::for_kind(kind);
            assert!(!chor.steps.is_empty());
            let names: BTreeSet<&str> = chor.steps.iter().map(|s| s.name.as_str()).collect();
            assert_eq!(names.len(), chor.steps.len(), "{kind}: duplicate step name");
            assert!(chor
                .steps
                .iter()
                .any(|s| s.name == step::SETTLE_REQUEST));
        }
        let current = Choreography::for_kind(ProtocolKind::CurrentWithdrawal);
        assert_eq!(
            fields(current.step(step::AGENT_NOTIFICATION).unwrap()),
            ["amount", "name", "phone_number", "time", "txn_code"]
        );
        let pp = Choreography::for_kind(ProtocolKind::PpWithdrawal);
        assert_eq!(
            fields(pp.step(step::CODE_TO_AGENT).unwrap()),
            ["amount", "code", "time"]
        );
        assert!(pp.step(step::SHOW_ID).is_none());
    }

    #[test]
    fn forwarded_balance_redaction_trims_both_steps() {
        let opts = ChoreographyOptions {
            redact_forwarded_balance: true,
        };
        let chor = Choreography::for_kind_opts(ProtocolKind::InformalDelegated(InformalVariant::ForwardMessage), &opts);
        assert!(!chor
            .step(step::FORWARD_MSG)
            .unwrap()
            .fields
            .contains("account_balance"));
        assert!(!chor
            .step(step::SHOW_FORWARDED)
            .unwrap()
            .fields
            .contains("account_balance"));
        let plain = Choreography::for_kind(ProtocolKind::InformalDelegated(InformalVariant::ForwardMessage));
        assert!(plain
            .step(step::SHOW_FORWARDED)
            .unwrap()
            .fields
            .contains("account_balance"));
    }

    fn tiny_transcript() -> (Choreography, Transcript) {
        let chor = Choreography {
            kind: ProtocolKind::CurrentWithdrawal,
            steps: vec![
                msg("ping", Party::User, Party::Provider, &["amount"]),
                obs("look", Party::Agent, Party::User, &["national_id"]),
            ],
        };
        let user = ActorRef::User(PersonId(1));
        let agent = ActorRef::Agent(PersonId(2));
        let transcript = Transcript {
            kind: ProtocolKind::CurrentWithdrawal,
            participants: [
                (Party::User, user),
                (Party::Agent, agent),
                (Party::Provider, ActorRef::Provider),
            ]
            .into_iter()
            .collect(),
            messages: vec![TranscriptMessage {
                seq: 0,
                step: "ping".into(),
                from: user,
                to: ActorRef::Provider,
                payload: [("amount".to_string(), json!(5))].into_iter().collect(),
                sent_at: LogicalTime(0),
                delivered_at: Some(LogicalTime(0)),
            }],
            observations: vec![TranscriptObservation {
                seq: 1,
                step: "look".into(),
                observer: agent,
                observed: user,
                payload: [("national_id".to_string(), json!("11111111"))]
                    .into_iter()
                    .collect(),
                at: LogicalTime(0),
            }],
            side_observations: vec![],
        };
        (chor, transcript)
    }

    #[test]
    fn conformance_accepts_a_matching_transcript() {
        let (chor, transcript) = tiny_transcript();
        check_conformance(&chor, &transcript).unwrap();
    }

    #[test]
    fn conformance_rejects_field_and_order_violations() {
        let (chor, mut transcript) = tiny_transcript();
        transcript.messages[0]
            .payload
            .insert("extra".into(), json!(1));
        assert!(matches!(
            check_conformance(&chor, &transcript),
            Err(ConformanceError::FieldMismatch { .. })
        ));

        let (chor, mut transcript) = tiny_transcript();
        transcript.messages[0].seq = 5;
        assert!(matches!(
            check_conformance(&chor, &transcript),
            Err(ConformanceError::StepMismatch { .. })
        ));

        let (chor, mut transcript) = tiny_transcript();
        transcript.messages[0].from = ActorRef::User(PersonId(9));
        assert!(matches!(
            check_conformance(&chor, &transcript),
            Err(ConformanceError::EndpointMismatch { .. })
        ));

        let (chor, mut transcript) = tiny_transcript();
        transcript.observations.pop();
        assert!(matches!(
            check_conformance(&chor, &transcript),
            Err(ConformanceError::StepCountMismatch { .. })
        ));
    }

    #[test]
    fn views_collect_received_and_observed_fields_only() {
        let (_, transcript) = tiny_transcript();
        let agent_view = extract_view(&transcript, Party::Agent);
        assert_eq!(
            agent_view.fields.keys().collect::<Vec<_>>(),
            ["national_id"]
        );
        let provider_view = extract_view(&transcript, Party::Provider);
        assert_eq!(provider_view.fields.keys().collect::<Vec<_>>(), ["amount"]);
        // The user sent and was observed but received nothing.
        let user_view = extract_view(&transcript, Party::User);
        assert!(user_view.fields.is_empty());
    }

    #[test]
    fn view_diff_scores_removed_pii() {
        let baseline = ViewProfile {
            party: Party::Agent,
            fields: [
                ("txn_code", "10101010"),
                ("name", "Alice"),
                ("phone_number", "0712345678"),
                ("national_id", "11111111"),
                ("amount", "50000"),
                ("time", "3"),
            ]
            .into_iter()
            .map(|(k, v)| {
                (
                    k.to_string(),
                    [v.to_string()].into_iter().collect::<BTreeSet<_>>(),
                )
            })
            .collect(),
        };
        let candidate = ViewProfile {
            party: Party::Agent,
            fields: [("code", "10101010"), ("amount", "50000"), ("time", "3")]
                .into_iter()
                .map(|(k, v)| {
                    (
                        k.to_string(),
                        [v.to_string()].into_iter().collect::<BTreeSet<_>>(),
                    )
                })
                .collect(),
        };
        let diff = diff_views(&baseline, &candidate);
        assert_eq!(
            diff.removed,
            ["name", "national_id", "phone_number", "txn_code"]
                .into_iter()
                .map(String::from)
                .collect()
        );
        assert_eq!(diff.added, ["code"].into_iter().map(String::from).collect());
        assert_eq!(diff.data_minimization_score, 3);
        assert!(diff.pii_added.is_empty());
    }
}
