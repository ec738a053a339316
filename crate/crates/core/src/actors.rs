//! Honest protocol runners: execute a choreography step by step against a
//! simulated world, producing a transcript that conformance-checks against
//! the table it ran from.
//!
//! Client and agent messages are sent by the runner; provider messages are
//! sent by provider-side effects when a request is delivered. Consecutive
//! steps with the same sender go out as one burst at the same tick, which is
//! what lets an authentication response and the request that relies on it
//! arrive together, and what lets the two code notifications race each other
//! under asymmetric latency without deadlocking the run.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::json;
use thiserror::Error;

use crate::domain::{
    mask_phone, ActorRef, CodeBits, DomainError, Money, Payload, PersonId, ProtocolKind,
    TransactionId,
};
use crate::protocols::{
    step, Choreography, ChoreographyOptions, Party, Step, StepAction, Transcript,
    TranscriptMessage, TranscriptObservation,
};
use crate::provider::{
    AuthCertificate, AuthMethod, NotificationDraft, ProviderError, SettleOutcome, TxnState,
};
use crate::simnet::{SimError, SimWorld};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("protocol violation: {0}")]
    Protocol(String),
}

/// Who plays which role in one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPlan {
    pub kind: ProtocolKind,
    pub amount: Money,
    pub agent_number: String,
    /// The user for withdrawals and deposits, the sender for delegated flows.
    pub initiator: PersonId,
    /// Bound for delegated flows, ignored otherwise.
    pub collector: Option<PersonId>,
    pub biometric_method: AuthMethod,
    pub options: ChoreographyOptions,
}

impl RunPlan {
    pub fn new(kind: ProtocolKind, initiator: PersonId, amount: Money, agent_number: &str) -> RunPlan {
        RunPlan {
            kind,
            amount,
            agent_number: agent_number.to_string(),
            initiator,
            collector: None,
            biometric_method: AuthMethod::Voice,
            options: ChoreographyOptions::default(),
        }
    }

    pub fn with_collector(mut self, collector: PersonId) -> RunPlan {
        self.collector = Some(collector);
        self
    }
}

/// What one finished (or failed-but-completed) run produced.
#[derive(Debug)]
pub struct RunOutcome {
    pub transcript: Transcript,
    pub txn: Option<TransactionId>,
    pub settle: Option<SettleOutcome>,
    pub final_state: Option<TxnState>,
    /// True when every step executed and settlement succeeded.
    pub completed: bool,
}

struct Runner<'a> {
    plan: &'a RunPlan,
    chor: Choreography,
    participants: BTreeMap<Party, ActorRef>,
    persons: BTreeMap<Party, PersonId>,
    next_seq: u64,
    messages: Vec<TranscriptMessage>,
    observations: Vec<TranscriptObservation>,
    side_observations: Vec<TranscriptObservation>,
    msg_index: BTreeMap<u64, usize>,
    delivered_steps: BTreeSet<String>,
    challenge_counter: u64,
    initiator_cert: Option<AuthCertificate>,
    collector_cert: Option<AuthCertificate>,
    txn: Option<TransactionId>,
    settle: Option<SettleOutcome>,
    customer_code: Option<String>,
    confirmation_payload: Option<Payload>,
    forwarded_payload: Option<Payload>,
    selected_agent: Option<String>,
    side_pairs_done: BTreeSet<(ActorRef, ActorRef)>,
}

/// Execute one protocol run to completion.
pub fn honest_run(world: &mut SimWorld, plan: &RunPlan) -> Result<RunOutcome, RunError> {
    let chor = Choreography::for_kind_opts(plan.kind, &plan.options);
    let agent_person = world
        .provider()
        .agent(&plan.agent_number)
        .ok_or_else(|| RunError::Protocol(format!("unknown agent {}", plan.agent_number)))?
        .person;

    let customer_party = if plan.kind.is_delegated() {
        Party::Sender
    } else {
        Party::User
    };
    let mut participants: BTreeMap<Party, ActorRef> = BTreeMap::new();
    let mut persons: BTreeMap<Party, PersonId> = BTreeMap::new();
    participants.insert(Party::Provider, ActorRef::Provider);
    participants.insert(Party::Agent, ActorRef::Agent(agent_person));
    persons.insert(Party::Agent, agent_person);
    participants.insert(customer_party, ActorRef::User(plan.initiator));
    persons.insert(customer_party, plan.initiator);
    if plan.kind.is_delegated() {
        let collector = plan
            .collector
            .ok_or_else(|| RunError::Protocol("delegated run without a collector".into()))?;
        participants.insert(Party::Collector, ActorRef::User(collector));
        persons.insert(Party::Collector, collector);
    }

    let mut runner = Runner {
        plan,
        chor,
        participants,
        persons,
        next_seq: 0,
        messages: Vec::new(),
        observations: Vec::new(),
        side_observations: Vec::new(),
        msg_index: BTreeMap::new(),
        delivered_steps: BTreeSet::new(),
        challenge_counter: 0,
        initiator_cert: None,
        collector_cert: None,
        txn: None,
        settle: None,
        customer_code: None,
        confirmation_payload: None,
        forwarded_payload: None,
        selected_agent: None,
        side_pairs_done: BTreeSet::new(),
    };
    runner.execute(world)?;

    let transcript = Transcript {
        kind: plan.kind,
        participants: runner.participants,
        messages: runner.messages,
        observations: runner.observations,
        side_observations: runner.side_observations,
    };
    let final_state = runner
        .txn
        .and_then(|t| world.provider().record(t))
        .map(|r| r.state);
    let completed = matches!(runner.settle, Some(SettleOutcome::Settled { .. }));
    Ok(RunOutcome {
        transcript,
        txn: runner.txn,
        settle: runner.settle,
        final_state,
        completed,
    })
}

impl<'a> Runner<'a> {
    fn execute(&mut self, world: &mut SimWorld) -> Result<(), RunError> {
        let steps = self.chor.steps.clone();
        let mut i = 0;
        while i < steps.len() {
            let step = &steps[i];
            match step.action {
                StepAction::Observation { observer, observed } => {
                    self.run_observation(world, step, observer, observed)?;
                    i += 1;
                }
                StepAction::Message { from, .. } if from != Party::Provider => {
                    // Burst: this step plus following message steps with the
                    // same sender go out at the same tick.
                    let mut burst = vec![i];
                    let mut j = i + 1;
                    while j < steps.len() {
                        match steps[j].action {
                            StepAction::Message { from: f, .. } if f == from => {
                                burst.push(j);
                                j += 1;
                            }
                            _ => break,
                        }
                    }
                    let mut ids = Vec::new();
                    for &b in &burst {
                        ids.push(self.send_client(world, &steps[b])?);
                    }
                    self.pump_until(world, |r| {
                        ids.iter().all(|id| {
                            r.msg_index
                                .get(id)
                                .map(|&ix| r.messages[ix].delivered_at.is_some())
                                .unwrap_or(false)
                        })
                    })?;
                    i = j;
                }
                StepAction::Message { .. } => {
                    let name = step.name.clone();
                    self.pump_until(world, |r| r.delivered_steps.contains(&name))?;
                    i += 1;
                }
            }
        }
        Ok(())
    }

    fn pump_until(
        &mut self,
        world: &mut SimWorld,
        done: impl Fn(&Runner) -> bool,
    ) -> Result<(), RunError> {
        while !done(self) {
            let batch = world.step();
            if batch.is_empty() {
                return Err(RunError::Protocol(
                    "world went quiet while a step was still outstanding".into(),
                ));
            }
            for msg in batch {
                self.on_delivered(world, msg.msg_id, &msg.kind, msg.from, msg.to, msg.payload)?;
            }
        }
        Ok(())
    }

    fn record_send(
        &mut self,
        world: &mut SimWorld,
        step_name: &str,
        from: ActorRef,
        to: ActorRef,
        payload: Payload,
    ) -> u64 {
        let sent_at = world.now();
        let msg_id = world.send(from, to, step_name, payload.clone());
        let seq = self.next_seq;
        self.next_seq += 1;
        self.messages.push(TranscriptMessage {
            seq,
            step: step_name.to_string(),
            from,
            to,
            payload,
            sent_at,
            delivered_at: None,
        });
        self.msg_index.insert(msg_id, self.messages.len() - 1);
        msg_id
    }

    fn actor(&self, party: Party) -> ActorRef {
        self.participants[&party]
    }

    fn person(&self, party: Party) -> PersonId {
        self.persons[&party]
    }

    fn customer_party(&self) -> Party {
        if self.plan.kind.is_delegated() {
            Party::Sender
        } else {
            Party::User
        }
    }

    /// Whose account the main transaction debits or credits.
    fn account_party(&self) -> Party {
        use crate::domain::InformalVariant::*;
        match self.plan.kind {
            ProtocolKind::InformalDelegated(P2pTransfer) => Party::Collector,
            _ => self.customer_party(),
        }
    }

    /// Who physically holds the device the main flow runs on.
    fn device_holder(&self) -> PersonId {
        use crate::domain::InformalVariant::*;
        match self.plan.kind {
            ProtocolKind::InformalDelegated(SharePhonePin) => self.person(Party::Collector),
            ProtocolKind::InformalDelegated(P2pTransfer) => self.person(Party::Collector),
            _ => self.person(self.customer_party()),
        }
    }

    /// Who stands at the agent's counter to collect or hand over cash.
    fn presenter(&self) -> PersonId {
        if self.plan.kind.is_delegated() {
            self.person(Party::Collector)
        } else {
            self.person(Party::User)
        }
    }

    fn profile_of(&self, world: &SimWorld, party: Party) -> Result<crate::domain::UserProfile, RunError> {
        let person = self.person(party);
        world
            .provider()
            .profile(person)
            .cloned()
            .ok_or_else(|| RunError::Protocol(format!("unregistered person {person}")))
    }

    fn send_client(&mut self, world: &mut SimWorld, step_def: &Step) -> Result<u64, RunError> {
        let StepAction::Message { from, to } = step_def.action else {
            return Err(RunError::Protocol("send_client on an observation".into()));
        };
        let payload = self.client_payload(world, step_def)?;
        let from_ref = self.actor(from);
        let to_ref = self.actor(to);
        Ok(self.record_send(world, &step_def.name, from_ref, to_ref, payload))
    }

    fn client_payload(&mut self, world: &SimWorld, step_def: &Step) -> Result<Payload, RunError> {
        use step::*;
        let plan = self.plan;
        let p = |fields: &[(&str, serde_json::Value)]| -> Payload {
            fields
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect()
        };
        let payload = match step_def.name.as_str() {
            AUTH_INIT => {
                let profile = self.profile_of(world, self.customer_party())?;
                p(&[("phone_number", json!(profile.phone_number))])
            }
            AUTH_INIT_COLLECTOR => {
                let profile = self.profile_of(world, Party::Collector)?;
                p(&[("phone_number", json!(profile.phone_number))])
            }
            AUTH_RESPONSE => p(&[(
                "biometric_sample",
                json!(format!("sample-{}", self.person(self.customer_party()))),
            )]),
            AUTH_RESPONSE_COLLECTOR => p(&[(
                "biometric_sample",
                json!(format!("sample-{}", self.person(Party::Collector))),
            )]),
            WITHDRAW_REQUEST | DEPOSIT_REQUEST => p(&[
                ("amount", json!(plan.amount.0)),
                ("agent_number", json!(plan.agent_number)),
            ]),
            PIN_CONFIRM => {
                let profile = self.profile_of(world, self.account_party())?;
                p(&[("pin", json!(profile.pin))])
            }
            PIN_CONFIRM_COLLECTOR => {
                let profile = self.profile_of(world, Party::Collector)?;
                p(&[("pin", json!(profile.pin))])
            }
            DELEGATE_REQUEST => {
                let collector = self.profile_of(world, Party::Collector)?;
                p(&[
                    ("amount", json!(plan.amount.0)),
                    ("collector_phone", json!(collector.phone_number)),
                ])
            }
            P2P_REQUEST => {
                let sender = self.profile_of(world, Party::Sender)?;
                let collector = self.profile_of(world, Party::Collector)?;
                p(&[
                    ("amount", json!(plan.amount.0)),
                    ("collector_phone", json!(collector.phone_number)),
                    ("pin", json!(sender.pin)),
                ])
            }
            LIST_REQUEST => p(&[("agent_number", json!(plan.agent_number))]),
            SELECT_TXN => {
                let txn = self
                    .txn
                    .ok_or_else(|| RunError::Protocol("selection before delegation".into()))?;
                p(&[("selection", json!(txn))])
            }
            FORWARD_MSG => {
                let mut fwd = self
                    .confirmation_payload
                    .clone()
                    .ok_or_else(|| RunError::Protocol("forwarding before confirmation".into()))?;
                if plan.options.redact_forwarded_balance {
                    fwd.remove("account_balance");
                }
                self.forwarded_payload = Some(fwd.clone());
                fwd
            }
            SETTLE_REQUEST => {
                let code = self
                    .customer_code
                    .clone()
                    .ok_or_else(|| RunError::Protocol("settling before a code arrived".into()))?;
                let key = if step_def.fields.contains("txn_code") {
                    "txn_code"
                } else {
                    "code"
                };
                p(&[(key, json!(code)), ("amount", json!(plan.amount.0))])
            }
            other => {
                return Err(RunError::Protocol(format!(
                    "no client payload rule for step {other}"
                )))
            }
        };
        Ok(payload)
    }

    fn on_delivered(
        &mut self,
        world: &mut SimWorld,
        msg_id: u64,
        step_name: &str,
        _from: ActorRef,
        to: ActorRef,
        payload: Payload,
    ) -> Result<(), RunError> {
        if let Some(&ix) = self.msg_index.get(&msg_id) {
            self.messages[ix].delivered_at = Some(world.now());
        }
        self.delivered_steps.insert(step_name.to_string());
        if to == ActorRef::Provider {
            self.provider_effect(world, step_name, &payload)?;
        } else {
            self.customer_effect(step_name, &payload);
        }
        Ok(())
    }

    fn customer_effect(&mut self, step_name: &str, payload: &Payload) {
        use step::*;
        match step_name {
            USER_CONFIRMATION | CODE_TO_USER | CODE_TO_COLLECTOR => {
                let key = if payload.contains_key("txn_code") {
                    "txn_code"
                } else {
                    "code"
                };
                if let Some(code) = payload.get(key).and_then(|v| v.as_str()) {
                    self.customer_code = Some(code.to_string());
                }
                self.confirmation_payload = Some(payload.clone());
            }
            FORWARD_MSG => {
                self.forwarded_payload = Some(payload.clone());
            }
            _ => {}
        }
    }

    fn send_provider(&mut self, world: &mut SimWorld, step_name: &str, draft: NotificationDraft) {
        self.record_send(world, step_name, ActorRef::Provider, draft.to, draft.payload);
    }

    fn provider_effect(
        &mut self,
        world: &mut SimWorld,
        step_name: &str,
        payload: &Payload,
    ) -> Result<(), RunError> {
        use step::*;
        let plan = self.plan;
        match step_name {
            AUTH_INIT | AUTH_INIT_COLLECTOR => {
                let reply_step = if step_name == AUTH_INIT {
                    AUTH_CHALLENGE
                } else {
                    AUTH_CHALLENGE_COLLECTOR
                };
                let to_party = if step_name == AUTH_INIT {
                    self.customer_party()
                } else {
                    Party::Collector
                };
                let n = self.challenge_counter;
                self.challenge_counter += 1;
                let draft = NotificationDraft {
                    to: self.actor(to_party),
                    payload: [("challenge".to_string(), json!(format!("nonce-{n}")))]
                        .into_iter()
                        .collect(),
                };
                self.send_provider(world, reply_step, draft);
            }
            AUTH_RESPONSE => {
                let person = self.person(self.customer_party());
                let account = world
                    .provider()
                    .account_of(person)
                    .ok_or(ProviderError::UnknownPerson(person))?;
                let cert = world
                    .provider_op(|p, now| p.authenticate(person, account, plan.biometric_method, now))?;
                self.initiator_cert = Some(cert);
            }
            AUTH_RESPONSE_COLLECTOR => {
                let person = self.person(Party::Collector);
                let account = world
                    .provider()
                    .account_of(person)
                    .ok_or(ProviderError::UnknownPerson(person))?;
                let cert = world
                    .provider_op(|p, now| p.authenticate(person, account, plan.biometric_method, now))?;
                self.collector_cert = Some(cert);
            }
            WITHDRAW_REQUEST | DEPOSIT_REQUEST => {
                let account_person = self.person(self.account_party());
                let account = world
                    .provider()
                    .account_of(account_person)
                    .ok_or(ProviderError::UnknownPerson(account_person))?;
                let cert = if plan.kind.is_privacy_preserving() {
                    self.initiator_cert
                        .clone()
                        .ok_or_else(|| RunError::Protocol("request before authentication".into()))?
                } else {
                    let holder = self.device_holder();
                    world.provider_op(|p, now| {
                        p.authenticate(holder, account, AuthMethod::PhoneSession, now)
                    })?
                };
                let is_deposit = step_name == DEPOSIT_REQUEST;
                let txn = world.provider_op(|p, now| {
                    if is_deposit {
                        p.initiate_deposit(&cert, plan.kind, plan.amount, &plan.agent_number, now)
                    } else {
                        p.initiate_withdrawal(&cert, plan.kind, plan.amount, &plan.agent_number, now)
                    }
                })?;
                self.txn = Some(txn);
                let fee = if is_deposit {
                    world.provider().config.deposit_fee
                } else {
                    world.provider().config.withdrawal_fee
                };
                let draft = NotificationDraft {
                    to: self.actor(self.account_party()),
                    payload: [
                        ("amount".to_string(), json!(plan.amount.0)),
                        ("agent_number".to_string(), json!(plan.agent_number)),
                        ("fee".to_string(), json!(fee.0)),
                    ]
                    .into_iter()
                    .collect(),
                };
                self.send_provider(world, TXN_SUMMARY, draft);
            }
            DELEGATE_REQUEST => {
                let cert = self
                    .initiator_cert
                    .clone()
                    .ok_or_else(|| RunError::Protocol("request before authentication".into()))?;
                let collector_phone = payload
                    .get("collector_phone")
                    .and_then(|v| v.as_str())
                    .ok_or_else(|| RunError::Protocol("delegate request without phone".into()))?
                    .to_string();
                let txn = world.provider_op(|p, now| {
                    p.initiate_delegated(&cert, plan.amount, &collector_phone, now)
                })?;
                self.txn = Some(txn);
                let masked = mask_phone(&collector_phone)?;
                let fee = world.provider().config.withdrawal_fee;
                let draft = NotificationDraft {
                    to: self.actor(Party::Sender),
                    payload: [
                        ("amount".to_string(), json!(plan.amount.0)),
                        ("collector_phone_masked".to_string(), json!(masked)),
                        ("fee".to_string(), json!(fee.0)),
                    ]
                    .into_iter()
                    .collect(),
                };
                self.send_provider(world, TXN_SUMMARY, draft);
            }
            PIN_CONFIRM => {
                let txn = self
                    .txn
                    .ok_or_else(|| RunError::Protocol("pin before initiation".into()))?;
                let pin = payload
                    .get("pin")
                    .and_then(|v| v.as_str())
                    .ok_or_else(|| RunError::Protocol("pin step without a pin".into()))?
                    .to_string();
                world.provider_op(|p, now| p.confirm_with_pin(txn, &pin, now))?;
                if plan.kind == ProtocolKind::PpDelegated {
                    let collector = self.profile_of(world, Party::Collector)?;
                    let entry = world.provider_op(|p, now| {
                        p.assign_delegate(txn, &collector.phone_number, now)
                    })?;
                    let draft = NotificationDraft {
                        to: self.actor(Party::Sender),
                        payload: [
                            ("amount".to_string(), json!(entry.amount.0)),
                            (
                                "collector_phone_masked".to_string(),
                                json!(mask_phone(&collector.phone_number)?),
                            ),
                            ("time".to_string(), json!(world.now().0)),
                        ]
                        .into_iter()
                        .collect(),
                    };
                    self.send_provider(world, DELEGATION_RECEIPT, draft);
                } else {
                    let (user_draft, agent_draft) =
                        world.provider_op(|p, now| p.issue_code(txn, now))?;
                    let (user_step, agent_step) = if plan.kind.is_privacy_preserving() {
                        (CODE_TO_USER, CODE_TO_AGENT)
                    } else {
                        (USER_CONFIRMATION, AGENT_NOTIFICATION)
                    };
                    self.send_provider(world, user_step, user_draft);
                    self.send_provider(world, agent_step, agent_draft);
                }
            }
            P2P_REQUEST => {
                let sender_person = self.person(Party::Sender);
                let sender_account = world
                    .provider()
                    .account_of(sender_person)
                    .ok_or(ProviderError::UnknownPerson(sender_person))?;
                let pin = payload
                    .get("pin")
                    .and_then(|v| v.as_str())
                    .unwrap_or_default()
                    .to_string();
                let collector_phone = payload
                    .get("collector_phone")
                    .and_then(|v| v.as_str())
                    .unwrap_or_default()
                    .to_string();
                let receipt = world.provider_op(|p, now| {
                    p.p2p_transfer(sender_account, &pin, &collector_phone, plan.amount, now)
                })?;
                let sender_draft = NotificationDraft {
                    to: self.actor(Party::Sender),
                    payload: [
                        ("txn_code".to_string(), json!(receipt.reference.to_string())),
                        ("amount".to_string(), json!(receipt.amount.0)),
                        ("recipient_name".to_string(), json!(receipt.recipient_name)),
                        ("time".to_string(), json!(receipt.time.0)),
                        (
                            "account_balance".to_string(),
                            json!(receipt.sender_balance_after.0),
                        ),
                    ]
                    .into_iter()
                    .collect(),
                };
                let collector_draft = NotificationDraft {
                    to: self.actor(Party::Collector),
                    payload: [
                        ("txn_code".to_string(), json!(receipt.reference.to_string())),
                        ("amount".to_string(), json!(receipt.amount.0)),
                        ("sender_name".to_string(), json!(receipt.sender_name)),
                        ("sender_phone".to_string(), json!(receipt.sender_phone)),
                        ("time".to_string(), json!(receipt.time.0)),
                    ]
                    .into_iter()
                    .collect(),
                };
                self.send_provider(world, P2P_RECEIPT, sender_draft);
                self.send_provider(world, P2P_NOTICE, collector_draft);
            }
            LIST_REQUEST => {
                let cert = self
                    .collector_cert
                    .clone()
                    .ok_or_else(|| RunError::Protocol("listing before authentication".into()))?;
                self.selected_agent = payload
                    .get("agent_number")
                    .and_then(|v| v.as_str())
                    .map(String::from);
                let labels: Vec<String> = world
                    .provider()
                    .list_delegated(&cert)
                    .into_iter()
                    .map(|e| e.display_label)
                    .collect();
                let draft = NotificationDraft {
                    to: self.actor(Party::Collector),
                    payload: [("delegations".to_string(), json!(labels))]
                        .into_iter()
                        .collect(),
                };
                self.send_provider(world, DELEGATION_LIST, draft);
            }
            SELECT_TXN => {
                let selected = payload.get("selection").and_then(|v| v.as_u64());
                if selected != self.txn.map(|t| t.0) {
                    return Err(RunError::Protocol("selection names an unknown transaction".into()));
                }
            }
            PIN_CONFIRM_COLLECTOR => {
                let txn = self
                    .txn
                    .ok_or_else(|| RunError::Protocol("collection before delegation".into()))?;
                let cert = self
                    .collector_cert
                    .clone()
                    .ok_or_else(|| RunError::Protocol("collection before authentication".into()))?;
                let pin = payload
                    .get("pin")
                    .and_then(|v| v.as_str())
                    .unwrap_or_default()
                    .to_string();
                let agent_number = self
                    .selected_agent
                    .clone()
                    .ok_or_else(|| RunError::Protocol("collection before listing".into()))?;
                let (collector_draft, agent_draft) = world.provider_op(|p, now| {
                    p.collector_confirm(txn, &cert, &pin, &agent_number, now)
                })?;
                self.send_provider(world, CODE_TO_COLLECTOR, collector_draft);
                self.send_provider(world, CODE_TO_AGENT, agent_draft);
            }
            SETTLE_REQUEST => {
                let txn = self
                    .txn
                    .ok_or_else(|| RunError::Protocol("settlement before initiation".into()))?;
                let key = if payload.contains_key("txn_code") {
                    "txn_code"
                } else {
                    "code"
                };
                let code_str = payload
                    .get(key)
                    .and_then(|v| v.as_str())
                    .ok_or_else(|| RunError::Protocol("settlement without a code".into()))?;
                let bits = parse_code(code_str)?;
                let amount = Money(
                    payload
                        .get("amount")
                        .and_then(|v| v.as_u64())
                        .ok_or_else(|| RunError::Protocol("settlement without an amount".into()))?,
                );
                let presenter = self.presenter();
                let is_deposit = plan.kind.is_deposit();
                let outcome = world.provider_op(|p, now| {
                    if is_deposit {
                        p.settle_deposit(txn, &bits, amount, presenter, now)
                    } else {
                        p.settle_collection(txn, &bits, amount, presenter, now)
                    }
                })?;
                let settled = matches!(outcome, SettleOutcome::Settled { .. });
                self.settle = Some(outcome);
                if plan.kind == ProtocolKind::PpDelegated {
                    let status = if settled { "settled" } else { "failed" };
                    let draft = NotificationDraft {
                        to: self.actor(Party::Sender),
                        payload: [
                            ("amount".to_string(), json!(plan.amount.0)),
                            ("time".to_string(), json!(world.now().0)),
                            ("status".to_string(), json!(status)),
                        ]
                        .into_iter()
                        .collect(),
                    };
                    self.send_provider(world, COMPLETION_TO_SENDER, draft);
                }
            }
            other => {
                return Err(RunError::Protocol(format!(
                    "no provider effect for step {other}"
                )))
            }
        }
        Ok(())
    }

    fn run_observation(
        &mut self,
        world: &mut SimWorld,
        step_def: &Step,
        observer: Party,
        observed: Party,
    ) -> Result<(), RunError> {
        use step::*;
        let payload: Payload = match step_def.name.as_str() {
            SHOW_ID => {
                let profile = self.profile_of(world, observed)?;
                [("national_id".to_string(), json!(profile.national_id))]
                    .into_iter()
                    .collect()
            }
            SHARE_CREDENTIALS => {
                let sender = self.profile_of(world, Party::Sender)?;
                [
                    ("phone_device".to_string(), json!(sender.phone_number)),
                    ("pin".to_string(), json!(sender.pin)),
                    ("national_id".to_string(), json!(sender.national_id)),
                ]
                .into_iter()
                .collect()
            }
            DEVICE_READ => self
                .confirmation_payload
                .clone()
                .ok_or_else(|| RunError::Protocol("device read before confirmation".into()))?,
            SHOW_FORWARDED => self
                .forwarded_payload
                .clone()
                .ok_or_else(|| RunError::Protocol("showing a message never forwarded".into()))?,
            CODE_COMPARE => {
                let code = self
                    .customer_code
                    .clone()
                    .ok_or_else(|| RunError::Protocol("comparing before a code arrived".into()))?;
                let key = if step_def.fields.contains("txn_code") {
                    "txn_code"
                } else {
                    "code"
                };
                [
                    (key.to_string(), json!(code)),
                    ("amount".to_string(), json!(self.plan.amount.0)),
                ]
                .into_iter()
                .collect()
            }
            HAND_CASH => [("amount".to_string(), json!(self.plan.amount.0))]
                .into_iter()
                .collect(),
            other => {
                return Err(RunError::Protocol(format!(
                    "no observation rule for step {other}"
                )))
            }
        };
        let observer_ref = self.actor(observer);
        let observed_ref = self.actor(observed);
        world.observe(observer_ref, observed_ref, &step_def.name, &payload);
        let seq = self.next_seq;
        self.next_seq += 1;
        self.observations.push(TranscriptObservation {
            seq,
            step: step_def.name.clone(),
            observer: observer_ref,
            observed: observed_ref,
            payload,
            at: world.now(),
        });
        self.emit_side_info(world, observer_ref, observed_ref, observed);
        Ok(())
    }

    /// Physically co-present parties also see each other's observable
    /// attributes; emitted once per (observer, observed) pair.
    fn emit_side_info(
        &mut self,
        world: &mut SimWorld,
        observer_ref: ActorRef,
        observed_ref: ActorRef,
        observed: Party,
    ) {
        if !self.side_pairs_done.insert((observer_ref, observed_ref)) {
            return;
        }
        let Some(profile) = world.provider().profile(self.person(observed)) else {
            return;
        };
        let payload: Payload = profile
            .attributes
            .observable()
            .map(|(k, v)| (k.to_string(), json!(v)))
            .collect();
        if payload.is_empty() {
            return;
        }
        world.observe(observer_ref, observed_ref, "side_info", &payload);
        self.side_observations.push(TranscriptObservation {
            seq: self.next_seq,
            step: "side_info".to_string(),
            observer: observer_ref,
            observed: observed_ref,
            payload,
            at: world.now(),
        });
        self.next_seq += 1;
    }
}

fn parse_code(s: &str) -> Result<CodeBits, RunError> {
    if s.is_empty() || s.len() > CodeBits::MAX_LEN as usize {
        return Err(RunError::Protocol(format!("malformed code {s:?}")));
    }
    let value = u64::from_str_radix(s, 2)
        .map_err(|_| RunError::Protocol(format!("malformed code {s:?}")))?;
    Ok(CodeBits::new(value, s.len() as u8))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{AgentProfile, AttributeVector, InformalVariant, UserProfile};
    use crate::protocols::{check_conformance, extract_view};
    use crate::provider::{Provider, ProviderConfig};
    use crate::simnet::{EventLog, LatencyModel, NetworkConfig};

    fn test_world(latency: LatencyModel) -> SimWorld {
        let mut provider = Provider::new(ProviderConfig::default(), 42);
        let attrs = AttributeVector::new(
            [("employer".to_string(), "E2".to_string())],
            ["employer".to_string()],
        );
        provider
            .register_user(
                UserProfile {
                    person: PersonId(1),
                    name: "Amina".into(),
                    phone_number: "0712345678".into(),
                    national_id: "11111111".into(),
                    pin: "1234".into(),
                    attributes: attrs,
                },
                Money(1_000_000),
            )
            .unwrap();
        provider
            .register_user(
                UserProfile {
                    person: PersonId(2),
                    name: "Bakari".into(),
                    phone_number: "0722222222".into(),
                    national_id: "22222222".into(),
                    pin: "5678".into(),
                    attributes: AttributeVector::default(),
                },
                Money(200_000),
            )
            .unwrap();
        provider
            .register_agent(AgentProfile {
                person: PersonId(50),
                agent_number: "400200".into(),
                cash_drawer: Money(5_000_000),
                float_balance: Money(5_000_000),
            })
            .unwrap();
        SimWorld::new(
            provider,
            NetworkConfig {
                latency,
                drop_probability: 0.0,
            },
            7,
            EventLog::enabled(),
        )
    }

    fn plan_for(kind: ProtocolKind) -> RunPlan {
        let mut plan = RunPlan::new(kind, PersonId(1), Money(50_000), "400200");
        if kind.is_delegated() {
            plan = plan.with_collector(PersonId(2));
        }
        plan
    }

    #[test]
    fn every_kind_runs_to_settlement_and_conforms() {
        for kind in ProtocolKind::ALL {
            let mut world = test_world(LatencyModel::Zero);
            let total_before = world.provider().emoney_total();
            let plan = plan_for(kind);
            let outcome = honest_run(&mut world, &plan)
                .unwrap_or_else(|e| panic!("{kind} failed: {e}"));
            assert!(outcome.completed, "{kind} did not settle");
            assert_eq!(outcome.final_state, Some(TxnState::Settled), "{kind}");
            let chor = Choreography::for_kind(kind);
            check_conformance(&chor, &outcome.transcript)
                .unwrap_or_else(|e| panic!("{kind} transcript: {e}"));
            assert_eq!(world.provider().emoney_total(), total_before, "{kind}");
            world.provider().audit_kyc().unwrap();
        }
    }

    #[test]
    fn runs_conform_under_fixed_latency() {
        use crate::domain::Duration;
        for kind in [
            ProtocolKind::CurrentWithdrawal,
            ProtocolKind::InformalDelegated(InformalVariant::ForwardMessage),
        ] {
            let mut world = test_world(LatencyModel::Fixed(Duration(3)));
            let plan = plan_for(kind);
            let outcome = honest_run(&mut world, &plan)
                .unwrap_or_else(|e| panic!("{kind} failed: {e}"));
            assert!(outcome.completed, "{kind}");
            let chor = Choreography::for_kind(kind);
            check_conformance(&chor, &outcome.transcript).unwrap();
        }
    }

    #[test]
    fn agent_views_differ_between_current_and_pp_withdrawal() {
        let mut world = test_world(LatencyModel::Zero);
        let current = honest_run(&mut world, &plan_for(ProtocolKind::CurrentWithdrawal)).unwrap();
        let mut world = test_world(LatencyModel::Zero);
        let pp = honest_run(&mut world, &plan_for(ProtocolKind::PpWithdrawal)).unwrap();

        let current_view = extract_view(&current.transcript, Party::Agent);
        let pp_view = extract_view(&pp.transcript, Party::Agent);
        let current_fields: Vec<&str> = current_view.fields.keys().map(|s| s.as_str()).collect();
        // Side info (employer) rides along with physical presence.
        assert_eq!(
            current_fields,
            ["amount", "employer", "name", "national_id", "phone_number", "time", "txn_code"]
        );
        let pp_fields: Vec<&str> = pp_view.fields.keys().map(|s| s.as_str()).collect();
        assert_eq!(pp_fields, ["amount", "code", "employer", "time"]);
    }

    #[test]
    fn share_phone_pin_exposes_credentials_to_the_collector() {
        let mut world = test_world(LatencyModel::Zero);
        let plan = plan_for(ProtocolKind::InformalDelegated(InformalVariant::SharePhonePin));
        let outcome = honest_run(&mut world, &plan).unwrap();
        let collector_view = extract_view(&outcome.transcript, Party::Collector);
        for field in ["pin", "phone_device", "national_id", "account_balance", "txn_code"] {
            assert!(
                collector_view.fields.contains_key(field),
                "collector should see {field}"
            );
        }
        assert_eq!(
            collector_view.fields["pin"].iter().next().unwrap(),
            "1234"
        );
    }

    #[test]
    fn forwarding_leaks_balance_to_agent_unless_redacted() {
        let kind = ProtocolKind::InformalDelegated(InformalVariant::ForwardMessage);
        let mut world = test_world(LatencyModel::Zero);
        let outcome = honest_run(&mut world, &plan_for(kind)).unwrap();
        let agent_view = extract_view(&outcome.transcript, Party::Agent);
        assert!(agent_view.fields.contains_key("account_balance"));

        let mut world = test_world(LatencyModel::Zero);
        let mut plan = plan_for(kind);
        plan.options.redact_forwarded_balance = true;
        let outcome = honest_run(&mut world, &plan).unwrap();
        let agent_view = extract_view(&outcome.transcript, Party::Agent);
        assert!(!agent_view.fields.contains_key("account_balance"));
        let chor = Choreography::for_kind_opts(kind, &plan.options);
        check_conformance(&chor, &outcome.transcript).unwrap();
    }

    #[test]
    fn delegated_collector_sees_only_code_amount_and_label() {
        let mut world = test_world(LatencyModel::Zero);
        let outcome = honest_run(&mut world, &plan_for(ProtocolKind::PpDelegated)).unwrap();
        let collector_view = extract_view(&outcome.transcript, Party::Collector);
        let fields: Vec<&str> = collector_view.fields.keys().map(|s| s.as_str()).collect();
        assert_eq!(fields, ["amount", "challenge", "code", "delegations"]);
        let label = collector_view.fields["delegations"].iter().next().unwrap();
        assert!(label.contains("XXXXXX5678"), "label was {label}");
        // The sender's phone reaches the collector only in masked form.
        assert!(!label.contains("0712345678"));
    }

    #[test]
    fn late_code_delivery_expires_in_flight_and_refunds() {
        let window = ProviderConfig::default().validity_window.0;
        let latency = LatencyModel::PerLink {
            links: [
                ((crate::domain::Role::Provider, crate::domain::Role::User), window + 1),
            ]
            .into_iter()
            .collect(),
            default: 0,
        };
        let mut world = test_world(latency);
        let total_before = world.provider().emoney_total();
        let balance_before = {
            let account = world.provider().account_of(PersonId(1)).unwrap();
            world.provider().registry().balance(account).unwrap()
        };
        let outcome = honest_run(&mut world, &plan_for(ProtocolKind::PpWithdrawal)).unwrap();
        assert!(!outcome.completed);
        assert_eq!(
            outcome.settle,
            Some(SettleOutcome::Rejected(
                crate::provider::RejectReason::Expired
            ))
        );
        assert_eq!(outcome.final_state, Some(TxnState::Expired));
        let account = world.provider().account_of(PersonId(1)).unwrap();
        assert_eq!(
            world.provider().registry().balance(account).unwrap(),
            balance_before
        );
        assert_eq!(world.provider().emoney_total(), total_before);
    }

    #[test]
    fn identical_seeds_give_identical_transcripts_and_logs() {
        let run = |seed: u64| {
            let mut provider = Provider::new(ProviderConfig::default(), seed);
            provider
                .register_user(
                    UserProfile {
                        person: PersonId(1),
                        name: "Amina".into(),
                        phone_number: "0712345678".into(),
                        national_id: "11111111".into(),
                        pin: "1234".into(),
                        attributes: AttributeVector::default(),
                    },
                    Money(1_000_000),
                )
                .unwrap();
            provider
                .register_agent(AgentProfile {
                    person: PersonId(50),
                    agent_number: "400200".into(),
                    cash_drawer: Money(5_000_000),
                    float_balance: Money(5_000_000),
                })
                .unwrap();
            let mut world = SimWorld::new(
                provider,
                NetworkConfig::default(),
                seed,
                EventLog::enabled(),
            );
            let outcome =
                honest_run(&mut world, &plan_for(ProtocolKind::PpWithdrawal)).unwrap();
            let mut log = Vec::new();
            world.log().write_jsonl(&mut log).unwrap();
            (serde_json::to_string(&outcome.transcript).unwrap(), log)
        };
        assert_eq!(run(5), run(5));
        let (t5, _) = run(5);
        let (t6, _) = run(6);
        // Different seeds draw different codes.
        assert_ne!(t5, t6);
    }
}
