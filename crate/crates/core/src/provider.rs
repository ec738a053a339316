//! The mobile-money provider as a single logical state machine: account
//! registry with ownership map, authentication (biometric oracle or phone
//! session), the transaction lifecycle
//! Initiated → Authenticated → Confirmed → CodeIssued → {Settled | Expired},
//! delegation bookkeeping, escrow, fees, and code expiry.
//!
//! The provider never touches the network; operations return notification
//! drafts and push ledger/transition events into an outbox which the
//! simulation engine drains into its event log. All mutation flows through
//! these operations, and every state change is gated by the legal-transition
//! table, so no caller can drive a record through an undefined edge.

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::domain::{
    code_equal, delegation_display_label, mask_phone, AccountId, ActorRef, AgentProfile,
    CodeBits, DomainError, Duration, LogicalTime, Money, OneTimeCode, Payload, PersonId,
    ProtocolKind, TransactionId, UserProfile,
};
use crate::rng::substream;

#[derive(Debug, Error, PartialEq)]
pub enum ProviderError {
    #[error("unknown account")]
    UnknownAccount(AccountId),
    #[error("unknown person {0}")]
    UnknownPerson(PersonId),
    #[error("unknown transaction {0}")]
    UnknownTransaction(TransactionId),
    #[error("duplicate registration: {0}")]
    DuplicateRegistration(String),
    #[error("authentication failed for {person} on account")]
    AuthFailure { person: PersonId, account: AccountId },
    #[error("certificate expired or already used")]
    StaleCertificate,
    #[error("invalid agent number {0:?}")]
    InvalidAgent(String),
    #[error("invalid amount {0}")]
    InvalidAmount(Money),
    #[error("insufficient funds: need {need}, have {have}")]
    InsufficientFunds { need: Money, have: Money },
    #[error("agent float too low: need {need}, have {have}")]
    InsufficientFloat { need: Money, have: Money },
    #[error("agent cash drawer too low: need {need}, have {have}")]
    InsufficientDrawer { need: Money, have: Money },
    #[error("wrong PIN, {attempts_left} attempts left")]
    WrongPin { attempts_left: u8 },
    #[error("transaction in state {found:?}, expected {expected}")]
    WrongState {
        expected: &'static str,
        found: TxnState,
    },
    #[error("operation not defined for protocol kind {0}")]
    KindMismatch(ProtocolKind),
    #[error("collector phone {0:?} is not a registered customer")]
    UnregisteredCollector(String),
    #[error("transaction is not delegated to this collector")]
    NotDelegated,
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Transaction lifecycle states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TxnState {
    Initiated,
    Authenticated,
    Confirmed,
    CodeIssued,
    Settled,
    Expired,
    Rejected,
}

impl TxnState {
    /// Legal lifecycle edges. Rejection is reachable from every
    /// pre-settlement state; Settled, Expired, and Rejected are terminal.
    pub fn can_go(self, to: TxnState) -> bool {
        use TxnState::*;
        matches!(
            (self, to),
            (Initiated, Authenticated)
                | (Authenticated, Confirmed)
                | (Confirmed, CodeIssued)
                | (CodeIssued, Settled)
                | (CodeIssued, Expired)
                | (Initiated, Rejected)
                | (Authenticated, Rejected)
                | (Confirmed, Rejected)
                | (CodeIssued, Rejected)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, TxnState::Settled | TxnState::Expired | TxnState::Rejected)
    }
}

/// How a certificate's subject was bound to the account owner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthMethod {
    Fingerprint,
    Face,
    Voice,
    /// Possession of the registered device. The provider cannot see who holds
    /// the phone, so the subject is the account owner by construction; this is
    /// the authentication the current (non-PP) process actually provides.
    PhoneSession,
}

impl AuthMethod {
    pub fn is_biometric(self) -> bool {
        !matches!(self, AuthMethod::PhoneSession)
    }
}

/// Short-lived proof of authentication, valid for one transaction initiation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuthCertificate {
    pub cert_id: u64,
    pub subject: PersonId,
    pub account: AccountId,
    pub method: AuthMethod,
    pub issued_at: LogicalTime,
}

/// Settlement rejection labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    WrongCode,
    WrongAmount,
    Expired,
    Consumed,
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RejectReason::WrongCode => "wrong_code",
            RejectReason::WrongAmount => "wrong_amount",
            RejectReason::Expired => "expired",
            RejectReason::Consumed => "consumed",
        };
        f.write_str(s)
    }
}

/// Outcome of presenting a code for settlement.
#[derive(Debug, Clone, PartialEq)]
pub enum SettleOutcome {
    Settled { amount: Money, fee: Money },
    Rejected(RejectReason),
}

/// One transaction record, mutated only by provider operations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransactionRecord {
    pub txn: TransactionId,
    pub kind: ProtocolKind,
    pub account: AccountId,
    pub amount: Money,
    pub fee: Money,
    pub agent_number: Option<String>,
    pub state: TxnState,
    pub code: Option<OneTimeCode>,
    pub delegate: Option<AccountId>,
    pub created_at: LogicalTime,
    pub settled_at: Option<LogicalTime>,
    pub presenter: Option<PersonId>,
    pub initiator_cert: Option<AuthCertificate>,
    pub collector_cert: Option<AuthCertificate>,
    pub pin_failures: u8,
    pub rejection: Option<String>,
}

impl TransactionRecord {
    fn escrow_held(&self) -> bool {
        !self.kind.is_deposit()
            && matches!(self.state, TxnState::Confirmed | TxnState::CodeIssued)
    }

    fn escrow_total(&self) -> Money {
        Money(self.amount.0 + self.fee.0)
    }
}

/// Pending delegated withdrawal visible to its collector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DelegationEntry {
    pub txn: TransactionId,
    pub sender_account: AccountId,
    pub collector_account: AccountId,
    pub amount: Money,
    /// Masked sender phone plus amount, e.g. "XXXXXX5678 / 1000 00".
    pub display_label: String,
    pub created_at: LogicalTime,
}

/// Money movement, emitted to the event log and the ledger file.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LedgerEntry {
    EscrowHold {
        txn: TransactionId,
        account: AccountId,
        amount: Money,
    },
    EscrowRefund {
        txn: TransactionId,
        account: AccountId,
        amount: Money,
    },
    FeeCharged {
        txn: Option<TransactionId>,
        account: AccountId,
        amount: Money,
        fee_kind: FeeKind,
    },
    WithdrawalSettled {
        txn: TransactionId,
        account: AccountId,
        agent_number: String,
        amount: Money,
    },
    DepositSettled {
        txn: TransactionId,
        account: AccountId,
        agent_number: String,
        amount: Money,
    },
    P2pTransferred {
        reference: String,
        from_account: AccountId,
        to_account: AccountId,
        amount: Money,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FeeKind {
    Withdrawal,
    Deposit,
    P2p,
}

/// Event pushed to the outbox for the simulation log.
#[derive(Debug, Clone, PartialEq)]
pub enum ProviderEvent {
    /// A lifecycle move; `from` is `None` when the record was just created.
    Transition {
        txn: TransactionId,
        from: Option<TxnState>,
        to: TxnState,
        reason: Option<String>,
    },
    Ledger(LedgerEntry),
}

/// Message the engine should deliver on the provider's behalf.
#[derive(Debug, Clone, PartialEq)]
pub struct NotificationDraft {
    pub to: ActorRef,
    pub payload: Payload,
}

/// Receipt pair produced by a person-to-person transfer.
#[derive(Debug, Clone, PartialEq)]
pub struct P2pReceipt {
    pub reference: CodeBits,
    pub amount: Money,
    pub sender_account: AccountId,
    pub recipient_account: AccountId,
    pub sender_name: String,
    pub sender_phone: String,
    pub recipient_name: String,
    pub sender_balance_after: Money,
    pub time: LogicalTime,
}

/// Biometric oracle error rates. Zero/zero is the perfect oracle: accept if
/// and only if the subject owns the account.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleConfig {
    pub far: f64,
    pub frr: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { far: 0.0, frr: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProviderConfig {
    /// One-time code length ℓ in bits (1..=32).
    pub code_length: u8,
    /// Validity window Δ: a code issued at t settles through t + Δ inclusive.
    pub validity_window: Duration,
    pub withdrawal_fee: Money,
    pub deposit_fee: Money,
    pub p2p_fee: Money,
    /// How long a certificate stays fresh after issuance (0 = same tick).
    pub cert_lifetime: Duration,
    pub pin_retry_limit: u8,
    pub min_amount: Money,
    pub oracle: OracleConfig,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            code_length: 8,
            validity_window: Duration(300),
            withdrawal_fee: Money(2900),
            deposit_fee: Money(0),
            p2p_fee: Money(2900),
            cert_lifetime: Duration(0),
            pin_retry_limit: 3,
            min_amount: Money(1),
            oracle: OracleConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Account {
    owner: PersonId,
    balance: Money,
    escrow: Money,
}

/// Accounts, the ownership map, and the phone index.
#[derive(Debug, Default)]
pub struct AccountRegistry {
    accounts: BTreeMap<AccountId, Account>,
    phone_index: BTreeMap<String, AccountId>,
}

impl AccountRegistry {
    pub fn owner_of(&self, account: AccountId) -> Option<PersonId> {
        self.accounts.get(&account).map(|a| a.owner)
    }

    pub fn account_by_phone(&self, phone: &str) -> Option<AccountId> {
        self.phone_index.get(phone).copied()
    }

    pub fn balance(&self, account: AccountId) -> Option<Money> {
        self.accounts.get(&account).map(|a| a.balance)
    }

    pub fn escrow(&self, account: AccountId) -> Option<Money> {
        self.accounts.get(&account).map(|a| a.escrow)
    }
}

pub struct Provider {
    pub config: ProviderConfig,
    registry: AccountRegistry,
    users: BTreeMap<PersonId, UserProfile>,
    person_account: BTreeMap<PersonId, AccountId>,
    national_id_index: BTreeMap<String, PersonId>,
    agents: BTreeMap<String, AgentProfile>,
    txns: BTreeMap<TransactionId, TransactionRecord>,
    delegations: BTreeMap<TransactionId, DelegationEntry>,
    revenue: Money,
    code_rng: ChaCha8Rng,
    oracle_rng: ChaCha8Rng,
    next_account: u64,
    next_txn: u64,
    next_cert: u64,
    used_certs: BTreeSet<u64>,
    expiry_deadlines: BTreeSet<(LogicalTime, TransactionId)>,
    events: Vec<ProviderEvent>,
}

impl Provider {
    pub fn new(config: ProviderConfig, master_seed: u64) -> Provider {
        assert!(
            (1..=CodeBits::MAX_LEN).contains(&config.code_length),
            "code length must be 1..=32 bits"
        );
        Provider {
            config,
            registry: AccountRegistry::default(),
            users: BTreeMap::new(),
            person_account: BTreeMap::new(),
            national_id_index: BTreeMap::new(),
            agents: BTreeMap::new(),
            txns: BTreeMap::new(),
            delegations: BTreeMap::new(),
            revenue: Money::ZERO,
            code_rng: substream(master_seed, "provider/codes"),
            oracle_rng: substream(master_seed, "provider/oracle"),
            next_account: 1,
            next_txn: 1,
            next_cert: 1,
            used_certs: BTreeSet::new(),
            expiry_deadlines: BTreeSet::new(),
            events: Vec::new(),
        }
    }

    /// Drain ledger/transition events accumulated since the last call.
    pub fn drain_events(&mut self) -> Vec<ProviderEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn registry(&self) -> &AccountRegistry {
        &self.registry
    }

    pub fn record(&self, txn: TransactionId) -> Option<&TransactionRecord> {
        self.txns.get(&txn)
    }

    pub fn records(&self) -> impl Iterator<Item = &TransactionRecord> {
        self.txns.values()
    }

    pub fn delegation(&self, txn: TransactionId) -> Option<&DelegationEntry> {
        self.delegations.get(&txn)
    }

    pub fn profile(&self, person: PersonId) -> Option<&UserProfile> {
        self.users.get(&person)
    }

    pub fn account_of(&self, person: PersonId) -> Option<AccountId> {
        self.person_account.get(&person).copied()
    }

    pub fn agent(&self, agent_number: &str) -> Option<&AgentProfile> {
        self.agents.get(agent_number)
    }

    pub fn agents(&self) -> impl Iterator<Item = &AgentProfile> {
        self.agents.values()
    }

    pub fn revenue(&self) -> Money {
        self.revenue
    }

    /// Σ balances + Σ escrow + Σ agent float + provider revenue. Constant
    /// under every operation: settlements move escrow into float and revenue,
    /// deposits move float into balances, expiries refund escrow.
    pub fn emoney_total(&self) -> u128 {
        let accounts: u128 = self
            .registry
            .accounts
            .values()
            .map(|a| a.balance.0 as u128 + a.escrow.0 as u128)
            .sum();
        let float: u128 = self.agents.values().map(|a| a.float_balance.0 as u128).sum();
        accounts + float + self.revenue.0 as u128
    }

    /// Σ agent cash drawers: physical cash inside tills.
    pub fn drawer_total(&self) -> u128 {
        self.agents.values().map(|a| a.cash_drawer.0 as u128).sum()
    }

    pub fn register_user(
        &mut self,
        profile: UserProfile,
        balance: Money,
    ) -> Result<AccountId, ProviderError> {
        mask_phone(&profile.phone_number)?;
        if self.registry.phone_index.contains_key(&profile.phone_number) {
            return Err(ProviderError::DuplicateRegistration(format!(
                "phone {}",
                profile.phone_number
            )));
        }
        if self.national_id_index.contains_key(&profile.national_id) {
            return Err(ProviderError::DuplicateRegistration(format!(
                "national id {}",
                profile.national_id
            )));
        }
        if self.users.contains_key(&profile.person) {
            return Err(ProviderError::DuplicateRegistration(format!(
                "person {}",
                profile.person
            )));
        }
        let id = AccountId(self.next_account);
        self.next_account += 1;
        self.registry.accounts.insert(
            id,
            Account {
                owner: profile.person,
                balance,
                escrow: Money::ZERO,
            },
        );
        self.registry
            .phone_index
            .insert(profile.phone_number.clone(), id);
        self.national_id_index
            .insert(profile.national_id.clone(), profile.person);
        self.person_account.insert(profile.person, id);
        self.users.insert(profile.person, profile);
        Ok(id)
    }

    pub fn register_agent(&mut self, profile: AgentProfile) -> Result<(), ProviderError> {
        if profile.agent_number.is_empty()
            || !profile.agent_number.bytes().all(|b| b.is_ascii_digit())
        {
            return Err(ProviderError::InvalidAgent(profile.agent_number));
        }
        if self.agents.contains_key(&profile.agent_number) {
            return Err(ProviderError::DuplicateRegistration(format!(
                "agent {}",
                profile.agent_number
            )));
        }
        self.agents.insert(profile.agent_number.clone(), profile);
        Ok(())
    }

    pub fn verify_agent_number(&self, agent_number: &str) -> bool {
        self.agents.contains_key(agent_number)
    }

    /// Authenticate `person` against `account`.
    ///
    /// Biometric methods go through the oracle: with zero error rates the
    /// certificate is granted if and only if the person owns the account; with
    /// nonzero rates a wrong person is accepted with probability far and the
    /// owner rejected with probability frr. A phone session asserts the owner
    /// by possession, so `person` is who holds the device but the subject is
    /// always the registered owner.
    pub fn authenticate(
        &mut self,
        person: PersonId,
        account: AccountId,
        method: AuthMethod,
        now: LogicalTime,
    ) -> Result<AuthCertificate, ProviderError> {
        let owner = self
            .registry
            .owner_of(account)
            .ok_or(ProviderError::UnknownAccount(account))?;
        if !self.users.contains_key(&person) {
            return Err(ProviderError::UnknownPerson(person));
        }
        let subject = if method.is_biometric() {
            let accepted = if self.config.oracle.far == 0.0 && self.config.oracle.frr == 0.0 {
                person == owner
            } else {
                use rand::Rng;
                let draw: f64 = self.oracle_rng.gen_range(0.0..1.0);
                if person == owner {
                    draw >= self.config.oracle.frr
                } else {
                    draw < self.config.oracle.far
                }
            };
            if !accepted {
                return Err(ProviderError::AuthFailure { person, account });
            }
            person
        } else {
            owner
        };
        let cert = AuthCertificate {
            cert_id: self.next_cert,
            subject,
            account,
            method,
            issued_at: now,
        };
        self.next_cert += 1;
        Ok(cert)
    }

    fn consume_cert(
        &mut self,
        cert: &AuthCertificate,
        now: LogicalTime,
    ) -> Result<(), ProviderError> {
        if now > cert.issued_at + self.config.cert_lifetime
            || self.used_certs.contains(&cert.cert_id)
        {
            return Err(ProviderError::StaleCertificate);
        }
        self.used_certs.insert(cert.cert_id);
        Ok(())
    }

    fn transition(
        &mut self,
        txn: TransactionId,
        to: TxnState,
        reason: Option<String>,
    ) -> Result<(), ProviderError> {
        let record = self
            .txns
            .get_mut(&txn)
            .ok_or(ProviderError::UnknownTransaction(txn))?;
        let from = record.state;
        if !from.can_go(to) {
            return Err(ProviderError::WrongState {
                expected: "a state with a legal edge to the target",
                found: from,
            });
        }
        record.state = to;
        if to == TxnState::Rejected {
            record.rejection = reason.clone();
        }
        self.events.push(ProviderEvent::Transition {
            txn,
            from: Some(from),
            to,
            reason,
        });
        Ok(())
    }

    fn ledger(&mut self, entry: LedgerEntry) {
        self.events.push(ProviderEvent::Ledger(entry));
    }

    /// Reject a live record, refunding escrow when it is held.
    fn reject(&mut self, txn: TransactionId, reason: &str) -> Result<(), ProviderError> {
        let (held, account, total) = {
            let r = &self.txns[&txn];
            (r.escrow_held(), r.account, r.escrow_total())
        };
        if held {
            let acct = self.registry.accounts.get_mut(&account).unwrap();
            acct.escrow = acct.escrow.checked_sub(total)?;
            acct.balance = acct.balance.checked_add(total)?;
            self.ledger(LedgerEntry::EscrowRefund {
                txn,
                account,
                amount: total,
            });
        }
        self.transition(txn, TxnState::Rejected, Some(reason.to_string()))
    }

    fn create_record(
        &mut self,
        kind: ProtocolKind,
        cert: &AuthCertificate,
        amount: Money,
        fee: Money,
        agent_number: Option<String>,
        now: LogicalTime,
    ) -> TransactionId {
        let txn = TransactionId(self.next_txn);
        self.next_txn += 1;
        self.txns.insert(
            txn,
            TransactionRecord {
                txn,
                kind,
                account: cert.account,
                amount,
                fee,
                agent_number,
                state: TxnState::Initiated,
                code: None,
                delegate: None,
                created_at: now,
                settled_at: None,
                presenter: None,
                initiator_cert: Some(cert.clone()),
                collector_cert: None,
                pin_failures: 0,
                rejection: None,
            },
        );
        self.events.push(ProviderEvent::Transition {
            txn,
            from: None,
            to: TxnState::Initiated,
            reason: None,
        });
        txn
    }

    /// Start a withdrawal-family transaction (current, PP, or informal).
    pub fn initiate_withdrawal(
        &mut self,
        cert: &AuthCertificate,
        kind: ProtocolKind,
        amount: Money,
        agent_number: &str,
        now: LogicalTime,
    ) -> Result<TransactionId, ProviderError> {
        if kind.is_deposit() || kind == ProtocolKind::PpDelegated {
            return Err(ProviderError::KindMismatch(kind));
        }
        self.consume_cert(cert, now)?;
        let fee = self.config.withdrawal_fee;
        let txn = self.create_record(kind, cert, amount, fee, Some(agent_number.into()), now);
        if !self.verify_agent_number(agent_number) {
            self.reject(txn, "invalid_agent")?;
            return Err(ProviderError::InvalidAgent(agent_number.into()));
        }
        if amount < self.config.min_amount {
            self.reject(txn, "invalid_amount")?;
            return Err(ProviderError::InvalidAmount(amount));
        }
        let need = Money(amount.0 + fee.0);
        let have = self.registry.balance(cert.account).unwrap();
        if have < need {
            self.reject(txn, "insufficient_funds")?;
            return Err(ProviderError::InsufficientFunds { need, have });
        }
        self.transition(txn, TxnState::Authenticated, None)?;
        Ok(txn)
    }

    /// Start a deposit. No funds check: the money arrives as cash.
    pub fn initiate_deposit(
        &mut self,
        cert: &AuthCertificate,
        kind: ProtocolKind,
        amount: Money,
        agent_number: &str,
        now: LogicalTime,
    ) -> Result<TransactionId, ProviderError> {
        if !kind.is_deposit() {
            return Err(ProviderError::KindMismatch(kind));
        }
        self.consume_cert(cert, now)?;
        let fee = self.config.deposit_fee;
        let txn = self.create_record(kind, cert, amount, fee, Some(agent_number.into()), now);
        if !self.verify_agent_number(agent_number) {
            self.reject(txn, "invalid_agent")?;
            return Err(ProviderError::InvalidAgent(agent_number.into()));
        }
        if amount < self.config.min_amount || amount < fee {
            self.reject(txn, "invalid_amount")?;
            return Err(ProviderError::InvalidAmount(amount));
        }
        self.transition(txn, TxnState::Authenticated, None)?;
        Ok(txn)
    }

    /// Start a delegated withdrawal. The agent is unknown until the collector
    /// initiates collection; the collector must already be registered.
    pub fn initiate_delegated(
        &mut self,
        cert: &AuthCertificate,
        amount: Money,
        collector_phone: &str,
        now: LogicalTime,
    ) -> Result<TransactionId, ProviderError> {
        let collector_account = self
            .registry
            .account_by_phone(collector_phone)
            .ok_or_else(|| ProviderError::UnregisteredCollector(collector_phone.into()))?;
        self.consume_cert(cert, now)?;
        let fee = self.config.withdrawal_fee;
        let txn = self.create_record(ProtocolKind::PpDelegated, cert, amount, fee, None, now);
        self.txns.get_mut(&txn).unwrap().delegate = Some(collector_account);
        if amount < self.config.min_amount {
            self.reject(txn, "invalid_amount")?;
            return Err(ProviderError::InvalidAmount(amount));
        }
        let need = Money(amount.0 + fee.0);
        let have = self.registry.balance(cert.account).unwrap();
        if have < need {
            self.reject(txn, "insufficient_funds")?;
            return Err(ProviderError::InsufficientFunds { need, have });
        }
        self.transition(txn, TxnState::Authenticated, None)?;
        Ok(txn)
    }

    /// Confirm an authenticated transaction with the account owner's PIN.
    /// For withdrawal-family kinds this moves amount + fee into escrow.
    pub fn confirm_with_pin(
        &mut self,
        txn: TransactionId,
        pin: &str,
        now: LogicalTime,
    ) -> Result<(), ProviderError> {
        let _ = now;
        let (state, account, kind) = {
            let r = self
                .txns
                .get(&txn)
                .ok_or(ProviderError::UnknownTransaction(txn))?;
            (r.state, r.account, r.kind)
        };
        if state != TxnState::Authenticated {
            return Err(ProviderError::WrongState {
                expected: "authenticated",
                found: state,
            });
        }
        let owner = self.registry.owner_of(account).unwrap();
        if self.users[&owner].pin != pin {
            return self.note_pin_failure(txn);
        }
        if !kind.is_deposit() {
            let total = {
                let r = &self.txns[&txn];
                r.escrow_total()
            };
            let acct = self.registry.accounts.get_mut(&account).unwrap();
            if acct.balance < total {
                let have = acct.balance;
                self.reject(txn, "insufficient_funds")?;
                return Err(ProviderError::InsufficientFunds { need: total, have });
            }
            acct.balance = acct.balance.checked_sub(total)?;
            acct.escrow = acct.escrow.checked_add(total)?;
            self.ledger(LedgerEntry::EscrowHold {
                txn,
                account,
                amount: total,
            });
        }
        self.transition(txn, TxnState::Confirmed, None)?;
        Ok(())
    }

    fn note_pin_failure<T>(&mut self, txn: TransactionId) -> Result<T, ProviderError> {
        let limit = self.config.pin_retry_limit;
        let failures = {
            let r = self.txns.get_mut(&txn).unwrap();
            r.pin_failures += 1;
            r.pin_failures
        };
        if failures >= limit {
            self.reject(txn, "pin_retries_exhausted")?;
            return Err(ProviderError::WrongPin { attempts_left: 0 });
        }
        Err(ProviderError::WrongPin {
            attempts_left: limit - failures,
        })
    }

    /// Draw the one-time code for a confirmed non-delegated transaction and
    /// build the two notifications.
    ///
    /// PP kinds reveal {code, amount, agent_number, time} to the customer and
    /// {code, amount, time} to the agent, nothing else. Current-process kinds
    /// reveal the customer's name and phone number to the agent and echo the
    /// account balance back to the customer.
    pub fn issue_code(
        &mut self,
        txn: TransactionId,
        now: LogicalTime,
    ) -> Result<(NotificationDraft, NotificationDraft), ProviderError> {
        let (state, kind) = {
            let r = self
                .txns
                .get(&txn)
                .ok_or(ProviderError::UnknownTransaction(txn))?;
            (r.state, r.kind)
        };
        if kind == ProtocolKind::PpDelegated {
            return Err(ProviderError::KindMismatch(kind));
        }
        if state != TxnState::Confirmed {
            return Err(ProviderError::WrongState {
                expected: "confirmed",
                found: state,
            });
        }
        let code = self.draw_code(txn, now);
        self.transition(txn, TxnState::CodeIssued, None)?;

        let r = &self.txns[&txn];
        let owner = self.registry.accounts[&r.account].owner;
        let profile = &self.users[&owner];
        let agent_number = r.agent_number.clone().unwrap();
        let agent_person = self.agents[&agent_number].person;
        let code_str = code.bits.to_string();
        let amount = r.amount;
        let balance = self.registry.balance(r.account).unwrap();

        let (user_payload, agent_payload): (Payload, Payload) = if kind.is_privacy_preserving() {
            (
                payload(&[
                    ("code", json!(code_str)),
                    ("amount", json!(amount.0)),
                    ("agent_number", json!(agent_number)),
                    ("time", json!(now.0)),
                ]),
                payload(&[
                    ("code", json!(code_str)),
                    ("amount", json!(amount.0)),
                    ("time", json!(now.0)),
                ]),
            )
        } else {
            (
                payload(&[
                    ("txn_code", json!(code_str)),
                    ("amount", json!(amount.0)),
                    ("agent_number", json!(agent_number)),
                    ("time", json!(now.0)),
                    ("account_balance", json!(balance.0)),
                ]),
                payload(&[
                    ("txn_code", json!(code_str)),
                    ("name", json!(profile.name)),
                    ("phone_number", json!(profile.phone_number)),
                    ("amount", json!(amount.0)),
                    ("time", json!(now.0)),
                ]),
            )
        };
        Ok((
            NotificationDraft {
                to: ActorRef::User(owner),
                payload: user_payload,
            },
            NotificationDraft {
                to: ActorRef::Agent(agent_person),
                payload: agent_payload,
            },
        ))
    }

    fn draw_code(&mut self, txn: TransactionId, now: LogicalTime) -> OneTimeCode {
        let bits = CodeBits::sample(&mut self.code_rng, self.config.code_length);
        let code = OneTimeCode {
            bits,
            issued_at: now,
            window: self.config.validity_window,
            txn,
        };
        let record = self.txns.get_mut(&txn).unwrap();
        record.code = Some(code);
        self.expiry_deadlines
            .insert((now + self.config.validity_window + Duration(1), txn));
        code
    }

    /// Register the collector for a confirmed delegated withdrawal.
    pub fn assign_delegate(
        &mut self,
        txn: TransactionId,
        collector_phone: &str,
        now: LogicalTime,
    ) -> Result<DelegationEntry, ProviderError> {
        let (state, kind, sender_account, amount) = {
            let r = self
                .txns
                .get(&txn)
                .ok_or(ProviderError::UnknownTransaction(txn))?;
            (r.state, r.kind, r.account, r.amount)
        };
        if kind != ProtocolKind::PpDelegated {
            return Err(ProviderError::KindMismatch(kind));
        }
        if state != TxnState::Confirmed {
            return Err(ProviderError::WrongState {
                expected: "confirmed",
                found: state,
            });
        }
        let collector_account = match self.registry.account_by_phone(collector_phone) {
            Some(acct) => acct,
            None => {
                self.reject(txn, "unregistered_collector")?;
                return Err(ProviderError::UnregisteredCollector(collector_phone.into()));
            }
        };
        let sender_owner = self.registry.owner_of(sender_account).unwrap();
        let sender_phone = self.users[&sender_owner].phone_number.clone();
        let entry = DelegationEntry {
            txn,
            sender_account,
            collector_account,
            amount,
            display_label: delegation_display_label(&sender_phone, amount)?,
            created_at: now,
        };
        self.txns.get_mut(&txn).unwrap().delegate = Some(collector_account);
        self.delegations.insert(txn, entry.clone());
        Ok(entry)
    }

    /// Delegations awaiting collection by the certificate's account, in
    /// transaction order.
    pub fn list_delegated(&self, collector_cert: &AuthCertificate) -> Vec<DelegationEntry> {
        self.delegations
            .values()
            .filter(|e| {
                e.collector_account == collector_cert.account
                    && matches!(
                        self.txns[&e.txn].state,
                        TxnState::Confirmed | TxnState::CodeIssued
                    )
            })
            .cloned()
            .collect()
    }

    /// Collector confirms a delegated transaction with their own PIN at a
    /// chosen agent; the code is drawn and sent to collector and agent.
    /// The collector learns {code, amount}; the agent {code, amount, time}.
    pub fn collector_confirm(
        &mut self,
        txn: TransactionId,
        collector_cert: &AuthCertificate,
        pin: &str,
        agent_number: &str,
        now: LogicalTime,
    ) -> Result<(NotificationDraft, NotificationDraft), ProviderError> {
        let entry = self
            .delegations
            .get(&txn)
            .cloned()
            .ok_or(ProviderError::NotDelegated)?;
        if entry.collector_account != collector_cert.account {
            return Err(ProviderError::NotDelegated);
        }
        let state = self.txns[&txn].state;
        if state != TxnState::Confirmed {
            return Err(ProviderError::WrongState {
                expected: "confirmed",
                found: state,
            });
        }
        self.consume_cert(collector_cert, now)?;
        let collector_owner = self.registry.owner_of(entry.collector_account).unwrap();
        if self.users[&collector_owner].pin != pin {
            return self.note_pin_failure(txn);
        }
        if !self.verify_agent_number(agent_number) {
            return Err(ProviderError::InvalidAgent(agent_number.into()));
        }
        {
            let r = self.txns.get_mut(&txn).unwrap();
            r.agent_number = Some(agent_number.to_string());
            r.collector_cert = Some(collector_cert.clone());
        }
        let code = self.draw_code(txn, now);
        self.transition(txn, TxnState::CodeIssued, None)?;

        let amount = self.txns[&txn].amount;
        let agent_person = self.agents[agent_number].person;
        let code_str = code.bits.to_string();
        Ok((
            NotificationDraft {
                to: ActorRef::User(collector_owner),
                payload: payload(&[
                    ("code", json!(code_str)),
                    ("amount", json!(amount.0)),
                ]),
            },
            NotificationDraft {
                to: ActorRef::Agent(agent_person),
                payload: payload(&[
                    ("code", json!(code_str)),
                    ("amount", json!(amount.0)),
                    ("time", json!(now.0)),
                ]),
            },
        ))
    }

    /// Settle a withdrawal-family transaction against a presented code and
    /// claimed amount. The presenter is whoever stands at the agent's counter.
    ///
    /// A presentation after the validity window, against an already-expired
    /// record, or against a settled record is a rejection with the matching
    /// label, not an error; errors are reserved for states where presentation
    /// is undefined.
    pub fn settle_collection(
        &mut self,
        txn: TransactionId,
        presented_code: &CodeBits,
        presented_amount: Money,
        presenter: PersonId,
        now: LogicalTime,
    ) -> Result<SettleOutcome, ProviderError> {
        let (state, kind) = {
            let r = self
                .txns
                .get(&txn)
                .ok_or(ProviderError::UnknownTransaction(txn))?;
            (r.state, r.kind)
        };
        if kind.is_deposit() {
            return Err(ProviderError::KindMismatch(kind));
        }
        match state {
            TxnState::Expired => return Ok(SettleOutcome::Rejected(RejectReason::Expired)),
            TxnState::Settled => return Ok(SettleOutcome::Rejected(RejectReason::Consumed)),
            TxnState::CodeIssued => {}
            other => {
                return Err(ProviderError::WrongState {
                    expected: "code_issued",
                    found: other,
                })
            }
        }
        let code = self.txns[&txn].code.unwrap();
        if !code.valid_at(now) {
            self.expire_record(txn)?;
            return Ok(SettleOutcome::Rejected(RejectReason::Expired));
        }
        if !code_equal(presented_code, &code.bits)? {
            return Ok(SettleOutcome::Rejected(RejectReason::WrongCode));
        }
        let (account, amount, fee, agent_number) = {
            let r = &self.txns[&txn];
            (
                r.account,
                r.amount,
                r.fee,
                r.agent_number.clone().unwrap(),
            )
        };
        if presented_amount != amount {
            return Ok(SettleOutcome::Rejected(RejectReason::WrongAmount));
        }

        let drawer = self.agents[&agent_number].cash_drawer;
        if drawer < amount {
            return Err(ProviderError::InsufficientDrawer {
                need: amount,
                have: drawer,
            });
        }
        let total = Money(amount.0 + fee.0);
        let acct = self.registry.accounts.get_mut(&account).unwrap();
        acct.escrow = acct.escrow.checked_sub(total)?;
        let agent = self.agents.get_mut(&agent_number).unwrap();
        agent.float_balance = agent.float_balance.checked_add(amount)?;
        agent.cash_drawer = agent.cash_drawer.checked_sub(amount)?;
        self.revenue = self.revenue.checked_add(fee)?;
        {
            let r = self.txns.get_mut(&txn).unwrap();
            r.settled_at = Some(now);
            r.presenter = Some(presenter);
        }
        self.ledger(LedgerEntry::WithdrawalSettled {
            txn,
            account,
            agent_number: agent_number.clone(),
            amount,
        });
        if fee > Money::ZERO {
            self.ledger(LedgerEntry::FeeCharged {
                txn: Some(txn),
                account,
                amount: fee,
                fee_kind: FeeKind::Withdrawal,
            });
        }
        self.transition(txn, TxnState::Settled, None)?;
        Ok(SettleOutcome::Settled { amount, fee })
    }

    /// Settle a deposit: cash enters the drawer, float moves to the customer
    /// balance net of the deposit fee.
    pub fn settle_deposit(
        &mut self,
        txn: TransactionId,
        presented_code: &CodeBits,
        presented_amount: Money,
        presenter: PersonId,
        now: LogicalTime,
    ) -> Result<SettleOutcome, ProviderError> {
        let (state, kind) = {
            let r = self
                .txns
                .get(&txn)
                .ok_or(ProviderError::UnknownTransaction(txn))?;
            (r.state, r.kind)
        };
        if !kind.is_deposit() {
            return Err(ProviderError::KindMismatch(kind));
        }
        match state {
            TxnState::Expired => return Ok(SettleOutcome::Rejected(RejectReason::Expired)),
            TxnState::Settled => return Ok(SettleOutcome::Rejected(RejectReason::Consumed)),
            TxnState::CodeIssued => {}
            other => {
                return Err(ProviderError::WrongState {
                    expected: "code_issued",
                    found: other,
                })
            }
        }
        let code = self.txns[&txn].code.unwrap();
        if !code.valid_at(now) {
            self.expire_record(txn)?;
            return Ok(SettleOutcome::Rejected(RejectReason::Expired));
        }
        if !code_equal(presented_code, &code.bits)? {
            return Ok(SettleOutcome::Rejected(RejectReason::WrongCode));
        }
        let (account, amount, fee, agent_number) = {
            let r = &self.txns[&txn];
            (
                r.account,
                r.amount,
                r.fee,
                r.agent_number.clone().unwrap(),
            )
        };
        if presented_amount != amount {
            return Ok(SettleOutcome::Rejected(RejectReason::WrongAmount));
        }
        let float = self.agents[&agent_number].float_balance;
        if float < amount {
            return Err(ProviderError::InsufficientFloat {
                need: amount,
                have: float,
            });
        }
        let agent = self.agents.get_mut(&agent_number).unwrap();
        agent.float_balance = agent.float_balance.checked_sub(amount)?;
        agent.cash_drawer = agent.cash_drawer.checked_add(amount)?;
        let credited = amount.checked_sub(fee)?;
        let acct = self.registry.accounts.get_mut(&account).unwrap();
        acct.balance = acct.balance.checked_add(credited)?;
        self.revenue = self.revenue.checked_add(fee)?;
        {
            let r = self.txns.get_mut(&txn).unwrap();
            r.settled_at = Some(now);
            r.presenter = Some(presenter);
        }
        self.ledger(LedgerEntry::DepositSettled {
            txn,
            account,
            agent_number: agent_number.clone(),
            amount,
        });
        if fee > Money::ZERO {
            self.ledger(LedgerEntry::FeeCharged {
                txn: Some(txn),
                account,
                amount: fee,
                fee_kind: FeeKind::Deposit,
            });
        }
        self.transition(txn, TxnState::Settled, None)?;
        Ok(SettleOutcome::Settled { amount, fee })
    }

    fn expire_record(&mut self, txn: TransactionId) -> Result<(), ProviderError> {
        let (held, account, total) = {
            let r = &self.txns[&txn];
            (r.escrow_held(), r.account, r.escrow_total())
        };
        if held {
            let acct = self.registry.accounts.get_mut(&account).unwrap();
            acct.escrow = acct.escrow.checked_sub(total)?;
            acct.balance = acct.balance.checked_add(total)?;
            self.ledger(LedgerEntry::EscrowRefund {
                txn,
                account,
                amount: total,
            });
        }
        self.transition(txn, TxnState::Expired, None)
    }

    /// Expire every code whose window has elapsed at `now`, refunding escrow.
    /// Returns the number of records expired.
    pub fn expire_codes(&mut self, now: LogicalTime) -> usize {
        let due: Vec<(LogicalTime, TransactionId)> = self
            .expiry_deadlines
            .range(..=(now, TransactionId(u64::MAX)))
            .copied()
            .collect();
        let mut expired = 0;
        for key in due {
            self.expiry_deadlines.remove(&key);
            let txn = key.1;
            // Settled, rejected, or pruned records keep their stale deadline
            // entry until the sweep reaches it; only live issued codes expire.
            if self.txns.get(&txn).map(|r| r.state) == Some(TxnState::CodeIssued) {
                self.expire_record(txn).unwrap();
                expired += 1;
            }
        }
        expired
    }

    /// Earliest pending expiry deadline, for exact-time sweeps.
    pub fn next_expiry_deadline(&self) -> Option<LogicalTime> {
        self.expiry_deadlines.iter().next().map(|&(t, _)| t)
    }

    /// Direct balance transfer between two customers, charging the P2P fee to
    /// the sender. Ledger-only: no agent, no lifecycle record.
    pub fn p2p_transfer(
        &mut self,
        sender_account: AccountId,
        pin: &str,
        recipient_phone: &str,
        amount: Money,
        now: LogicalTime,
    ) -> Result<P2pReceipt, ProviderError> {
        let sender_owner = self
            .registry
            .owner_of(sender_account)
            .ok_or(ProviderError::UnknownAccount(sender_account))?;
        let recipient_account = self
            .registry
            .account_by_phone(recipient_phone)
            .ok_or_else(|| ProviderError::UnregisteredCollector(recipient_phone.into()))?;
        if self.users[&sender_owner].pin != pin {
            return Err(ProviderError::WrongPin {
                attempts_left: self.config.pin_retry_limit - 1,
            });
        }
        if amount < self.config.min_amount {
            return Err(ProviderError::InvalidAmount(amount));
        }
        let fee = self.config.p2p_fee;
        let need = Money(amount.0 + fee.0);
        let have = self.registry.balance(sender_account).unwrap();
        if have < need {
            return Err(ProviderError::InsufficientFunds { need, have });
        }
        let sender = self.registry.accounts.get_mut(&sender_account).unwrap();
        sender.balance = sender.balance.checked_sub(need)?;
        let balance_after = sender.balance;
        let recipient = self.registry.accounts.get_mut(&recipient_account).unwrap();
        recipient.balance = recipient.balance.checked_add(amount)?;
        self.revenue = self.revenue.checked_add(fee)?;

        let reference = CodeBits::sample(&mut self.code_rng, self.config.code_length);
        self.ledger(LedgerEntry::P2pTransferred {
            reference: reference.to_string(),
            from_account: sender_account,
            to_account: recipient_account,
            amount,
        });
        if fee > Money::ZERO {
            self.ledger(LedgerEntry::FeeCharged {
                txn: None,
                account: sender_account,
                amount: fee,
                fee_kind: FeeKind::P2p,
            });
        }
        let recipient_owner = self.registry.owner_of(recipient_account).unwrap();
        Ok(P2pReceipt {
            reference,
            amount,
            sender_account,
            recipient_account,
            sender_name: self.users[&sender_owner].name.clone(),
            sender_phone: self.users[&sender_owner].phone_number.clone(),
            recipient_name: self.users[&recipient_owner].name.clone(),
            sender_balance_after: balance_after,
            time: now,
        })
    }

    /// Drop terminal records and their delegations, keeping memory flat in
    /// long issuance campaigns. Live records are untouched.
    pub fn prune_terminal(&mut self) {
        let delegations = &mut self.delegations;
        let deadlines = &mut self.expiry_deadlines;
        self.txns.retain(|txn, r| {
            if r.state.is_terminal() {
                delegations.remove(txn);
                if let Some(code) = &r.code {
                    deadlines.remove(&(code.issued_at + code.window + Duration(1), *txn));
                }
                false
            } else {
                true
            }
        });
    }

    /// Audit KYC soundness over all settled records: the initiator certificate
    /// must bind the record's account to its registered owner, and a settled
    /// delegated record must also carry the collector's certificate for the
    /// delegated-to account.
    pub fn audit_kyc(&self) -> Result<(), String> {
        for r in self.txns.values() {
            if r.state != TxnState::Settled {
                continue;
            }
            let owner = self
                .registry
                .owner_of(r.account)
                .ok_or_else(|| format!("{}: settled record on unknown account", r.txn))?;
            let cert = r
                .initiator_cert
                .as_ref()
                .ok_or_else(|| format!("{}: settled without initiator certificate", r.txn))?;
            if cert.account != r.account {
                return Err(format!("{}: certificate bound to a different account", r.txn));
            }
            if cert.subject != owner {
                return Err(format!(
                    "{}: certificate subject {} is not the account owner {}",
                    r.txn, cert.subject, owner
                ));
            }
            if r.kind == ProtocolKind::PpDelegated {
                let ccert = r
                    .collector_cert
                    .as_ref()
                    .ok_or_else(|| format!("{}: delegated settle without collector cert", r.txn))?;
                let delegate = r
                    .delegate
                    .ok_or_else(|| format!("{}: delegated settle without delegate", r.txn))?;
                if ccert.account != delegate {
                    return Err(format!("{}: collector cert bound to wrong account", r.txn));
                }
                let collector_owner = self.registry.owner_of(delegate).unwrap();
                if ccert.subject != collector_owner {
                    return Err(format!(
                        "{}: collector cert subject is not the collector",
                        r.txn
                    ));
                }
            }
        }
        Ok(())
    }
}

fn payload(fields: &[(&str, serde_json::Value)]) -> Payload {
    fields
        .iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect()
}
