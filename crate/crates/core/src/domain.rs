//! Shared domain types: logical time, money in minor units, identities,
//! user/agent profiles, one-time codes, message envelopes, and the protocol
//! taxonomy. Everything here is plain data with deterministic ordering and
//! serialization; behavior lives in the provider, protocol, and simnet layers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DomainError {
    #[error("malformed phone number: expected a digit string with at least 4 digits")]
    MalformedPhone,
    #[error("code length mismatch: {left} vs {right} bits")]
    ConfigMismatch { left: u8, right: u8 },
    #[error("money arithmetic overflow")]
    MoneyOverflow,
    #[error("insufficient funds: have {have}, need {need}")]
    InsufficientMoney { have: Money, need: Money },
}

/// Discrete simulation clock value, in ticks.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct LogicalTime(pub u64);

/// Span of ticks, used for latencies and validity windows.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Duration(pub u64);

impl LogicalTime {
    pub const ZERO: LogicalTime = LogicalTime(0);

    pub fn ticks(self) -> u64 {
        self.0
    }
}

impl std::ops::Add<Duration> for LogicalTime {
    type Output = LogicalTime;
    fn add(self, rhs: Duration) -> LogicalTime {
        LogicalTime(self.0 + rhs.0)
    }
}

impl fmt::Display for LogicalTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

/// Non-negative amount in minor currency units (e.g. cents).
///
/// Arithmetic is checked: overflow and underflow surface as errors instead of
/// wrapping, so ledger bugs cannot silently corrupt balances.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Money(pub u64);

impl Money {
    pub const ZERO: Money = Money(0);

    pub fn minor_units(self) -> u64 {
        self.0
    }

    pub fn checked_add(self, rhs: Money) -> Result<Money, DomainError> {
        self.0
            .checked_add(rhs.0)
            .map(Money)
            .ok_or(DomainError::MoneyOverflow)
    }

    pub fn checked_sub(self, rhs: Money) -> Result<Money, DomainError> {
        self.0
            .checked_sub(rhs.0)
            .map(Money)
            .ok_or(DomainError::InsufficientMoney {
                have: self,
                need: rhs,
            })
    }
}

impl fmt::Display for Money {
    /// Major and minor parts separated by a space: 100000 renders as "1000 00".
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {:02}", self.0 / 100, self.0 % 100)
    }
}

/// Opaque person identity, assigned at registration in scenario order.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct PersonId(pub u64);

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct AccountId(pub u64);

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct TransactionId(pub u64);

impl fmt::Display for PersonId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

impl fmt::Display for TransactionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "txn{}", self.0)
    }
}

/// Named categorical attributes with a mask of which ones are physically
/// observable when the person stands in front of another party.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AttributeVector {
    pub attrs: BTreeMap<String, String>,
    pub side_info_mask: BTreeSet<String>,
}

impl AttributeVector {
    pub fn new(
        attrs: impl IntoIterator<Item = (String, String)>,
        mask: impl IntoIterator<Item = String>,
    ) -> AttributeVector {
        AttributeVector {
            attrs: attrs.into_iter().collect(),
            side_info_mask: mask.into_iter().collect(),
        }
    }

    /// Attributes visible to a physical observer, in name order.
    pub fn observable(&self) -> impl Iterator<Item = (&str, &str)> {
        self.attrs
            .iter()
            .filter(|(k, _)| self.side_info_mask.contains(*k))
            .map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

/// Registered customer: PII held by the provider plus side-info attributes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub person: PersonId,
    pub name: String,
    pub phone_number: String,
    pub national_id: String,
    pub pin: String,
    pub attributes: AttributeVector,
}

/// Registered cash-in/cash-out agent with till state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub person: PersonId,
    pub agent_number: String,
    pub cash_drawer: Money,
    pub float_balance: Money,
}

/// Fixed-length bit string, at most 32 bits, stored little in a u64.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CodeBits {
    pub value: u64,
    pub len: u8,
}

impl CodeBits {
    pub const MAX_LEN: u8 = 32;

    pub fn new(value: u64, len: u8) -> CodeBits {
        debug_assert!(len >= 1 && len <= Self::MAX_LEN);
        debug_assert!(len == 64 || value < (1u64 << len));
        CodeBits { value, len }
    }

    /// Uniform draw over {0,1}^len.
    pub fn sample<R: rand::Rng>(rng: &mut R, len: u8) -> CodeBits {
        let bound = 1u64 << len;
        CodeBits {
            value: rng.gen_range(0..bound),
            len,
        }
    }
}

impl fmt::Display for CodeBits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in (0..self.len).rev() {
            write!(f, "{}", (self.value >> i) & 1)?;
        }
        Ok(())
    }
}

/// One-time settlement code bound to a single transaction and validity window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OneTimeCode {
    pub bits: CodeBits,
    pub issued_at: LogicalTime,
    pub window: Duration,
    pub txn: TransactionId,
}

impl OneTimeCode {
    /// Valid from issuance through issued_at + window inclusive.
    pub fn valid_at(&self, now: LogicalTime) -> bool {
        now >= self.issued_at && now <= self.issued_at + self.window
    }
}

/// Bitwise equality over codes of equal configured length.
///
/// The comparison XORs the full value rather than scanning bit by bit, so no
/// early-exit behavior is observable to callers. Length disagreement is a
/// configuration error, not a mismatch.
pub fn code_equal(a: &CodeBits, b: &CodeBits) -> Result<bool, DomainError> {
    if a.len != b.len {
        return Err(DomainError::ConfigMismatch {
            left: a.len,
            right: b.len,
        });
    }
    Ok((a.value ^ b.value) == 0)
}

/// Replace all but the last four digits of a phone number with 'X'.
pub fn mask_phone(phone: &str) -> Result<String, DomainError> {
    if phone.len() < 4 || !phone.bytes().all(|b| b.is_ascii_digit()) {
        return Err(DomainError::MalformedPhone);
    }
    let keep = phone.len() - 4;
    let mut out = String::with_capacity(phone.len());
    out.extend(std::iter::repeat('X').take(keep));
    out.push_str(&phone[keep..]);
    Ok(out)
}

/// Delegation list entry label: masked sender phone plus amount.
pub fn delegation_display_label(sender_phone: &str, amount: Money) -> Result<String, DomainError> {
    Ok(format!("{} / {}", mask_phone(sender_phone)?, amount))
}

/// Informal variants of handing a withdrawal to another person.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InformalVariant {
    P2pTransfer,
    SharePhonePin,
    ForwardMessage,
}

/// The six protocol families the simulator can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ProtocolKind {
    CurrentWithdrawal,
    PpWithdrawal,
    CurrentDeposit,
    PpDeposit,
    InformalDelegated(InformalVariant),
    PpDelegated,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 8] = [
        ProtocolKind::CurrentWithdrawal,
        ProtocolKind::PpWithdrawal,
        ProtocolKind::CurrentDeposit,
        ProtocolKind::PpDeposit,
        ProtocolKind::InformalDelegated(InformalVariant::P2pTransfer),
        ProtocolKind::InformalDelegated(InformalVariant::SharePhonePin),
        ProtocolKind::InformalDelegated(InformalVariant::ForwardMessage),
        ProtocolKind::PpDelegated,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ProtocolKind::CurrentWithdrawal => "current-withdrawal",
            ProtocolKind::PpWithdrawal => "pp-withdrawal",
            ProtocolKind::CurrentDeposit => "current-deposit",
            ProtocolKind::PpDeposit => "pp-deposit",
            ProtocolKind::InformalDelegated(InformalVariant::P2pTransfer) => {
                "informal-delegated-p2p"
            }
            ProtocolKind::InformalDelegated(InformalVariant::SharePhonePin) => {
                "informal-delegated-share-phone-pin"
            }
            ProtocolKind::InformalDelegated(InformalVariant::ForwardMessage) => {
                "informal-delegated-forward-message"
            }
            ProtocolKind::PpDelegated => "pp-delegated",
        }
    }

    /// True for flows that settle by comparing a short one-time code.
    pub fn is_privacy_preserving(&self) -> bool {
        matches!(
            self,
            ProtocolKind::PpWithdrawal | ProtocolKind::PpDeposit | ProtocolKind::PpDelegated
        )
    }

    /// True for flows where money enters the system as cash.
    pub fn is_deposit(&self) -> bool {
        matches!(
            self,
            ProtocolKind::CurrentDeposit | ProtocolKind::PpDeposit
        )
    }

    /// True when someone other than the account owner collects the cash.
    pub fn is_delegated(&self) -> bool {
        matches!(
            self,
            ProtocolKind::PpDelegated | ProtocolKind::InformalDelegated(_)
        )
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProtocolKind {
    type Err = String;
    fn from_str(s: &str) -> Result<ProtocolKind, String> {
        ProtocolKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown protocol kind: {s:?}"))
    }
}

impl Serialize for ProtocolKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ProtocolKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<ProtocolKind, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Party addressable on the simulated network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ActorRef {
    Provider,
    User(PersonId),
    Agent(PersonId),
}

/// Coarse role, used for per-link latency keys.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Agent,
    Provider,
}

impl ActorRef {
    pub fn role(&self) -> Role {
        match self {
            ActorRef::Provider => Role::Provider,
            ActorRef::User(_) => Role::User,
            ActorRef::Agent(_) => Role::Agent,
        }
    }
}

impl fmt::Display for ActorRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActorRef::Provider => write!(f, "provider"),
            ActorRef::User(p) => write!(f, "user:{}", p.0),
            ActorRef::Agent(p) => write!(f, "agent:{}", p.0),
        }
    }
}

impl FromStr for ActorRef {
    type Err = String;
    fn from_str(s: &str) -> Result<ActorRef, String> {
        if s == "provider" {
            return Ok(ActorRef::Provider);
        }
        let parse = |tail: &str| tail.parse::<u64>().map_err(|e| e.to_string());
        if let Some(tail) = s.strip_prefix("user:") {
            return Ok(ActorRef::User(PersonId(parse(tail)?)));
        }
        if let Some(tail) = s.strip_prefix("agent:") {
            return Ok(ActorRef::Agent(PersonId(parse(tail)?)));
        }
        Err(format!("unknown actor ref: {s:?}"))
    }
}

impl Serialize for ActorRef {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ActorRef {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<ActorRef, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Message payload: field name to JSON value, ordered by name.
pub type Payload = BTreeMap<String, serde_json::Value>;

/// One network message between two actors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeMessage {
    pub msg_id: u64,
    pub from: ActorRef,
    pub to: ActorRef,
    /// Choreography step name this message implements.
    pub kind: String,
    pub payload: Payload,
    pub sent_at: LogicalTime,
    pub delivered_at: Option<LogicalTime>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks_all_but_last_four_digits() {
        assert_eq!(mask_phone("0712345678").unwrap(), "XXXXXX5678");
        assert_eq!(mask_phone("5678").unwrap(), "5678");
        assert_eq!(mask_phone("15678").unwrap(), "X5678");
    }

    #[test]
    fn rejects_short_or_nondigit_phones() {
        assert_eq!(mask_phone("123"), Err(DomainError::MalformedPhone));
        assert_eq!(mask_phone(""), Err(DomainError::MalformedPhone));
        assert_eq!(mask_phone("07abc678"), Err(DomainError::MalformedPhone));
    }

    #[test]
    fn delegation_label_matches_expected_format() {
        let label = delegation_display_label("0712345678", Money(100_000)).unwrap();
        assert_eq!(label, "XXXXXX5678 / 1000 00");
    }

    #[test]
    fn code_equality_is_bitwise_and_length_checked() {
        let a = CodeBits::new(0b1011, 4);
        let b = CodeBits::new(0b1011, 4);
        let c = CodeBits::new(0b1010, 4);
        let d = CodeBits::new(0b1011, 8);
        assert_eq!(code_equal(&a, &b), Ok(true));
        assert_eq!(code_equal(&a, &c), Ok(false));
        assert_eq!(
            code_equal(&a, &d),
            Err(DomainError::ConfigMismatch { left: 4, right: 8 })
        );
    }

    #[test]
    fn code_validity_window_is_inclusive_of_boundary() {
        let code = OneTimeCode {
            bits: CodeBits::new(3, 4),
            issued_at: LogicalTime(100),
            window: Duration(300),
            txn: TransactionId(1),
        };
        assert!(code.valid_at(LogicalTime(100)));
        assert!(code.valid_at(LogicalTime(400)));
        assert!(!code.valid_at(LogicalTime(401)));
        assert!(!code.valid_at(LogicalTime(99)));
    }

    #[test]
    fn money_display_splits_minor_units() {
        assert_eq!(Money(100_000).to_string(), "1000 00");
        assert_eq!(Money(2900).to_string(), "29 00");
        assert_eq!(Money(5).to_string(), "0 05");
    }

    #[test]
    fn money_arithmetic_is_checked() {
        assert_eq!(Money(5).checked_add(Money(7)), Ok(Money(12)));
        assert!(Money(u64::MAX).checked_add(Money(1)).is_err());
        assert_eq!(
            Money(5).checked_sub(Money(7)),
            Err(DomainError::InsufficientMoney {
                have: Money(5),
                need: Money(7)
            })
        );
    }

    #[test]
    fn actor_refs_round_trip_through_strings() {
        for a in [
            ActorRef::Provider,
            ActorRef::User(PersonId(3)),
            ActorRef::Agent(PersonId(9)),
        ] {
            assert_eq!(a.to_string().parse::<ActorRef>().unwrap(), a);
        }
    }

    #[test]
    fn protocol_kinds_round_trip_through_strings() {
        for k in ProtocolKind::ALL {
            assert_eq!(k.as_str().parse::<ProtocolKind>().unwrap(), k);
        }
    }

    #[test]
    fn observable_attributes_respect_the_mask() {
        let av = AttributeVector::new(
            [
                ("ethnicity".to_string(), "E1".to_string()),
                ("home_region".to_string(), "north".to_string()),
            ],
            ["ethnicity".to_string()],
        );
        let seen: Vec<_> = av.observable().collect();
        assert_eq!(seen, vec![("ethnicity", "E1")]);
    }
}
