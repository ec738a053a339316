//! Deterministic simulator and analysis toolkit for agent-facilitated
//! mobile-money KYC protocols.
//!
//! The crate models cash-out, cash-in, and delegated-withdrawal flows as
//! communicating state machines over a discrete-event network, runs scripted
//! adversaries against them, and quantifies what each party's view reveals
//! about customer identity.

pub mod actors;
pub mod adversary;
pub mod analysis;
pub mod domain;
pub mod protocols;
pub mod provider;
pub mod rng;
pub mod scenario;
pub mod selftest;
pub mod simnet;

pub use domain::{
    code_equal, mask_phone, ActorRef, AgentProfile, AttributeVector, CodeBits, DomainError,
    Duration, EnvelopeMessage, InformalVariant, LogicalTime, Money, OneTimeCode, Payload,
    PersonId, ProtocolKind, Role, TransactionId, UserProfile,
};
