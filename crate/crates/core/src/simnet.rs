//! Deterministic discrete-event simulation around one provider: a logical
//! tick clock, a pending-delivery queue ordered by (delivery time, send
//! sequence), a per-link latency model, probabilistic message drops, and an
//! append-only event log.
//!
//! Determinism is total: the same seed and the same call sequence produce the
//! same delivery order, the same provider state, and a byte-identical event
//! log. Ties at one tick resolve in send order.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::domain::{ActorRef, Duration, EnvelopeMessage, LogicalTime, Payload, Role};
use crate::provider::{Provider, ProviderError, ProviderEvent};
use crate::rng::substream;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("no quiescence within {limit} ticks")]
    MaxTicksExceeded { limit: u64 },
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Message delay by link direction, in ticks.
#[derive(Debug, Clone, PartialEq)]
pub enum LatencyModel {
    Zero,
    Fixed(Duration),
    /// Delay per (sender role, recipient role); `default` covers missing links.
    PerLink {
        links: BTreeMap<(Role, Role), u64>,
        default: u64,
    },
}

impl LatencyModel {
    pub fn delay(&self, from: Role, to: Role) -> Duration {
        match self {
            LatencyModel::Zero => Duration(0),
            LatencyModel::Fixed(d) => *d,
            LatencyModel::PerLink { links, default } => {
                Duration(links.get(&(from, to)).copied().unwrap_or(*default))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub latency: LatencyModel,
    /// Probability that a sent message is silently lost.
    pub drop_probability: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            latency: LatencyModel::Zero,
            drop_probability: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    MessageSent,
    MessageDelivered,
    StateTransition,
    LedgerEntry,
    Observation,
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventLogEntry {
    pub seq: u64,
    pub time: LogicalTime,
    pub kind: EventKind,
    pub actor: ActorRef,
    pub payload: serde_json::Value,
}

/// Append-only run log. Disabled mode skips recording entirely, for
/// Monte-Carlo campaigns that only need final state.
#[derive(Debug, Default)]
pub struct EventLog {
    enabled: bool,
    entries: Vec<EventLogEntry>,
    next_seq: u64,
}

impl EventLog {
    pub fn enabled() -> EventLog {
        EventLog {
            enabled: true,
            ..EventLog::default()
        }
    }

    pub fn disabled() -> EventLog {
        EventLog::default()
    }

    fn record(
        &mut self,
        time: LogicalTime,
        kind: EventKind,
        actor: ActorRef,
        payload: serde_json::Value,
    ) {
        if !self.enabled {
            return;
        }
        self.entries.push(EventLogEntry {
            seq: self.next_seq,
            time,
            kind,
            actor,
            payload,
        });
        self.next_seq += 1;
    }

    pub fn entries(&self) -> &[EventLogEntry] {
        &self.entries
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        for entry in &self.entries {
            serde_json::to_writer(&mut w, entry)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug)]
struct PendingDelivery {
    deliver_at: LogicalTime,
    seq: u64,
    msg: EnvelopeMessage,
}

impl PartialEq for PendingDelivery {
    fn eq(&self, other: &Self) -> bool {
        (self.deliver_at, self.seq) == (other.deliver_at, other.seq)
    }
}
impl Eq for PendingDelivery {}
impl PartialOrd for PendingDelivery {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for PendingDelivery {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.deliver_at, self.seq).cmp(&(other.deliver_at, other.seq))
    }
}

/// The world: provider, network, clock, and log.
pub struct SimWorld {
    provider: Provider,
    clock: LogicalTime,
    net: NetworkConfig,
    pending: BinaryHeap<Reverse<PendingDelivery>>,
    next_msg: u64,
    net_rng: ChaCha8Rng,
    log: EventLog,
}

impl SimWorld {
    pub fn new(provider: Provider, net: NetworkConfig, master_seed: u64, log: EventLog) -> SimWorld {
        SimWorld {
            provider,
            clock: LogicalTime(0),
            net,
            pending: BinaryHeap::new(),
            next_msg: 0,
            net_rng: substream(master_seed, "net/drops"),
            log,
        }
    }

    pub fn now(&self) -> LogicalTime {
        self.clock
    }

    pub fn provider(&self) -> &Provider {
        &self.provider
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn has_pending(&self) -> bool {
        !self.pending.is_empty()
    }

    /// Run a provider operation at the current tick and move its transition
    /// and ledger events into the log.
    pub fn provider_op<T, E>(
        &mut self,
        f: impl FnOnce(&mut Provider, LogicalTime) -> Result<T, E>,
    ) -> Result<T, E> {
        let now = self.clock;
        let out = f(&mut self.provider, now);
        self.drain_provider_events();
        out
    }

    fn drain_provider_events(&mut self) {
        for event in self.provider.drain_events() {
            match event {
                ProviderEvent::Transition {
                    txn,
                    from,
                    to,
                    reason,
                } => self.log.record(
                    self.clock,
                    EventKind::StateTransition,
                    ActorRef::Provider,
                    json!({ "txn": txn, "from": from, "to": to, "reason": reason }),
                ),
                ProviderEvent::Ledger(entry) => self.log.record(
                    self.clock,
                    EventKind::LedgerEntry,
                    ActorRef::Provider,
                    serde_json::to_value(&entry).expect("ledger entries serialize"),
                ),
            }
        }
    }

    /// Send a message; it is delivered after the link latency unless dropped.
    /// Returns the message id.
    pub fn send(&mut self, from: ActorRef, to: ActorRef, step: &str, payload: Payload) -> u64 {
        let msg_id = self.next_msg;
        self.next_msg += 1;
        let delay = self.net.latency.delay(from.role(), to.role());
        let deliver_at = self.clock + delay;
        self.log.record(
            self.clock,
            EventKind::MessageSent,
            from,
            json!({ "msg_id": msg_id, "step": step, "from": from, "to": to, "payload": payload }),
        );
        let dropped = self.net.drop_probability > 0.0
            && self.net_rng.gen_range(0.0..1.0) < self.net.drop_probability;
        if !dropped {
            self.pending.push(Reverse(PendingDelivery {
                deliver_at,
                seq: msg_id,
                msg: EnvelopeMessage {
                    msg_id,
                    from,
                    to,
                    kind: step.to_string(),
                    payload,
                    sent_at: self.clock,
                    delivered_at: None,
                },
            }));
        }
        msg_id
    }

    /// Record an over-the-counter observation.
    pub fn observe(&mut self, observer: ActorRef, observed: ActorRef, step: &str, payload: &Payload) {
        self.log.record(
            self.clock,
            EventKind::Observation,
            observer,
            json!({ "step": step, "observer": observer, "observed": observed, "payload": payload }),
        );
    }

    /// Advance the clock to `t`, sweeping code expiries at their exact
    /// deadlines along the way.
    pub fn advance_to(&mut self, t: LogicalTime) {
        while let Some(deadline) = self.provider.next_expiry_deadline() {
            if deadline > t {
                break;
            }
            if deadline > self.clock {
                self.clock = deadline;
            }
            self.provider.expire_codes(self.clock);
            self.drain_provider_events();
        }
        if t > self.clock {
            self.clock = t;
        }
    }

    /// Deliver every message due at the next delivery tick, in send order.
    /// Advances the clock to that tick. Empty when nothing is in flight.
    pub fn step(&mut self) -> Vec<EnvelopeMessage> {
        let Some(Reverse(next)) = self.pending.peek() else {
            return Vec::new();
        };
        let t = next.deliver_at;
        self.advance_to(t);
        let mut delivered = Vec::new();
        while matches!(self.pending.peek(), Some(Reverse(p)) if p.deliver_at == t) {
            let Reverse(mut p) = self.pending.pop().unwrap();
            p.msg.delivered_at = Some(t);
            self.log.record(
                t,
                EventKind::MessageDelivered,
                p.msg.to,
                json!({
                    "msg_id": p.msg.msg_id,
                    "step": p.msg.kind,
                    "from": p.msg.from,
                    "to": p.msg.to,
                    "payload": p.msg.payload,
                }),
            );
            delivered.push(p.msg);
        }
        delivered
    }
}

/// Reacts to each delivered message, possibly sending more.
pub trait DeliveryHandler {
    fn on_deliver(&mut self, world: &mut SimWorld, msg: &EnvelopeMessage) -> Result<(), SimError>;
}

/// Drive the world until no messages are in flight. Fails if the clock moves
/// more than `max_ticks` past its starting point.
pub fn run_until_quiescent<H: DeliveryHandler>(
    world: &mut SimWorld,
    handler: &mut H,
    max_ticks: u64,
) -> Result<(), SimError> {
    let start = world.now();
    while world.has_pending() {
        let batch = world.step();
        if world.now().0 - start.0 > max_ticks {
            return Err(SimError::MaxTicksExceeded { limit: max_ticks });
        }
        for msg in &batch {
            handler.on_deliver(world, msg)?;
        }
    }
    Ok(())
}
