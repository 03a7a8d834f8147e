//! Deterministic discrete-event transport: LAN segments behind NAT, the
//! connection table, and the global event scheduler.
//!
//! Time is integer ticks. Events execute in (time, insertion-order) order, so
//! identical seeds and scenarios produce byte-identical traces. Direct
//! delivery is allowed only within one LAN segment or to/from the cloud; two
//! NAT'd segments can never reach each other directly.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::collections::VecDeque;
use std::fmt;

use crate::states::StateCombination;

pub type Tick = u64;

/// Handle of one simulated node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeId {
    Cloud,
    Device,
    VictimApp,
    Phantom,
    AttackerApp,
}

impl NodeId {
    pub fn name(self) -> &'static str {
        match self {
            NodeId::Cloud => "cloud",
            NodeId::Device => "device",
            NodeId::VictimApp => "victim-app",
            NodeId::Phantom => "phantom",
            NodeId::AttackerApp => "attacker-app",
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// LAN segment membership. The cloud is globally reachable and belongs to no
/// segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Segment {
    VictimLan,
    AttackerLan,
}

/// Segment map mirroring the experimental network: victim device and app in
/// one NAT'd LAN, phantom and attacker app in another.
pub fn segment_of(node: NodeId) -> Option<Segment> {
    match node {
        NodeId::Cloud => None,
        NodeId::Device | NodeId::VictimApp => Some(Segment::VictimLan),
        NodeId::Phantom | NodeId::AttackerApp => Some(Segment::AttackerLan),
    }
}

/// Whether a message from `from` may be delivered to `to`.
///
/// Intra-segment traffic and anything to or from the cloud is allowed; the
/// two LANs sit behind NAT and cannot communicate with each other directly.
pub fn routing_allowed(from: NodeId, to: NodeId) -> bool {
    if from == NodeId::Cloud || to == NodeId::Cloud {
        return true;
    }
    match (segment_of(from), segment_of(to)) {
        (Some(a), Some(b)) => a == b,
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("routing denied: {from} -> {to}")]
pub struct RoutingDenied {
    pub from: NodeId,
    pub to: NodeId,
}

/// Identifier of one transport connection to the cloud.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConnectionId(pub u64);

/// A device-to-cloud transport connection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Connection {
    pub id: ConnectionId,
    pub endpoint: NodeId,
    pub open: bool,
    pub opened_at: Tick,
    pub closed_at: Option<Tick>,
}

/// Allocates connections and tracks their lifecycle.
#[derive(Debug, Clone, Default)]
pub struct ConnectionTable {
    connections: BTreeMap<ConnectionId, Connection>,
    next: u64,
}

impl ConnectionTable {
    pub fn open(&mut self, endpoint: NodeId, now: Tick) -> ConnectionId {
        let id = ConnectionId(self.next);
        self.next += 1;
        self.connections.insert(
            id,
            Connection {
                id,
                endpoint,
                open: true,
                opened_at: now,
                closed_at: None,
            },
        );
        id
    }

    pub fn close(&mut self, id: ConnectionId, now: Tick) -> bool {
        match self.connections.get_mut(&id) {
            Some(conn) if conn.open => {
                conn.open = false;
                conn.closed_at = Some(now);
                true
            }
            _ => false,
        }
    }

    pub fn is_open(&self, id: ConnectionId) -> bool {
        self.connections.get(&id).map(|c| c.open).unwrap_or(false)
    }

    pub fn endpoint(&self, id: ConnectionId) -> Option<NodeId> {
        self.connections.get(&id).map(|c| c.endpoint)
    }
}

/// What happened to a message (or which transition fired).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Delivered,
    Dropped,
    Denied,
    Transition,
}

/// One trace record: a message outcome or a state transition, stamped with
/// the current state combination and its legality.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub tick: Tick,
    pub kind: RecordKind,
    pub src: String,
    pub dst: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub code: Option<u32>,
    pub combo: [u8; 3],
    pub legal: bool,
}

/// Append-only event trace with conservation accounting.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    pub horizon_exceeded: bool,
}

impl Trace {
    #[allow(clippy::too_many_arguments)]
    pub fn record(
        &mut self,
        tick: Tick,
        kind: RecordKind,
        src: NodeId,
        dst: NodeId,
        method: Option<String>,
        code: Option<u32>,
        combo: StateCombination,
        legal: bool,
    ) {
        self.records.push(TraceRecord {
            tick,
            kind,
            src: src.name().to_owned(),
            dst: dst.name().to_owned(),
            method,
            code,
            combo: combo.indices(),
            legal,
        });
    }

    /// Line-delimited JSON rendering, one record per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&serde_json::to_string(record).expect("trace records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn final_combo(&self) -> Option<[u8; 3]> {
        self.records.last().map(|r| r.combo)
    }

    /// All records legal? (Baseline life-cycle property.)
    pub fn all_legal(&self) -> bool {
        self.records.iter().all(|r| r.legal)
    }

    pub fn illegal_records(&self) -> Vec<&TraceRecord> {
        self.records.iter().filter(|r| !r.legal).collect()
    }
}

/// A scheduled simulation event, interpreted by the world.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event<A> {
    /// Execute one scripted interaction.
    Action(A),
    /// Periodic device heartbeat.
    Heartbeat,
    /// Device re-login attempt after connection loss.
    Relogin,
    /// Phantom login-flood pulse.
    FloodPulse,
}

/// Time-ordered event queue with a stable FIFO tie-break.
#[derive(Debug, Clone)]
pub struct Scheduler<A> {
    pub clock: Tick,
    queue: BTreeMap<(Tick, u64), Event<A>>,
    seq: u64,
}

impl<A> Default for Scheduler<A> {
    fn default() -> Self {
        Scheduler {
            clock: 0,
            queue: BTreeMap::new(),
            seq: 0,
        }
    }
}

impl<A> Scheduler<A> {
    pub fn schedule(&mut self, at: Tick, event: Event<A>) {
        let at = at.max(self.clock);
        self.queue.insert((at, self.seq), event);
        self.seq += 1;
    }

    pub fn schedule_after(&mut self, delay: Tick, event: Event<A>) {
        self.schedule(self.clock + delay, event);
    }

    /// Pops the next event not later than `horizon`, advancing the clock.
    pub fn pop(&mut self, horizon: Tick) -> Option<(Tick, Event<A>)> {
        let (&(tick, seq), _) = self.queue.iter().next()?;
        if tick > horizon {
            return None;
        }
        let event = self.queue.remove(&(tick, seq))?;
        self.clock = tick;
        Some((tick, event))
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    /// Pending scripted actions (maintenance pulses excluded).
    pub fn pending_actions(&self) -> usize {
        self.queue
            .values()
            .filter(|e| matches!(e, Event::Action(_)))
            .count()
    }
}

/// Bounded FIFO of recent session holders, for tenure accounting.
#[derive(Debug, Clone, Default)]
pub struct TenureLog {
    samples: VecDeque<(Tick, Option<crate::cloud::Principal>)>,
}

impl TenureLog {
    pub fn sample(&mut self, tick: Tick, holder: Option<crate::cloud::Principal>) {
        self.samples.push_back((tick, holder));
    }

    /// Fraction of ticks in [start, start+window) held by the given
    /// principal, measured over the recorded samples (one per tick).
    pub fn tenure_fraction(
        &self,
        start: Tick,
        window: Tick,
        principal: crate::cloud::Principal,
    ) -> f64 {
        let mut held = 0u64;
        let mut total = 0u64;
        for (tick, holder) in &self.samples {
            if *tick >= start && *tick < start + window {
                total += 1;
                if *holder == Some(principal) {
                    held += 1;
                }
            }
        }
        if total == 0 {
            0.0
        } else {
            held as f64 / total as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn routing_rules_match_the_two_lan_setup() {
        assert!(routing_allowed(NodeId::Phantom, NodeId::Cloud));
        assert!(routing_allowed(NodeId::Cloud, NodeId::Device));
        assert!(routing_allowed(NodeId::VictimApp, NodeId::Device));
        assert!(!routing_allowed(NodeId::Phantom, NodeId::Device));
        assert!(!routing_allowed(NodeId::AttackerApp, NodeId::Device));
        assert!(routing_allowed(NodeId::AttackerApp, NodeId::Phantom));
    }

    #[test]
    fn scheduler_orders_by_time_then_insertion() {
        let mut s: Scheduler<u32> = Scheduler::default();
        s.schedule(5, Event::Action(1));
        s.schedule(3, Event::Action(2));
        s.schedule(5, Event::Action(3));
        let mut order = Vec::new();
        while let Some((tick, Event::Action(n))) = s.pop(100) {
            order.push((tick, n));
        }
        assert_eq!(order, vec![(3, 2), (5, 1), (5, 3)]);
    }

    #[test]
    fn scheduler_respects_horizon() {
        let mut s: Scheduler<u32> = Scheduler::default();
        s.schedule(10, Event::Action(1));
        assert!(s.pop(9).is_none());
        assert!(!s.is_empty());
        assert!(s.pop(10).is_some());
    }

    #[test]
    fn connections_close_once() {
        let mut table = ConnectionTable::default();
        let id = table.open(NodeId::Device, 1);
        assert!(table.is_open(id));
        assert!(table.close(id, 5));
        assert!(!table.close(id, 6));
        assert!(!table.is_open(id));
    }
}
