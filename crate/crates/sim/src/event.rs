//! The event queue: everything that happens in a run is one of these,
//! executed in strict (time, sequence) order.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use acp_core::envelope::Envelope;
use acp_core::identity::Did;

/// Operator-injected work, scheduled by the scenario.
#[derive(Debug, Clone)]
pub enum Command {
    StartPlan {
        plan_id: u64,
    },
    /// A bare capability lookup, for discovery measurements.
    Lookup {
        agent: Did,
        capability: String,
    },
}

#[derive(Debug, Clone)]
pub enum EventKind {
    Deliver { envelope: Envelope, to: Did },
    TimerFire { agent: Did, timer_id: u64 },
    AgentDown(Did),
    AgentUp(Did),
    Inject(Command),
}

#[derive(Debug, Clone)]
pub struct SimEvent {
    pub at: u64,
    pub seq: u64,
    pub kind: EventKind,
}

/// Min-heap over (at, seq). The sequence number is assigned at scheduling
/// time, so simultaneous events run in the order they were scheduled.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<HeapEntry>>,
    next_seq: u64,
}

#[derive(Debug)]
struct HeapEntry(SimEvent);

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        (self.0.at, self.0.seq) == (other.0.at, other.0.seq)
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.0.at, self.0.seq).cmp(&(other.0.at, other.0.seq))
    }
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn schedule(&mut self, at: u64, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap
            .push(Reverse(HeapEntry(SimEvent { at, seq, kind })));
    }

    pub fn pop(&mut self) -> Option<SimEvent> {
        self.heap.pop().map(|Reverse(HeapEntry(e))| e)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}
