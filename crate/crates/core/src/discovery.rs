//! Hybrid discovery: a local broadcast bus and a Kademlia-style DHT
//! mapping capability keys and DIDs to signed agent cards.
//!
//! Node ids and record keys share one 256-bit space (SHA-256 of the DID
//! rendering, or of the capability text). Distance is XOR, compared as a
//! big-endian integer. Routing tables hold one bucket per distance MSB
//! with capacity [`BUCKET_SIZE`]; a full bucket evicts its least-recently
//! seen peer only if that peer is down, otherwise the newcomer is dropped.
//!
//! Lookups are round-based and deterministic: each round queries the
//! [`LOOKUP_ALPHA`] closest unqueried candidates (ties broken by DID), and
//! the hop count of a lookup is its number of rounds. The lookup logic is
//! a pure state machine ([`LookupState`]) so the same transitions drive
//! both the synchronous in-memory network here and the message-based
//! driver in the simulated network.

use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::doc::{object, Value};
use crate::identity::{Did, KeyPair};
use crate::semantic::{validate_card, AgentCard};

/// Bucket capacity (the Kademlia `k`).
pub const BUCKET_SIZE: usize = 20;

/// Queries issued per lookup round (the Kademlia `alpha`).
pub const LOOKUP_ALPHA: usize = 3;

pub const ID_BITS: usize = 256;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DiscoveryError {
    #[error("a node never inserts itself into its routing table")]
    SelfInsert,
    #[error("record signature or identity binding rejected")]
    RecordRejected,
    #[error("no reachable peer could serve the lookup")]
    DiscoveryUnavailable,
}

/// 256-bit identifier for nodes and record keys.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub [u8; 32]);

impl NodeId {
    pub fn from_did(did: &Did) -> NodeId {
        NodeId(Sha256::digest(did.to_string().as_bytes()).into())
    }

    pub fn from_capability(capability: &str) -> NodeId {
        NodeId(Sha256::digest(capability.as_bytes()).into())
    }
}

impl std::fmt::Debug for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "NodeId({}..)", hex::encode(&self.0[..4]))
    }
}

/// XOR distance, ordered as a big-endian 256-bit integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Distance(pub [u8; 32]);

pub fn distance(a: NodeId, b: NodeId) -> Distance {
    let mut out = [0u8; 32];
    for (i, byte) in out.iter_mut().enumerate() {
        *byte = a.0[i] ^ b.0[i];
    }
    Distance(out)
}

impl Distance {
    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&b| b == 0)
    }

    /// Index of the most significant set bit (255 = top bit), or None for
    /// zero distance. Doubles as the bucket index.
    pub fn msb_index(&self) -> Option<usize> {
        for (i, &byte) in self.0.iter().enumerate() {
            if byte != 0 {
                return Some(255 - (i * 8 + byte.leading_zeros() as usize));
            }
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerRecord {
    pub id: NodeId,
    pub did: Did,
    pub last_seen: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    Inserted,
    Refreshed,
    /// Bucket was full of live peers; the newcomer was dropped.
    Dropped,
    /// The least-recently-seen peer was down and got evicted.
    Evicted(NodeId),
}

/// Bucketed peer table. Buckets are kept least-recently-seen first.
#[derive(Debug, Clone)]
pub struct RoutingTable {
    owner: NodeId,
    buckets: Vec<Vec<PeerRecord>>,
}

impl RoutingTable {
    pub fn new(owner: NodeId) -> Self {
        RoutingTable {
            owner,
            buckets: vec![Vec::new(); ID_BITS],
        }
    }

    pub fn owner(&self) -> NodeId {
        self.owner
    }

    pub fn len(&self) -> usize {
        self.buckets.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.iter().all(Vec::is_empty)
    }

    pub fn bucket_of(&self, id: NodeId) -> Option<usize> {
        distance(self.owner, id).msb_index()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.bucket_of(id)
            .is_some_and(|b| self.buckets[b].iter().any(|p| p.id == id))
    }

    /// Inserts or refreshes a peer. `is_down` answers liveness for the
    /// eviction rule on full buckets.
    pub fn insert(
        &mut self,
        peer: PeerRecord,
        is_down: impl Fn(&Did) -> bool,
    ) -> Result<InsertOutcome, DiscoveryError> {
        let Some(bucket_idx) = self.bucket_of(peer.id) else {
            return Err(DiscoveryError::SelfInsert);
        };
        let bucket = &mut self.buckets[bucket_idx];
        if let Some(pos) = bucket.iter().position(|p| p.id == peer.id) {
            let mut existing = bucket.remove(pos);
            existing.last_seen = existing.last_seen.max(peer.last_seen);
            bucket.push(existing);
            return Ok(InsertOutcome::Refreshed);
        }
        if bucket.len() < BUCKET_SIZE {
            bucket.push(peer);
            return Ok(InsertOutcome::Inserted);
        }
        // full: evict the least-recently-seen peer only if it is down
        let lru = &bucket[0];
        if is_down(&lru.did) {
            let evicted = bucket.remove(0).id;
            bucket.push(peer);
            Ok(InsertOutcome::Evicted(evicted))
        } else {
            Ok(InsertOutcome::Dropped)
        }
    }

    pub fn mark_seen(&mut self, id: NodeId, now: u64) {
        if let Some(b) = self.bucket_of(id) {
            let bucket = &mut self.buckets[b];
            if let Some(pos) = bucket.iter().position(|p| p.id == id) {
                let mut peer = bucket.remove(pos);
                peer.last_seen = peer.last_seen.max(now);
                bucket.push(peer);
            }
        }
    }

    pub fn remove(&mut self, id: NodeId) {
        if let Some(b) = self.bucket_of(id) {
            self.buckets[b].retain(|p| p.id != id);
        }
    }

    /// The `count` peers closest to `target`, ordered by (distance, DID).
    pub fn closest(&self, target: NodeId, count: usize) -> Vec<PeerRecord> {
        let mut peers: Vec<&PeerRecord> = self.buckets.iter().flatten().collect();
        peers.sort_by_key(|p| (distance(p.id, target), p.did));
        peers.into_iter().take(count).cloned().collect()
    }

    pub fn bucket(&self, index: usize) -> &[PeerRecord] {
        &self.buckets[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &PeerRecord> {
        self.buckets.iter().flatten()
    }
}

// --- records and per-node store ---

/// A signed card publication under one key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DhtRecord {
    pub key: NodeId,
    pub card: AgentCard,
    pub stored_at: u64,
    pub publisher_signature: [u8; 64],
}

impl DhtRecord {
    fn signing_bytes(key: &NodeId, card: &AgentCard, stored_at: u64) -> Vec<u8> {
        let doc = object([
            ("card", card.to_doc()),
            ("key", Value::text(hex::encode(key.0))),
            ("stored_at", Value::from(stored_at)),
        ])
        .expect("distinct keys");
        crate::doc::encode(&doc)
    }

    /// Signs a publication. The key pair must own the card's identity;
    /// records signed by anyone else are rejected everywhere.
    pub fn sign(kp: &KeyPair, key: NodeId, card: AgentCard, stored_at: u64) -> DhtRecord {
        let publisher_signature = kp.sign(&Self::signing_bytes(&key, &card, stored_at));
        DhtRecord {
            key,
            card,
            stored_at,
            publisher_signature,
        }
    }

    /// Zero-trust check: the card's identity must commit to its embedded
    /// public key, and the signature must verify under that key.
    pub fn verify(&self) -> bool {
        if Did::from_public_key(&self.card.public_key) != self.card.identity {
            return false;
        }
        crate::identity::verify(
            &self.card.public_key,
            &Self::signing_bytes(&self.key, &self.card, self.stored_at),
            &self.publisher_signature,
        )
    }

    pub fn to_doc(&self) -> Value {
        object([
            ("card", self.card.to_doc()),
            ("key", Value::text(hex::encode(self.key.0))),
            (
                "signature",
                Value::text(hex::encode(self.publisher_signature)),
            ),
            ("stored_at", Value::from(self.stored_at)),
        ])
        .expect("distinct keys")
    }

    pub fn from_doc(value: &Value) -> Option<DhtRecord> {
        let card = validate_card(value.get("card")?).ok()?;
        let key: [u8; 32] = hex::decode(value.get_text("key")?).ok()?.try_into().ok()?;
        Some(DhtRecord {
            key: NodeId(key),
            card,
            stored_at: value.get_u64("stored_at")?,
            publisher_signature: hex::decode(value.get_text("signature")?)
                .ok()?
                .try_into()
                .ok()?,
        })
    }
}

/// Per-node record store: one record per (key, publisher), newest wins.
#[derive(Debug, Clone, Default)]
pub struct DhtStore {
    records: BTreeMap<(NodeId, Did), DhtRecord>,
}

impl DhtStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, record: DhtRecord) -> Result<(), DiscoveryError> {
        if !record.verify() {
            return Err(DiscoveryError::RecordRejected);
        }
        let slot = (record.key, record.card.identity);
        match self.records.get(&slot) {
            Some(existing) if existing.stored_at > record.stored_at => {}
            _ => {
                self.records.insert(slot, record);
            }
        }
        Ok(())
    }

    pub fn get(&self, key: NodeId) -> Vec<&DhtRecord> {
        self.records
            .range((key, Did::from_digest([0; 20]))..=(key, Did::from_digest([0xff; 20])))
            .map(|(_, r)| r)
            .collect()
    }

    pub fn records(&self) -> Vec<&DhtRecord> {
        self.records.values().collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

// --- the iterative lookup state machine ---

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CandidateState {
    Fresh,
    Pending,
    Responded,
    Failed,
}

/// What a lookup is after. Record lookups stop at the first round that
/// returns records (every publisher's record replicates onto the same
/// closest-node set, so one holder has them all); node lookups run until
/// the closest candidates are exhausted, for store-target selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LookupMode {
    Record,
    Nodes,
}

/// Round-based iterative lookup over whatever transport feeds it
/// responses. Hop count equals the number of rounds issued.
#[derive(Debug, Clone)]
pub struct LookupState {
    key: NodeId,
    mode: LookupMode,
    candidates: Vec<(PeerRecord, CandidateState)>,
    records: BTreeMap<Did, DhtRecord>,
    rounds: u32,
    outstanding: BTreeSet<NodeId>,
    got_any_response: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LookupResult {
    pub records: Vec<DhtRecord>,
    pub closest: Vec<PeerRecord>,
    pub hops: u32,
    pub any_response: bool,
}

impl LookupState {
    pub fn new(key: NodeId, mode: LookupMode, seeds: Vec<PeerRecord>) -> LookupState {
        let mut state = LookupState {
            key,
            mode,
            candidates: Vec::new(),
            records: BTreeMap::new(),
            rounds: 0,
            outstanding: BTreeSet::new(),
            got_any_response: false,
        };
        for seed in seeds {
            state.add_candidate(seed);
        }
        state
    }

    pub fn key(&self) -> NodeId {
        self.key
    }

    pub fn rounds(&self) -> u32 {
        self.rounds
    }

    fn add_candidate(&mut self, peer: PeerRecord) {
        let key = (distance(peer.id, self.key), peer.did);
        let pos = self
            .candidates
            .binary_search_by_key(&key, |(p, _)| (distance(p.id, self.key), p.did));
        match pos {
            Ok(_) => {} // same distance and did: already known
            Err(insert_at) => {
                if self.candidates.iter().any(|(p, _)| p.id == peer.id) {
                    return;
                }
                self.candidates
                    .insert(insert_at, (peer, CandidateState::Fresh));
            }
        }
    }

    /// Starts the next query round: the alpha closest fresh candidates
    /// among the best [`BUCKET_SIZE`] known. Empty when the lookup has
    /// converged.
    pub fn next_round(&mut self) -> Vec<PeerRecord> {
        if !self.outstanding.is_empty() {
            return Vec::new(); // previous round still in flight
        }
        if self.mode == LookupMode::Record && !self.records.is_empty() {
            return Vec::new(); // found what we came for
        }
        let targets: Vec<PeerRecord> = self
            .candidates
            .iter()
            .filter(|(_, s)| *s != CandidateState::Failed)
            .take(BUCKET_SIZE)
            .filter(|(_, s)| *s == CandidateState::Fresh)
            .take(LOOKUP_ALPHA)
            .map(|(p, _)| p.clone())
            .collect();
        if targets.is_empty() {
            return Vec::new();
        }
        self.rounds += 1;
        for t in &targets {
            self.outstanding.insert(t.id);
            if let Some(entry) = self.candidates.iter_mut().find(|(p, _)| p.id == t.id) {
                entry.1 = CandidateState::Pending;
            }
        }
        targets
    }

    /// Feeds one peer's reply: closer peers it knows and any records it
    /// stores under the key. Unverified records must be filtered by the
    /// caller before this point.
    pub fn on_response(&mut self, from: NodeId, closer: Vec<PeerRecord>, records: Vec<DhtRecord>) {
        self.outstanding.remove(&from);
        self.got_any_response = true;
        if let Some(entry) = self.candidates.iter_mut().find(|(p, _)| p.id == from) {
            entry.1 = CandidateState::Responded;
        }
        for peer in closer {
            self.add_candidate(peer);
        }
        for record in records {
            let slot = record.card.identity;
            match self.records.get(&slot) {
                Some(existing) if existing.stored_at >= record.stored_at => {}
                _ => {
                    self.records.insert(slot, record);
                }
            }
        }
    }

    /// Marks a queried peer unresponsive.
    pub fn on_failure(&mut self, from: NodeId) {
        self.outstanding.remove(&from);
        if let Some(entry) = self.candidates.iter_mut().find(|(p, _)| p.id == from) {
            entry.1 = CandidateState::Failed;
        }
    }

    pub fn round_in_flight(&self) -> bool {
        !self.outstanding.is_empty()
    }

    pub fn outstanding(&self) -> impl Iterator<Item = &NodeId> {
        self.outstanding.iter()
    }

    pub fn finish(self) -> LookupResult {
        let closest = self
            .candidates
            .iter()
            .filter(|(_, s)| *s == CandidateState::Responded)
            .take(BUCKET_SIZE)
            .map(|(p, _)| p.clone())
            .collect();
        LookupResult {
            records: self.records.into_values().collect(),
            closest,
            hops: self.rounds,
            any_response: self.got_any_response,
        }
    }
}

// --- synchronous in-memory network ---

#[derive(Debug, Clone)]
struct MemNode {
    did: Did,
    table: RoutingTable,
    store: DhtStore,
    down: bool,
}

/// A whole DHT in one address space, queried synchronously. Used for
/// direct tests and scaling measurements; the simulated network drives the
/// same [`LookupState`] over envelopes instead.
#[derive(Debug, Clone, Default)]
pub struct InMemoryDht {
    nodes: BTreeMap<NodeId, MemNode>,
}

impl InMemoryDht {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, did: Did) -> NodeId {
        let id = NodeId::from_did(&did);
        self.nodes.insert(
            id,
            MemNode {
                did,
                table: RoutingTable::new(id),
                store: DhtStore::new(),
                down: false,
            },
        );
        id
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn set_down(&mut self, id: NodeId, down: bool) {
        if let Some(node) = self.nodes.get_mut(&id) {
            node.down = down;
        }
    }

    pub fn node_ids(&self) -> Vec<NodeId> {
        self.nodes.keys().copied().collect()
    }

    pub fn table(&self, id: NodeId) -> Option<&RoutingTable> {
        self.nodes.get(&id).map(|n| &n.table)
    }

    pub fn has_record(&self, id: NodeId, key: NodeId) -> bool {
        self.nodes
            .get(&id)
            .is_some_and(|n| !n.store.get(key).is_empty())
    }

    /// Every node learns every other node, subject to bucket capacity.
    /// Iteration order is deterministic (by node id).
    pub fn bootstrap_full(&mut self, now: u64) {
        let peers: Vec<(NodeId, Did)> = self.nodes.iter().map(|(id, n)| (*id, n.did)).collect();
        for node in self.nodes.values_mut() {
            for (id, did) in &peers {
                if *id == node.table.owner() {
                    continue;
                }
                let _ = node.table.insert(
                    PeerRecord {
                        id: *id,
                        did: *did,
                        last_seen: now,
                    },
                    |_| false,
                );
            }
        }
    }

    /// One simulated query: returns the closest peers `target` knows and
    /// (for record lookups) its stored records, or None if the target is
    /// down.
    fn query(
        &self,
        target: NodeId,
        key: NodeId,
        include_records: bool,
    ) -> Option<(Vec<PeerRecord>, Vec<DhtRecord>)> {
        let node = self.nodes.get(&target)?;
        if node.down {
            return None;
        }
        let closer = node.table.closest(key, BUCKET_SIZE);
        let records = if include_records {
            node.store.get(key).into_iter().cloned().collect()
        } else {
            Vec::new()
        };
        Some((closer, records))
    }

    /// Runs a full iterative lookup from `start`. Hop count 0 means the
    /// start node answered from its own store without querying anyone.
    pub fn lookup(
        &self,
        start: NodeId,
        key: NodeId,
        mode: LookupMode,
    ) -> Result<LookupResult, DiscoveryError> {
        let node = self
            .nodes
            .get(&start)
            .ok_or(DiscoveryError::DiscoveryUnavailable)?;
        let local: Vec<DhtRecord> = node.store.get(key).into_iter().cloned().collect();
        let seeds = node.table.closest(key, BUCKET_SIZE);
        let had_peers = !seeds.is_empty();

        let mut state = LookupState::new(key, mode, seeds);
        loop {
            let round = state.next_round();
            if round.is_empty() {
                break;
            }
            for target in round {
                match self.query(target.id, key, mode == LookupMode::Record) {
                    Some((closer, records)) => {
                        let records = records.into_iter().filter(DhtRecord::verify).collect();
                        state.on_response(target.id, closer, records);
                    }
                    None => state.on_failure(target.id),
                }
            }
        }
        let mut result = state.finish();
        for record in local {
            if !result
                .records
                .iter()
                .any(|r| r.card.identity == record.card.identity)
            {
                result.records.push(record);
            }
        }
        result
            .records
            .sort_by_key(|r| (r.card.identity, r.stored_at));
        if had_peers && !result.any_response && result.records.is_empty() {
            return Err(DiscoveryError::DiscoveryUnavailable);
        }
        Ok(result)
    }

    /// Publishes a signed record onto the [`BUCKET_SIZE`] nodes closest to
    /// its key (found iteratively) and returns where it landed.
    pub fn publish(
        &mut self,
        from: NodeId,
        record: DhtRecord,
    ) -> Result<BTreeSet<NodeId>, DiscoveryError> {
        if !record.verify() {
            return Err(DiscoveryError::RecordRejected);
        }
        let found = self.lookup(from, record.key, LookupMode::Nodes)?;
        let mut targets: Vec<NodeId> = found.closest.iter().map(|p| p.id).collect();
        // the publisher itself competes for a slot among the closest
        let mut with_self = targets.clone();
        with_self.push(from);
        with_self.sort_by_key(|id| distance(*id, record.key));
        with_self.dedup();
        targets = with_self.into_iter().take(BUCKET_SIZE).collect();
        if targets.is_empty() {
            targets.push(from);
        }

        let mut stored_on = BTreeSet::new();
        for id in targets {
            if let Some(node) = self.nodes.get_mut(&id) {
                if node.down {
                    continue;
                }
                if node.store.put(record.clone()).is_ok() {
                    stored_on.insert(id);
                }
            }
        }
        Ok(stored_on)
    }

    pub fn lookup_capability(
        &self,
        start: NodeId,
        capability: &str,
    ) -> Result<Vec<AgentCard>, DiscoveryError> {
        let result = self.lookup(
            start,
            NodeId::from_capability(capability),
            LookupMode::Record,
        )?;
        Ok(result.records.into_iter().map(|r| r.card).collect())
    }
}

// --- local broadcast bus ---

/// In-memory LAN segments for broadcast discovery. Announcements are
/// signature-checked on arrival; tampered ones are dropped silently.
#[derive(Debug, Clone, Default)]
pub struct LanBus {
    segments: BTreeMap<String, Vec<DhtRecord>>,
}

impl LanBus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn announce(&mut self, segment: &str, record: DhtRecord) {
        if !record.verify() {
            return;
        }
        let entries = self.segments.entry(segment.to_string()).or_default();
        entries.retain(|r| r.card.identity != record.card.identity);
        entries.push(record);
    }

    pub fn query(&self, segment: &str, capability: &str) -> Vec<AgentCard> {
        let Some(entries) = self.segments.get(segment) else {
            return Vec::new();
        };
        let mut cards: Vec<AgentCard> = entries
            .iter()
            .filter(|r| r.verify())
            .filter(|r| r.card.capabilities.iter().any(|c| c == capability))
            .map(|r| r.card.clone())
            .collect();
        cards.sort_by_key(|c| c.identity);
        cards
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doc::Decimal;
    use crate::semantic::ConstraintSet;

    fn kp(seed: u8) -> KeyPair {
        KeyPair::from_seed(&[seed; 32]).unwrap()
    }

    fn card_for(kp: &KeyPair, caps: &[&str]) -> AgentCard {
        AgentCard {
            identity: kp.did(),
            public_key: kp.public_key(),
            capabilities: caps.iter().map(|c| c.to_string()).collect(),
            constraints: ConstraintSet::default(),
            trust_score: Decimal::new(5, 1).unwrap(),
            interaction_count: 0,
            interface: "sim://x".into(),
        }
    }

    #[test]
    fn distance_properties() {
        let a = NodeId([0x80; 32]);
        let b = NodeId([0x00; 32]);
        assert!(distance(a, a).is_zero());
        assert_eq!(distance(a, b), distance(b, a));

        let mut top = NodeId([0; 32]);
        top.0[0] = 0x80;
        assert_eq!(distance(top, NodeId([0; 32])).msb_index(), Some(255));
        assert_eq!(
            distance(NodeId([0; 32]), {
                let mut low = NodeId([0; 32]);
                low.0[31] = 0x01;
                low
            })
            .msb_index(),
            Some(0)
        );
    }

    fn peer(seed: u8) -> PeerRecord {
        let did = kp(seed).did();
        PeerRecord {
            id: NodeId::from_did(&did),
            did,
            last_seen: 0,
        }
    }

    #[test]
    fn self_insert_rejected() {
        let me = peer(1);
        let mut table = RoutingTable::new(me.id);
        assert_eq!(
            table.insert(me, |_| false).unwrap_err(),
            DiscoveryError::SelfInsert
        );
    }

    #[test]
    fn insert_places_in_msb_bucket() {
        let me = peer(1);
        let other = peer(2);
        let mut table = RoutingTable::new(me.id);
        let expected_bucket = distance(me.id, other.id).msb_index().unwrap();
        assert_eq!(
            table.insert(other.clone(), |_| false).unwrap(),
            InsertOutcome::Inserted
        );
        assert_eq!(table.bucket(expected_bucket).len(), 1);
        assert!(table.contains(other.id));
    }

    /// Synthesizes ids that all land in one bucket of the owner to
    /// exercise the capacity rules.
    fn same_bucket_ids(owner: NodeId, count: usize) -> Vec<PeerRecord> {
        let mut out = Vec::new();
        let mut i: u64 = 0;
        while out.len() < count {
            i += 1;
            let mut id = owner;
            // flip the top bit so every candidate lands in bucket 255,
            // then vary low bytes
            id.0[0] ^= 0x80;
            id.0[24..].copy_from_slice(&i.to_be_bytes());
            let mut digest = [0u8; 20];
            digest[..8].copy_from_slice(&i.to_be_bytes());
            out.push(PeerRecord {
                id: NodeId(id.0),
                did: Did::from_digest(digest),
                last_seen: i,
            });
        }
        out
    }

    #[test]
    fn full_bucket_drops_newcomer_when_all_live() {
        let owner = NodeId([0x11; 32]);
        let mut table = RoutingTable::new(owner);
        let peers = same_bucket_ids(owner, BUCKET_SIZE + 1);
        for p in &peers[..BUCKET_SIZE] {
            assert_eq!(
                table.insert(p.clone(), |_| false).unwrap(),
                InsertOutcome::Inserted
            );
        }
        assert_eq!(
            table.insert(peers[BUCKET_SIZE].clone(), |_| false).unwrap(),
            InsertOutcome::Dropped
        );
        assert_eq!(table.len(), BUCKET_SIZE);
        assert!(!table.contains(peers[BUCKET_SIZE].id));
    }

    #[test]
    fn full_bucket_evicts_down_lru() {
        let owner = NodeId([0x11; 32]);
        let mut table = RoutingTable::new(owner);
        let peers = same_bucket_ids(owner, BUCKET_SIZE + 1);
        for p in &peers[..BUCKET_SIZE] {
            table.insert(p.clone(), |_| false).unwrap();
        }
        let lru = peers[0].clone();
        let newcomer = peers[BUCKET_SIZE].clone();
        assert_eq!(
            table
                .insert(newcomer.clone(), |did| *did == lru.did)
                .unwrap(),
            InsertOutcome::Evicted(lru.id)
        );
        assert!(table.contains(newcomer.id));
        assert!(!table.contains(lru.id));
        assert_eq!(table.len(), BUCKET_SIZE);
    }

    fn build_network(n: u8) -> (InMemoryDht, Vec<(NodeId, KeyPair)>) {
        let mut net = InMemoryDht::new();
        let mut nodes = Vec::new();
        for i in 0..n {
            let kp = kp(i + 1);
            let id = net.add_node(kp.did());
            nodes.push((id, kp));
        }
        net.bootstrap_full(0);
        (net, nodes)
    }

    #[test]
    fn single_node_lookup_is_zero_hops() {
        let kp = kp(1);
        let mut net = InMemoryDht::new();
        let id = net.add_node(kp.did());
        let card = card_for(&kp, &["market_analysis"]);
        let key = NodeId::from_capability("market_analysis");
        let record = DhtRecord::sign(&kp, key, card, 0);
        let stored = net.publish(id, record).unwrap();
        assert_eq!(stored, BTreeSet::from([id]));

        let result = net.lookup(id, key, LookupMode::Record).unwrap();
        assert_eq!(result.hops, 0);
        assert_eq!(result.records.len(), 1);
    }

    #[test]
    fn publish_then_lookup_roundtrip() {
        let (mut net, nodes) = build_network(12);
        let (pub_id, pub_kp) = &nodes[3];
        let card = card_for(pub_kp, &["web_search"]);
        let key = NodeId::from_capability("web_search");
        let stored = net
            .publish(*pub_id, DhtRecord::sign(pub_kp, key, card.clone(), 5))
            .unwrap();
        assert!(!stored.is_empty());

        let (query_id, _) = &nodes[9];
        let cards = net.lookup_capability(*query_id, "web_search").unwrap();
        assert_eq!(cards, vec![card]);

        // never-published capability: empty
        assert!(net
            .lookup_capability(*query_id, "code_gen")
            .unwrap()
            .is_empty());
    }

    #[test]
    fn forged_record_rejected_everywhere() {
        let (mut net, nodes) = build_network(6);
        let (pub_id, pub_kp) = &nodes[0];
        let victim = &nodes[1].1;
        // claim the victim's identity but sign with our key
        let card = card_for(victim, &["web_search"]);
        let key = NodeId::from_capability("web_search");
        let forged = DhtRecord::sign(pub_kp, key, card, 5);
        assert!(!forged.verify());
        assert_eq!(
            net.publish(*pub_id, forged.clone()).unwrap_err(),
            DiscoveryError::RecordRejected
        );
        let mut store = DhtStore::new();
        assert_eq!(
            store.put(forged).unwrap_err(),
            DiscoveryError::RecordRejected
        );
    }

    #[test]
    fn newer_publication_wins() {
        let (mut net, nodes) = build_network(6);
        let (id, kp) = &nodes[0];
        let key = NodeId::from_capability("web_search");
        let mut card_v1 = card_for(kp, &["web_search"]);
        card_v1.interaction_count = 1;
        let mut card_v2 = card_for(kp, &["web_search"]);
        card_v2.interaction_count = 2;
        net.publish(*id, DhtRecord::sign(kp, key, card_v1, 10))
            .unwrap();
        net.publish(*id, DhtRecord::sign(kp, key, card_v2.clone(), 20))
            .unwrap();
        let cards = net.lookup_capability(nodes[2].0, "web_search").unwrap();
        assert_eq!(cards, vec![card_v2]);
    }

    #[test]
    fn all_peers_down_is_unavailable() {
        let (mut net, nodes) = build_network(4);
        for (id, _) in &nodes[1..] {
            net.set_down(*id, true);
        }
        let err = net
            .lookup(
                nodes[0].0,
                NodeId::from_capability("anything"),
                LookupMode::Record,
            )
            .unwrap_err();
        assert_eq!(err, DiscoveryError::DiscoveryUnavailable);
    }

    #[test]
    fn lan_bus_segments_and_tampering() {
        let mut bus = LanBus::new();
        let a = kp(1);
        let b = kp(2);
        let c = kp(3);
        let key = NodeId::from_capability("web_search");
        bus.announce(
            "lan-1",
            DhtRecord::sign(&a, key, card_for(&a, &["web_search"]), 0),
        );
        bus.announce(
            "lan-1",
            DhtRecord::sign(&b, key, card_for(&b, &["web_search"]), 0),
        );
        bus.announce(
            "lan-2",
            DhtRecord::sign(&c, key, card_for(&c, &["web_search"]), 0),
        );

        let found = bus.query("lan-1", "web_search");
        assert_eq!(found.len(), 2);
        assert!(found.iter().all(|card| card.identity != c.did()));

        // tampered announcement: signature over different bytes
        let mut tampered = DhtRecord::sign(&a, key, card_for(&a, &["web_search"]), 0);
        tampered.stored_at = 99;
        bus.announce("lan-3", tampered);
        assert!(bus.query("lan-3", "web_search").is_empty());
    }
}
