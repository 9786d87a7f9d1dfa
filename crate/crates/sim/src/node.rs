//! The agent node: one event-driven runtime wiring identity, envelopes,
//! the semantic layer, negotiation, discovery, delegation, and reputation
//! into a scripted behavior.
//!
//! Zero-trust gate: under the full protocol profile no negotiation
//! message is processed from a peer that has not answered one of our
//! challenges in this run. A gated arrival is dropped and challenged; the
//! sender answers and re-sends whatever the gate swallowed (links are
//! FIFO per direction, so everything sent before the response was
//! provably dropped). Authentication is cached per peer pair for the
//! rest of the run; the verbose baseline clears the cache after every
//! accepted message instead, which is what makes it slow.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use acp_core::discovery::{
    DhtRecord, LookupMode, LookupState, NodeId, PeerRecord, RoutingTable, BUCKET_SIZE,
};
use acp_core::doc::{self, object, Value};
use acp_core::envelope::{
    open_envelope, seal, seal_unsigned, Envelope, Header, MsgType, ReplayGuard,
};
use acp_core::identity::{
    answer_challenge, issue_challenge, verify_challenge, Challenge, ConsumedNonces, Did, KeyPair,
    VerifyingKey,
};
use acp_core::negotiation::{
    make_bid, settle, AbortReason, Effect, ExecutionProof, LocalCommand, NegotiationSession,
    PricingPolicy, SessionEvent, SessionState, TimerKind, TimerRequest,
};
use acp_core::orchestration::{build_poi, verify_chain, ProofOfIntent, SubtaskStatus, TaskPlan};
use acp_core::reputation::{score_interaction, sign_entry, Ledger, ReputationEntry, ScoreWeights};
use acp_core::rng::SplitMix64;
use acp_core::semantic::{intent_digest, rank_candidates, AgentCard, Intent, IntentAction};
use sha2::{Digest, Sha256};

use crate::metrics::Note;
use crate::scenario::{BehaviorSpec, Profile};

/// Directory of every identity in the run. DIDs are self-certifying
/// (they commit to the key), so handing this out at bootstrap is just a
/// verifiable phone book, not a trust assumption.
pub type Directory = Arc<BTreeMap<Did, VerifyingKey>>;

/// Everything a node emits while handling one event. The simulation turns
/// envelopes into link transmissions and timer requests into timer
/// events.
#[derive(Debug, Default)]
pub struct Outbox {
    pub envelopes: Vec<Envelope>,
    /// (owner, fire at, node-local timer id)
    pub timers: Vec<(Did, u64, u64)>,
    pub notes: Vec<Note>,
}

#[derive(Debug, Clone)]
pub struct NodeConfig {
    pub name: String,
    pub keypair: KeyPair,
    pub card: AgentCard,
    pub behavior: BehaviorSpec,
    pub segment: String,
    pub segment_peers: Vec<Did>,
    pub exec_ms: u64,
    pub pricing: PricingPolicy,
    pub delegates_to: Option<String>,
    /// 0 = unlimited; otherwise probes beyond this many open engagements
    /// are declined.
    pub capacity: u64,
    pub profile: Profile,
    pub registry: Option<Did>,
    pub trust_anchors: BTreeSet<Did>,
    pub directory: Directory,
    pub dht_round_timeout_ms: u64,
    pub rng_seed: u64,
}

#[derive(Debug)]
enum ExecPlan {
    Local,
    Delegated { inner_plan: u64 },
}

#[derive(Debug)]
struct SessionSlot {
    machine: NegotiationSession,
    plan: Option<(u64, usize)>,
    expected_result: Option<[u8; 32]>,
    created_at: u64,
    chain: Vec<ProofOfIntent>,
    exec: Option<ExecPlan>,
    rated: bool,
}

#[derive(Debug)]
pub struct PlanRun {
    pub plan: TaskPlan,
    pub label: String,
    pub requester: Did,
    chain: Vec<ProofOfIntent>,
    pub started_at: u64,
    /// Set when this plan exists only to serve a delegated execution of
    /// an outer session.
    parent_session: Option<[u8; 16]>,
    done_noted: bool,
}

#[derive(Debug)]
enum LookupPurpose {
    Publish { record: Box<DhtRecord> },
    Candidates { plan_id: u64, subtask: usize },
    Measure,
}

#[derive(Debug)]
struct LookupRun {
    state: LookupState,
    mode: LookupMode,
    purpose: LookupPurpose,
}

#[derive(Debug, Clone)]
enum TimerPayload {
    Session {
        session_id: [u8; 16],
        kind: TimerKind,
    },
    Exec {
        session_id: [u8; 16],
    },
    LookupRound {
        lookup_id: u64,
        round: u32,
    },
}

pub struct NodeRuntime {
    pub did: Did,
    node_id: NodeId,
    cfg: NodeConfig,
    sessions: BTreeMap<[u8; 16], SessionSlot>,
    table: RoutingTable,
    store: acp_core::discovery::DhtStore,
    lan_cache: BTreeMap<Did, DhtRecord>,
    verified_peers: BTreeSet<Did>,
    pending_challenges: BTreeMap<[u8; 32], (Did, Challenge)>,
    pending_sends: BTreeMap<Did, Vec<([u8; 16], MsgType, Value)>>,
    unconfirmed: BTreeMap<Did, Vec<([u8; 16], MsgType, Value)>>,
    consumed: ConsumedNonces,
    replay: ReplayGuard,
    /// Digests of records this node already signature-checked; replicas
    /// circulate widely so each distinct record is verified once.
    verified_records: BTreeSet<[u8; 32]>,
    plans: BTreeMap<u64, PlanRun>,
    lookups: BTreeMap<u64, LookupRun>,
    seqs: BTreeMap<[u8; 16], u64>,
    timers: BTreeMap<u64, TimerPayload>,
    next_timer: u64,
    next_lookup: u64,
    next_inner_plan: u64,
    rng: SplitMix64,
    ledger: Option<Ledger>,
    weights: ScoreWeights,
}

impl NodeRuntime {
    pub fn new(cfg: NodeConfig) -> NodeRuntime {
        let did = cfg.keypair.did();
        let ledger = (cfg.behavior == BehaviorSpec::Registry).then(Ledger::new);
        NodeRuntime {
            did,
            node_id: NodeId::from_did(&did),
            rng: SplitMix64::new(cfg.rng_seed),
            cfg,
            sessions: BTreeMap::new(),
            table: RoutingTable::new(NodeId::from_did(&did)),
            store: acp_core::discovery::DhtStore::new(),
            lan_cache: BTreeMap::new(),
            verified_peers: BTreeSet::new(),
            pending_challenges: BTreeMap::new(),
            pending_sends: BTreeMap::new(),
            unconfirmed: BTreeMap::new(),
            consumed: ConsumedNonces::new(),
            replay: ReplayGuard::new(),
            verified_records: BTreeSet::new(),
            plans: BTreeMap::new(),
            lookups: BTreeMap::new(),
            seqs: BTreeMap::new(),
            timers: BTreeMap::new(),
            next_timer: 0,
            next_lookup: 0,
            next_inner_plan: 0,
            ledger,
            weights: ScoreWeights::default(),
        }
    }

    pub fn name(&self) -> &str {
        &self.cfg.name
    }

    pub fn is_registry(&self) -> bool {
        self.ledger.is_some()
    }

    pub fn ledger(&self) -> Option<&Ledger> {
        self.ledger.as_ref()
    }

    pub fn bootstrap_peer(&mut self, peer: Did) {
        let _ = self.table.insert(
            PeerRecord {
                id: NodeId::from_did(&peer),
                did: peer,
                last_seen: 0,
            },
            |_| false,
        );
    }

    /// Cards stored on this node's shard of the DHT.
    pub fn stored_records(&self) -> Vec<&DhtRecord> {
        self.store.records()
    }

    pub fn plan_runs(&self) -> impl Iterator<Item = (&u64, &PlanRun)> {
        self.plans
            .iter()
            .filter(|(_, p)| p.parent_session.is_none())
    }

    pub fn session_transcripts(&self) -> Vec<Value> {
        self.sessions
            .values()
            .map(|slot| crate::report::transcript_doc(&slot.machine))
            .collect()
    }

    fn resolve_pk(&self, did: &Did) -> Option<VerifyingKey> {
        self.cfg.directory.get(did).copied()
    }

    /// Open provider-side engagements, not counting the one being decided.
    fn at_capacity(&self, deciding: [u8; 16]) -> bool {
        if self.cfg.capacity == 0 {
            return false;
        }
        let open = self
            .sessions
            .iter()
            .filter(|(sid, slot)| {
                **sid != deciding
                    && matches!(slot.machine.role, acp_core::negotiation::Role::Provider)
                    && matches!(
                        slot.machine.state(),
                        SessionState::BidSent
                            | SessionState::CommitReceived
                            | SessionState::Executing
                    )
            })
            .count() as u64;
        open >= self.cfg.capacity
    }

    fn record_checks_out(&mut self, record: &DhtRecord) -> bool {
        let digest: [u8; 32] = Sha256::digest(doc::encode(&record.to_doc())).into();
        if self.verified_records.contains(&digest) {
            return true;
        }
        if record.verify() {
            self.verified_records.insert(digest);
            true
        } else {
            false
        }
    }

    fn next_seq(&mut self, session_id: [u8; 16]) -> u64 {
        let seq = self.seqs.entry(session_id).or_insert(0);
        let out = *seq;
        *seq += 1;
        out
    }

    fn set_timer(&mut self, at: u64, payload: TimerPayload, outbox: &mut Outbox) {
        let id = self.next_timer;
        self.next_timer += 1;
        self.timers.insert(id, payload);
        outbox.timers.push((self.did, at, id));
    }

    /// Restart after an outage: identity, routing knowledge, the ledger,
    /// and cached authentications survive; in-flight sessions, plans, and
    /// lookups do not.
    pub fn on_restart(&mut self) {
        self.sessions.clear();
        self.lookups.clear();
        self.plans.clear();
        self.pending_sends.clear();
        self.unconfirmed.clear();
        self.pending_challenges.clear();
        self.timers.clear();
    }

    // --- sealing and transport ---

    /// Wraps the application payload when the profile pads messages, and
    /// returns (wire payload, app bytes, logical payload for transcripts).
    fn wire_payload(&self, kp_header: &Header, payload: &Value) -> (Value, usize) {
        let app_len = doc::encode(payload).len();
        let Some(target) = self.cfg.profile.pad_overhead_micros() else {
            return (payload.clone(), app_len);
        };
        // trial-encode with an empty pad to size the header
        let trial = seal_unsigned(
            self.did,
            Header {
                msg_type: kp_header.msg_type,
                recipient: kp_header.recipient,
                session_id: kp_header.session_id,
                sequence: kp_header.sequence,
                sent_at: kp_header.sent_at,
            },
            object([("d", payload.clone()), ("pad", Value::text(""))]).expect("distinct keys"),
        )
        .encode()
        .len() as u64;
        let desired = app_len as u64 * 1_000_000 / (1_000_000 - target);
        let pad = desired.saturating_sub(trial) as usize;
        (
            object([
                ("d", payload.clone()),
                ("pad", Value::text("x".repeat(pad))),
            ])
            .expect("distinct keys"),
            app_len,
        )
    }

    fn unwrap_payload<'a>(&self, payload: &'a Value) -> &'a Value {
        if self.cfg.profile.pad_overhead_micros().is_some() {
            payload.get("d").unwrap_or(payload)
        } else {
            payload
        }
    }

    /// Seals (or frames, for unsigned profiles) and emits one envelope.
    /// Returns the logical digest used in transcripts: the digest of the
    /// envelope with the unwrapped payload and a zero signature for
    /// unsigned profiles, which both sides can compute identically.
    fn transmit(
        &mut self,
        recipient: Did,
        session_id: [u8; 16],
        msg_type: MsgType,
        payload: &Value,
        now: u64,
        outbox: &mut Outbox,
    ) -> [u8; 32] {
        let sequence = self.next_seq(session_id);
        let header = Header {
            msg_type,
            recipient,
            session_id,
            sequence,
            sent_at: now,
        };
        let (wire_payload, app_len) = self.wire_payload(&header, payload);
        let env = if self.cfg.profile.signed() {
            seal(&self.cfg.keypair, header, wire_payload)
        } else {
            seal_unsigned(self.did, header, wire_payload)
        };
        let env_len = env.encode().len();
        outbox.notes.push(Note::Overhead {
            micros: (env_len - app_len.min(env_len)) as u64 * 1_000_000 / env_len as u64,
        });
        let logical_digest = if self.cfg.profile.pad_overhead_micros().is_some() {
            let mut logical = env.clone();
            logical.payload = payload.clone();
            logical.digest()
        } else {
            env.digest()
        };
        outbox.envelopes.push(env);
        logical_digest
    }

    /// Gated session send: defer until the peer answered our challenge
    /// when the profile authenticates pairs up front.
    #[allow(clippy::too_many_arguments)]
    fn send_session_msg(
        &mut self,
        session_id: [u8; 16],
        recipient: Did,
        msg_type: MsgType,
        payload: Value,
        track_transcript: bool,
        now: u64,
        outbox: &mut Outbox,
    ) {
        if self.cfg.profile.caches_auth() && !self.verified_peers.contains(&recipient) {
            self.pending_sends
                .entry(recipient)
                .or_default()
                .push((session_id, msg_type, payload));
            self.challenge_peer(recipient, now, outbox);
            return;
        }
        self.seal_session_msg(
            session_id,
            recipient,
            msg_type,
            payload,
            track_transcript,
            false,
            now,
            outbox,
        );
    }

    #[allow(clippy::too_many_arguments)]
    fn seal_session_msg(
        &mut self,
        session_id: [u8; 16],
        recipient: Did,
        msg_type: MsgType,
        payload: Value,
        track_transcript: bool,
        is_resend: bool,
        now: u64,
        outbox: &mut Outbox,
    ) {
        let digest = self.transmit(recipient, session_id, msg_type, &payload, now, outbox);
        if track_transcript {
            if let Some(slot) = self.sessions.get_mut(&session_id) {
                if is_resend {
                    slot.machine.replace_outbound(msg_type, digest);
                } else {
                    slot.machine.record_outbound(msg_type, digest);
                }
            }
        }
        if self.cfg.profile.gated() {
            // remember it until the peer demonstrably has the session, so
            // a gate challenge can trigger a re-send
            self.unconfirmed
                .entry(recipient)
                .or_default()
                .push((session_id, msg_type, payload));
        }
    }

    fn send_control(
        &mut self,
        recipient: Did,
        msg_type: MsgType,
        payload: Value,
        now: u64,
        outbox: &mut Outbox,
    ) {
        let sid = control_session_id(&self.did, &recipient);
        self.transmit(recipient, sid, msg_type, &payload, now, outbox);
    }

    fn challenge_peer(&mut self, peer: Did, now: u64, outbox: &mut Outbox) {
        let challenge = issue_challenge(self.did, now, &mut self.rng);
        let payload = object([
            ("challenger", Value::text(self.did.to_string())),
            ("issued_at", Value::from(challenge.issued_at)),
            ("nonce", Value::text(hex::encode(challenge.nonce))),
        ])
        .expect("distinct keys");
        self.pending_challenges
            .insert(challenge.nonce, (peer, challenge));
        self.send_control(peer, MsgType::Challenge, payload, now, outbox);
    }

    // --- registration ---

    /// Announces the card on the local segment and publishes it into the
    /// DHT under every capability key and the agent's own DID key.
    pub fn register(&mut self, now: u64, outbox: &mut Outbox) {
        let did_record = DhtRecord::sign(
            &self.cfg.keypair,
            NodeId::from_did(&self.did),
            self.cfg.card.clone(),
            now,
        );
        let announce = object([("record", did_record.to_doc())]).expect("distinct keys");
        for peer in self.cfg.segment_peers.clone() {
            self.send_control(peer, MsgType::Announce, announce.clone(), now, outbox);
        }

        let mut keys = vec![NodeId::from_did(&self.did)];
        for cap in &self.cfg.card.capabilities {
            keys.push(NodeId::from_capability(cap));
        }
        for key in keys {
            let record = DhtRecord::sign(&self.cfg.keypair, key, self.cfg.card.clone(), now);
            self.start_lookup(
                key,
                LookupMode::Nodes,
                LookupPurpose::Publish {
                    record: Box::new(record),
                },
                now,
                outbox,
            );
        }
    }

    // --- lookups ---

    fn start_lookup(
        &mut self,
        key: NodeId,
        mode: LookupMode,
        purpose: LookupPurpose,
        now: u64,
        outbox: &mut Outbox,
    ) {
        let seeds = self.table.closest(key, BUCKET_SIZE);
        let id = self.next_lookup;
        self.next_lookup += 1;
        self.lookups.insert(
            id,
            LookupRun {
                state: LookupState::new(key, mode, seeds),
                mode,
                purpose,
            },
        );
        self.advance_lookup(id, now, outbox);
    }

    fn advance_lookup(&mut self, id: u64, now: u64, outbox: &mut Outbox) {
        let Some(run) = self.lookups.get_mut(&id) else {
            return;
        };
        if run.state.round_in_flight() {
            return;
        }
        let targets = run.state.next_round();
        if targets.is_empty() {
            self.finish_lookup(id, now, outbox);
            return;
        }
        let key = run.state.key();
        let round = run.state.rounds();
        let want = match run.mode {
            LookupMode::Record => "records",
            LookupMode::Nodes => "nodes",
        };
        let payload = object([
            ("key", Value::text(hex::encode(key.0))),
            ("lookup", Value::text(format!("{id:016x}"))),
            ("want", Value::text(want)),
        ])
        .expect("distinct keys");
        for target in targets {
            self.send_control(target.did, MsgType::DhtFind, payload.clone(), now, outbox);
        }
        self.set_timer(
            now + self.cfg.dht_round_timeout_ms,
            TimerPayload::LookupRound {
                lookup_id: id,
                round,
            },
            outbox,
        );
    }

    fn finish_lookup(&mut self, id: u64, now: u64, outbox: &mut Outbox) {
        let Some(run) = self.lookups.remove(&id) else {
            return;
        };
        let key = run.state.key();
        let result = run.state.finish();
        match run.purpose {
            LookupPurpose::Publish { record } => {
                let mut targets: Vec<NodeId> = result.closest.iter().map(|p| p.id).collect();
                targets.push(self.node_id);
                targets.sort_by_key(|id| acp_core::discovery::distance(*id, key));
                targets.dedup();
                targets.truncate(BUCKET_SIZE);
                let payload = object([("record", record.to_doc())]).expect("distinct keys");
                let dids: Vec<Did> = targets
                    .iter()
                    .filter_map(|t| {
                        result
                            .closest
                            .iter()
                            .find(|p| p.id == *t)
                            .map(|p| p.did)
                            .or((*t == self.node_id).then_some(self.did))
                    })
                    .collect();
                for did in dids {
                    if did == self.did {
                        let _ = self.store.put((*record).clone());
                    } else {
                        self.send_control(did, MsgType::DhtStore, payload.clone(), now, outbox);
                    }
                }
            }
            LookupPurpose::Candidates { plan_id, subtask } => {
                outbox.notes.push(Note::LookupDone { hops: result.hops });
                let mut records: BTreeMap<Did, DhtRecord> = BTreeMap::new();
                let mut add = |record: DhtRecord| match records.get(&record.card.identity) {
                    Some(existing) if existing.stored_at >= record.stored_at => {}
                    _ => {
                        records.insert(record.card.identity, record);
                    }
                };
                for record in result.records {
                    add(record);
                }
                for record in self.store.get(key) {
                    add(record.clone());
                }
                for record in self.lan_cache.values() {
                    add(record.clone());
                }
                let cards: Vec<AgentCard> = records.into_values().map(|r| r.card).collect();
                self.assign_subtask(plan_id, subtask, &cards, now, outbox);
            }
            LookupPurpose::Measure => {
                outbox.notes.push(Note::LookupDone { hops: result.hops });
            }
        }
    }

    /// An operator-injected bare lookup, for discovery measurements.
    pub fn start_measure_lookup(&mut self, capability: &str, now: u64, outbox: &mut Outbox) {
        self.start_lookup(
            NodeId::from_capability(capability),
            LookupMode::Record,
            LookupPurpose::Measure,
            now,
            outbox,
        );
    }

    // --- plans ---

    pub fn start_plan(
        &mut self,
        plan_id: u64,
        label: String,
        chain: Vec<ProofOfIntent>,
        plan: TaskPlan,
        now: u64,
        outbox: &mut Outbox,
    ) {
        let count = plan.subtasks.len();
        self.plans.insert(
            plan_id,
            PlanRun {
                plan,
                label,
                requester: self.did,
                chain,
                started_at: now,
                parent_session: None,
                done_noted: false,
            },
        );
        for idx in 0..count {
            self.start_subtask(plan_id, idx, now, outbox);
        }
    }

    fn start_subtask(&mut self, plan_id: u64, idx: usize, now: u64, outbox: &mut Outbox) {
        let Some(run) = self.plans.get(&plan_id) else {
            return;
        };
        let capability = run.plan.subtasks[idx].intent.capability.clone();
        self.start_lookup(
            NodeId::from_capability(&capability),
            LookupMode::Record,
            LookupPurpose::Candidates {
                plan_id,
                subtask: idx,
            },
            now,
            outbox,
        );
    }

    fn assign_subtask(
        &mut self,
        plan_id: u64,
        idx: usize,
        cards: &[AgentCard],
        now: u64,
        outbox: &mut Outbox,
    ) {
        let Some(run) = self.plans.get(&plan_id) else {
            return;
        };
        if run.plan.subtasks[idx].status != SubtaskStatus::Unassigned {
            return;
        }
        let intent = run.plan.subtasks[idx].intent.clone();
        let excluded = run.plan.subtasks[idx].excluded.clone();
        let ranked = rank_candidates(cards, &intent);
        let choice = ranked
            .into_iter()
            .find(|c| c.identity != self.did && !excluded.contains(&c.identity));
        let Some(card) = choice else {
            self.fail_subtask_unservable(plan_id, idx, now, outbox);
            return;
        };

        // extend the proof-of-intent chain by one link for this provider
        let parent = run.chain.last().cloned();
        let child = build_poi(
            &self.cfg.keypair,
            intent_digest(&intent),
            card.identity,
            parent.as_ref(),
        );
        let Ok(child) = child else {
            self.fail_subtask_unservable(plan_id, idx, now, outbox);
            return;
        };
        let mut chain = run.chain.clone();
        chain.push(child);

        let session_id: [u8; 16] = self.rng.next_array();
        let machine = NegotiationSession::new_requester(session_id, card.identity);
        let expected = run.plan.subtasks[idx].expected_result;
        self.sessions.insert(
            session_id,
            SessionSlot {
                machine,
                plan: Some((plan_id, idx)),
                expected_result: expected,
                created_at: now,
                chain: chain.clone(),
                exec: None,
                rated: false,
            },
        );
        if let Some(run) = self.plans.get_mut(&plan_id) {
            run.plan.mark_negotiating(idx, card.identity, session_id);
            run.plan.subtasks[idx].poi_depth = chain.last().map(|l| l.depth).unwrap_or(0);
        }
        let payload = object([
            ("intent", intent.to_doc()),
            ("poi", acp_core::orchestration::chain_to_doc(&chain)),
        ])
        .expect("distinct keys");
        self.run_step(
            session_id,
            SessionEvent::Command(LocalCommand::SendProbe { intent, payload }),
            now,
            outbox,
        );
    }

    fn fail_subtask_unservable(&mut self, plan_id: u64, idx: usize, now: u64, outbox: &mut Outbox) {
        if let Some(run) = self.plans.get_mut(&plan_id) {
            run.plan.subtasks[idx].status = SubtaskStatus::Failed;
            run.plan.status = acp_core::orchestration::PlanStatus::Failed;
        }
        self.conclude_plan(plan_id, now, outbox);
    }

    fn plan_subtask_done(&mut self, plan_id: u64, idx: usize, now: u64, outbox: &mut Outbox) {
        if let Some(run) = self.plans.get_mut(&plan_id) {
            run.plan.complete_subtask(idx);
        }
        self.conclude_plan(plan_id, now, outbox);
    }

    fn plan_subtask_failed(&mut self, plan_id: u64, idx: usize, now: u64, outbox: &mut Outbox) {
        let action = match self.plans.get_mut(&plan_id) {
            Some(run) => run.plan.on_failure(idx),
            None => return,
        };
        match action {
            acp_core::orchestration::FailureAction::Retry => {
                self.start_subtask(plan_id, idx, now, outbox);
            }
            acp_core::orchestration::FailureAction::PlanFailed => {
                self.conclude_plan(plan_id, now, outbox);
            }
        }
    }

    /// Emits the outcome note once a plan reaches a terminal status, or
    /// completes the outer execution for delegated inner plans.
    fn conclude_plan(&mut self, plan_id: u64, now: u64, outbox: &mut Outbox) {
        let Some(run) = self.plans.get_mut(&plan_id) else {
            return;
        };
        let status = run.plan.status;
        if status == acp_core::orchestration::PlanStatus::Active || run.done_noted {
            return;
        }
        run.done_noted = true;
        let parent = run.parent_session;
        match parent {
            Some(outer_sid) => {
                if status == acp_core::orchestration::PlanStatus::Complete {
                    self.complete_execution(outer_sid, now, outbox);
                }
                // failed inner plans leave the outer session to its
                // deadline; the outer requester renegotiates from there
            }
            None => {
                let doc = crate::report::plan_doc(run, now);
                let note = if status == acp_core::orchestration::PlanStatus::Complete {
                    Note::PlanCompleted { plan_id, doc }
                } else {
                    Note::PlanFailed { plan_id, doc }
                };
                outbox.notes.push(note);
            }
        }
    }

    pub fn unresolved_plan_docs(&mut self, now: u64) -> Vec<(u64, Value)> {
        let mut out = Vec::new();
        for (id, run) in self.plans.iter_mut() {
            if run.parent_session.is_none() && !run.done_noted {
                run.done_noted = true;
                out.push((*id, crate::report::plan_doc(run, now)));
            }
        }
        out
    }

    // --- the session step driver ---

    fn run_step(
        &mut self,
        session_id: [u8; 16],
        event: SessionEvent<'_>,
        now: u64,
        outbox: &mut Outbox,
    ) {
        let Some(slot) = self.sessions.get_mut(&session_id) else {
            return;
        };
        let peer = slot.machine.peer;
        let out = slot.machine.step(event, now);
        for msg in out.outbound {
            self.send_session_msg(
                session_id,
                peer,
                msg.msg_type,
                msg.payload,
                true,
                now,
                outbox,
            );
        }
        for TimerRequest { kind, at } in out.timers {
            self.set_timer(at, TimerPayload::Session { session_id, kind }, outbox);
        }
        for effect in out.effects {
            self.apply_effect(session_id, effect, now, outbox);
        }
    }

    fn apply_effect(&mut self, sid: [u8; 16], effect: Effect, now: u64, outbox: &mut Outbox) {
        match effect {
            Effect::ProbeReceived { intent, payload } => {
                self.on_probe_effect(sid, intent, payload, now, outbox)
            }
            Effect::BidReceived(_) => {
                // top-ranked candidate already chosen at discovery time;
                // a conforming bid is accepted outright
                self.run_step(
                    sid,
                    SessionEvent::Command(LocalCommand::AcceptBid),
                    now,
                    outbox,
                );
                self.run_step(
                    sid,
                    SessionEvent::Command(LocalCommand::BeginAwait),
                    now,
                    outbox,
                );
            }
            Effect::Committed { .. } => {}
            Effect::CommitVerified { .. } => {
                self.run_step(
                    sid,
                    SessionEvent::Command(LocalCommand::StartExecute),
                    now,
                    outbox,
                );
            }
            Effect::ExecutionStarted => self.on_execution_started(sid, now, outbox),
            Effect::SettlementDue { result, proof } => {
                self.on_settlement_due(sid, result, proof, now, outbox)
            }
            Effect::RatingReceived { .. } | Effect::ClosedUnrated => {
                if let Some(slot) = self.sessions.get(&sid) {
                    outbox.notes.push(Note::SessionViolations {
                        count: slot.machine.violations(),
                    });
                }
                self.clear_unconfirmed_session(sid);
            }
            Effect::Aborted(reason) => self.on_session_aborted(sid, reason, now, outbox),
            Effect::ProtocolViolation(_) => {}
        }
    }

    fn on_probe_effect(
        &mut self,
        sid: [u8; 16],
        intent: Intent,
        payload: Value,
        now: u64,
        outbox: &mut Outbox,
    ) {
        let peer = match self.sessions.get(&sid) {
            Some(slot) => slot.machine.peer,
            None => return,
        };
        // zero-trust: the probe must carry a proof-of-intent chain that
        // verifies to a configured anchor, names the sender as its
        // authorizer, ourselves as delegatee, and this exact intent
        let chain = payload
            .get("poi")
            .and_then(acp_core::orchestration::chain_from_doc);
        let chain_ok = chain.as_ref().is_some_and(|chain| {
            verify_chain(chain, &self.cfg.trust_anchors, |did| self.resolve_pk(did)).is_ok()
                && chain.last().is_some_and(|leaf| {
                    leaf.delegatee == self.did
                        && leaf.authorizer == peer
                        && leaf.intent_digest == intent_digest(&intent)
                })
        });
        let command = if !chain_ok {
            outbox.notes.push(Note::PoiReject);
            LocalCommand::DeclineProbe(acp_core::negotiation::DeclineReason::PoiRejected)
        } else if !self
            .cfg
            .card
            .capabilities
            .iter()
            .any(|c| c == &intent.capability)
        {
            LocalCommand::DeclineProbe(acp_core::negotiation::DeclineReason::CapabilityUnavailable)
        } else if self.at_capacity(sid) {
            LocalCommand::DeclineProbe(acp_core::negotiation::DeclineReason::Other(
                "at_capacity".into(),
            ))
        } else {
            match make_bid(&intent, &self.cfg.card, &self.cfg.pricing, now) {
                Ok(bid) => {
                    if let Some(slot) = self.sessions.get_mut(&sid) {
                        slot.chain = chain.unwrap_or_default();
                    }
                    LocalCommand::SubmitBid(bid)
                }
                Err(reason) => LocalCommand::DeclineProbe(reason),
            }
        };
        self.run_step(sid, SessionEvent::Command(command), now, outbox);
    }

    fn on_execution_started(&mut self, sid: [u8; 16], now: u64, outbox: &mut Outbox) {
        let delegate_cap = self.cfg.delegates_to.clone();
        match delegate_cap {
            None => {
                if let Some(slot) = self.sessions.get_mut(&sid) {
                    slot.exec = Some(ExecPlan::Local);
                }
                self.set_timer(
                    now + self.cfg.exec_ms,
                    TimerPayload::Exec { session_id: sid },
                    outbox,
                );
            }
            Some(capability) => {
                // recursive delegation: become a requester for the inner
                // capability, extending the proof-of-intent chain
                let Some(slot) = self.sessions.get(&sid) else {
                    return;
                };
                let outer_intent = slot.machine.intent.clone();
                let parameters = outer_intent
                    .map(|i| i.parameters)
                    .unwrap_or_else(Value::empty_map);
                let chain = slot.chain.clone();
                let Ok(inner_intent) = Intent::new(
                    IntentAction::Execute,
                    capability,
                    parameters,
                    Default::default(),
                ) else {
                    return;
                };
                let inner_id = 0x8000_0000_0000_0000 | self.next_inner_plan;
                self.next_inner_plan += 1;
                if let Some(slot) = self.sessions.get_mut(&sid) {
                    slot.exec = Some(ExecPlan::Delegated {
                        inner_plan: inner_id,
                    });
                }
                let plan = TaskPlan::new(
                    inner_intent.clone(),
                    vec![acp_core::orchestration::Subtask::new(inner_intent, None)],
                    1,
                    true,
                );
                self.plans.insert(
                    inner_id,
                    PlanRun {
                        plan,
                        label: format!("inner-{:x}", inner_id & 0xffff),
                        requester: self.did,
                        chain,
                        started_at: now,
                        parent_session: Some(sid),
                        done_noted: false,
                    },
                );
                self.start_subtask(inner_id, 0, now, outbox);
            }
        }
    }

    fn complete_execution(&mut self, sid: [u8; 16], now: u64, outbox: &mut Outbox) {
        let Some(slot) = self.sessions.get(&sid) else {
            return;
        };
        if slot.machine.state() != SessionState::Executing {
            return;
        }
        let Some(sla) = slot.machine.sla.clone() else {
            return;
        };
        let Some(commit) = slot.machine.commit_digest() else {
            return;
        };
        let result = execution_result_doc(&sla.capability, &sla.parameters_digest);
        let digest: [u8; 32] = Sha256::digest(doc::encode(&result)).into();
        let proof = ExecutionProof::sign(&self.cfg.keypair, digest, commit, now);
        self.run_step(
            sid,
            SessionEvent::Command(LocalCommand::CompleteExecution { result, proof }),
            now,
            outbox,
        );
    }

    fn on_settlement_due(
        &mut self,
        sid: [u8; 16],
        result: Value,
        proof: ExecutionProof,
        now: u64,
        outbox: &mut Outbox,
    ) {
        let Some(slot) = self.sessions.get_mut(&sid) else {
            return;
        };
        let peer = slot.machine.peer;
        let Some(peer_pk) = self.cfg.directory.get(&peer).copied() else {
            return;
        };
        let expected = slot.expected_result;
        let created = slot.created_at;
        let plan_link = slot.plan;
        match settle(&mut slot.machine, &result, &proof, &peer_pk, expected, now) {
            Ok(report) => {
                outbox.notes.push(Note::NegotiationSettled {
                    e2e_ms: now.saturating_sub(created),
                });
                outbox.notes.push(Note::SessionViolations {
                    count: report.violations,
                });
                let scores = score_interaction(&report, &self.weights);
                let entry = sign_entry(&self.cfg.keypair, peer, sid, &scores, now);
                slot.rated = true;
                // drop stale pre-settlement messages from the resend list
                // before queueing the rating, which must survive a gate
                // challenge from the registry
                self.clear_unconfirmed_session(sid);
                self.send_session_msg(sid, peer, MsgType::Rate, entry.to_doc(), true, now, outbox);
                self.submit_rating(entry, sid, now, outbox);
                if let Some((plan_id, idx)) = plan_link {
                    if report.accuracy_ok {
                        self.plan_subtask_done(plan_id, idx, now, outbox);
                    } else {
                        self.plan_subtask_failed(plan_id, idx, now, outbox);
                    }
                }
            }
            Err(acp_core::negotiation::NegotiationError::SlaExpired) => {
                // settle() aborted the session; the abort path below rates
                // the provider and consults the retry policy
                self.after_commit_abort(sid, now, outbox);
                if let Some((plan_id, idx)) = plan_link {
                    self.plan_subtask_failed(plan_id, idx, now, outbox);
                }
            }
            Err(_) => {
                // mismatched or unverifiable proof: security event; the
                // deadline timer will abort the session
                outbox.notes.push(Note::TamperReject);
            }
        }
    }

    fn on_session_aborted(
        &mut self,
        sid: [u8; 16],
        reason: AbortReason,
        now: u64,
        outbox: &mut Outbox,
    ) {
        let (violations, plan_link, is_requester, inner) = match self.sessions.get(&sid) {
            Some(slot) => (
                slot.machine.violations(),
                slot.plan,
                matches!(slot.machine.role, acp_core::negotiation::Role::Requester),
                match slot.exec {
                    Some(ExecPlan::Delegated { inner_plan }) => Some(inner_plan),
                    _ => None,
                },
            ),
            None => return,
        };
        outbox
            .notes
            .push(Note::SessionViolations { count: violations });
        // drop the dead session's messages from the resend list first;
        // the abort rating queued below must survive a gate challenge
        self.clear_unconfirmed_session(sid);
        if is_requester {
            self.after_commit_abort(sid, now, outbox);
            if let Some((plan_id, idx)) = plan_link {
                if matches!(reason, AbortReason::Declined(_)) {
                    // a decline is a negotiation outcome, not a failure:
                    // exclude the provider and requeue without touching
                    // the retry budget
                    if let Some(run) = self.plans.get_mut(&plan_id) {
                        run.plan.on_decline(idx);
                    }
                    self.start_subtask(plan_id, idx, now, outbox);
                } else {
                    self.plan_subtask_failed(plan_id, idx, now, outbox);
                }
            }
        }
        // a dead outer session makes its delegated inner work moot
        if let Some(inner_plan) = inner {
            self.plans.remove(&inner_plan);
        }
    }

    /// A commitment existed but the engagement died: score the provider
    /// for the ledger (accuracy zero, full latency penalty).
    fn after_commit_abort(&mut self, sid: [u8; 16], now: u64, outbox: &mut Outbox) {
        let Some(slot) = self.sessions.get_mut(&sid) else {
            return;
        };
        if slot.rated || slot.machine.commit_digest().is_none() {
            return;
        }
        slot.rated = true;
        let peer = slot.machine.peer;
        let violations = slot.machine.violations();
        let report = acp_core::negotiation::SettlementReport {
            accuracy_ok: false,
            latency_ratio_micros: 2_000_000,
            violations,
        };
        let scores = score_interaction(&report, &self.weights);
        let entry = sign_entry(&self.cfg.keypair, peer, sid, &scores, now);
        self.submit_rating(entry, sid, now, outbox);
    }

    fn submit_rating(
        &mut self,
        entry: ReputationEntry,
        sid: [u8; 16],
        now: u64,
        outbox: &mut Outbox,
    ) {
        match self.cfg.registry {
            Some(registry) if registry == self.did => {
                let ok = self.append_ledger_entry(entry, self.did);
                outbox.notes.push(Note::LedgerAppend { ok });
            }
            Some(registry) => {
                if self.cfg.profile.caches_auth() && !self.verified_peers.contains(&registry) {
                    self.pending_sends.entry(registry).or_default().push((
                        sid,
                        MsgType::Rate,
                        entry.to_doc(),
                    ));
                    self.challenge_peer(registry, now, outbox);
                } else {
                    self.seal_session_msg(
                        sid,
                        registry,
                        MsgType::Rate,
                        entry.to_doc(),
                        false,
                        false,
                        now,
                        outbox,
                    );
                }
            }
            None => {}
        }
    }

    fn append_ledger_entry(&mut self, entry: ReputationEntry, sender: Did) -> bool {
        let Some(rater_pk) = self.cfg.directory.get(&entry.rater).copied() else {
            return false;
        };
        let Some(ledger) = self.ledger.as_mut() else {
            return false;
        };
        // the authenticated sender must be the rater (requester) itself
        ledger.append(entry, &rater_pk, Some(sender)).is_ok()
    }

    fn clear_unconfirmed_session(&mut self, sid: [u8; 16]) {
        for list in self.unconfirmed.values_mut() {
            list.retain(|(s, _, _)| *s != sid);
        }
    }

    // --- inbound dispatch ---

    pub fn handle_envelope(&mut self, env: &Envelope, now: u64, outbox: &mut Outbox) {
        if env.recipient != self.did {
            return;
        }
        if self.replay.check_and_record(env).is_err() {
            outbox.notes.push(Note::ReplayReject);
            return;
        }
        if self.cfg.profile.signed() {
            let Some(pk) = self.resolve_pk(&env.sender) else {
                outbox.notes.push(Note::TamperReject);
                return;
            };
            if open_envelope(env, &pk).is_err() {
                outbox.notes.push(Note::TamperReject);
                return;
            }
        } else if env.version != acp_core::envelope::ENVELOPE_VERSION {
            outbox.notes.push(Note::TamperReject);
            return;
        }
        let payload = self.unwrap_payload(&env.payload).clone();

        match env.msg_type {
            MsgType::Challenge => self.on_challenge(env.sender, &payload, now, outbox),
            MsgType::ChallengeResponse => {
                self.on_challenge_response(env.sender, &payload, now, outbox)
            }
            MsgType::Announce => self.on_announce(&payload, outbox),
            MsgType::DhtFind => self.on_dht_find(env.sender, &payload, now, outbox),
            MsgType::DhtReply => self.on_dht_reply(env.sender, &payload, now, outbox),
            MsgType::DhtStore => self.on_dht_store(&payload, outbox),
            MsgType::Probe
            | MsgType::Bid
            | MsgType::Commit
            | MsgType::Decline
            | MsgType::Result
            | MsgType::Rate
            | MsgType::Abort => self.on_session_envelope(env, payload, now, outbox),
        }
    }

    fn on_challenge(&mut self, sender: Did, payload: &Value, now: u64, outbox: &mut Outbox) {
        let parsed = payload
            .get_text("challenger")
            .and_then(|c| Did::parse(c).ok())
            .zip(payload.get_u64("issued_at"))
            .zip(
                payload
                    .get_text("nonce")
                    .and_then(|n| hex::decode(n).ok())
                    .and_then(|n| <[u8; 32]>::try_from(n).ok()),
            );
        let Some(((challenger, issued_at), nonce)) = parsed else {
            outbox.notes.push(Note::TamperReject);
            return;
        };
        if challenger != sender {
            outbox.notes.push(Note::TamperReject);
            return;
        }
        let challenge = Challenge {
            nonce,
            issued_at,
            challenger,
        };
        let signature = answer_challenge(&self.cfg.keypair, &challenge);
        let response = object([
            ("nonce", Value::text(hex::encode(nonce))),
            ("signature", Value::text(hex::encode(signature))),
        ])
        .expect("distinct keys");
        self.send_control(sender, MsgType::ChallengeResponse, response, now, outbox);

        // a challenge proves the peer's gate swallowed everything we sent
        // it so far (links are FIFO); re-send after the response
        let queued = self.unconfirmed.remove(&sender).unwrap_or_default();
        for (sid, msg_type, payload) in queued {
            let live = self
                .sessions
                .get(&sid)
                .is_some_and(|slot| !slot.machine.state().is_terminal())
                || msg_type == MsgType::Rate;
            if live {
                let track = self
                    .sessions
                    .get(&sid)
                    .is_some_and(|s| s.machine.peer == sender);
                self.seal_session_msg(sid, sender, msg_type, payload, track, true, now, outbox);
            }
        }
    }

    fn on_challenge_response(
        &mut self,
        sender: Did,
        payload: &Value,
        now: u64,
        outbox: &mut Outbox,
    ) {
        let parsed = payload
            .get_text("nonce")
            .and_then(|n| hex::decode(n).ok())
            .and_then(|n| <[u8; 32]>::try_from(n).ok())
            .zip(
                payload
                    .get_text("signature")
                    .and_then(|s| hex::decode(s).ok())
                    .and_then(|s| <[u8; 64]>::try_from(s).ok()),
            );
        let Some((nonce, signature)) = parsed else {
            outbox.notes.push(Note::TamperReject);
            return;
        };
        let Some((expected_responder, challenge)) = self.pending_challenges.remove(&nonce) else {
            outbox.notes.push(Note::ReplayReject);
            return;
        };
        if expected_responder != sender {
            outbox.notes.push(Note::TamperReject);
            return;
        }
        let Some(pk) = self.resolve_pk(&sender) else {
            outbox.notes.push(Note::TamperReject);
            return;
        };
        if verify_challenge(&pk, &challenge, &signature, &mut self.consumed, now).is_err() {
            outbox.notes.push(Note::TamperReject);
            return;
        }
        self.verified_peers.insert(sender);
        let queued = self.pending_sends.remove(&sender).unwrap_or_default();
        for (sid, msg_type, payload) in queued {
            // only messages to the session's actual peer belong in its
            // transcript; ledger copies to the registry do not
            let track_transcript = self
                .sessions
                .get(&sid)
                .is_some_and(|s| s.machine.peer == sender);
            self.seal_session_msg(
                sid,
                sender,
                msg_type,
                payload,
                track_transcript,
                false,
                now,
                outbox,
            );
        }
    }

    fn on_announce(&mut self, payload: &Value, outbox: &mut Outbox) {
        let Some(record) = payload.get("record").and_then(DhtRecord::from_doc) else {
            outbox.notes.push(Note::StoreReject);
            return;
        };
        if !self.record_checks_out(&record) {
            outbox.notes.push(Note::StoreReject);
            return;
        }
        match self.lan_cache.get(&record.card.identity) {
            Some(existing) if existing.stored_at > record.stored_at => {}
            _ => {
                self.lan_cache.insert(record.card.identity, record);
            }
        }
    }

    fn on_dht_find(&mut self, sender: Did, payload: &Value, now: u64, outbox: &mut Outbox) {
        let key = payload
            .get_text("key")
            .and_then(|k| hex::decode(k).ok())
            .and_then(|k| <[u8; 32]>::try_from(k).ok());
        let (Some(key), Some(lookup)) = (key, payload.get_text("lookup")) else {
            outbox.notes.push(Note::TamperReject);
            return;
        };
        let key = NodeId(key);
        let _ = self.table.insert(
            PeerRecord {
                id: NodeId::from_did(&sender),
                did: sender,
                last_seen: now,
            },
            |_| false,
        );
        let closer: Vec<Value> = self
            .table
            .closest(key, BUCKET_SIZE)
            .into_iter()
            .map(|p| Value::text(p.did.to_string()))
            .collect();
        let records: Vec<Value> = if payload.get_text("want") == Some("nodes") {
            Vec::new()
        } else {
            self.store.get(key).iter().map(|r| r.to_doc()).collect()
        };
        let reply = object([
            ("closer", Value::Seq(closer)),
            ("key", Value::text(hex::encode(key.0))),
            ("lookup", Value::text(lookup)),
            ("records", Value::Seq(records)),
        ])
        .expect("distinct keys");
        self.send_control(sender, MsgType::DhtReply, reply, now, outbox);
    }

    fn on_dht_reply(&mut self, sender: Did, payload: &Value, now: u64, outbox: &mut Outbox) {
        let Some(lookup_id) = payload
            .get_text("lookup")
            .and_then(|l| u64::from_str_radix(l, 16).ok())
        else {
            return;
        };
        if !self.lookups.contains_key(&lookup_id) {
            return; // lookup already finished or timed out
        }
        let closer: Vec<PeerRecord> = payload
            .get("closer")
            .and_then(Value::as_seq)
            .map(|seq| {
                seq.iter()
                    .filter_map(Value::as_text)
                    .filter_map(|t| Did::parse(t).ok())
                    .map(|did| PeerRecord {
                        id: NodeId::from_did(&did),
                        did,
                        last_seen: now,
                    })
                    .collect()
            })
            .unwrap_or_default();
        let self_id = self.node_id;
        let closer = closer.into_iter().filter(|p| p.id != self_id).collect();
        let raw_records: Vec<DhtRecord> = payload
            .get("records")
            .and_then(Value::as_seq)
            .map(|seq| seq.iter().filter_map(DhtRecord::from_doc).collect())
            .unwrap_or_default();
        let records: Vec<DhtRecord> = raw_records
            .into_iter()
            .filter(|r| self.record_checks_out(r))
            .collect();
        if let Some(run) = self.lookups.get_mut(&lookup_id) {
            run.state
                .on_response(NodeId::from_did(&sender), closer, records);
        }
        self.advance_lookup(lookup_id, now, outbox);
    }

    fn on_dht_store(&mut self, payload: &Value, outbox: &mut Outbox) {
        let Some(record) = payload.get("record").and_then(DhtRecord::from_doc) else {
            outbox.notes.push(Note::StoreReject);
            return;
        };
        if self.store.put(record).is_err() {
            outbox.notes.push(Note::StoreReject);
        }
    }

    fn on_session_envelope(
        &mut self,
        env: &Envelope,
        payload: Value,
        now: u64,
        outbox: &mut Outbox,
    ) {
        // the zero-trust gate: negotiation traffic only from peers that
        // answered one of our challenges
        if self.cfg.profile.gated() && !self.verified_peers.contains(&env.sender) {
            outbox.notes.push(Note::GateDrop);
            self.challenge_peer(env.sender, now, outbox);
            return;
        }
        if !self.cfg.profile.caches_auth() {
            self.verified_peers.remove(&env.sender);
        }

        // ledger path: a rating addressed to the registry outside any of
        // its own sessions
        if env.msg_type == MsgType::Rate
            && self.is_registry()
            && !self.sessions.contains_key(&env.session_id)
        {
            let ok = ReputationEntry::from_doc(&payload)
                .filter(|entry| entry.rater == env.sender)
                .map(|entry| self.append_ledger_entry(entry, env.sender))
                .unwrap_or(false);
            outbox.notes.push(Note::LedgerAppend { ok });
            return;
        }

        if let std::collections::btree_map::Entry::Vacant(slot) =
            self.sessions.entry(env.session_id)
        {
            if env.msg_type != MsgType::Probe {
                // stray traffic for an unknown or already-reaped session
                return;
            }
            slot.insert(SessionSlot {
                machine: NegotiationSession::new_provider(env.session_id, env.sender),
                plan: None,
                expected_result: None,
                created_at: now,
                chain: Vec::new(),
                exec: None,
                rated: false,
            });
        }

        // the peer demonstrably has this session; stop re-sending its
        // messages on future challenges
        if let Some(list) = self.unconfirmed.get_mut(&env.sender) {
            list.retain(|(sid, _, _)| *sid != env.session_id);
        }

        // hand the machine a logical envelope: unwrapped payload, and the
        // signature zeroed for unsigned profiles so both sides record the
        // same transcript digests
        let logical = if self.cfg.profile.pad_overhead_micros().is_some() {
            let mut logical = env.clone();
            logical.payload = payload;
            logical
        } else {
            env.clone()
        };
        self.run_step(
            env.session_id,
            SessionEvent::Envelope(&logical),
            now,
            outbox,
        );
    }

    // --- timers and injections ---

    pub fn handle_timer(&mut self, timer_id: u64, now: u64, outbox: &mut Outbox) {
        let Some(payload) = self.timers.remove(&timer_id) else {
            return;
        };
        match payload {
            TimerPayload::Session { session_id, kind } => {
                self.run_step(session_id, SessionEvent::Timer(kind), now, outbox);
            }
            TimerPayload::Exec { session_id } => {
                let local = self
                    .sessions
                    .get(&session_id)
                    .is_some_and(|s| matches!(s.exec, Some(ExecPlan::Local)));
                if local {
                    self.complete_execution(session_id, now, outbox);
                }
            }
            TimerPayload::LookupRound { lookup_id, round } => {
                let Some(run) = self.lookups.get_mut(&lookup_id) else {
                    return;
                };
                if run.state.rounds() != round || !run.state.round_in_flight() {
                    return; // the round completed before the timer fired
                }
                let outstanding: Vec<NodeId> = run.state.outstanding().copied().collect();
                for peer in outstanding {
                    run.state.on_failure(peer);
                }
                self.advance_lookup(lookup_id, now, outbox);
            }
        }
    }
}

/// Deterministic result document for one executed task. Independent of
/// the provider so fail-over replacements produce byte-identical results.
pub fn execution_result_doc(capability: &str, parameters_digest: &[u8; 32]) -> Value {
    object([
        ("capability", Value::text(capability)),
        (
            "parameters_digest",
            Value::text(hex::encode(parameters_digest)),
        ),
        ("status", Value::text("success")),
    ])
    .expect("distinct keys")
}

/// Both ends of a pair derive the same control-session id for traffic
/// outside any negotiation session (challenges, discovery).
pub fn control_session_id(a: &Did, b: &Did) -> [u8; 16] {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let mut hasher = Sha256::new();
    hasher.update(b"acp-ctl:");
    hasher.update(lo.to_string().as_bytes());
    hasher.update(b":");
    hasher.update(hi.to_string().as_bytes());
    let digest = hasher.finalize();
    digest[..16].try_into().expect("16 bytes")
}
