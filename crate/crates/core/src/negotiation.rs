//! The four-stage negotiation lifecycle as a pair of explicit state
//! machines, plus SLA formation, commit hashing, and settlement.
//!
//! Requester path: Init → ProbeSent → BidReceived → Committed →
//! AwaitingResult → Settled (Aborted from anywhere on failure).
//! Provider path: Idle → ProbeReceived → BidSent → CommitReceived →
//! Executing → ResultSent → Settled (Aborted likewise).
//!
//! [`NegotiationSession::step`] is total: every (state, event) pair is
//! defined, illegal pairs leave the state unchanged and surface a
//! [`Effect::ProtocolViolation`] instead of an error. The same (state,
//! event) always produces the same output, so recorded runs replay
//! byte-for-byte.

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::doc::{self, object, Decimal, Value};
use crate::envelope::{Envelope, MsgType, SESSION_ID_LEN};
use crate::identity::{Did, KeyPair, VerifyingKey, SIGNATURE_LEN};
use crate::semantic::{AgentCard, Intent};

/// Default per-stage timeout in simulated ms.
pub const STAGE_TIMEOUT_MS: u64 = 5_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NegotiationError {
    #[error("session is not awaiting a result")]
    NotAwaitingResult,
    #[error("execution proof signature does not verify")]
    ProofInvalid,
    #[error("proof bound to a different commit digest")]
    ProofMismatch,
    #[error("result delivered after the agreed deadline")]
    SlaExpired,
}

/// Agreed terms of one engagement. Hashed into the COMMIT message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sla {
    pub capability: String,
    pub parameters_digest: [u8; 32],
    pub max_latency_ms: u64,
    pub cost: Decimal,
    pub data_residency: Option<String>,
    pub retry_policy: RetryPolicy,
    pub expires_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub renegotiate_on_failure: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 1,
            renegotiate_on_failure: true,
        }
    }
}

impl Sla {
    pub fn to_doc(&self) -> Value {
        let mut pairs = vec![
            ("capability", Value::text(&self.capability)),
            ("cost", Value::decimal(self.cost)),
            ("expires_at", Value::from(self.expires_at)),
            ("max_latency_ms", Value::from(self.max_latency_ms)),
            (
                "parameters_digest",
                Value::text(hex::encode(self.parameters_digest)),
            ),
            (
                "retry_policy",
                object([
                    (
                        "max_retries",
                        Value::from(u64::from(self.retry_policy.max_retries)),
                    ),
                    (
                        "renegotiate_on_failure",
                        Value::from(self.retry_policy.renegotiate_on_failure),
                    ),
                ])
                .expect("distinct keys"),
            ),
        ];
        if let Some(region) = &self.data_residency {
            pairs.push(("data_residency", Value::text(region)));
        }
        object(pairs).expect("distinct keys")
    }

    pub fn from_doc(value: &Value) -> Option<Sla> {
        let retry = value.get("retry_policy")?;
        Some(Sla {
            capability: value.get_text("capability")?.to_string(),
            parameters_digest: parse_digest(value.get_text("parameters_digest")?)?,
            max_latency_ms: value.get_u64("max_latency_ms")?,
            cost: value.get("cost")?.as_decimal()?,
            data_residency: match value.get("data_residency") {
                None => None,
                Some(v) => Some(v.as_text()?.to_string()),
            },
            retry_policy: RetryPolicy {
                max_retries: u32::try_from(retry.get_u64("max_retries")?).ok()?,
                renegotiate_on_failure: retry.get("renegotiate_on_failure")?.as_bool()?,
            },
            expires_at: value.get_u64("expires_at")?,
        })
    }
}

fn parse_digest(text: &str) -> Option<[u8; 32]> {
    hex::decode(text).ok()?.try_into().ok()
}

/// SHA-256 over the canonical SLA document. Any field change changes the
/// hash; fixed-point normalization makes 0.05 and 0.050000 identical.
pub fn commit_hash(sla: &Sla) -> [u8; 32] {
    Sha256::digest(doc::encode(&sla.to_doc())).into()
}

/// A provider's proposal for one probe.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bid {
    pub sla: Sla,
    pub estimated_completion_ms: u64,
    pub provider: Did,
}

impl Bid {
    pub fn to_doc(&self) -> Value {
        object([
            (
                "estimated_completion_ms",
                Value::from(self.estimated_completion_ms),
            ),
            ("provider", Value::text(self.provider.to_string())),
            ("sla", self.sla.to_doc()),
        ])
        .expect("distinct keys")
    }

    pub fn from_doc(value: &Value) -> Option<Bid> {
        Some(Bid {
            sla: Sla::from_doc(value.get("sla")?)?,
            estimated_completion_ms: value.get_u64("estimated_completion_ms")?,
            provider: Did::parse(value.get_text("provider")?).ok()?,
        })
    }
}

/// Why a provider (or requester) walked away at the proposal stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeclineReason {
    CostFloor,
    TooSlow,
    ResidencyUnavailable,
    CapabilityUnavailable,
    PoiRejected,
    BidRejected,
    Other(String),
}

impl DeclineReason {
    pub fn as_str(&self) -> &str {
        match self {
            DeclineReason::CostFloor => "cost_floor",
            DeclineReason::TooSlow => "too_slow",
            DeclineReason::ResidencyUnavailable => "residency_unavailable",
            DeclineReason::CapabilityUnavailable => "capability_unavailable",
            DeclineReason::PoiRejected => "poi_rejected",
            DeclineReason::BidRejected => "bid_rejected",
            DeclineReason::Other(s) => s,
        }
    }

    pub fn parse(s: &str) -> DeclineReason {
        match s {
            "cost_floor" => DeclineReason::CostFloor,
            "too_slow" => DeclineReason::TooSlow,
            "residency_unavailable" => DeclineReason::ResidencyUnavailable,
            "capability_unavailable" => DeclineReason::CapabilityUnavailable,
            "poi_rejected" => DeclineReason::PoiRejected,
            "bid_rejected" => DeclineReason::BidRejected,
            other => DeclineReason::Other(other.to_string()),
        }
    }
}

/// How a provider prices and schedules work.
#[derive(Debug, Clone)]
pub struct PricingPolicy {
    pub cost_floor: Decimal,
    pub default_cost: Decimal,
    pub estimated_completion_ms: u64,
    pub retry_policy: RetryPolicy,
}

/// Forms a bid for a probe, or declines with a reason. The bid's SLA
/// satisfies every constraint the probe states.
pub fn make_bid(
    probe: &Intent,
    card: &AgentCard,
    policy: &PricingPolicy,
    now: u64,
) -> Result<Bid, DeclineReason> {
    if !card.capabilities.iter().any(|c| c == &probe.capability) {
        return Err(DeclineReason::CapabilityUnavailable);
    }
    if let Some(required) = probe.constraints.data_residency.as_deref() {
        if card.constraints.data_residency.as_deref() != Some(required) {
            return Err(DeclineReason::ResidencyUnavailable);
        }
    }

    let estimated = policy.estimated_completion_ms;
    let max_latency_ms = match probe.constraints.max_latency_ms {
        Some(requested) => {
            if estimated > requested {
                return Err(DeclineReason::TooSlow);
            }
            requested
        }
        // no requested bound: echo the provider's advertised default
        None => card
            .constraints
            .max_latency_ms
            .unwrap_or(estimated * 2)
            .max(estimated),
    };

    let cost = match probe.constraints.max_cost {
        Some(max_cost) => {
            if max_cost < policy.cost_floor {
                return Err(DeclineReason::CostFloor);
            }
            policy.default_cost.min(max_cost).max(policy.cost_floor)
        }
        None => policy.default_cost,
    };

    let data_residency = probe
        .constraints
        .data_residency
        .clone()
        .or_else(|| card.constraints.data_residency.clone());

    Ok(Bid {
        sla: Sla {
            capability: probe.capability.clone(),
            parameters_digest: Sha256::digest(doc::encode(&probe.parameters)).into(),
            max_latency_ms,
            cost,
            data_residency,
            retry_policy: policy.retry_policy,
            expires_at: now + STAGE_TIMEOUT_MS + 2 * max_latency_ms,
        },
        estimated_completion_ms: estimated,
        provider: card.identity,
    })
}

/// Signed proof that a result corresponds to a specific commitment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionProof {
    pub result_digest: [u8; 32],
    pub commit_digest: [u8; 32],
    pub completed_at: u64,
    pub provider_signature: [u8; SIGNATURE_LEN],
}

impl ExecutionProof {
    fn signing_bytes(
        result_digest: &[u8; 32],
        commit_digest: &[u8; 32],
        completed_at: u64,
    ) -> Vec<u8> {
        let doc = object([
            ("commit_digest", Value::text(hex::encode(commit_digest))),
            ("completed_at", Value::from(completed_at)),
            ("result_digest", Value::text(hex::encode(result_digest))),
        ])
        .expect("distinct keys");
        doc::encode(&doc)
    }

    pub fn sign(
        kp: &KeyPair,
        result_digest: [u8; 32],
        commit_digest: [u8; 32],
        completed_at: u64,
    ) -> ExecutionProof {
        let provider_signature = kp.sign(&Self::signing_bytes(
            &result_digest,
            &commit_digest,
            completed_at,
        ));
        ExecutionProof {
            result_digest,
            commit_digest,
            completed_at,
            provider_signature,
        }
    }

    pub fn verify(&self, provider_pk: &VerifyingKey) -> bool {
        crate::identity::verify(
            provider_pk,
            &Self::signing_bytes(&self.result_digest, &self.commit_digest, self.completed_at),
            &self.provider_signature,
        )
    }

    pub fn to_doc(&self) -> Value {
        object([
            (
                "commit_digest",
                Value::text(hex::encode(self.commit_digest)),
            ),
            ("completed_at", Value::from(self.completed_at)),
            (
                "result_digest",
                Value::text(hex::encode(self.result_digest)),
            ),
            (
                "signature",
                Value::text(hex::encode(self.provider_signature)),
            ),
        ])
        .expect("distinct keys")
    }

    pub fn from_doc(value: &Value) -> Option<ExecutionProof> {
        Some(ExecutionProof {
            result_digest: parse_digest(value.get_text("result_digest")?)?,
            commit_digest: parse_digest(value.get_text("commit_digest")?)?,
            completed_at: value.get_u64("completed_at")?,
            provider_signature: hex::decode(value.get_text("signature")?)
                .ok()?
                .try_into()
                .ok()?,
        })
    }
}

// --- the state machines ---

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Requester,
    Provider,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SessionState {
    // requester
    Init,
    ProbeSent,
    BidReceived,
    Committed,
    AwaitingResult,
    // provider
    Idle,
    ProbeReceived,
    BidSent,
    CommitReceived,
    Executing,
    ResultSent,
    // shared terminals
    Settled,
    Aborted,
}

pub const REQUESTER_STATES: [SessionState; 7] = [
    SessionState::Init,
    SessionState::ProbeSent,
    SessionState::BidReceived,
    SessionState::Committed,
    SessionState::AwaitingResult,
    SessionState::Settled,
    SessionState::Aborted,
];

pub const PROVIDER_STATES: [SessionState; 8] = [
    SessionState::Idle,
    SessionState::ProbeReceived,
    SessionState::BidSent,
    SessionState::CommitReceived,
    SessionState::Executing,
    SessionState::ResultSent,
    SessionState::Settled,
    SessionState::Aborted,
];

impl SessionState {
    pub fn name(self) -> &'static str {
        match self {
            SessionState::Init => "Init",
            SessionState::ProbeSent => "ProbeSent",
            SessionState::BidReceived => "BidReceived",
            SessionState::Committed => "Committed",
            SessionState::AwaitingResult => "AwaitingResult",
            SessionState::Idle => "Idle",
            SessionState::ProbeReceived => "ProbeReceived",
            SessionState::BidSent => "BidSent",
            SessionState::CommitReceived => "CommitReceived",
            SessionState::Executing => "Executing",
            SessionState::ResultSent => "ResultSent",
            SessionState::Settled => "Settled",
            SessionState::Aborted => "Aborted",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, SessionState::Settled | SessionState::Aborted)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimerKind {
    /// Bounds how long the session may sit in one stage.
    Stage,
    /// The SLA execution deadline set at commitment.
    Deadline,
}

/// Instructions from the owning runtime.
#[derive(Debug, Clone)]
pub enum LocalCommand {
    SendProbe {
        intent: Intent,
        payload: Value,
    },
    AcceptBid,
    RejectBid,
    /// Issued immediately after a successful accept; moves the requester
    /// from the transient Committed state into AwaitingResult.
    BeginAwait,
    SubmitBid(Bid),
    DeclineProbe(DeclineReason),
    /// Issued immediately after commit verification on the provider side.
    StartExecute,
    CompleteExecution {
        result: Value,
        proof: ExecutionProof,
    },
}

#[derive(Debug)]
pub enum SessionEvent<'a> {
    Envelope(&'a Envelope),
    Timer(TimerKind),
    Command(LocalCommand),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationKind {
    UnexpectedMessage { state: &'static str, msg: MsgType },
    MalformedPayload(MsgType),
    NonconformingBid,
    CommitMismatch,
    UnknownPeer,
    CommandOutOfPlace(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AbortReason {
    TimedOut(&'static str),
    Declined(DeclineReason),
    BidRejected,
    PeerAborted,
    SlaExpired,
    ProtocolFault,
}

impl AbortReason {
    pub fn as_str(&self) -> &str {
        match self {
            AbortReason::TimedOut(_) => "timed_out",
            AbortReason::Declined(_) => "declined",
            AbortReason::BidRejected => "bid_rejected",
            AbortReason::PeerAborted => "peer_aborted",
            AbortReason::SlaExpired => "sla_expired",
            AbortReason::ProtocolFault => "protocol_fault",
        }
    }
}

/// What a step asks the runtime to observe or do.
#[derive(Debug, Clone)]
pub enum Effect {
    ProtocolViolation(ViolationKind),
    /// Provider: a probe arrived; decide SubmitBid or DeclineProbe.
    ProbeReceived {
        intent: Intent,
        payload: Value,
    },
    /// Requester: a conforming bid arrived; decide AcceptBid or RejectBid.
    BidReceived(Bid),
    /// Requester committed; the COMMIT carrying this digest is outbound.
    Committed {
        commit_digest: [u8; 32],
    },
    /// Provider verified the requester's commitment.
    CommitVerified {
        commit_digest: [u8; 32],
    },
    /// Provider entered Executing; runtime schedules the actual work.
    ExecutionStarted,
    /// Requester: result + proof arrived; runtime calls [`settle`].
    SettlementDue {
        result: Value,
        proof: ExecutionProof,
    },
    /// Provider: the requester's satisfaction score arrived.
    RatingReceived {
        entry: Value,
    },
    /// Provider closed the session without ever seeing a rating.
    ClosedUnrated,
    Aborted(AbortReason),
}

#[derive(Debug, Clone)]
pub struct OutboundMsg {
    pub msg_type: MsgType,
    pub payload: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimerRequest {
    pub kind: TimerKind,
    pub at: u64,
}

#[derive(Debug, Default)]
pub struct StepOutput {
    pub outbound: Vec<OutboundMsg>,
    pub effects: Vec<Effect>,
    pub timers: Vec<TimerRequest>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    In,
    Out,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub direction: Direction,
    pub msg_type: MsgType,
    pub digest: [u8; 32],
}

/// One side of one engagement. Owned by exactly one agent's event loop.
#[derive(Debug, Clone)]
pub struct NegotiationSession {
    pub session_id: [u8; SESSION_ID_LEN],
    pub role: Role,
    pub peer: Did,
    state: SessionState,
    pub intent: Option<Intent>,
    pub bid: Option<Bid>,
    pub sla: Option<Sla>,
    commit_digest: Option<[u8; 32]>,
    pub committed_at: Option<u64>,
    pub deadline_at: u64,
    transcript: Vec<TranscriptEntry>,
    violations: u32,
    pub abort_reason: Option<AbortReason>,
}

impl NegotiationSession {
    pub fn new_requester(session_id: [u8; SESSION_ID_LEN], peer: Did) -> Self {
        Self::new(session_id, Role::Requester, peer, SessionState::Init)
    }

    pub fn new_provider(session_id: [u8; SESSION_ID_LEN], peer: Did) -> Self {
        Self::new(session_id, Role::Provider, peer, SessionState::Idle)
    }

    fn new(session_id: [u8; SESSION_ID_LEN], role: Role, peer: Did, state: SessionState) -> Self {
        NegotiationSession {
            session_id,
            role,
            peer,
            state,
            intent: None,
            bid: None,
            sla: None,
            commit_digest: None,
            committed_at: None,
            deadline_at: u64::MAX,
            transcript: Vec::new(),
            violations: 0,
            abort_reason: None,
        }
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn commit_digest(&self) -> Option<[u8; 32]> {
        self.commit_digest
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.transcript
    }

    pub fn violations(&self) -> u32 {
        self.violations
    }

    /// Runtime hook: records the digest of a sealed outbound envelope.
    pub fn record_outbound(&mut self, msg_type: MsgType, digest: [u8; 32]) {
        self.transcript.push(TranscriptEntry {
            direction: Direction::Out,
            msg_type,
            digest,
        });
    }

    /// Runtime hook for re-sends after a gate challenge: the prior
    /// instance never reached the peer, so its digest is superseded
    /// rather than appended (transcripts stay in agreement).
    pub fn replace_outbound(&mut self, msg_type: MsgType, digest: [u8; 32]) {
        self.transcript
            .retain(|t| !(t.direction == Direction::Out && t.msg_type == msg_type));
        self.record_outbound(msg_type, digest);
    }

    fn record_inbound(&mut self, env: &Envelope) {
        self.transcript.push(TranscriptEntry {
            direction: Direction::In,
            msg_type: env.msg_type,
            digest: env.digest(),
        });
    }

    fn note_violation(&mut self, out: &mut StepOutput, kind: ViolationKind) {
        self.violations += 1;
        out.effects.push(Effect::ProtocolViolation(kind));
    }

    fn abort(&mut self, out: &mut StepOutput, reason: AbortReason, notify_peer: bool) {
        self.state = SessionState::Aborted;
        if self.abort_reason.is_none() {
            self.abort_reason = Some(reason.clone());
        }
        if notify_peer {
            out.outbound.push(OutboundMsg {
                msg_type: MsgType::Abort,
                payload: object([("reason", Value::text(reason.as_str()))]).expect("distinct keys"),
            });
        }
        out.effects.push(Effect::Aborted(reason));
    }

    /// Advances the machine. Total: never panics, never throws; illegal
    /// inputs surface as violation effects with the state unchanged.
    pub fn step(&mut self, event: SessionEvent<'_>, now: u64) -> StepOutput {
        match event {
            SessionEvent::Envelope(env) => self.on_envelope(env, now),
            SessionEvent::Timer(kind) => self.on_timer(kind, now),
            SessionEvent::Command(cmd) => self.on_command(cmd, now),
        }
    }

    fn on_envelope(&mut self, env: &Envelope, now: u64) -> StepOutput {
        let mut out = StepOutput::default();
        if env.sender != self.peer {
            self.note_violation(&mut out, ViolationKind::UnknownPeer);
            return out;
        }
        let msg = env.msg_type;
        match (self.role, self.state, msg) {
            // --- requester ---
            (Role::Requester, SessionState::ProbeSent, MsgType::Bid) => {
                let Some(bid) = Bid::from_doc(&env.payload) else {
                    self.note_violation(&mut out, ViolationKind::MalformedPayload(msg));
                    return out;
                };
                let conforming = self
                    .intent
                    .as_ref()
                    .is_some_and(|intent| bid_conforms(&bid, intent))
                    && bid.provider == self.peer;
                if !conforming {
                    self.record_inbound(env);
                    self.note_violation(&mut out, ViolationKind::NonconformingBid);
                    out.outbound.push(OutboundMsg {
                        msg_type: MsgType::Decline,
                        payload: object([(
                            "reason",
                            Value::text(DeclineReason::BidRejected.as_str()),
                        )])
                        .expect("distinct keys"),
                    });
                    self.abort(&mut out, AbortReason::BidRejected, false);
                    return out;
                }
                self.record_inbound(env);
                self.state = SessionState::BidReceived;
                self.bid = Some(bid.clone());
                out.effects.push(Effect::BidReceived(bid));
                out.timers.push(TimerRequest {
                    kind: TimerKind::Stage,
                    at: now + STAGE_TIMEOUT_MS,
                });
            }
            (Role::Requester, SessionState::ProbeSent, MsgType::Decline) => {
                self.record_inbound(env);
                let reason = env
                    .payload
                    .get_text("reason")
                    .map(DeclineReason::parse)
                    .unwrap_or(DeclineReason::Other("unspecified".into()));
                self.abort(&mut out, AbortReason::Declined(reason), false);
            }
            (
                Role::Requester,
                SessionState::ProbeSent
                | SessionState::BidReceived
                | SessionState::Committed
                | SessionState::AwaitingResult,
                MsgType::Abort,
            ) => {
                self.record_inbound(env);
                self.abort(&mut out, AbortReason::PeerAborted, false);
            }
            (Role::Requester, SessionState::AwaitingResult, MsgType::Result) => {
                let parsed = env
                    .payload
                    .get("result")
                    .cloned()
                    .zip(env.payload.get("proof").and_then(ExecutionProof::from_doc));
                match parsed {
                    Some((result, proof)) => {
                        self.record_inbound(env);
                        out.effects.push(Effect::SettlementDue { result, proof });
                    }
                    None => {
                        self.note_violation(&mut out, ViolationKind::MalformedPayload(msg));
                    }
                }
            }

            // --- provider ---
            (Role::Provider, SessionState::Idle, MsgType::Probe) => {
                match env
                    .payload
                    .get("intent")
                    .and_then(|v| Intent::from_doc(v).ok())
                {
                    Some(intent) => {
                        self.record_inbound(env);
                        self.state = SessionState::ProbeReceived;
                        self.intent = Some(intent.clone());
                        out.effects.push(Effect::ProbeReceived {
                            intent,
                            payload: env.payload.clone(),
                        });
                    }
                    None => {
                        self.note_violation(&mut out, ViolationKind::MalformedPayload(msg));
                    }
                }
            }
            (Role::Provider, SessionState::BidSent, MsgType::Commit) => {
                let claimed = env.payload.get_text("commit_digest").and_then(parse_digest);
                let Some(claimed) = claimed else {
                    self.note_violation(&mut out, ViolationKind::MalformedPayload(msg));
                    return out;
                };
                let expected = self.bid.as_ref().map(|b| commit_hash(&b.sla));
                if expected != Some(claimed) {
                    self.record_inbound(env);
                    self.note_violation(&mut out, ViolationKind::CommitMismatch);
                    self.abort(&mut out, AbortReason::ProtocolFault, true);
                    return out;
                }
                self.record_inbound(env);
                self.state = SessionState::CommitReceived;
                self.commit_digest = Some(claimed);
                self.committed_at = Some(now);
                let sla = self.bid.as_ref().map(|b| b.sla.clone());
                if let Some(sla) = &sla {
                    self.deadline_at = now + sla.max_latency_ms;
                }
                self.sla = sla;
                out.effects.push(Effect::CommitVerified {
                    commit_digest: claimed,
                });
            }
            (Role::Provider, SessionState::BidSent, MsgType::Decline) => {
                self.record_inbound(env);
                self.abort(&mut out, AbortReason::BidRejected, false);
            }
            (
                Role::Provider,
                SessionState::BidSent
                | SessionState::CommitReceived
                | SessionState::Executing
                | SessionState::ResultSent,
                MsgType::Abort,
            ) => {
                self.record_inbound(env);
                self.abort(&mut out, AbortReason::PeerAborted, false);
            }
            (Role::Provider, SessionState::ResultSent, MsgType::Rate) => {
                self.record_inbound(env);
                self.state = SessionState::Settled;
                out.effects.push(Effect::RatingReceived {
                    entry: env.payload.clone(),
                });
            }

            // everything else is out of protocol
            (_, state, msg) => {
                self.note_violation(
                    &mut out,
                    ViolationKind::UnexpectedMessage {
                        state: state.name(),
                        msg,
                    },
                );
            }
        }
        out
    }

    fn on_timer(&mut self, kind: TimerKind, _now: u64) -> StepOutput {
        let mut out = StepOutput::default();
        match (self.role, self.state, kind) {
            (Role::Requester, SessionState::Init | SessionState::ProbeSent, TimerKind::Stage) => {
                self.abort(&mut out, AbortReason::TimedOut(self.state.name()), false);
            }
            (Role::Requester, SessionState::BidReceived, TimerKind::Stage) => {
                self.abort(&mut out, AbortReason::TimedOut("BidReceived"), true);
            }
            (
                Role::Requester,
                SessionState::Committed | SessionState::AwaitingResult,
                TimerKind::Deadline,
            ) => {
                self.abort(&mut out, AbortReason::SlaExpired, true);
            }
            (Role::Provider, SessionState::ProbeReceived, TimerKind::Stage) => {
                self.abort(&mut out, AbortReason::TimedOut("ProbeReceived"), false);
            }
            (Role::Provider, SessionState::BidSent, TimerKind::Stage) => {
                self.abort(&mut out, AbortReason::TimedOut("BidSent"), true);
            }
            (Role::Provider, SessionState::ResultSent, TimerKind::Stage) => {
                self.state = SessionState::Settled;
                out.effects.push(Effect::ClosedUnrated);
            }
            // stale timers are silent no-ops
            _ => {}
        }
        out
    }

    fn on_command(&mut self, cmd: LocalCommand, now: u64) -> StepOutput {
        let mut out = StepOutput::default();
        match (self.role, self.state, cmd) {
            (Role::Requester, SessionState::Init, LocalCommand::SendProbe { intent, payload }) => {
                self.intent = Some(intent);
                self.state = SessionState::ProbeSent;
                out.outbound.push(OutboundMsg {
                    msg_type: MsgType::Probe,
                    payload,
                });
                out.timers.push(TimerRequest {
                    kind: TimerKind::Stage,
                    at: now + STAGE_TIMEOUT_MS,
                });
            }
            (Role::Requester, SessionState::BidReceived, LocalCommand::AcceptBid) => {
                let Some(bid) = self.bid.clone() else {
                    self.note_violation(&mut out, ViolationKind::CommandOutOfPlace("AcceptBid"));
                    return out;
                };
                let digest = commit_hash(&bid.sla);
                self.state = SessionState::Committed;
                self.commit_digest = Some(digest);
                self.committed_at = Some(now);
                self.deadline_at = now + bid.sla.max_latency_ms;
                self.sla = Some(bid.sla);
                out.outbound.push(OutboundMsg {
                    msg_type: MsgType::Commit,
                    payload: object([("commit_digest", Value::text(hex::encode(digest)))])
                        .expect("distinct keys"),
                });
                out.effects.push(Effect::Committed {
                    commit_digest: digest,
                });
            }
            (Role::Requester, SessionState::BidReceived, LocalCommand::RejectBid) => {
                out.outbound.push(OutboundMsg {
                    msg_type: MsgType::Decline,
                    payload: object([("reason", Value::text(DeclineReason::BidRejected.as_str()))])
                        .expect("distinct keys"),
                });
                self.abort(&mut out, AbortReason::BidRejected, false);
            }
            (Role::Requester, SessionState::Committed, LocalCommand::BeginAwait) => {
                self.state = SessionState::AwaitingResult;
                out.timers.push(TimerRequest {
                    kind: TimerKind::Deadline,
                    at: self.deadline_at,
                });
            }
            (Role::Provider, SessionState::ProbeReceived, LocalCommand::SubmitBid(bid)) => {
                self.state = SessionState::BidSent;
                self.bid = Some(bid.clone());
                out.outbound.push(OutboundMsg {
                    msg_type: MsgType::Bid,
                    payload: bid.to_doc(),
                });
                out.timers.push(TimerRequest {
                    kind: TimerKind::Stage,
                    at: now + STAGE_TIMEOUT_MS,
                });
            }
            (Role::Provider, SessionState::ProbeReceived, LocalCommand::DeclineProbe(reason)) => {
                out.outbound.push(OutboundMsg {
                    msg_type: MsgType::Decline,
                    payload: object([("reason", Value::text(reason.as_str()))])
                        .expect("distinct keys"),
                });
                self.abort(&mut out, AbortReason::Declined(reason), false);
            }
            (Role::Provider, SessionState::CommitReceived, LocalCommand::StartExecute) => {
                self.state = SessionState::Executing;
                out.effects.push(Effect::ExecutionStarted);
            }
            (
                Role::Provider,
                SessionState::Executing,
                LocalCommand::CompleteExecution { result, proof },
            ) => {
                self.state = SessionState::ResultSent;
                out.outbound.push(OutboundMsg {
                    msg_type: MsgType::Result,
                    payload: object([("proof", proof.to_doc()), ("result", result)])
                        .expect("distinct keys"),
                });
                out.timers.push(TimerRequest {
                    kind: TimerKind::Stage,
                    at: now + STAGE_TIMEOUT_MS,
                });
            }
            (_, _, cmd) => {
                self.note_violation(
                    &mut out,
                    ViolationKind::CommandOutOfPlace(command_name(&cmd)),
                );
            }
        }
        out
    }
}

fn command_name(cmd: &LocalCommand) -> &'static str {
    match cmd {
        LocalCommand::SendProbe { .. } => "SendProbe",
        LocalCommand::AcceptBid => "AcceptBid",
        LocalCommand::RejectBid => "RejectBid",
        LocalCommand::BeginAwait => "BeginAwait",
        LocalCommand::SubmitBid(_) => "SubmitBid",
        LocalCommand::DeclineProbe(_) => "DeclineProbe",
        LocalCommand::StartExecute => "StartExecute",
        LocalCommand::CompleteExecution { .. } => "CompleteExecution",
    }
}

/// True iff the bid's SLA satisfies every constraint the probe stated.
pub fn bid_conforms(bid: &Bid, intent: &Intent) -> bool {
    let sla = &bid.sla;
    if sla.capability != intent.capability {
        return false;
    }
    if bid.estimated_completion_ms > sla.max_latency_ms {
        return false;
    }
    if sla.parameters_digest != <[u8; 32]>::from(Sha256::digest(doc::encode(&intent.parameters))) {
        return false;
    }
    if let Some(max) = intent.constraints.max_latency_ms {
        if sla.max_latency_ms > max {
            return false;
        }
    }
    if let Some(max_cost) = intent.constraints.max_cost {
        if sla.cost > max_cost {
            return false;
        }
    }
    if let Some(required) = intent.constraints.data_residency.as_deref() {
        if sla.data_residency.as_deref() != Some(required) {
            return false;
        }
    }
    true
}

/// Outcome of one settled (or expired) engagement, as judged by the
/// requester.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SettlementReport {
    pub accuracy_ok: bool,
    /// elapsed / agreed max latency, in millionths.
    pub latency_ratio_micros: u64,
    pub violations: u32,
}

impl SettlementReport {
    pub fn latency_ratio(&self) -> f64 {
        self.latency_ratio_micros as f64 / 1_000_000.0
    }
}

/// Final stage of the lifecycle: verifies the proof against the session's
/// commitment and judges the result against the SLA.
///
/// On success the session transitions to Settled; a late result aborts it
/// (the caller decides whether to renegotiate, guided by the SLA's retry
/// policy). This and [`NegotiationSession::step`] are the only two places
/// session state changes.
pub fn settle(
    session: &mut NegotiationSession,
    result: &Value,
    proof: &ExecutionProof,
    provider_pk: &VerifyingKey,
    expected_digest: Option<[u8; 32]>,
    now: u64,
) -> Result<SettlementReport, NegotiationError> {
    if session.role != Role::Requester || session.state != SessionState::AwaitingResult {
        return Err(NegotiationError::NotAwaitingResult);
    }
    let sla = session
        .sla
        .as_ref()
        .ok_or(NegotiationError::NotAwaitingResult)?;
    if Some(proof.commit_digest) != session.commit_digest {
        return Err(NegotiationError::ProofMismatch);
    }
    if !proof.verify(provider_pk) {
        return Err(NegotiationError::ProofInvalid);
    }
    if now > session.deadline_at || now > sla.expires_at {
        session.state = SessionState::Aborted;
        session.abort_reason = Some(AbortReason::SlaExpired);
        return Err(NegotiationError::SlaExpired);
    }

    let elapsed = now.saturating_sub(session.committed_at.unwrap_or(now));
    let latency_ratio_micros = elapsed.saturating_mul(1_000_000) / sla.max_latency_ms.max(1);
    let result_digest: [u8; 32] = Sha256::digest(doc::encode(result)).into();
    let accuracy_ok = result_digest == proof.result_digest
        && expected_digest.is_none_or(|expected| expected == proof.result_digest);

    session.state = SessionState::Settled;
    Ok(SettlementReport {
        accuracy_ok,
        latency_ratio_micros,
        violations: session.violations,
    })
}
