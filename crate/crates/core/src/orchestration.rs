//! Recursive delegation: proof-of-intent chains, task plans, and failure
//! renegotiation.
//!
//! A proof-of-intent (PoI) link authorizes one delegatee to act on one
//! intent. Links chain: a child's authorizer must be its parent's
//! delegatee, and the root's authorizer must be a configured trust
//! anchor. Providers refuse to act on any request whose chain does not
//! verify, which stops a compromised agent from acting outside its
//! negotiated workflow.

use std::collections::BTreeSet;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::doc::{self, object, Value};
use crate::identity::{Did, KeyPair, VerifyingKey, SIGNATURE_LEN};
use crate::semantic::Intent;

/// Delegation chains deeper than this are refused outright.
pub const MAX_DELEGATION_DEPTH: u32 = 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OrchestrationError {
    #[error("proof-of-intent chain does not verify: {0}")]
    ChainInvalid(&'static str),
    #[error("delegation depth {0} exceeds the configured maximum")]
    DepthExceeded(u32),
    #[error("no candidate provider can serve subtask {0}")]
    SubtaskUnservable(usize),
}

/// One link in a delegation chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProofOfIntent {
    pub intent_digest: [u8; 32],
    pub authorizer: Did,
    /// The agent this link authorizes to act. A child link's authorizer
    /// must equal its parent's delegatee.
    pub delegatee: Did,
    pub parent_digest: Option<[u8; 32]>,
    pub depth: u32,
    pub signature: [u8; SIGNATURE_LEN],
}

impl ProofOfIntent {
    fn body_doc(
        intent_digest: &[u8; 32],
        authorizer: &Did,
        delegatee: &Did,
        parent_digest: Option<&[u8; 32]>,
        depth: u32,
    ) -> Value {
        let mut pairs = vec![
            ("authorizer", Value::text(authorizer.to_string())),
            ("delegatee", Value::text(delegatee.to_string())),
            ("depth", Value::from(u64::from(depth))),
            ("intent_digest", Value::text(hex::encode(intent_digest))),
        ];
        if let Some(parent) = parent_digest {
            pairs.push(("parent_digest", Value::text(hex::encode(parent))));
        }
        object(pairs).expect("distinct keys")
    }

    pub fn to_doc(&self) -> Value {
        let Value::Map(mut map) = Self::body_doc(
            &self.intent_digest,
            &self.authorizer,
            &self.delegatee,
            self.parent_digest.as_ref(),
            self.depth,
        ) else {
            unreachable!()
        };
        map.insert(
            "signature".to_string(),
            Value::text(hex::encode(self.signature)),
        );
        Value::Map(map)
    }

    pub fn from_doc(value: &Value) -> Option<ProofOfIntent> {
        let parent_digest = match value.get("parent_digest") {
            None => None,
            Some(v) => Some(hex::decode(v.as_text()?).ok()?.try_into().ok()?),
        };
        Some(ProofOfIntent {
            intent_digest: hex::decode(value.get_text("intent_digest")?)
                .ok()?
                .try_into()
                .ok()?,
            authorizer: Did::parse(value.get_text("authorizer")?).ok()?,
            delegatee: Did::parse(value.get_text("delegatee")?).ok()?,
            parent_digest,
            depth: u32::try_from(value.get_u64("depth")?).ok()?,
            signature: hex::decode(value.get_text("signature")?)
                .ok()?
                .try_into()
                .ok()?,
        })
    }

    /// Digest of the full link (including its signature); children bind to
    /// this.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(doc::encode(&self.to_doc())).into()
    }
}

/// Signs a new link. Root links (no parent) have depth 0; child links
/// extend their parent by one and must be signed by the parent's
/// delegatee.
pub fn build_poi(
    kp: &KeyPair,
    intent_digest: [u8; 32],
    delegatee: Did,
    parent: Option<&ProofOfIntent>,
) -> Result<ProofOfIntent, OrchestrationError> {
    let (depth, parent_digest) = match parent {
        None => (0, None),
        Some(parent_link) => {
            if kp.did() != parent_link.delegatee {
                return Err(OrchestrationError::ChainInvalid(
                    "child must be signed by the parent's delegatee",
                ));
            }
            (parent_link.depth + 1, Some(parent_link.digest()))
        }
    };
    if depth > MAX_DELEGATION_DEPTH {
        return Err(OrchestrationError::DepthExceeded(depth));
    }
    let authorizer = kp.did();
    let body = ProofOfIntent::body_doc(
        &intent_digest,
        &authorizer,
        &delegatee,
        parent_digest.as_ref(),
        depth,
    );
    Ok(ProofOfIntent {
        intent_digest,
        authorizer,
        delegatee,
        parent_digest,
        depth,
        signature: kp.sign(&doc::encode(&body)),
    })
}

/// Walks a chain from root to leaf and checks every invariant: root
/// anchored, depths sequential, parent digests chained, authorizers equal
/// to the previous delegatee, and every signature valid under the
/// authorizer's key.
pub fn verify_chain(
    chain: &[ProofOfIntent],
    trust_anchors: &BTreeSet<Did>,
    resolve_pk: impl Fn(&Did) -> Option<VerifyingKey>,
) -> Result<(), OrchestrationError> {
    let root = chain
        .first()
        .ok_or(OrchestrationError::ChainInvalid("empty chain"))?;
    if root.depth != 0 || root.parent_digest.is_some() {
        return Err(OrchestrationError::ChainInvalid("malformed root"));
    }
    if !trust_anchors.contains(&root.authorizer) {
        return Err(OrchestrationError::ChainInvalid(
            "root authorizer is not a trust anchor",
        ));
    }
    for (i, link) in chain.iter().enumerate() {
        if link.depth != i as u32 {
            return Err(OrchestrationError::ChainInvalid("non-sequential depth"));
        }
        if link.depth > MAX_DELEGATION_DEPTH {
            return Err(OrchestrationError::DepthExceeded(link.depth));
        }
        if i > 0 {
            let parent = &chain[i - 1];
            if link.parent_digest != Some(parent.digest()) {
                return Err(OrchestrationError::ChainInvalid("broken parent digest"));
            }
            if link.authorizer != parent.delegatee {
                return Err(OrchestrationError::ChainInvalid(
                    "authorizer is not the parent's delegatee",
                ));
            }
        }
        let pk = resolve_pk(&link.authorizer)
            .ok_or(OrchestrationError::ChainInvalid("unknown authorizer key"))?;
        let body = ProofOfIntent::body_doc(
            &link.intent_digest,
            &link.authorizer,
            &link.delegatee,
            link.parent_digest.as_ref(),
            link.depth,
        );
        if !crate::identity::verify(&pk, &doc::encode(&body), &link.signature) {
            return Err(OrchestrationError::ChainInvalid("bad link signature"));
        }
    }
    Ok(())
}

pub fn chain_to_doc(chain: &[ProofOfIntent]) -> Value {
    Value::Seq(chain.iter().map(ProofOfIntent::to_doc).collect())
}

pub fn chain_from_doc(value: &Value) -> Option<Vec<ProofOfIntent>> {
    value
        .as_seq()?
        .iter()
        .map(ProofOfIntent::from_doc)
        .collect()
}

// --- task plans ---

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubtaskStatus {
    Unassigned,
    Negotiating,
    Executing,
    Done,
    Failed,
}

impl SubtaskStatus {
    pub fn name(self) -> &'static str {
        match self {
            SubtaskStatus::Unassigned => "unassigned",
            SubtaskStatus::Negotiating => "negotiating",
            SubtaskStatus::Executing => "executing",
            SubtaskStatus::Done => "done",
            SubtaskStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Subtask {
    pub intent: Intent,
    /// Scenario-declared acceptance digest, when the expected result is
    /// known up front.
    pub expected_result: Option<[u8; 32]>,
    pub assigned: Option<Did>,
    pub session: Option<[u8; 16]>,
    pub status: SubtaskStatus,
    /// Completed attempts that ended in failure.
    pub failed_attempts: u32,
    /// Providers that already failed this subtask; never re-selected
    /// within this plan.
    pub excluded: BTreeSet<Did>,
    pub poi_depth: u32,
}

impl Subtask {
    pub fn new(intent: Intent, expected_result: Option<[u8; 32]>) -> Subtask {
        Subtask {
            intent,
            expected_result,
            assigned: None,
            session: None,
            status: SubtaskStatus::Unassigned,
            failed_attempts: 0,
            excluded: BTreeSet::new(),
            poi_depth: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanStatus {
    Active,
    Complete,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureAction {
    /// Subtask went back to the pool with the failed provider excluded.
    Retry,
    /// Retry budget exhausted (or renegotiation disabled): plan failed.
    PlanFailed,
}

/// A root intent decomposed into scenario-declared subtasks.
#[derive(Debug, Clone)]
pub struct TaskPlan {
    pub root_intent: Intent,
    pub subtasks: Vec<Subtask>,
    pub max_depth: u32,
    pub max_retries: u32,
    pub renegotiate_on_failure: bool,
    pub status: PlanStatus,
}

impl TaskPlan {
    pub fn new(
        root_intent: Intent,
        subtasks: Vec<Subtask>,
        max_retries: u32,
        renegotiate_on_failure: bool,
    ) -> TaskPlan {
        TaskPlan {
            root_intent,
            subtasks,
            max_depth: MAX_DELEGATION_DEPTH,
            max_retries,
            renegotiate_on_failure,
            status: PlanStatus::Active,
        }
    }

    pub fn next_unassigned(&self) -> Option<usize> {
        self.subtasks
            .iter()
            .position(|s| s.status == SubtaskStatus::Unassigned)
    }

    pub fn mark_negotiating(&mut self, idx: usize, provider: Did, session: [u8; 16]) {
        let s = &mut self.subtasks[idx];
        s.status = SubtaskStatus::Negotiating;
        s.assigned = Some(provider);
        s.session = Some(session);
    }

    pub fn mark_executing(&mut self, idx: usize) {
        self.subtasks[idx].status = SubtaskStatus::Executing;
    }

    /// Marks a subtask done; a still-active plan completes when all are.
    /// A plan that already failed stays failed (late results from
    /// orphaned sessions do not resurrect it).
    pub fn complete_subtask(&mut self, idx: usize) {
        self.subtasks[idx].status = SubtaskStatus::Done;
        if self.status == PlanStatus::Active
            && self
                .subtasks
                .iter()
                .all(|s| s.status == SubtaskStatus::Done)
        {
            self.status = PlanStatus::Complete;
        }
    }

    /// A provider declined at the proposal stage: exclude it and requeue
    /// the subtask. Declines are ordinary negotiation outcomes and do not
    /// consume the retry budget; the exclusion set still shrinks the
    /// candidate pool monotonically, so this terminates.
    pub fn on_decline(&mut self, idx: usize) {
        let s = &mut self.subtasks[idx];
        if let Some(provider) = s.assigned.take() {
            s.excluded.insert(provider);
        }
        s.session = None;
        s.status = SubtaskStatus::Unassigned;
    }

    /// Applies the failure policy after a session aborted. The failed
    /// provider is excluded from future candidate sets for this subtask.
    pub fn on_failure(&mut self, idx: usize) -> FailureAction {
        let may_retry = {
            let s = &mut self.subtasks[idx];
            if let Some(provider) = s.assigned.take() {
                s.excluded.insert(provider);
            }
            s.session = None;
            s.failed_attempts += 1;
            self.renegotiate_on_failure && s.failed_attempts <= self.max_retries
        };
        if may_retry {
            self.subtasks[idx].status = SubtaskStatus::Unassigned;
            FailureAction::Retry
        } else {
            self.subtasks[idx].status = SubtaskStatus::Failed;
            self.status = PlanStatus::Failed;
            FailureAction::PlanFailed
        }
    }

    /// Providers with a settled subtask under this plan's root intent.
    pub fn coalition(&self) -> BTreeSet<Did> {
        self.subtasks
            .iter()
            .filter(|s| s.status == SubtaskStatus::Done)
            .filter_map(|s| s.assigned)
            .collect()
    }
}

/// Outcome the negotiation driver reports for one assigned subtask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionOutcome {
    Settled { accuracy_ok: bool },
    Failed,
}

/// Synchronous delegation driver: looks up candidates, assigns the top
/// one, runs the supplied negotiation, and applies the retry policy until
/// the plan completes or fails. The simulated runtime implements the same
/// loop event-by-event.
pub fn drive_plan(
    plan: &mut TaskPlan,
    mut lookup: impl FnMut(&Intent, &BTreeSet<Did>) -> Vec<Did>,
    mut negotiate: impl FnMut(usize, &Intent, Did) -> SessionOutcome,
) -> Result<(), OrchestrationError> {
    let mut session_counter: u64 = 0;
    while plan.status == PlanStatus::Active {
        let Some(idx) = plan.next_unassigned() else {
            break;
        };
        let intent = plan.subtasks[idx].intent.clone();
        let candidates = lookup(&intent, &plan.subtasks[idx].excluded);
        let Some(provider) = candidates.first().copied() else {
            plan.subtasks[idx].status = SubtaskStatus::Failed;
            plan.status = PlanStatus::Failed;
            return Err(OrchestrationError::SubtaskUnservable(idx));
        };
        session_counter += 1;
        let mut session_id = [0u8; 16];
        session_id[..8].copy_from_slice(&session_counter.to_be_bytes());
        plan.mark_negotiating(idx, provider, session_id);
        plan.mark_executing(idx);
        match negotiate(idx, &intent, provider) {
            SessionOutcome::Settled { accuracy_ok: true } => plan.complete_subtask(idx),
            _ => {
                plan.on_failure(idx);
            }
        }
    }
    Ok(())
}
