//! The semantic layer: intents, agent cards, capability matching, and
//! candidate ranking.
//!
//! Matching is exact-string over capability names; constraint checks apply
//! only when both sides state a bound. Ranking is total and deterministic:
//! trust score (descending), then interaction volume (descending), then
//! DID as the final tiebreak.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::doc::{self, object, Decimal, Value};
use crate::identity::{Did, VerifyingKey};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SemanticError {
    #[error("invalid agent card: {0}")]
    CardInvalid(&'static str),
    #[error("capability must be nonempty lowercase snake_case, got `{0}`")]
    InvalidCapability(String),
    #[error("unknown intent action `{0}`")]
    UnknownAction(String),
    #[error("constraint `{0}` must be positive")]
    NonPositiveConstraint(&'static str),
}

/// The four intent verbs of the shared action vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IntentAction {
    Query,
    Execute,
    Delegate,
    Negotiate,
}

impl IntentAction {
    pub fn name(self) -> &'static str {
        match self {
            IntentAction::Query => "QUERY",
            IntentAction::Execute => "EXECUTE",
            IntentAction::Delegate => "DELEGATE",
            IntentAction::Negotiate => "NEGOTIATE",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, SemanticError> {
        match name {
            "QUERY" => Ok(IntentAction::Query),
            "EXECUTE" => Ok(IntentAction::Execute),
            "DELEGATE" => Ok(IntentAction::Delegate),
            "NEGOTIATE" => Ok(IntentAction::Negotiate),
            other => Err(SemanticError::UnknownAction(other.to_string())),
        }
    }
}

/// Operational bounds a party requires or advertises. All numeric bounds
/// are strictly positive.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConstraintSet {
    pub max_latency_ms: Option<u64>,
    pub max_cost: Option<Decimal>,
    pub data_residency: Option<String>,
}

impl ConstraintSet {
    pub fn validate(&self) -> Result<(), SemanticError> {
        if self.max_latency_ms == Some(0) {
            return Err(SemanticError::NonPositiveConstraint("max_latency_ms"));
        }
        if let Some(cost) = self.max_cost {
            if cost <= Decimal::zero() {
                return Err(SemanticError::NonPositiveConstraint("max_cost"));
            }
        }
        Ok(())
    }

    pub fn to_doc(&self) -> Value {
        let mut map = BTreeMap::new();
        if let Some(ms) = self.max_latency_ms {
            map.insert("max_latency_ms".to_string(), Value::from(ms));
        }
        if let Some(cost) = self.max_cost {
            map.insert("max_cost".to_string(), Value::decimal(cost));
        }
        if let Some(region) = &self.data_residency {
            map.insert("data_residency".to_string(), Value::text(region));
        }
        Value::Map(map)
    }

    pub fn from_doc(value: &Value) -> Result<Self, SemanticError> {
        let map = value
            .as_map()
            .ok_or(SemanticError::CardInvalid("constraints"))?;
        for key in map.keys() {
            if !matches!(
                key.as_str(),
                "max_latency_ms" | "max_cost" | "data_residency"
            ) {
                return Err(SemanticError::CardInvalid("constraints"));
            }
        }
        let set = ConstraintSet {
            max_latency_ms: match map.get("max_latency_ms") {
                None => None,
                Some(v) => Some(
                    v.as_int()
                        .and_then(|i| u64::try_from(i).ok())
                        .ok_or(SemanticError::CardInvalid("max_latency_ms"))?,
                ),
            },
            max_cost: match map.get("max_cost") {
                None => None,
                Some(v) => Some(
                    v.as_decimal()
                        .ok_or(SemanticError::CardInvalid("max_cost"))?,
                ),
            },
            data_residency: match map.get("data_residency") {
                None => None,
                Some(v) => Some(
                    v.as_text()
                        .ok_or(SemanticError::CardInvalid("data_residency"))?
                        .to_string(),
                ),
            },
        };
        set.validate()?;
        Ok(set)
    }
}

/// A goal one agent asks another to satisfy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Intent {
    pub action: IntentAction,
    pub capability: String,
    pub parameters: Value,
    pub constraints: ConstraintSet,
}

pub fn validate_capability(name: &str) -> Result<(), SemanticError> {
    let ok = !name.is_empty()
        && name.chars().next().is_some_and(|c| c.is_ascii_lowercase())
        && name
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_');
    if ok {
        Ok(())
    } else {
        Err(SemanticError::InvalidCapability(name.to_string()))
    }
}

impl Intent {
    pub fn new(
        action: IntentAction,
        capability: impl Into<String>,
        parameters: Value,
        constraints: ConstraintSet,
    ) -> Result<Self, SemanticError> {
        let capability = capability.into();
        validate_capability(&capability)?;
        constraints.validate()?;
        Ok(Intent {
            action,
            capability,
            parameters,
            constraints,
        })
    }

    pub fn to_doc(&self) -> Value {
        object([
            ("action", Value::text(self.action.name())),
            ("capability", Value::text(&self.capability)),
            ("constraints", self.constraints.to_doc()),
            ("parameters", self.parameters.clone()),
        ])
        .expect("distinct keys")
    }

    pub fn from_doc(value: &Value) -> Result<Self, SemanticError> {
        let action = IntentAction::from_name(
            value
                .get_text("action")
                .ok_or(SemanticError::CardInvalid("action"))?,
        )?;
        let capability = value
            .get_text("capability")
            .ok_or(SemanticError::CardInvalid("capability"))?
            .to_string();
        let constraints = ConstraintSet::from_doc(
            value
                .get("constraints")
                .ok_or(SemanticError::CardInvalid("constraints"))?,
        )?;
        let parameters = value
            .get("parameters")
            .ok_or(SemanticError::CardInvalid("parameters"))?
            .clone();
        Intent::new(action, capability, parameters, constraints)
    }
}

/// SHA-256 over the canonical intent document. Stable under re-encoding.
pub fn intent_digest(intent: &Intent) -> [u8; 32] {
    Sha256::digest(doc::encode(&intent.to_doc())).into()
}

/// An agent's machine-readable profile: identity, advertised capabilities,
/// operational constraints, reputation snapshot, and endpoint.
///
/// The public key rides along so the identity binding and any signature
/// over the card can be checked without a separate key registry; the DID
/// commits to it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentCard {
    pub identity: Did,
    pub public_key: VerifyingKey,
    pub capabilities: Vec<String>,
    pub constraints: ConstraintSet,
    pub trust_score: Decimal,
    pub interaction_count: u64,
    pub interface: String,
}

impl AgentCard {
    pub fn to_doc(&self) -> Value {
        object([
            (
                "capabilities",
                Value::Seq(self.capabilities.iter().map(Value::text).collect()),
            ),
            ("constraints", self.constraints.to_doc()),
            ("identity", Value::text(self.identity.to_string())),
            ("interaction_count", Value::from(self.interaction_count)),
            ("interface", Value::text(&self.interface)),
            (
                "public_key",
                Value::text(hex::encode(self.public_key.as_bytes())),
            ),
            ("trust_score", Value::decimal(self.trust_score)),
        ])
        .expect("distinct keys")
    }

    pub fn encode(&self) -> Vec<u8> {
        doc::encode(&self.to_doc())
    }
}

/// Parses and validates a card document. Returns a card iff every
/// invariant holds; the error names the offending field.
pub fn validate_card(value: &Value) -> Result<AgentCard, SemanticError> {
    let map = value.as_map().ok_or(SemanticError::CardInvalid("card"))?;
    for key in map.keys() {
        if !matches!(
            key.as_str(),
            "capabilities"
                | "constraints"
                | "identity"
                | "interaction_count"
                | "interface"
                | "public_key"
                | "trust_score"
        ) {
            return Err(SemanticError::CardInvalid("unknown field"));
        }
    }

    let identity = Did::parse(
        value
            .get_text("identity")
            .ok_or(SemanticError::CardInvalid("identity"))?,
    )
    .map_err(|_| SemanticError::CardInvalid("identity"))?;

    let pk_hex = value
        .get_text("public_key")
        .ok_or(SemanticError::CardInvalid("public_key"))?;
    let pk_bytes: [u8; 32] = hex::decode(pk_hex)
        .ok()
        .and_then(|b| b.try_into().ok())
        .ok_or(SemanticError::CardInvalid("public_key"))?;
    let public_key = VerifyingKey::from_bytes(&pk_bytes)
        .map_err(|_| SemanticError::CardInvalid("public_key"))?;
    if Did::from_public_key(&public_key) != identity {
        return Err(SemanticError::CardInvalid("identity"));
    }

    let caps_value = value
        .get("capabilities")
        .and_then(Value::as_seq)
        .ok_or(SemanticError::CardInvalid("capabilities"))?;
    if caps_value.is_empty() {
        return Err(SemanticError::CardInvalid("capabilities"));
    }
    let mut capabilities = Vec::with_capacity(caps_value.len());
    for cap in caps_value {
        let cap = cap
            .as_text()
            .ok_or(SemanticError::CardInvalid("capabilities"))?;
        validate_capability(cap).map_err(|_| SemanticError::CardInvalid("capabilities"))?;
        if capabilities.iter().any(|c: &String| c == cap) {
            return Err(SemanticError::CardInvalid("capabilities"));
        }
        capabilities.push(cap.to_string());
    }

    let constraints = ConstraintSet::from_doc(
        value
            .get("constraints")
            .ok_or(SemanticError::CardInvalid("constraints"))?,
    )?;

    let trust_score = value
        .get("trust_score")
        .and_then(Value::as_decimal)
        .ok_or(SemanticError::CardInvalid("trust_score"))?;
    if trust_score < Decimal::zero() || trust_score > Decimal::from_int(1) {
        return Err(SemanticError::CardInvalid("trust_score"));
    }

    let interaction_count = value
        .get("interaction_count")
        .and_then(Value::as_int)
        .ok_or(SemanticError::CardInvalid("interaction_count"))?;
    let interaction_count = u64::try_from(interaction_count)
        .map_err(|_| SemanticError::CardInvalid("interaction_count"))?;

    let interface = value
        .get_text("interface")
        .ok_or(SemanticError::CardInvalid("interface"))?
        .to_string();

    Ok(AgentCard {
        identity,
        public_key,
        capabilities,
        constraints,
        trust_score,
        interaction_count,
        interface,
    })
}

/// True iff the card advertises the intent's capability and its
/// constraints are compatible with the intent's.
///
/// Compatibility: when both sides state a residency, they must be equal;
/// when both state a latency bound, the provider's advertised bound must
/// not exceed the requested one. A bound stated by only one side does not
/// constrain the match.
pub fn matches(card: &AgentCard, intent: &Intent) -> bool {
    if !card.capabilities.iter().any(|c| c == &intent.capability) {
        return false;
    }
    if let (Some(required), Some(advertised)) = (
        intent.constraints.data_residency.as_deref(),
        card.constraints.data_residency.as_deref(),
    ) {
        if required != advertised {
            return false;
        }
    }
    if let (Some(requested), Some(advertised)) = (
        intent.constraints.max_latency_ms,
        card.constraints.max_latency_ms,
    ) {
        if advertised > requested {
            return false;
        }
    }
    true
}

/// Filters to matching cards and orders them by suitability: trust score
/// descending, interaction count descending, DID ascending. Deterministic
/// and total.
pub fn rank_candidates(cards: &[AgentCard], intent: &Intent) -> Vec<AgentCard> {
    let mut out: Vec<AgentCard> = cards
        .iter()
        .filter(|c| matches(c, intent))
        .cloned()
        .collect();
    out.sort_by(|a, b| {
        b.trust_score
            .cmp(&a.trust_score)
            .then(b.interaction_count.cmp(&a.interaction_count))
            .then(a.identity.cmp(&b.identity))
    });
    out
}
