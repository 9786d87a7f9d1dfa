//! Per-interaction satisfaction scoring and the signed, hash-chained
//! reputation ledger.
//!
//! A settled engagement is scored on three factors: accuracy (did the
//! result check out), latency (was it inside the agreed bound), and
//! security (were there protocol violations). The composite is
//! `0.5*accuracy + 0.3*latency + 0.2*security`, forced to zero whenever
//! the security factor is zero. Weights are configurable; those are the
//! defaults. All score arithmetic is integer micro-units so every
//! platform computes identical ledgers.
//!
//! Trust is the Laplace-smoothed mean of a subject's composites:
//! `(sum + 1) / (n + 2)`, so an agent with no history sits at 0.5 and no
//! finite history reaches exactly 0 or 1.

use thiserror::Error;

use crate::doc::{self, object, Decimal, Value};
use crate::envelope::SESSION_ID_LEN;
use crate::identity::{Did, KeyPair, VerifyingKey, SIGNATURE_LEN};
use crate::negotiation::SettlementReport;
use sha2::{Digest, Sha256};

pub const MICROS: u64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReputationError {
    #[error("this rater already scored this session")]
    DuplicateRating,
    #[error("entry signature or score arithmetic rejected")]
    EntryRejected,
    #[error("rater was not the requester of the rated session")]
    NotAParty,
    #[error("ledger bytes do not reproduce the declared chain digest")]
    CorruptLedger,
}

/// Scoring weights in micro-units; must sum to one million.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoreWeights {
    pub accuracy_micros: u64,
    pub latency_micros: u64,
    pub security_micros: u64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights {
            accuracy_micros: 500_000,
            latency_micros: 300_000,
            security_micros: 200_000,
        }
    }
}

/// The three factor scores plus their weighted composite, in micro-units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoreBreakdown {
    pub accuracy: u8,
    pub latency_micros: u64,
    pub security: u8,
    pub composite_micros: u64,
}

/// Scores one settlement report.
///
/// Latency credit is full at ratio <= 1 and decays linearly to zero at
/// ratio >= 2: `clamp(2 - ratio, 0, 1)`. Any protocol violation zeroes
/// the whole composite.
pub fn score_interaction(report: &SettlementReport, weights: &ScoreWeights) -> ScoreBreakdown {
    let accuracy: u8 = report.accuracy_ok.into();
    let latency_micros = (2 * MICROS)
        .saturating_sub(report.latency_ratio_micros)
        .min(MICROS);
    let security: u8 = (report.violations == 0).into();
    let composite_micros = if security == 0 {
        0
    } else {
        (weights.accuracy_micros * u64::from(accuracy)
            + weights.latency_micros * latency_micros / MICROS
            + weights.security_micros)
            .min(MICROS)
    };
    ScoreBreakdown {
        accuracy,
        latency_micros,
        security,
        composite_micros,
    }
}

/// One signed satisfaction record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReputationEntry {
    pub rater: Did,
    pub ratee: Did,
    pub session_id: [u8; SESSION_ID_LEN],
    pub accuracy: u8,
    pub latency_score: Decimal,
    pub security_score: u8,
    pub composite: Decimal,
    pub rated_at: u64,
    pub signature: [u8; SIGNATURE_LEN],
}

impl ReputationEntry {
    fn body_doc(&self) -> Value {
        object([
            ("accuracy", Value::from(u64::from(self.accuracy))),
            ("composite", Value::decimal(self.composite)),
            ("latency_score", Value::decimal(self.latency_score)),
            ("rated_at", Value::from(self.rated_at)),
            ("ratee", Value::text(self.ratee.to_string())),
            ("rater", Value::text(self.rater.to_string())),
            (
                "security_score",
                Value::from(u64::from(self.security_score)),
            ),
            ("session_id", Value::text(hex::encode(self.session_id))),
        ])
        .expect("distinct keys")
    }

    pub fn to_doc(&self) -> Value {
        let Value::Map(mut map) = self.body_doc() else {
            unreachable!()
        };
        map.insert(
            "signature".to_string(),
            Value::text(hex::encode(self.signature)),
        );
        Value::Map(map)
    }

    pub fn from_doc(value: &Value) -> Option<ReputationEntry> {
        Some(ReputationEntry {
            rater: Did::parse(value.get_text("rater")?).ok()?,
            ratee: Did::parse(value.get_text("ratee")?).ok()?,
            session_id: hex::decode(value.get_text("session_id")?)
                .ok()?
                .try_into()
                .ok()?,
            accuracy: u8::try_from(value.get_u64("accuracy")?).ok()?,
            latency_score: value.get("latency_score")?.as_decimal()?,
            security_score: u8::try_from(value.get_u64("security_score")?).ok()?,
            composite: value.get("composite")?.as_decimal()?,
            rated_at: value.get_u64("rated_at")?,
            signature: hex::decode(value.get_text("signature")?)
                .ok()?
                .try_into()
                .ok()?,
        })
    }

    /// Byte form used both for signing (without signature) and for the
    /// chain digest (with it).
    pub fn encode(&self) -> Vec<u8> {
        doc::encode(&self.to_doc())
    }
}

/// Builds and signs an entry from a score breakdown.
pub fn sign_entry(
    rater: &KeyPair,
    ratee: Did,
    session_id: [u8; SESSION_ID_LEN],
    scores: &ScoreBreakdown,
    rated_at: u64,
) -> ReputationEntry {
    let mut entry = ReputationEntry {
        rater: rater.did(),
        ratee,
        session_id,
        accuracy: scores.accuracy,
        latency_score: Decimal::from_micros(scores.latency_micros as i64),
        security_score: scores.security,
        composite: Decimal::from_micros(scores.composite_micros as i64),
        rated_at,
        signature: [0; SIGNATURE_LEN],
    };
    entry.signature = rater.sign(&doc::encode(&entry.body_doc()));
    entry
}

fn entry_consistent(entry: &ReputationEntry, weights: &ScoreWeights) -> bool {
    if entry.accuracy > 1 || entry.security_score > 1 {
        return false;
    }
    let lat = entry.latency_score.micros();
    if !(0..=MICROS as i64).contains(&lat) {
        return false;
    }
    let expected = if entry.security_score == 0 {
        0
    } else {
        (weights.accuracy_micros * u64::from(entry.accuracy)
            + weights.latency_micros * lat as u64 / MICROS
            + weights.security_micros)
            .min(MICROS)
    };
    entry.composite.micros() == expected as i64
}

/// The append-only reputation ledger with a running chain digest:
/// `head_i = SHA-256(head_{i-1} || entry_bytes_i)`, genesis all-zero.
#[derive(Debug, Clone, Default)]
pub struct Ledger {
    entries: Vec<ReputationEntry>,
    head: [u8; 32],
    weights: ScoreWeights,
}

impl Ledger {
    pub fn new() -> Self {
        Ledger {
            entries: Vec::new(),
            head: [0u8; 32],
            weights: ScoreWeights::default(),
        }
    }

    pub fn with_weights(weights: ScoreWeights) -> Self {
        Ledger {
            weights,
            ..Ledger::new()
        }
    }

    pub fn head(&self) -> [u8; 32] {
        self.head
    }

    pub fn entries(&self) -> &[ReputationEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends a signed entry after verifying the signature, the score
    /// arithmetic, one-rating-per-(rater, session), and — when the caller
    /// knows the session's requester — that the rater was that party.
    pub fn append(
        &mut self,
        entry: ReputationEntry,
        rater_pk: &VerifyingKey,
        session_requester: Option<Did>,
    ) -> Result<(), ReputationError> {
        if let Some(requester) = session_requester {
            if requester != entry.rater {
                return Err(ReputationError::NotAParty);
            }
        }
        if Did::from_public_key(rater_pk) != entry.rater {
            return Err(ReputationError::EntryRejected);
        }
        let body = {
            let mut unsigned = entry.clone();
            unsigned.signature = [0; SIGNATURE_LEN];
            doc::encode(&unsigned.body_doc())
        };
        if !crate::identity::verify(rater_pk, &body, &entry.signature) {
            return Err(ReputationError::EntryRejected);
        }
        if !entry_consistent(&entry, &self.weights) {
            return Err(ReputationError::EntryRejected);
        }
        if self
            .entries
            .iter()
            .any(|e| e.rater == entry.rater && e.session_id == entry.session_id)
        {
            return Err(ReputationError::DuplicateRating);
        }
        self.head = chain_step(&self.head, &entry.encode());
        self.entries.push(entry);
        Ok(())
    }

    /// Smoothed trust for one subject: `(sum + 1) / (n + 2)` over its
    /// composites, floor division in micro-units, plus the raw count.
    pub fn trust(&self, who: &Did) -> (Decimal, u64) {
        let mut sum_micros: u64 = 0;
        let mut count: u64 = 0;
        for entry in &self.entries {
            if entry.ratee == *who {
                sum_micros += entry.composite.micros() as u64;
                count += 1;
            }
        }
        let trust_micros = (sum_micros + MICROS) / (count + 2);
        (Decimal::from_micros(trust_micros as i64), count)
    }

    /// Recomputes the whole chain; detects truncation, reordering, and
    /// edited entries.
    pub fn verify_chain(&self) -> bool {
        let mut head = [0u8; 32];
        for entry in &self.entries {
            head = chain_step(&head, &entry.encode());
        }
        head == self.head
    }

    // --- file form: header line with the head digest, one entry per line ---

    pub fn to_file_string(&self) -> String {
        let mut out = format!("acp-ledger v1 {}\n", hex::encode(self.head));
        for entry in &self.entries {
            out.push_str(&doc::encode_to_string(&entry.to_doc()));
            out.push('\n');
        }
        out
    }

    pub fn from_file_str(text: &str) -> Result<Ledger, ReputationError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(ReputationError::CorruptLedger)?;
        let declared = header
            .strip_prefix("acp-ledger v1 ")
            .and_then(|h| hex::decode(h).ok())
            .and_then(|h| <[u8; 32]>::try_from(h).ok())
            .ok_or(ReputationError::CorruptLedger)?;

        let mut ledger = Ledger::new();
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let value = doc::decode(line.as_bytes()).map_err(|_| ReputationError::CorruptLedger)?;
            let entry = ReputationEntry::from_doc(&value).ok_or(ReputationError::CorruptLedger)?;
            ledger.head = chain_step(&ledger.head, &entry.encode());
            ledger.entries.push(entry);
        }
        if ledger.head != declared {
            return Err(ReputationError::CorruptLedger);
        }
        Ok(ledger)
    }
}

fn chain_step(prev: &[u8; 32], entry_bytes: &[u8]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(prev);
    hasher.update(entry_bytes);
    hasher.finalize().into()
}
