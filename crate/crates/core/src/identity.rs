//! Decentralized identity: key pairs, `did:acp` identifiers, signatures,
//! challenge–response authentication, and verifiable credentials.
//!
//! A DID is self-certifying: its id is the base-58 form of the first 20
//! bytes of SHA-256 over the Ed25519 public key, so anyone holding the key
//! can check the binding without a registry. Signatures are Ed25519 —
//! deterministic, which keeps whole simulation runs replayable from seeds.

use std::collections::HashSet;
use std::fmt;

use ed25519_dalek::{Signer, Verifier};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::doc::{object, Value};
use crate::rng::SplitMix64;

pub use ed25519_dalek::VerifyingKey;

/// DID method name; rendered form is `did:acp:<base58 id>`.
pub const DID_METHOD: &str = "acp";

/// How long an issued challenge stays answerable, in simulated ms.
pub const CHALLENGE_TTL_MS: u64 = 30_000;

/// Bytes of the SHA-256 public-key digest kept in a DID.
pub const DID_DIGEST_LEN: usize = 20;

pub const SIGNATURE_LEN: usize = 64;
pub const SEED_LEN: usize = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IdentityError {
    #[error("seed must be exactly {SEED_LEN} bytes, got {0}")]
    InvalidSeed(usize),
    #[error("signature must be exactly {SIGNATURE_LEN} bytes, got {0}")]
    InvalidSignature(usize),
    #[error("malformed DID: {0}")]
    InvalidDid(&'static str),
    #[error("challenge nonce already consumed")]
    ReplayDetected,
    #[error("challenge older than {CHALLENGE_TTL_MS} ms")]
    ChallengeExpired,
    #[error("signature verification failed")]
    VerificationFailed,
    #[error("credential expired")]
    CredentialExpired,
    #[error("credential invalid")]
    CredentialInvalid,
    #[error("key file must be {0} bytes")]
    InvalidKeyFile(usize),
}

/// A decentralized identifier. Value type; equality and ordering are over
/// the underlying public-key digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Did {
    digest: [u8; DID_DIGEST_LEN],
}

impl Did {
    pub fn from_public_key(pk: &VerifyingKey) -> Did {
        let hash = Sha256::digest(pk.as_bytes());
        let mut digest = [0u8; DID_DIGEST_LEN];
        digest.copy_from_slice(&hash[..DID_DIGEST_LEN]);
        Did { digest }
    }

    pub fn from_digest(digest: [u8; DID_DIGEST_LEN]) -> Did {
        Did { digest }
    }

    pub fn digest(&self) -> &[u8; DID_DIGEST_LEN] {
        &self.digest
    }

    /// Parses the rendered `did:acp:<id>` form.
    pub fn parse(text: &str) -> Result<Did, IdentityError> {
        let id = text
            .strip_prefix("did:")
            .and_then(|rest| rest.strip_prefix(DID_METHOD))
            .and_then(|rest| rest.strip_prefix(':'))
            .ok_or(IdentityError::InvalidDid("missing did:acp: prefix"))?;
        if id.is_empty() {
            return Err(IdentityError::InvalidDid("empty id"));
        }
        let bytes = bs58::decode(id)
            .into_vec()
            .map_err(|_| IdentityError::InvalidDid("id is not base-58"))?;
        if bytes.len() != DID_DIGEST_LEN {
            return Err(IdentityError::InvalidDid("id has wrong length"));
        }
        let mut digest = [0u8; DID_DIGEST_LEN];
        digest.copy_from_slice(&bytes);
        Ok(Did { digest })
    }
}

impl fmt::Display for Did {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "did:{}:{}",
            DID_METHOD,
            bs58::encode(&self.digest).into_string()
        )
    }
}

impl fmt::Debug for Did {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

/// Signing key pair. The secret key never leaves this type except through
/// the explicit key-file codec.
#[derive(Clone)]
pub struct KeyPair {
    signing: ed25519_dalek::SigningKey,
}

impl KeyPair {
    /// Deterministic: the same 32-byte seed always yields the same pair.
    pub fn from_seed(seed: &[u8]) -> Result<KeyPair, IdentityError> {
        let seed: &[u8; SEED_LEN] = seed
            .try_into()
            .map_err(|_| IdentityError::InvalidSeed(seed.len()))?;
        Ok(KeyPair {
            signing: ed25519_dalek::SigningKey::from_bytes(seed),
        })
    }

    pub fn public_key(&self) -> VerifyingKey {
        self.signing.verifying_key()
    }

    pub fn did(&self) -> Did {
        Did::from_public_key(&self.public_key())
    }

    pub fn sign(&self, message: &[u8]) -> [u8; SIGNATURE_LEN] {
        self.signing.sign(message).to_bytes()
    }

    /// Key-file form: secret seed followed by public key, 64 bytes. The
    /// CLI writes these owner-read-only.
    pub fn to_file_bytes(&self) -> [u8; 64] {
        let mut out = [0u8; 64];
        out[..32].copy_from_slice(&self.signing.to_bytes());
        out[32..].copy_from_slice(self.public_key().as_bytes());
        out
    }

    pub fn from_file_bytes(bytes: &[u8]) -> Result<KeyPair, IdentityError> {
        if bytes.len() != 64 {
            return Err(IdentityError::InvalidKeyFile(64));
        }
        let kp = KeyPair::from_seed(&bytes[..32])?;
        if kp.public_key().as_bytes() != &bytes[32..] {
            return Err(IdentityError::InvalidKeyFile(64));
        }
        Ok(kp)
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyPair({})", self.did())
    }
}

pub fn did_from_public_key(pk: &VerifyingKey) -> Did {
    Did::from_public_key(pk)
}

/// True iff `sig` is a valid signature over `message` under `pk`.
pub fn verify(pk: &VerifyingKey, message: &[u8], sig: &[u8; SIGNATURE_LEN]) -> bool {
    let sig = ed25519_dalek::Signature::from_bytes(sig);
    pk.verify(message, &sig).is_ok()
}

/// Checks length before verification, for wire paths handling raw bytes.
pub fn parse_signature(bytes: &[u8]) -> Result<[u8; SIGNATURE_LEN], IdentityError> {
    bytes
        .try_into()
        .map_err(|_| IdentityError::InvalidSignature(bytes.len()))
}

// --- challenge–response ---

/// A single-use liveness challenge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Challenge {
    pub nonce: [u8; 32],
    pub issued_at: u64,
    pub challenger: Did,
}

impl Challenge {
    /// The bytes a responder signs: the canonical encoding of the
    /// challenge fields.
    pub fn signing_bytes(&self) -> Vec<u8> {
        let doc = object([
            ("challenger", Value::text(self.challenger.to_string())),
            ("issued_at", Value::from(self.issued_at)),
            ("nonce", Value::text(hex::encode(self.nonce))),
        ])
        .expect("distinct keys");
        crate::doc::encode(&doc)
    }
}

/// Nonces that have already authenticated someone; one owner per node.
#[derive(Debug, Default, Clone)]
pub struct ConsumedNonces {
    seen: HashSet<[u8; 32]>,
}

impl ConsumedNonces {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }
}

pub fn issue_challenge(challenger: Did, now: u64, rng: &mut SplitMix64) -> Challenge {
    Challenge {
        nonce: rng.next_array(),
        issued_at: now,
        challenger,
    }
}

pub fn answer_challenge(kp: &KeyPair, challenge: &Challenge) -> [u8; SIGNATURE_LEN] {
    kp.sign(&challenge.signing_bytes())
}

/// Verifies a challenge response and consumes the nonce on success, so a
/// second verification of the same nonce reports a replay.
pub fn verify_challenge(
    pk: &VerifyingKey,
    challenge: &Challenge,
    sig: &[u8; SIGNATURE_LEN],
    consumed: &mut ConsumedNonces,
    now: u64,
) -> Result<(), IdentityError> {
    if consumed.seen.contains(&challenge.nonce) {
        return Err(IdentityError::ReplayDetected);
    }
    if now.saturating_sub(challenge.issued_at) > CHALLENGE_TTL_MS {
        return Err(IdentityError::ChallengeExpired);
    }
    if !verify(pk, &challenge.signing_bytes(), sig) {
        return Err(IdentityError::VerificationFailed);
    }
    consumed.seen.insert(challenge.nonce);
    Ok(())
}

// --- verifiable credentials ---

/// A signed claim by an issuer that a subject holds some capability.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifiableCredential {
    pub subject: Did,
    pub issuer: Did,
    pub claim: String,
    pub expires_at: u64,
    pub signature: [u8; SIGNATURE_LEN],
}

impl VerifiableCredential {
    fn signing_bytes(subject: &Did, issuer: &Did, claim: &str, expires_at: u64) -> Vec<u8> {
        let doc = object([
            ("claim", Value::text(claim)),
            ("expires_at", Value::from(expires_at)),
            ("issuer", Value::text(issuer.to_string())),
            ("subject", Value::text(subject.to_string())),
        ])
        .expect("distinct keys");
        crate::doc::encode(&doc)
    }
}

pub fn issue_credential(
    issuer: &KeyPair,
    subject: Did,
    claim: impl Into<String>,
    expires_at: u64,
) -> VerifiableCredential {
    let claim = claim.into();
    let issuer_did = issuer.did();
    let signature = issuer.sign(&VerifiableCredential::signing_bytes(
        &subject,
        &issuer_did,
        &claim,
        expires_at,
    ));
    VerifiableCredential {
        subject,
        issuer: issuer_did,
        claim,
        expires_at,
        signature,
    }
}

/// Valid iff the issuer's signature checks out and `now` is strictly
/// before the expiry.
pub fn verify_credential(
    vc: &VerifiableCredential,
    issuer_pk: &VerifyingKey,
    now: u64,
) -> Result<(), IdentityError> {
    if Did::from_public_key(issuer_pk) != vc.issuer {
        return Err(IdentityError::CredentialInvalid);
    }
    let bytes =
        VerifiableCredential::signing_bytes(&vc.subject, &vc.issuer, &vc.claim, vc.expires_at);
    if !verify(issuer_pk, &bytes, &vc.signature) {
        return Err(IdentityError::CredentialInvalid);
    }
    if now >= vc.expires_at {
        return Err(IdentityError::CredentialExpired);
    }
    Ok(())
}
