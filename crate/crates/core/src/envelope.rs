//! Signed message envelopes and the wire framing every protocol message
//! travels in.
//!
//! The envelope encoding is a compact binary layout: fixed-width identity
//! and session fields, minimal-length varints for counters, then the
//! payload as a canonical document, then the signature. The signature
//! covers every byte that precedes it, so any single-byte change to the
//! header or payload invalidates the envelope. On the wire an envelope is
//! prefixed with its length as a 4-byte big-endian integer.
//!
//! Layout (in order):
//!
//! ```text
//! version     u8            (currently 1)
//! msg_type    u8
//! sender      20 bytes      (DID digest)
//! recipient   20 bytes
//! session_id  16 bytes
//! sequence    varint
//! sent_at     varint
//! payload     varint length + canonical document bytes
//! signature   64 bytes
//! ```

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

use crate::doc::{self, Value};
use crate::identity::{Did, KeyPair, VerifyingKey, DID_DIGEST_LEN, SIGNATURE_LEN};

pub const ENVELOPE_VERSION: u8 = 1;
pub const SESSION_ID_LEN: usize = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnvelopeError {
    #[error("unsupported envelope version {0}")]
    UnsupportedVersion(u8),
    #[error("envelope signature does not verify")]
    TamperedEnvelope,
    #[error("duplicate (session, sender, sequence) delivery")]
    ReplayDetected,
    #[error("malformed envelope: {0}")]
    Malformed(&'static str),
    #[error("payload is not a canonical document: {0}")]
    Payload(#[from] doc::DocError),
    #[error("frame truncated or oversized")]
    BadFrame,
}

/// Message types, one per protocol interaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MsgType {
    Probe,
    Bid,
    Commit,
    Decline,
    Result,
    Rate,
    Abort,
    Announce,
    DhtFind,
    DhtStore,
    DhtReply,
    Challenge,
    ChallengeResponse,
}

pub const ALL_MSG_TYPES: [MsgType; 13] = [
    MsgType::Probe,
    MsgType::Bid,
    MsgType::Commit,
    MsgType::Decline,
    MsgType::Result,
    MsgType::Rate,
    MsgType::Abort,
    MsgType::Announce,
    MsgType::DhtFind,
    MsgType::DhtStore,
    MsgType::DhtReply,
    MsgType::Challenge,
    MsgType::ChallengeResponse,
];

impl MsgType {
    pub fn code(self) -> u8 {
        match self {
            MsgType::Probe => 0,
            MsgType::Bid => 1,
            MsgType::Commit => 2,
            MsgType::Decline => 3,
            MsgType::Result => 4,
            MsgType::Rate => 5,
            MsgType::Abort => 6,
            MsgType::Announce => 7,
            MsgType::DhtFind => 8,
            MsgType::DhtStore => 9,
            MsgType::DhtReply => 10,
            MsgType::Challenge => 11,
            MsgType::ChallengeResponse => 12,
        }
    }

    pub fn from_code(code: u8) -> Option<MsgType> {
        ALL_MSG_TYPES.iter().copied().find(|m| m.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            MsgType::Probe => "PROBE",
            MsgType::Bid => "BID",
            MsgType::Commit => "COMMIT",
            MsgType::Decline => "DECLINE",
            MsgType::Result => "RESULT",
            MsgType::Rate => "RATE",
            MsgType::Abort => "ABORT",
            MsgType::Announce => "ANNOUNCE",
            MsgType::DhtFind => "DHT_FIND",
            MsgType::DhtStore => "DHT_STORE",
            MsgType::DhtReply => "DHT_REPLY",
            MsgType::Challenge => "CHALLENGE",
            MsgType::ChallengeResponse => "CHALLENGE_RESPONSE",
        }
    }

    pub fn from_name(name: &str) -> Option<MsgType> {
        ALL_MSG_TYPES.iter().copied().find(|m| m.name() == name)
    }
}

impl fmt::Display for MsgType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Header fields supplied when sealing.
#[derive(Debug, Clone)]
pub struct Header {
    pub msg_type: MsgType,
    pub recipient: Did,
    pub session_id: [u8; SESSION_ID_LEN],
    pub sequence: u64,
    pub sent_at: u64,
}

/// A sealed protocol message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub version: u8,
    pub msg_type: MsgType,
    pub sender: Did,
    pub recipient: Did,
    pub session_id: [u8; SESSION_ID_LEN],
    pub sequence: u64,
    pub sent_at: u64,
    pub payload: Value,
    pub signature: [u8; SIGNATURE_LEN],
}

impl Envelope {
    /// The bytes the signature covers: everything before it.
    pub fn signed_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_unsigned(self, &mut out);
        out
    }

    /// Full encoding, without the wire length prefix.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_unsigned(self, &mut out);
        out.extend_from_slice(&self.signature);
        out
    }

    /// SHA-256 over the full encoding; used for transcripts and replay
    /// bookkeeping.
    pub fn digest(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        Sha256::digest(self.encode()).into()
    }

    pub fn payload_bytes(&self) -> Vec<u8> {
        doc::encode(&self.payload)
    }
}

fn write_unsigned(env: &Envelope, out: &mut Vec<u8>) {
    out.push(env.version);
    out.push(env.msg_type.code());
    out.extend_from_slice(env.sender.digest());
    out.extend_from_slice(env.recipient.digest());
    out.extend_from_slice(&env.session_id);
    write_varint(env.sequence, out);
    write_varint(env.sent_at, out);
    let payload = doc::encode(&env.payload);
    write_varint(payload.len() as u64, out);
    out.extend_from_slice(&payload);
}

/// Seals a payload: fills in the sender from the key pair and signs the
/// encoded header + payload.
pub fn seal(kp: &KeyPair, header: Header, payload: Value) -> Envelope {
    let mut env = Envelope {
        version: ENVELOPE_VERSION,
        msg_type: header.msg_type,
        sender: kp.did(),
        recipient: header.recipient,
        session_id: header.session_id,
        sequence: header.sequence,
        sent_at: header.sent_at,
        payload,
        signature: [0u8; SIGNATURE_LEN],
    };
    env.signature = kp.sign(&env.signed_bytes());
    env
}

/// Builds an envelope without a signature (all-zero bytes). Only the
/// baseline protocol profiles use this; full protocol messages are always
/// sealed.
pub fn seal_unsigned(sender: Did, header: Header, payload: Value) -> Envelope {
    Envelope {
        version: ENVELOPE_VERSION,
        msg_type: header.msg_type,
        sender,
        recipient: header.recipient,
        session_id: header.session_id,
        sequence: header.sequence,
        sent_at: header.sent_at,
        payload,
        signature: [0u8; SIGNATURE_LEN],
    }
}

/// Verifies the envelope against the sender's registered public key and
/// returns the payload. Tampered envelopes never yield a payload.
pub fn open_envelope<'a>(
    env: &'a Envelope,
    sender_pk: &VerifyingKey,
) -> Result<&'a Value, EnvelopeError> {
    if env.version != ENVELOPE_VERSION {
        return Err(EnvelopeError::UnsupportedVersion(env.version));
    }
    if Did::from_public_key(sender_pk) != env.sender {
        return Err(EnvelopeError::TamperedEnvelope);
    }
    if !crate::identity::verify(sender_pk, &env.signed_bytes(), &env.signature) {
        return Err(EnvelopeError::TamperedEnvelope);
    }
    Ok(&env.payload)
}

/// Tracks delivered (session, sender, sequence) triples; duplicates are
/// replays. One owner per node.
#[derive(Debug, Default, Clone)]
pub struct ReplayGuard {
    seen: HashSet<([u8; SESSION_ID_LEN], [u8; DID_DIGEST_LEN], u64)>,
}

impl ReplayGuard {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn check_and_record(&mut self, env: &Envelope) -> Result<(), EnvelopeError> {
        let key = (env.session_id, *env.sender.digest(), env.sequence);
        if !self.seen.insert(key) {
            return Err(EnvelopeError::ReplayDetected);
        }
        Ok(())
    }
}

/// Fraction of the encoded envelope that is not payload:
/// `(envelope bytes - payload bytes) / envelope bytes`.
pub fn envelope_overhead(env: &Envelope) -> f64 {
    let total = env.encode().len() as f64;
    let payload = env.payload_bytes().len() as f64;
    (total - payload) / total
}

/// Same ratio in millionths, for deterministic metric aggregation.
pub fn envelope_overhead_micros(env: &Envelope) -> u64 {
    let total = env.encode().len() as u64;
    let payload = env.payload_bytes().len() as u64;
    (total - payload) * 1_000_000 / total
}

// --- decoding ---

pub fn decode(bytes: &[u8]) -> Result<Envelope, EnvelopeError> {
    let mut r = Reader { bytes, pos: 0 };
    let version = r.u8()?;
    if version != ENVELOPE_VERSION {
        return Err(EnvelopeError::UnsupportedVersion(version));
    }
    let msg_type =
        MsgType::from_code(r.u8()?).ok_or(EnvelopeError::Malformed("unknown message type"))?;
    let sender = Did::from_digest(r.array::<DID_DIGEST_LEN>()?);
    let recipient = Did::from_digest(r.array::<DID_DIGEST_LEN>()?);
    let session_id = r.array::<SESSION_ID_LEN>()?;
    let sequence = r.varint()?;
    let sent_at = r.varint()?;
    let payload_len = r.varint()? as usize;
    let payload_bytes = r.take(payload_len)?;
    let payload = doc::decode(payload_bytes)?;
    let signature = r.array::<SIGNATURE_LEN>()?;
    if r.pos != bytes.len() {
        return Err(EnvelopeError::Malformed("trailing bytes"));
    }
    Ok(Envelope {
        version,
        msg_type,
        sender,
        recipient,
        session_id,
        sequence,
        sent_at,
        payload,
        signature,
    })
}

/// Length-prefixed wire form: 4-byte big-endian length, then the envelope.
pub fn write_frame(env: &Envelope) -> Vec<u8> {
    let body = env.encode();
    let mut out = Vec::with_capacity(body.len() + 4);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

/// Reads one frame from the front of `bytes`; returns the envelope and the
/// number of bytes consumed.
pub fn read_frame(bytes: &[u8]) -> Result<(Envelope, usize), EnvelopeError> {
    if bytes.len() < 4 {
        return Err(EnvelopeError::BadFrame);
    }
    let len = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
    let end = 4usize.checked_add(len).ok_or(EnvelopeError::BadFrame)?;
    if bytes.len() < end {
        return Err(EnvelopeError::BadFrame);
    }
    let env = decode(&bytes[4..end])?;
    Ok((env, end))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u8(&mut self) -> Result<u8, EnvelopeError> {
        let b = *self
            .bytes
            .get(self.pos)
            .ok_or(EnvelopeError::Malformed("truncated"))?;
        self.pos += 1;
        Ok(b)
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8], EnvelopeError> {
        let end = self
            .pos
            .checked_add(len)
            .ok_or(EnvelopeError::Malformed("truncated"))?;
        if end > self.bytes.len() {
            return Err(EnvelopeError::Malformed("truncated"));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], EnvelopeError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn varint(&mut self) -> Result<u64, EnvelopeError> {
        let mut value: u64 = 0;
        let mut shift = 0u32;
        loop {
            let byte = self.u8()?;
            if shift == 63 && byte > 1 {
                return Err(EnvelopeError::Malformed("varint overflow"));
            }
            value |= u64::from(byte & 0x7f) << shift;
            if byte & 0x80 == 0 {
                // minimal encoding required: no redundant trailing group
                if byte == 0 && shift != 0 {
                    return Err(EnvelopeError::Malformed("non-minimal varint"));
                }
                return Ok(value);
            }
            shift += 7;
            if shift > 63 {
                return Err(EnvelopeError::Malformed("varint overflow"));
            }
        }
    }
}

fn write_varint(mut value: u64, out: &mut Vec<u8>) {
    loop {
        let byte = (value & 0x7f) as u8;
        value >>= 7;
        if value == 0 {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}
