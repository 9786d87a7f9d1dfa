//! Core protocol stack for agent-to-agent collaboration: decentralized
//! identity, canonical documents, signed envelopes, capability cards,
//! the negotiation lifecycle, DHT discovery, reputation, and delegation.
//!
//! Everything in this crate is deterministic and free of wall-clock time,
//! OS randomness, and I/O (except the explicit ledger/key file codecs).
//! Time is always a caller-supplied simulated millisecond counter, and
//! randomness always comes from a caller-owned seeded generator, so the
//! same inputs reproduce the same bytes on every platform.

#![forbid(unsafe_code)]

pub mod discovery;
pub mod doc;
pub mod envelope;
pub mod identity;
pub mod negotiation;
pub mod orchestration;
pub mod reputation;
pub mod rng;
pub mod semantic;
