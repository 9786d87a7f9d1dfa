//! Deterministic discrete-event simulation of an agent network running
//! the full protocol stack: challenge-gated sessions, the negotiation
//! lifecycle, DHT discovery, proof-of-intent delegation, and the
//! reputation ledger, all inside one seeded event loop.
//!
//! A run is a pure function of (scenario bytes, seed): the event queue is
//! ordered by (time, sequence), all randomness comes from seeded
//! generators, node state iterates over ordered maps only, and nothing
//! reads the wall clock. Re-running a scenario with the same seed
//! reproduces byte-identical metrics, transcripts, and reports.

#![forbid(unsafe_code)]

pub mod event;
pub mod link;
pub mod metrics;
pub mod node;
pub mod persist;
pub mod report;
pub mod run;
pub mod scenario;
pub mod sweep;

pub use run::{run, RunOutput, SimError};
pub use scenario::{Scenario, ScenarioError};
