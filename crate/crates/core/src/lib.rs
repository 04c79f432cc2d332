//! Video-integrity toolkit: frame digests from a capture agent, a
//! permissioned voting ledger that stores them, and a forensic verifier
//! that proves or refutes an archived frame against the ledger.
//!
//! The pipeline, end to end:
//!
//! ```text
//! SFV1 stream ──► capture agent ──► digest channel (reliable) ──► ingest ──► ledger cluster
//!                      │                                            │
//!                      └──► frame channel (lossy datagrams) ────────┘
//!                                                                   │
//!                                         archive + gap list ◄──────┘
//!                                                 │
//!                                             verifier ◄── ledger query
//! ```
//!
//! Frames travel over a best-effort datagram channel and may be lost;
//! their digests travel over a reliable channel and may not. Ingest
//! reconciles the two: a digest record reaches the ledger only if every
//! frame it covers was reassembled. The verifier recomputes digests from
//! the archived pixels and compares them with what the ledger returns.

pub mod bench;
pub mod digest;
pub mod frame_io;
pub mod ledger;
pub mod pipeline;
pub mod transport;
pub mod verifier;
pub mod wire;

pub use digest::{DigestAlgorithm, DigestRecord, WriteMode};
pub use frame_io::{Frame, SelectionPolicy, StreamHeader, StreamId};
