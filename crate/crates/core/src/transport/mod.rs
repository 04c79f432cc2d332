//! Dual-channel streaming transport.
//!
//! The capture agent pushes every frame over a lossy datagram channel
//! and every digest record over a reliable ordered channel. Ingest
//! reassembles frames, archives them, and forwards to the ledger only
//! those records whose covered frames all arrived — a digest for a frame
//! the archive cannot produce would be unverifiable evidence, so it is
//! discarded before commit.

mod capture;
mod ingest;

pub use capture::{
    connect_sinks, run_capture_agent, CaptureConfig, CaptureError, CaptureSummary, DigestSink,
    FrameSink, TcpDigestSink, UdpFrameSink, VecDigestSink, VecFrameSink,
};
pub use ingest::{
    ingest_offline, read_archive_frames, read_gap_file, run_ingest, write_gap_file,
    DiscardedRecord, FileArchive, FrameArchive, IngestCounters, IngestReport, IngestSockets,
    IngestState, IngestSummary, LedgerSubmit, MemArchive, RecordingLedger,
};

use thiserror::Error;

/// Transport-side errors.
#[derive(Debug, Error)]
pub enum TransportError {
    #[error("digest channel: {0}")]
    DigestChannel(#[from] crate::wire::WireError),
    #[error("frame channel: {0}")]
    FrameChannel(std::io::Error),
    #[error("stream source: {0}")]
    Source(#[from] crate::frame_io::FormatError),
    #[error("digest channel protocol violation: {0}")]
    Protocol(String),
    #[error("ledger submission failed: {0}")]
    Ledger(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
