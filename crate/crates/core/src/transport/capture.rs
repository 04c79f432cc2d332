//! The capture agent: digest frames as they leave the device.
//!
//! Frames are fragmented and pushed over the frame channel best-effort;
//! selected frames are digested per the write mode and the records go
//! over the digest channel, which must not lose anything — a digest
//! channel failure aborts the stream, a frame channel failure is logged
//! and streaming continues.
//!
//! Loss is injected at the sender: when `drop_prob > 0`, one uniform
//! draw in [0,1) is taken per datagram, in construction order, from
//! ChaCha8 seeded with SHA-256("veriframe.drop.v1", seed LE64); the
//! datagram is dropped when the draw falls below `drop_prob`. Replaying
//! the same draws over the same fragment sequence predicts exactly which
//! frames arrive, which is what makes loss tests exact instead of
//! statistical.

use std::io::Write;
use std::net::{TcpStream, UdpSocket};
use std::time::{Duration, Instant};

use log::{debug, warn};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::digest::{DigestAlgorithm, RecordBuilder, WriteMode};
use crate::frame_io::{is_selected, Frame, FormatError, SelectionPolicy, StreamHeader};
use crate::wire::{fragment_frame, write_framed, HashChannelMessage};

use super::TransportError;

/// Reliable sink for digest-channel messages.
pub trait DigestSink {
    fn send_message(&mut self, msg: &HashChannelMessage) -> Result<(), TransportError>;
}

/// Best-effort sink for encoded frame datagrams.
pub trait FrameSink {
    fn send_datagram(&mut self, bytes: &[u8]) -> Result<(), TransportError>;
}

/// Digest sink over any reliable byte stream (normally TCP).
pub struct TcpDigestSink<W: Write>(pub W);

impl<W: Write> DigestSink for TcpDigestSink<W> {
    fn send_message(&mut self, msg: &HashChannelMessage) -> Result<(), TransportError> {
        write_framed(&mut self.0, &msg.encode())?;
        Ok(())
    }
}

/// Frame sink over a connected UDP socket, lightly paced so loopback
/// receive buffers keep up with large frames.
pub struct UdpFrameSink {
    socket: UdpSocket,
    sent_since_pause: u32,
    pace_every: u32,
    pace: Duration,
}

impl UdpFrameSink {
    pub fn new(socket: UdpSocket) -> Self {
        UdpFrameSink {
            socket,
            sent_since_pause: 0,
            pace_every: 32,
            pace: Duration::from_micros(300),
        }
    }
}

impl FrameSink for UdpFrameSink {
    fn send_datagram(&mut self, bytes: &[u8]) -> Result<(), TransportError> {
        self.socket
            .send(bytes)
            .map_err(TransportError::FrameChannel)?;
        self.sent_since_pause += 1;
        if self.sent_since_pause >= self.pace_every {
            self.sent_since_pause = 0;
            std::thread::sleep(self.pace);
        }
        Ok(())
    }
}

/// Collecting digest sink for in-process pipelines and tests.
#[derive(Default)]
pub struct VecDigestSink {
    pub messages: Vec<HashChannelMessage>,
}

impl DigestSink for VecDigestSink {
    fn send_message(&mut self, msg: &HashChannelMessage) -> Result<(), TransportError> {
        self.messages.push(msg.clone());
        Ok(())
    }
}

/// Collecting frame sink for in-process pipelines and tests.
#[derive(Default)]
pub struct VecFrameSink {
    pub datagrams: Vec<Vec<u8>>,
}

impl FrameSink for VecFrameSink {
    fn send_datagram(&mut self, bytes: &[u8]) -> Result<(), TransportError> {
        self.datagrams.push(bytes.to_vec());
        Ok(())
    }
}

/// Capture parameters.
#[derive(Debug, Clone)]
pub struct CaptureConfig {
    pub policy: SelectionPolicy,
    pub algorithm: DigestAlgorithm,
    pub mode: WriteMode,
    /// Per-datagram drop probability for the loss-injection hook.
    pub drop_prob: f64,
    pub seed: u64,
}

/// What the agent did.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CaptureSummary {
    pub frames_sent: u64,
    /// Datagrams put on the wire (after the injection hook).
    pub datagrams_sent: u64,
    /// Datagrams suppressed by the injection hook.
    pub datagrams_dropped: u64,
    pub records_sent: u64,
    pub wall_time: Duration,
}

/// Capture aborted mid-stream; the summary covers what was sent.
#[derive(Debug, Error)]
#[error("capture aborted after {} frames: {source}", partial.frames_sent)]
pub struct CaptureError {
    pub partial: CaptureSummary,
    pub source: TransportError,
}

fn drop_rng(seed: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"veriframe.drop.v1");
    h.update(seed.to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Uniform draw in [0, 1) from the top 53 bits of a u64.
pub(crate) fn unit_draw(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// Streams one video: announce, every frame fragmented onto the frame
/// channel, digest records for selected frames on the digest channel,
/// then end-of-stream.
pub fn run_capture_agent<I>(
    header: &StreamHeader,
    frames: I,
    config: &CaptureConfig,
    digest_sink: &mut dyn DigestSink,
    frame_sink: &mut dyn FrameSink,
) -> Result<CaptureSummary, CaptureError>
where
    I: IntoIterator<Item = Result<Frame, FormatError>>,
{
    let start = Instant::now();
    let mut summary = CaptureSummary::default();
    let abort = |summary: &CaptureSummary, source: TransportError| CaptureError {
        partial: CaptureSummary {
            wall_time: start.elapsed(),
            ..summary.clone()
        },
        source,
    };

    header
        .validate()
        .map_err(|e| abort(&summary, TransportError::Source(e)))?;
    config
        .mode
        .validate()
        .map_err(|e| abort(&summary, TransportError::Protocol(e.to_string())))?;
    digest_sink
        .send_message(&HashChannelMessage::Announce(*header))
        .map_err(|e| abort(&summary, e))?;

    let mut rng = (config.drop_prob > 0.0).then(|| drop_rng(config.seed));
    let mut builder = RecordBuilder::new(config.algorithm, config.mode, header.stream_id);
    let frame_len = header.frame_len();

    for frame in frames {
        let frame = frame.map_err(|e| abort(&summary, TransportError::Source(e)))?;
        if frame.pixels.len() != frame_len {
            let e = FormatError::FrameSize {
                frame_index: frame.index,
                expected: frame_len,
                got: frame.pixels.len(),
            };
            return Err(abort(&summary, TransportError::Source(e)));
        }
        for datagram in fragment_frame(header.stream_id, frame.index, &frame.pixels) {
            if let Some(rng) = rng.as_mut() {
                if unit_draw(rng) < config.drop_prob {
                    summary.datagrams_dropped += 1;
                    continue;
                }
            }
            match frame_sink.send_datagram(&datagram.encode()) {
                Ok(()) => summary.datagrams_sent += 1,
                Err(e) => {
                    // Frame loss is tolerated by design; keep streaming.
                    warn!("frame channel send failed (continuing): {e}");
                }
            }
        }
        summary.frames_sent += 1;
        let selected = is_selected(config.policy, frame.index)
            .map_err(|e| abort(&summary, TransportError::Source(e)))?;
        if selected {
            if let Some(record) = builder.push(&frame) {
                digest_sink
                    .send_message(&HashChannelMessage::Record(record))
                    .map_err(|e| abort(&summary, e))?;
                summary.records_sent += 1;
            }
        }
    }
    if let Some(record) = builder.finish() {
        digest_sink
            .send_message(&HashChannelMessage::Record(record))
            .map_err(|e| abort(&summary, e))?;
        summary.records_sent += 1;
    }
    digest_sink
        .send_message(&HashChannelMessage::End(header.stream_id))
        .map_err(|e| abort(&summary, e))?;
    summary.wall_time = start.elapsed();
    debug!(
        "capture done: {} frames, {} datagrams (+{} dropped), {} records",
        summary.frames_sent,
        summary.datagrams_sent,
        summary.datagrams_dropped,
        summary.records_sent
    );
    Ok(summary)
}

/// Connects the two real channels for the CLI agent.
pub fn connect_sinks(
    hash_addr: &str,
    frame_addr: &str,
) -> Result<(TcpDigestSink<TcpStream>, UdpFrameSink), TransportError> {
    let tcp = TcpStream::connect(hash_addr).map_err(TransportError::Io)?;
    tcp.set_nodelay(true).ok();
    let udp = UdpSocket::bind("0.0.0.0:0").map_err(TransportError::Io)?;
    udp.connect(frame_addr).map_err(TransportError::Io)?;
    Ok((TcpDigestSink(tcp), UdpFrameSink::new(udp)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame_io::{StreamId, SyntheticStream};

    fn header(frame_count: u64) -> StreamHeader {
        StreamHeader {
            stream_id: StreamId([3; 16]),
            width: 40,
            height: 40,
            channels: 1,
            fps_numerator: 30,
            fps_denominator: 1,
            frame_count,
        }
    }

    fn run(
        frame_count: u64,
        config: &CaptureConfig,
    ) -> (CaptureSummary, VecDigestSink, VecFrameSink) {
        let h = header(frame_count);
        let mut digest_sink = VecDigestSink::default();
        let mut frame_sink = VecFrameSink::default();
        let summary = run_capture_agent(
            &h,
            SyntheticStream::new(h, 11).unwrap().map(Ok),
            config,
            &mut digest_sink,
            &mut frame_sink,
        )
        .unwrap();
        (summary, digest_sink, frame_sink)
    }

    fn lossless(policy: SelectionPolicy, mode: WriteMode) -> CaptureConfig {
        CaptureConfig {
            policy,
            algorithm: DigestAlgorithm::Md5,
            mode,
            drop_prob: 0.0,
            seed: 0,
        }
    }

    #[test]
    fn lossless_per_frame_sends_one_record_per_frame() {
        let (summary, digests, frames) =
            run(20, &lossless(SelectionPolicy::All, WriteMode::PerFrame));
        assert_eq!(summary.frames_sent, 20);
        assert_eq!(summary.records_sent, 20);
        assert_eq!(summary.datagrams_dropped, 0);
        // 1600-byte frames fragment into 2 datagrams each.
        assert_eq!(summary.datagrams_sent, 40);
        assert_eq!(frames.datagrams.len(), 40);
        // Announce + 20 records + End.
        assert_eq!(digests.messages.len(), 22);
        assert!(matches!(digests.messages[0], HashChannelMessage::Announce(_)));
        assert!(matches!(
            digests.messages.last(),
            Some(HashChannelMessage::End(_))
        ));
    }

    #[test]
    fn full_drop_still_sends_all_records() {
        let config = CaptureConfig {
            drop_prob: 1.0,
            seed: 9,
            ..lossless(SelectionPolicy::All, WriteMode::PerFrame)
        };
        let (summary, digests, frames) = run(10, &config);
        assert_eq!(summary.records_sent, 10);
        assert_eq!(summary.datagrams_sent, 0);
        assert_eq!(summary.datagrams_dropped, 20);
        assert!(frames.datagrams.is_empty());
        assert_eq!(digests.messages.len(), 12);
    }

    #[test]
    fn selection_policy_gates_records_not_frames() {
        let (summary, digests, _) = run(
            30,
            &lossless(SelectionPolicy::EveryNth(10), WriteMode::PerFrame),
        );
        assert_eq!(summary.frames_sent, 30);
        assert_eq!(summary.records_sent, 3); // frames 0, 10, 20
        let records: Vec<u64> = digests
            .messages
            .iter()
            .filter_map(|m| match m {
                HashChannelMessage::Record(r) => Some(r.frame_id_start),
                _ => None,
            })
            .collect();
        assert_eq!(records, vec![0, 10, 20]);
    }

    #[test]
    fn batch_mode_emits_partial_final_batch() {
        let (summary, digests, _) =
            run(10, &lossless(SelectionPolicy::All, WriteMode::BatchBytes(4)));
        assert_eq!(summary.records_sent, 3); // 4 + 4 + 2
        let ranges: Vec<(u64, u64)> = digests
            .messages
            .iter()
            .filter_map(|m| match m {
                HashChannelMessage::Record(r) => Some((r.frame_id_start, r.frame_id_end)),
                _ => None,
            })
            .collect();
        assert_eq!(ranges, vec![(0, 3), (4, 7), (8, 9)]);
    }

    #[test]
    fn seeded_drops_replay_identically() {
        let config = CaptureConfig {
            drop_prob: 0.3,
            seed: 42,
            ..lossless(SelectionPolicy::All, WriteMode::PerFrame)
        };
        let (a, _, fa) = run(25, &config);
        let (b, _, fb) = run(25, &config);
        assert_eq!(a.datagrams_sent, b.datagrams_sent);
        assert_eq!(fa.datagrams, fb.datagrams);
        assert!(a.datagrams_dropped > 0, "0.3 over 50 datagrams should drop");
    }

    #[test]
    fn digest_sink_failure_aborts_with_partial_summary() {
        struct FailingSink(u32);
        impl DigestSink for FailingSink {
            fn send_message(&mut self, _: &HashChannelMessage) -> Result<(), TransportError> {
                if self.0 == 0 {
                    return Err(TransportError::Protocol("sink closed".into()));
                }
                self.0 -= 1;
                Ok(())
            }
        }
        let h = header(10);
        // Announce + 3 records succeed, then the channel dies.
        let mut digest_sink = FailingSink(4);
        let mut frame_sink = VecFrameSink::default();
        let err = run_capture_agent(
            &h,
            SyntheticStream::new(h, 1).unwrap().map(Ok),
            &lossless(SelectionPolicy::All, WriteMode::PerFrame),
            &mut digest_sink,
            &mut frame_sink,
        )
        .unwrap_err();
        assert_eq!(err.partial.records_sent, 3);
        assert_eq!(err.partial.frames_sent, 4);
    }
}
