//! Frame digests and the three ledger write strategies.
//!
//! A frame is canonically serialized as its raw pixel bytes — nothing
//! else. The frame index travels beside the digest in the record, never
//! inside the digest input, so a verifier can recompute every digest from
//! pixels alone.
//!
//! Write modes:
//! - `PerFrame`: one digest per selected frame.
//! - `BatchBytes(k)`: one digest over the concatenated pixel bytes of k
//!   consecutive selected frames (final partial group digested as-is).
//! - `BatchDigests(k)`: one digest over the concatenation of the k
//!   per-frame digests, so the input to the ledger-write hash stays small
//!   regardless of resolution.
//!
//! MD5 is kept for speed comparisons and legacy parity; it is broken for
//! collision resistance, so SHA-256 is the default anywhere the digest is
//! meant as evidence.

use std::time::{Duration, Instant};

use md5::Md5;
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::frame_io::{Frame, StreamId};

/// Digest algorithm choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DigestAlgorithm {
    Md5,
    Sha256,
}

impl DigestAlgorithm {
    /// Wire code: 1 = MD5, 2 = SHA-256.
    pub fn wire_code(&self) -> u8 {
        match self {
            DigestAlgorithm::Md5 => 1,
            DigestAlgorithm::Sha256 => 2,
        }
    }

    pub fn from_wire(code: u8) -> Result<Self, DigestError> {
        match code {
            1 => Ok(DigestAlgorithm::Md5),
            2 => Ok(DigestAlgorithm::Sha256),
            other => Err(DigestError::UnknownAlgorithm(other)),
        }
    }

    /// Digest output length in bytes.
    pub fn output_len(&self) -> usize {
        match self {
            DigestAlgorithm::Md5 => 16,
            DigestAlgorithm::Sha256 => 32,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DigestAlgorithm::Md5 => "md5",
            DigestAlgorithm::Sha256 => "sha256",
        }
    }

    pub fn parse(s: &str) -> Result<Self, DigestError> {
        match s {
            "md5" => Ok(DigestAlgorithm::Md5),
            "sha256" => Ok(DigestAlgorithm::Sha256),
            _ => Err(DigestError::UnknownAlgorithmName(s.to_string())),
        }
    }

    /// Starts an incremental hasher for this algorithm.
    pub fn hasher(&self) -> Hasher {
        match self {
            DigestAlgorithm::Md5 => Hasher::Md5(Md5::new()),
            DigestAlgorithm::Sha256 => Hasher::Sha256(Sha256::new()),
        }
    }
}

impl std::fmt::Display for DigestAlgorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Incremental hasher over either algorithm.
pub enum Hasher {
    Md5(Md5),
    Sha256(Sha256),
}

impl Hasher {
    pub fn update(&mut self, data: &[u8]) {
        match self {
            Hasher::Md5(h) => h.update(data),
            Hasher::Sha256(h) => h.update(data),
        }
    }

    pub fn finalize(self) -> Vec<u8> {
        match self {
            Hasher::Md5(h) => h.finalize().to_vec(),
            Hasher::Sha256(h) => h.finalize().to_vec(),
        }
    }
}

/// Computes the digest of a byte sequence.
pub fn digest_bytes(algorithm: DigestAlgorithm, data: &[u8]) -> Vec<u8> {
    let mut h = algorithm.hasher();
    h.update(data);
    h.finalize()
}

/// How digests map onto ledger records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WriteMode {
    PerFrame,
    BatchBytes(u64),
    BatchDigests(u64),
}

impl WriteMode {
    /// Wire code: 0 = PerFrame, 1 = BatchBytes, 2 = BatchDigests.
    pub fn wire_code(&self) -> u8 {
        match self {
            WriteMode::PerFrame => 0,
            WriteMode::BatchBytes(_) => 1,
            WriteMode::BatchDigests(_) => 2,
        }
    }

    /// Batch size; PerFrame counts as 1.
    pub fn k(&self) -> u64 {
        match self {
            WriteMode::PerFrame => 1,
            WriteMode::BatchBytes(k) | WriteMode::BatchDigests(k) => *k,
        }
    }

    pub fn from_wire(code: u8, k: u64) -> Result<Self, DigestError> {
        if code != 0 && k == 0 {
            return Err(DigestError::InvalidBatchSize);
        }
        match code {
            0 => Ok(WriteMode::PerFrame),
            1 => Ok(WriteMode::BatchBytes(k)),
            2 => Ok(WriteMode::BatchDigests(k)),
            other => Err(DigestError::UnknownMode(other)),
        }
    }

    pub fn validate(&self) -> Result<(), DigestError> {
        if self.k() == 0 {
            return Err(DigestError::InvalidBatchSize);
        }
        Ok(())
    }

    /// Parses `perframe`, `batchbytes:<k>` or `batchdigests:<k>`.
    pub fn parse(s: &str) -> Result<Self, DigestError> {
        if s == "perframe" {
            return Ok(WriteMode::PerFrame);
        }
        let parse_k = |v: &str| -> Result<u64, DigestError> {
            let k: u64 = v.parse().map_err(|_| DigestError::InvalidBatchSize)?;
            if k == 0 {
                return Err(DigestError::InvalidBatchSize);
            }
            Ok(k)
        };
        if let Some(v) = s.strip_prefix("batchbytes:") {
            return Ok(WriteMode::BatchBytes(parse_k(v)?));
        }
        if let Some(v) = s.strip_prefix("batchdigests:") {
            return Ok(WriteMode::BatchDigests(parse_k(v)?));
        }
        Err(DigestError::UnknownModeName(s.to_string()))
    }
}

impl std::fmt::Display for WriteMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WriteMode::PerFrame => write!(f, "perframe"),
            WriteMode::BatchBytes(k) => write!(f, "batchbytes:{k}"),
            WriteMode::BatchDigests(k) => write!(f, "batchdigests:{k}"),
        }
    }
}

/// The unit written to the ledger: a digest bound to a frame range.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DigestRecord {
    pub stream_id: StreamId,
    pub mode: WriteMode,
    /// First frame index covered, inclusive.
    pub frame_id_start: u64,
    /// Last frame index covered, inclusive.
    pub frame_id_end: u64,
    pub algorithm: DigestAlgorithm,
    pub digest: Vec<u8>,
}

impl DigestRecord {
    pub fn validate(&self) -> Result<(), DigestError> {
        self.mode.validate()?;
        if self.frame_id_start > self.frame_id_end {
            return Err(DigestError::InvalidRange {
                start: self.frame_id_start,
                end: self.frame_id_end,
            });
        }
        if self.mode == WriteMode::PerFrame && self.frame_id_start != self.frame_id_end {
            return Err(DigestError::InvalidRange {
                start: self.frame_id_start,
                end: self.frame_id_end,
            });
        }
        if self.digest.len() != self.algorithm.output_len() {
            return Err(DigestError::DigestLength {
                expected: self.algorithm.output_len(),
                got: self.digest.len(),
            });
        }
        Ok(())
    }

    /// Whether the record's covered range contains a frame id.
    pub fn covers(&self, frame_id: u64) -> bool {
        self.frame_id_start <= frame_id && frame_id <= self.frame_id_end
    }

    /// Deduplication key: records with equal keys describe the same write.
    pub fn dedup_key(&self) -> (StreamId, u8, u64, u64, u64, u8) {
        (
            self.stream_id,
            self.mode.wire_code(),
            self.mode.k(),
            self.frame_id_start,
            self.frame_id_end,
            self.algorithm.wire_code(),
        )
    }

    pub fn digest_hex(&self) -> String {
        hex::encode(&self.digest)
    }
}

/// Digest-side errors.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum DigestError {
    #[error("unknown digest algorithm code {0}")]
    UnknownAlgorithm(u8),
    #[error("unknown digest algorithm name {0:?} (expected md5 or sha256)")]
    UnknownAlgorithmName(String),
    #[error("unknown write mode code {0}")]
    UnknownMode(u8),
    #[error("unknown write mode {0:?} (expected perframe, batchbytes:<k> or batchdigests:<k>)")]
    UnknownModeName(String),
    #[error("batch size k must be >= 1")]
    InvalidBatchSize,
    #[error("invalid frame range {start}..={end}")]
    InvalidRange { start: u64, end: u64 },
    #[error("digest is {got} bytes, algorithm produces {expected}")]
    DigestLength { expected: usize, got: usize },
}

/// Canonical frame serialization: exactly the pixel bytes, row-major and
/// channel-interleaved, with no header and no frame index.
pub fn serialize_frame(frame: &Frame) -> Vec<u8> {
    frame.pixels.clone()
}

/// Digests an ordered sequence of selected frames under a write mode.
///
/// Frames must arrive in selection order (strictly increasing indices).
/// An empty input produces an empty record sequence.
pub fn digest_selected<I>(
    frames: I,
    algorithm: DigestAlgorithm,
    mode: WriteMode,
    stream_id: StreamId,
) -> Result<Vec<DigestRecord>, DigestError>
where
    I: IntoIterator<Item = Frame>,
{
    mode.validate()?;
    let mut records = Vec::new();
    let mut builder = RecordBuilder::new(algorithm, mode, stream_id);
    for frame in frames {
        if let Some(record) = builder.push(&frame) {
            records.push(record);
        }
    }
    if let Some(record) = builder.finish() {
        records.push(record);
    }
    Ok(records)
}

/// Streaming record builder: feed selected frames in order, collect
/// records as batches fill. Used by both the capture agent and the
/// verifier so the two always group and hash identically.
pub struct RecordBuilder {
    algorithm: DigestAlgorithm,
    mode: WriteMode,
    stream_id: StreamId,
    hasher: Option<Hasher>,
    group_start: u64,
    group_end: u64,
    group_len: u64,
}

impl RecordBuilder {
    pub fn new(algorithm: DigestAlgorithm, mode: WriteMode, stream_id: StreamId) -> Self {
        RecordBuilder {
            algorithm,
            mode,
            stream_id,
            hasher: None,
            group_start: 0,
            group_end: 0,
            group_len: 0,
        }
    }

    /// Feeds the next selected frame; returns a record when a batch fills.
    pub fn push(&mut self, frame: &Frame) -> Option<DigestRecord> {
        let hasher = self.hasher.get_or_insert_with(|| {
            self.group_start = frame.index;
            self.group_len = 0;
            self.algorithm.hasher()
        });
        match self.mode {
            WriteMode::PerFrame | WriteMode::BatchBytes(_) => hasher.update(&frame.pixels),
            WriteMode::BatchDigests(_) => {
                hasher.update(&digest_bytes(self.algorithm, &frame.pixels))
            }
        }
        self.group_end = frame.index;
        self.group_len += 1;
        if self.group_len == self.mode.k() {
            return Some(self.take_record());
        }
        None
    }

    /// Flushes a final partial batch, if any.
    pub fn finish(&mut self) -> Option<DigestRecord> {
        if self.hasher.is_some() {
            Some(self.take_record())
        } else {
            None
        }
    }

    fn take_record(&mut self) -> DigestRecord {
        let hasher = self.hasher.take().expect("group in progress");
        DigestRecord {
            stream_id: self.stream_id,
            mode: self.mode,
            frame_id_start: self.group_start,
            frame_id_end: self.group_end,
            algorithm: self.algorithm,
            digest: hasher.finalize(),
        }
    }
}

/// Digest of one frame with serialization and hashing timed separately.
#[derive(Debug, Clone)]
pub struct TimedDigest {
    pub digest: Vec<u8>,
    pub serialize_duration: Duration,
    pub hash_duration: Duration,
}

/// Computes a per-frame digest, timing the string-conversion step and the
/// hash step independently.
pub fn timed_digest(frame: &Frame, algorithm: DigestAlgorithm) -> TimedDigest {
    let t0 = Instant::now();
    let serialized = serialize_frame(frame);
    let serialize_duration = t0.elapsed();
    let t1 = Instant::now();
    let digest = digest_bytes(algorithm, &serialized);
    let hash_duration = t1.elapsed();
    TimedDigest {
        digest,
        serialize_duration,
        hash_duration,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame_io::{StreamHeader, SyntheticStream};

    fn frame(index: u64, pixels: Vec<u8>) -> Frame {
        Frame { index, pixels }
    }

    fn sid() -> StreamId {
        StreamId([9u8; 16])
    }

    // RFC 1321 appendix A.5 test vectors.
    #[test]
    fn md5_standard_vectors() {
        assert_eq!(
            hex::encode(digest_bytes(DigestAlgorithm::Md5, b"")),
            "d41d8cd98f00b204e9800998ecf8427e"
        );
        assert_eq!(
            hex::encode(digest_bytes(DigestAlgorithm::Md5, b"abc")),
            "900150983cd24fb0d6963f7d28e17f72"
        );
        assert_eq!(
            hex::encode(digest_bytes(DigestAlgorithm::Md5, b"message digest")),
            "f96b697d7cb7938d525a2f31aaf161d0"
        );
    }

    // FIPS 180-4 vectors (via NIST examples).
    #[test]
    fn sha256_standard_vectors() {
        assert_eq!(
            hex::encode(digest_bytes(DigestAlgorithm::Sha256, b"abc")),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(
            hex::encode(digest_bytes(DigestAlgorithm::Sha256, b"")),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            hex::encode(digest_bytes(
                DigestAlgorithm::Sha256,
                b"abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq"
            )),
            "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1"
        );
    }

    #[test]
    fn serialize_is_pixel_identity() {
        let f = frame(0, vec![0, 1, 2, 3]);
        assert_eq!(serialize_frame(&f), vec![0, 1, 2, 3]);
    }

    #[test]
    fn serialize_length_matches_resolution() {
        let header = StreamHeader {
            stream_id: sid(),
            width: 256,
            height: 134,
            channels: 1,
            fps_numerator: 30,
            fps_denominator: 1,
            frame_count: 1,
        };
        let f = crate::frame_io::synthetic_frame(&header, 3, 0);
        assert_eq!(serialize_frame(&f).len(), 34304);
    }

    #[test]
    fn per_frame_emits_one_record_each() {
        let frames = vec![
            frame(0, vec![1; 4]),
            frame(1, vec![2; 4]),
            frame(2, vec![3; 4]),
        ];
        let records = digest_selected(
            frames.clone(),
            DigestAlgorithm::Md5,
            WriteMode::PerFrame,
            sid(),
        )
        .unwrap();
        assert_eq!(records.len(), 3);
        for (r, f) in records.iter().zip(&frames) {
            assert_eq!(r.frame_id_start, f.index);
            assert_eq!(r.frame_id_end, f.index);
            assert_eq!(r.digest, digest_bytes(DigestAlgorithm::Md5, &f.pixels));
            r.validate().unwrap();
        }
    }

    #[test]
    fn batch_digests_input_is_480_bytes_for_30_md5_frames() {
        let frames: Vec<Frame> = (0..30).map(|i| frame(i, vec![i as u8; 8])).collect();
        let records = digest_selected(
            frames.clone(),
            DigestAlgorithm::Md5,
            WriteMode::BatchDigests(30),
            sid(),
        )
        .unwrap();
        assert_eq!(records.len(), 1);
        // Oracle: concatenate the 30 per-frame digests (30 * 16 = 480
        // bytes) and hash that directly.
        let mut concat = Vec::new();
        for f in &frames {
            concat.extend_from_slice(&digest_bytes(DigestAlgorithm::Md5, &f.pixels));
        }
        assert_eq!(concat.len(), 480);
        assert_eq!(records[0].digest, digest_bytes(DigestAlgorithm::Md5, &concat));
    }

    #[test]
    fn batch_bytes_303_frames_in_batches_of_30() {
        let frames: Vec<Frame> = (0..303).map(|i| frame(i, vec![(i % 251) as u8; 4])).collect();
        let records = digest_selected(
            frames.clone(),
            DigestAlgorithm::Md5,
            WriteMode::BatchBytes(30),
            sid(),
        )
        .unwrap();
        assert_eq!(records.len(), 11);
        let last = records.last().unwrap();
        assert_eq!(last.frame_id_start, 300);
        assert_eq!(last.frame_id_end, 302);
        // Oracle: hash the concatenation of the last 3 frames directly.
        let mut concat = Vec::new();
        for f in &frames[300..] {
            concat.extend_from_slice(&f.pixels);
        }
        assert_eq!(last.digest, digest_bytes(DigestAlgorithm::Md5, &concat));
    }

    #[test]
    fn empty_input_empty_records() {
        let records = digest_selected(
            Vec::new(),
            DigestAlgorithm::Sha256,
            WriteMode::BatchBytes(30),
            sid(),
        )
        .unwrap();
        assert!(records.is_empty());
    }

    #[test]
    fn batch_ranges_partition_selected_set() {
        // Selected frames 0,30,60,...,300 under BatchDigests(4): ranges must
        // cover each selected index exactly once, with no overlap.
        let selected: Vec<u64> = (0..=300).step_by(30).collect();
        let frames: Vec<Frame> = selected.iter().map(|&i| frame(i, vec![1; 4])).collect();
        let records = digest_selected(
            frames,
            DigestAlgorithm::Sha256,
            WriteMode::BatchDigests(4),
            sid(),
        )
        .unwrap();
        let mut covered = Vec::new();
        let mut prev_end = None;
        for r in &records {
            if let Some(prev) = prev_end {
                assert!(r.frame_id_start > prev, "ranges overlap");
            }
            covered.extend(selected.iter().copied().filter(|&i| r.covers(i)));
            prev_end = Some(r.frame_id_end);
        }
        assert_eq!(covered, selected);
    }

    #[test]
    fn determinism_same_inputs_same_records() {
        let header = StreamHeader {
            stream_id: sid(),
            width: 8,
            height: 8,
            channels: 1,
            fps_numerator: 30,
            fps_denominator: 1,
            frame_count: 10,
        };
        let a = digest_selected(
            SyntheticStream::new(header, 5).unwrap(),
            DigestAlgorithm::Sha256,
            WriteMode::BatchBytes(3),
            sid(),
        )
        .unwrap();
        let b = digest_selected(
            SyntheticStream::new(header, 5).unwrap(),
            DigestAlgorithm::Sha256,
            WriteMode::BatchBytes(3),
            sid(),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn timed_digest_durations_sane() {
        let header = StreamHeader {
            stream_id: sid(),
            width: 256,
            height: 134,
            channels: 1,
            fps_numerator: 30,
            fps_denominator: 1,
            frame_count: 1,
        };
        let f = crate::frame_io::synthetic_frame(&header, 1, 0);
        let t = timed_digest(&f, DigestAlgorithm::Md5);
        assert!(t.hash_duration.as_nanos() > 0);
        assert_eq!(t.digest, digest_bytes(DigestAlgorithm::Md5, &f.pixels));
    }

    #[test]
    fn record_validation_rejects_bad_shapes() {
        let mut r = DigestRecord {
            stream_id: sid(),
            mode: WriteMode::PerFrame,
            frame_id_start: 2,
            frame_id_end: 1,
            algorithm: DigestAlgorithm::Md5,
            digest: vec![0; 16],
        };
        assert!(r.validate().is_err()); // start > end
        r.frame_id_end = 3;
        assert!(r.validate().is_err()); // PerFrame must have start == end
        r.frame_id_start = 3;
        r.digest = vec![0; 15];
        assert!(r.validate().is_err()); // wrong digest length
        r.digest = vec![0; 16];
        r.validate().unwrap();
    }

    #[test]
    fn mode_parse_round_trip() {
        for m in [
            WriteMode::PerFrame,
            WriteMode::BatchBytes(30),
            WriteMode::BatchDigests(7),
        ] {
            assert_eq!(WriteMode::parse(&m.to_string()).unwrap(), m);
        }
        assert!(WriteMode::parse("batchbytes:0").is_err());
        assert!(WriteMode::parse("nope").is_err());
    }
}
