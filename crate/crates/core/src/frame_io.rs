//! Raw-frame video container (SFV1) and frame selection.
//!
//! SFV1 is an uncompressed, bit-exact container: a 41-byte little-endian
//! header followed by `frame_count` frames of raw row-major pixels with no
//! per-frame framing. Digests computed over it are codec-independent and
//! reproduce byte-for-byte on any platform, which is what makes hash
//! verification across machines possible at all.
//!
//! Layout (all little-endian):
//!
//! ```text
//! magic      4 B   ASCII "SFV1"
//! stream_id 16 B   opaque identifier
//! width      u32
//! height     u32
//! channels   u8    1 = grayscale, 3 = interleaved RGB
//! fps_num    u16
//! fps_den    u16
//! frames     u64
//! ```
//!
//! Synthetic streams are generated with ChaCha8 keyed per frame by
//! SHA-256(domain tag, stream seed, frame index). The generator is fixed;
//! changing it would silently invalidate every digest derived from
//! synthetic streams, so it must never be swapped without a new domain tag.

use std::fmt;
use std::io::{self, Read, Write};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// SFV1 magic bytes.
pub const SFV1_MAGIC: [u8; 4] = *b"SFV1";

/// Size of the SFV1 header in bytes.
pub const SFV1_HEADER_LEN: usize = 41;

/// 16-byte opaque stream identifier.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StreamId(pub [u8; 16]);

impl StreamId {
    pub fn as_bytes(&self) -> &[u8; 16] {
        &self.0
    }

    /// Derives a stream id from a seed, for synthetic streams.
    pub fn from_seed(seed: u64) -> Self {
        let mut h = Sha256::new();
        h.update(b"veriframe.stream-id.v1");
        h.update(seed.to_le_bytes());
        let d = h.finalize();
        let mut id = [0u8; 16];
        id.copy_from_slice(&d[..16]);
        StreamId(id)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, FormatError> {
        let bytes = hex::decode(s).map_err(|_| FormatError::BadStreamId)?;
        let arr: [u8; 16] = bytes.try_into().map_err(|_| FormatError::BadStreamId)?;
        Ok(StreamId(arr))
    }
}

impl fmt::Debug for StreamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StreamId({})", self.to_hex())
    }
}

impl fmt::Display for StreamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_hex())
    }
}

/// SFV1 stream header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamHeader {
    pub stream_id: StreamId,
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub fps_numerator: u16,
    pub fps_denominator: u16,
    pub frame_count: u64,
}

impl StreamHeader {
    /// Validates the header invariants.
    pub fn validate(&self) -> Result<(), FormatError> {
        if self.width == 0 || self.height == 0 {
            return Err(FormatError::HeaderInvariant("width/height must be >= 1"));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(FormatError::HeaderInvariant("channels must be 1 or 3"));
        }
        if self.fps_denominator == 0 {
            return Err(FormatError::HeaderInvariant("fps denominator must be >= 1"));
        }
        Ok(())
    }

    /// Byte length of one frame's pixel payload.
    pub fn frame_len(&self) -> usize {
        self.width as usize * self.height as usize * self.channels as usize
    }

    /// Encodes the 41-byte header.
    pub fn encode(&self) -> [u8; SFV1_HEADER_LEN] {
        let mut buf = [0u8; SFV1_HEADER_LEN];
        buf[0..4].copy_from_slice(&SFV1_MAGIC);
        buf[4..20].copy_from_slice(&self.stream_id.0);
        buf[20..24].copy_from_slice(&self.width.to_le_bytes());
        buf[24..28].copy_from_slice(&self.height.to_le_bytes());
        buf[28] = self.channels;
        buf[29..31].copy_from_slice(&self.fps_numerator.to_le_bytes());
        buf[31..33].copy_from_slice(&self.fps_denominator.to_le_bytes());
        buf[33..41].copy_from_slice(&self.frame_count.to_le_bytes());
        buf
    }

    /// Decodes and validates a 41-byte header.
    pub fn decode(buf: &[u8; SFV1_HEADER_LEN]) -> Result<Self, FormatError> {
        if buf[0..4] != SFV1_MAGIC {
            return Err(FormatError::BadMagic);
        }
        let mut stream_id = [0u8; 16];
        stream_id.copy_from_slice(&buf[4..20]);
        let header = StreamHeader {
            stream_id: StreamId(stream_id),
            width: u32::from_le_bytes(buf[20..24].try_into().unwrap()),
            height: u32::from_le_bytes(buf[24..28].try_into().unwrap()),
            channels: buf[28],
            fps_numerator: u16::from_le_bytes(buf[29..31].try_into().unwrap()),
            fps_denominator: u16::from_le_bytes(buf[31..33].try_into().unwrap()),
            frame_count: u64::from_le_bytes(buf[33..41].try_into().unwrap()),
        };
        header.validate()?;
        Ok(header)
    }
}

/// One indexed frame of raw pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    /// 0-based frame number within the stream.
    pub index: u64,
    /// Row-major, channel-interleaved pixel bytes.
    pub pixels: Vec<u8>,
}

/// Which frames of a stream get digested.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionPolicy {
    /// Every frame.
    All,
    /// Every n-th frame (indices divisible by n).
    EveryNth(u64),
    /// One frame per group-of-pictures period (indices divisible by gop).
    ///
    /// Selection-wise this equals `EveryNth(gop)`; it exists as a distinct
    /// policy because it models keyframe subsampling, where only the first
    /// frame of each GOP is a complete image.
    KeyframeOnly(u64),
}

impl SelectionPolicy {
    fn stride(&self) -> Result<u64, FormatError> {
        let n = match self {
            SelectionPolicy::All => 1,
            SelectionPolicy::EveryNth(n) | SelectionPolicy::KeyframeOnly(n) => *n,
        };
        if n == 0 {
            return Err(FormatError::InvalidPolicy);
        }
        Ok(n)
    }

    /// Parses `all`, `nth:<n>` or `gop:<g>`.
    pub fn parse(s: &str) -> Result<Self, FormatError> {
        if s == "all" {
            return Ok(SelectionPolicy::All);
        }
        if let Some(n) = s.strip_prefix("nth:") {
            let n: u64 = n.parse().map_err(|_| FormatError::InvalidPolicy)?;
            if n == 0 {
                return Err(FormatError::InvalidPolicy);
            }
            return Ok(SelectionPolicy::EveryNth(n));
        }
        if let Some(g) = s.strip_prefix("gop:") {
            let g: u64 = g.parse().map_err(|_| FormatError::InvalidPolicy)?;
            if g == 0 {
                return Err(FormatError::InvalidPolicy);
            }
            return Ok(SelectionPolicy::KeyframeOnly(g));
        }
        Err(FormatError::InvalidPolicy)
    }
}

impl fmt::Display for SelectionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectionPolicy::All => write!(f, "all"),
            SelectionPolicy::EveryNth(n) => write!(f, "nth:{n}"),
            SelectionPolicy::KeyframeOnly(g) => write!(f, "gop:{g}"),
        }
    }
}

/// Errors from SFV1 parsing, frame validation and policy handling.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: input does not begin with \"SFV1\"")]
    BadMagic,
    #[error("truncated header: got {got} bytes, need {SFV1_HEADER_LEN}")]
    TruncatedHeader { got: usize },
    #[error("truncated frame {frame_index} at byte offset {offset}")]
    TruncatedFrame { frame_index: u64, offset: u64 },
    #[error("header invariant violated: {0}")]
    HeaderInvariant(&'static str),
    #[error("frame {frame_index} has {got} pixel bytes, expected {expected}")]
    FrameSize {
        frame_index: u64,
        expected: usize,
        got: usize,
    },
    #[error("frame {got} out of order, expected index {expected}")]
    FrameOrder { expected: u64, got: u64 },
    #[error("frame index {index} out of range (frame count {frame_count})")]
    FrameIndex { index: u64, frame_count: u64 },
    #[error("invalid selection policy (expected all, nth:<n> or gop:<g> with n >= 1)")]
    InvalidPolicy,
    #[error("invalid stream id (expected 32 hex chars)")]
    BadStreamId,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Writes an SFV1 stream; returns the byte count emitted.
///
/// Frames must arrive as contiguous indices `0..frame_count`, each with
/// exactly `width * height * channels` pixel bytes.
pub fn write_stream<W, I>(header: &StreamHeader, frames: I, sink: &mut W) -> Result<u64, FormatError>
where
    W: Write,
    I: IntoIterator<Item = Frame>,
{
    header.validate()?;
    let frame_len = header.frame_len();
    sink.write_all(&header.encode())?;
    let mut written = SFV1_HEADER_LEN as u64;
    let mut expected = 0u64;
    for frame in frames {
        if frame.index != expected {
            return Err(FormatError::FrameOrder {
                expected,
                got: frame.index,
            });
        }
        if frame.index >= header.frame_count {
            return Err(FormatError::FrameIndex {
                index: frame.index,
                frame_count: header.frame_count,
            });
        }
        if frame.pixels.len() != frame_len {
            return Err(FormatError::FrameSize {
                frame_index: frame.index,
                expected: frame_len,
                got: frame.pixels.len(),
            });
        }
        sink.write_all(&frame.pixels)?;
        written += frame.pixels.len() as u64;
        expected += 1;
    }
    if expected != header.frame_count {
        return Err(FormatError::TruncatedFrame {
            frame_index: expected,
            offset: written,
        });
    }
    Ok(written)
}

/// Lazy frame iterator produced by [`read_stream`].
pub struct FrameReader<R> {
    source: R,
    header: StreamHeader,
    next_index: u64,
}

impl<R: Read> FrameReader<R> {
    pub fn header(&self) -> &StreamHeader {
        &self.header
    }
}

impl<R: Read> Iterator for FrameReader<R> {
    type Item = Result<Frame, FormatError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next_index >= self.header.frame_count {
            return None;
        }
        let frame_len = self.header.frame_len();
        let mut pixels = vec![0u8; frame_len];
        let mut filled = 0;
        while filled < frame_len {
            match self.source.read(&mut pixels[filled..]) {
                Ok(0) => {
                    let offset =
                        SFV1_HEADER_LEN as u64 + self.next_index * frame_len as u64 + filled as u64;
                    let err = FormatError::TruncatedFrame {
                        frame_index: self.next_index,
                        offset,
                    };
                    self.next_index = self.header.frame_count; // poison
                    return Some(Err(err));
                }
                Ok(n) => filled += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => {
                    self.next_index = self.header.frame_count;
                    return Some(Err(e.into()));
                }
            }
        }
        let index = self.next_index;
        self.next_index += 1;
        Some(Ok(Frame { index, pixels }))
    }
}

/// Reads an SFV1 header and returns a lazy frame iterator over the rest.
pub fn read_stream<R: Read>(mut source: R) -> Result<(StreamHeader, FrameReader<R>), FormatError> {
    let mut buf = [0u8; SFV1_HEADER_LEN];
    let mut filled = 0;
    while filled < SFV1_HEADER_LEN {
        match source.read(&mut buf[filled..]) {
            Ok(0) => return Err(FormatError::TruncatedHeader { got: filled }),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
    }
    let header = StreamHeader::decode(&buf)?;
    let reader = FrameReader {
        source,
        header,
        next_index: 0,
    };
    Ok((header, reader))
}

/// Reads a whole SFV1 stream into memory.
pub fn read_stream_to_vec<R: Read>(source: R) -> Result<(StreamHeader, Vec<Frame>), FormatError> {
    let (header, frames) = read_stream(source)?;
    let frames = frames.collect::<Result<Vec<_>, _>>()?;
    Ok((header, frames))
}

/// Computes the ordered frame indices selected by a policy.
pub fn select_frames(policy: SelectionPolicy, frame_count: u64) -> Result<Vec<u64>, FormatError> {
    let stride = policy.stride()?;
    Ok((0..frame_count).step_by(stride as usize).collect())
}

/// Number of frames a policy selects out of `frame_count`, without
/// materializing the index list.
pub fn selected_count(policy: SelectionPolicy, frame_count: u64) -> Result<u64, FormatError> {
    let stride = policy.stride()?;
    Ok(frame_count.div_ceil(stride))
}

/// Whether a policy selects the given frame index.
pub fn is_selected(policy: SelectionPolicy, index: u64) -> Result<bool, FormatError> {
    let stride = policy.stride()?;
    Ok(index % stride == 0)
}

/// Generates the pixels of one synthetic frame.
///
/// Pixels come from ChaCha8 seeded with SHA-256("veriframe.frame.v1",
/// seed LE64, index LE64); equal inputs give byte-identical frames on
/// every platform.
pub fn synthetic_frame(header: &StreamHeader, seed: u64, index: u64) -> Frame {
    let mut h = Sha256::new();
    h.update(b"veriframe.frame.v1");
    h.update(seed.to_le_bytes());
    h.update(index.to_le_bytes());
    let key: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(key);
    let mut pixels = vec![0u8; header.frame_len()];
    rng.fill_bytes(&mut pixels);
    Frame { index, pixels }
}

/// Lazy generator of synthetic frames for a header and seed.
pub struct SyntheticStream {
    header: StreamHeader,
    seed: u64,
    next_index: u64,
}

impl SyntheticStream {
    pub fn new(header: StreamHeader, seed: u64) -> Result<Self, FormatError> {
        header.validate()?;
        Ok(SyntheticStream {
            header,
            seed,
            next_index: 0,
        })
    }

    pub fn header(&self) -> &StreamHeader {
        &self.header
    }
}

impl Iterator for SyntheticStream {
    type Item = Frame;

    fn next(&mut self) -> Option<Frame> {
        if self.next_index >= self.header.frame_count {
            return None;
        }
        let frame = synthetic_frame(&self.header, self.seed, self.next_index);
        self.next_index += 1;
        Some(frame)
    }
}

/// Generates a complete synthetic stream in memory.
pub fn generate_synthetic_stream(
    header: &StreamHeader,
    seed: u64,
) -> Result<(StreamHeader, Vec<Frame>), FormatError> {
    header.validate()?;
    let frames = SyntheticStream::new(*header, seed)?.collect();
    Ok((*header, frames))
}
