//! Binary wire formats, all little-endian.
//!
//! Reliable-channel framing is a `u32` payload length followed by the
//! payload. Payloads on the digest channel are tagged with a leading
//! message-type byte:
//!
//! ```text
//! 1  DigestRecord   stream_id 16B, mode u8, k u64, frame_id_start u64,
//!                   frame_id_end u64, algorithm u8, digest_len u8, digest
//! 2  StreamAnnounce 41-byte SFV1 header
//! 3  EndOfStream    stream_id 16B
//! ```
//!
//! Frame datagrams are self-contained and carry no outer framing:
//!
//! ```text
//! stream_id 16B, frame_id u64, frag_index u16, frag_count u16,
//! payload_len u16, payload (<= 1400 bytes)
//! ```

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::digest::{DigestAlgorithm, DigestRecord, WriteMode};
use crate::frame_io::{StreamHeader, StreamId, SFV1_HEADER_LEN};

/// Maximum datagram payload, a conservative MTU allowance.
pub const MAX_DATAGRAM_PAYLOAD: usize = 1400;

/// Fixed size of the datagram header preceding the payload.
pub const DATAGRAM_HEADER_LEN: usize = 16 + 8 + 2 + 2 + 2;

/// Upper bound accepted for a framed payload; anything larger is treated
/// as a protocol violation rather than an allocation request.
pub const MAX_FRAME_LEN: u32 = 16 * 1024 * 1024;

pub const MSG_DIGEST_RECORD: u8 = 1;
pub const MSG_STREAM_ANNOUNCE: u8 = 2;
pub const MSG_END_OF_STREAM: u8 = 3;

/// Wire-level errors. Offsets refer to positions within the payload being
/// decoded.
#[derive(Debug, Error)]
pub enum WireError {
    #[error("truncated {what} at offset {offset}")]
    Truncated { what: &'static str, offset: usize },
    #[error("unknown message type {0}")]
    UnknownMessageType(u8),
    #[error("framed payload of {got} bytes exceeds limit {limit}")]
    FrameTooLarge { got: u32, limit: u32 },
    #[error("empty payload")]
    EmptyPayload,
    #[error("trailing {0} bytes after message")]
    TrailingBytes(usize),
    #[error("datagram payload of {0} bytes exceeds {MAX_DATAGRAM_PAYLOAD}")]
    OversizedDatagramPayload(usize),
    #[error("fragment index {index} not below fragment count {count}")]
    FragmentIndex { index: u16, count: u16 },
    #[error("invalid record: {0}")]
    Record(#[from] crate::digest::DigestError),
    #[error("invalid header: {0}")]
    Header(crate::frame_io::FormatError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Messages carried on the reliable digest channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HashChannelMessage {
    Record(DigestRecord),
    Announce(StreamHeader),
    End(StreamId),
}

impl HashChannelMessage {
    /// Encodes the message payload (type byte included, framing excluded).
    pub fn encode(&self) -> Vec<u8> {
        match self {
            HashChannelMessage::Record(record) => {
                let mut out = Vec::with_capacity(1 + 44 + record.digest.len());
                out.push(MSG_DIGEST_RECORD);
                encode_record(record, &mut out);
                out
            }
            HashChannelMessage::Announce(header) => {
                let mut out = Vec::with_capacity(1 + SFV1_HEADER_LEN);
                out.push(MSG_STREAM_ANNOUNCE);
                out.extend_from_slice(&header.encode());
                out
            }
            HashChannelMessage::End(stream_id) => {
                let mut out = Vec::with_capacity(17);
                out.push(MSG_END_OF_STREAM);
                out.extend_from_slice(&stream_id.0);
                out
            }
        }
    }

    /// Decodes a payload; the whole slice must be consumed.
    pub fn decode(payload: &[u8]) -> Result<Self, WireError> {
        let (&msg_type, rest) = payload.split_first().ok_or(WireError::EmptyPayload)?;
        match msg_type {
            MSG_DIGEST_RECORD => {
                let (record, used) = decode_record(rest)?;
                if used != rest.len() {
                    return Err(WireError::TrailingBytes(rest.len() - used));
                }
                Ok(HashChannelMessage::Record(record))
            }
            MSG_STREAM_ANNOUNCE => {
                let buf: &[u8; SFV1_HEADER_LEN] =
                    rest.try_into().map_err(|_| WireError::Truncated {
                        what: "stream header",
                        offset: rest.len(),
                    })?;
                let header = StreamHeader::decode(buf).map_err(WireError::Header)?;
                Ok(HashChannelMessage::Announce(header))
            }
            MSG_END_OF_STREAM => {
                let id: [u8; 16] = rest.try_into().map_err(|_| WireError::Truncated {
                    what: "stream id",
                    offset: rest.len(),
                })?;
                Ok(HashChannelMessage::End(StreamId(id)))
            }
            other => Err(WireError::UnknownMessageType(other)),
        }
    }
}

/// Canonical record encoding, used both on the digest channel and as the
/// transaction encoding inside blocks.
pub fn encode_record(record: &DigestRecord, out: &mut Vec<u8>) {
    out.extend_from_slice(&record.stream_id.0);
    out.push(record.mode.wire_code());
    out.extend_from_slice(&record.mode.k().to_le_bytes());
    out.extend_from_slice(&record.frame_id_start.to_le_bytes());
    out.extend_from_slice(&record.frame_id_end.to_le_bytes());
    out.push(record.algorithm.wire_code());
    out.push(record.digest.len() as u8);
    out.extend_from_slice(&record.digest);
}

/// Convenience wrapper returning the encoding as a fresh vector.
pub fn record_bytes(record: &DigestRecord) -> Vec<u8> {
    let mut out = Vec::with_capacity(43 + record.digest.len());
    encode_record(record, &mut out);
    out
}

/// Decodes one record from the front of a slice; returns bytes consumed.
pub fn decode_record(buf: &[u8]) -> Result<(DigestRecord, usize), WireError> {
    const FIXED: usize = 16 + 1 + 8 + 8 + 8 + 1 + 1;
    if buf.len() < FIXED {
        return Err(WireError::Truncated {
            what: "digest record",
            offset: buf.len(),
        });
    }
    let mut stream_id = [0u8; 16];
    stream_id.copy_from_slice(&buf[0..16]);
    let mode_code = buf[16];
    let k = u64::from_le_bytes(buf[17..25].try_into().unwrap());
    let frame_id_start = u64::from_le_bytes(buf[25..33].try_into().unwrap());
    let frame_id_end = u64::from_le_bytes(buf[33..41].try_into().unwrap());
    let algorithm = DigestAlgorithm::from_wire(buf[41])?;
    let digest_len = buf[42] as usize;
    if buf.len() < FIXED + digest_len {
        return Err(WireError::Truncated {
            what: "digest bytes",
            offset: buf.len(),
        });
    }
    let record = DigestRecord {
        stream_id: StreamId(stream_id),
        mode: WriteMode::from_wire(mode_code, k)?,
        frame_id_start,
        frame_id_end,
        algorithm,
        digest: buf[FIXED..FIXED + digest_len].to_vec(),
    };
    record.validate()?;
    Ok((record, FIXED + digest_len))
}

/// Writes one length-prefixed payload.
pub fn write_framed<W: Write>(sink: &mut W, payload: &[u8]) -> Result<(), WireError> {
    let len = u32::try_from(payload.len()).map_err(|_| WireError::FrameTooLarge {
        got: u32::MAX,
        limit: MAX_FRAME_LEN,
    })?;
    if len > MAX_FRAME_LEN {
        return Err(WireError::FrameTooLarge {
            got: len,
            limit: MAX_FRAME_LEN,
        });
    }
    sink.write_all(&len.to_le_bytes())?;
    sink.write_all(payload)?;
    Ok(())
}

/// Reads one length-prefixed payload. Returns `None` on clean EOF at a
/// frame boundary; EOF mid-frame is an error.
pub fn read_framed<R: Read>(source: &mut R) -> Result<Option<Vec<u8>>, WireError> {
    let mut len_buf = [0u8; 4];
    match read_exact_or_eof(source, &mut len_buf)? {
        ReadOutcome::Eof => return Ok(None),
        ReadOutcome::Partial(got) => {
            return Err(WireError::Truncated {
                what: "length prefix",
                offset: got,
            })
        }
        ReadOutcome::Full => {}
    }
    let len = u32::from_le_bytes(len_buf);
    if len > MAX_FRAME_LEN {
        return Err(WireError::FrameTooLarge {
            got: len,
            limit: MAX_FRAME_LEN,
        });
    }
    let mut payload = vec![0u8; len as usize];
    match read_exact_or_eof(source, &mut payload)? {
        ReadOutcome::Full => Ok(Some(payload)),
        ReadOutcome::Eof | ReadOutcome::Partial(_) => Err(WireError::Truncated {
            what: "framed payload",
            offset: payload.len(),
        }),
    }
}

enum ReadOutcome {
    Full,
    Eof,
    Partial(usize),
}

fn read_exact_or_eof<R: Read>(source: &mut R, buf: &mut [u8]) -> Result<ReadOutcome, WireError> {
    let mut filled = 0;
    while filled < buf.len() {
        match source.read(&mut buf[filled..]) {
            Ok(0) => {
                return Ok(if filled == 0 {
                    ReadOutcome::Eof
                } else {
                    ReadOutcome::Partial(filled)
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
    }
    Ok(ReadOutcome::Full)
}

/// One fragment of a frame on the lossy channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameDatagram {
    pub stream_id: StreamId,
    pub frame_id: u64,
    pub frag_index: u16,
    pub frag_count: u16,
    pub payload: Vec<u8>,
}

impl FrameDatagram {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(DATAGRAM_HEADER_LEN + self.payload.len());
        out.extend_from_slice(&self.stream_id.0);
        out.extend_from_slice(&self.frame_id.to_le_bytes());
        out.extend_from_slice(&self.frag_index.to_le_bytes());
        out.extend_from_slice(&self.frag_count.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u16).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, WireError> {
        if buf.len() < DATAGRAM_HEADER_LEN {
            return Err(WireError::Truncated {
                what: "datagram header",
                offset: buf.len(),
            });
        }
        let mut stream_id = [0u8; 16];
        stream_id.copy_from_slice(&buf[0..16]);
        let frame_id = u64::from_le_bytes(buf[16..24].try_into().unwrap());
        let frag_index = u16::from_le_bytes(buf[24..26].try_into().unwrap());
        let frag_count = u16::from_le_bytes(buf[26..28].try_into().unwrap());
        let payload_len = u16::from_le_bytes(buf[28..30].try_into().unwrap()) as usize;
        if payload_len > MAX_DATAGRAM_PAYLOAD {
            return Err(WireError::OversizedDatagramPayload(payload_len));
        }
        if buf.len() != DATAGRAM_HEADER_LEN + payload_len {
            return Err(WireError::Truncated {
                what: "datagram payload",
                offset: buf.len(),
            });
        }
        if frag_index >= frag_count {
            return Err(WireError::FragmentIndex {
                index: frag_index,
                count: frag_count,
            });
        }
        Ok(FrameDatagram {
            stream_id: StreamId(stream_id),
            frame_id,
            frag_index,
            frag_count,
            payload: buf[DATAGRAM_HEADER_LEN..].to_vec(),
        })
    }
}

/// Splits frame pixels into datagram fragments of at most
/// [`MAX_DATAGRAM_PAYLOAD`] bytes each.
pub fn fragment_frame(stream_id: StreamId, frame_id: u64, pixels: &[u8]) -> Vec<FrameDatagram> {
    assert!(!pixels.is_empty(), "frames have at least one pixel byte");
    let frag_count = pixels.len().div_ceil(MAX_DATAGRAM_PAYLOAD);
    assert!(frag_count <= u16::MAX as usize, "frame too large to fragment");
    pixels
        .chunks(MAX_DATAGRAM_PAYLOAD)
        .enumerate()
        .map(|(i, chunk)| FrameDatagram {
            stream_id,
            frame_id,
            frag_index: i as u16,
            frag_count: frag_count as u16,
            payload: chunk.to_vec(),
        })
        .collect()
}

/// Fragment count for a frame of `len` pixel bytes.
pub fn fragment_count(len: usize) -> usize {
    len.div_ceil(MAX_DATAGRAM_PAYLOAD)
}
