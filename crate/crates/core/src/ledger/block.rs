//! Blocks, transactions and votes.
//!
//! Canonical block encoding (little-endian), the byte string that gets
//! hashed and chained:
//!
//! ```text
//! height u64, prev_hash 32B, tx_root 32B, timestamp u64 (us since epoch),
//! leader_id u16, tx_count u32, then each transaction as its digest-record
//! wire encoding
//! ```
//!
//! `tx_root` is SHA-256 over the concatenated transaction hashes in block
//! order; each transaction hash is SHA-256 of the record's wire encoding.
//! The block hash is SHA-256 of the whole canonical encoding. Votes sign
//! the block hash and are persisted after the canonical bytes as
//! `count u16` then `(validator_id u16, sig_len u16, sig)` per vote —
//! outside the hashed region, since they sign it.

use sha2::{Digest as _, Sha256};

use crate::digest::DigestRecord;
use crate::wire::{decode_record, record_bytes, WireError};

use super::keys::SIGNATURE_LEN;

/// 32-byte SHA-256 block hash.
pub type BlockHash = [u8; 32];

/// prev_hash of the genesis block.
pub const GENESIS_PREV_HASH: BlockHash = [0u8; 32];

/// A digest record pending inclusion, with its receipt metadata.
#[derive(Debug, Clone)]
pub struct Transaction {
    pub record: DigestRecord,
    /// When this node received the submission, microseconds since epoch.
    pub receipt_time_us: u64,
    /// SHA-256 of the record's wire encoding.
    pub tx_hash: BlockHash,
}

impl Transaction {
    pub fn new(record: DigestRecord, receipt_time_us: u64) -> Self {
        let tx_hash = tx_hash(&record);
        Transaction {
            record,
            receipt_time_us,
            tx_hash,
        }
    }
}

/// SHA-256 of a record's canonical wire encoding.
pub fn tx_hash(record: &DigestRecord) -> BlockHash {
    Sha256::digest(record_bytes(record)).into()
}

/// SHA-256 over the concatenated transaction hashes, in order.
pub fn compute_tx_root(records: &[DigestRecord]) -> BlockHash {
    let mut h = Sha256::new();
    for record in records {
        h.update(tx_hash(record));
    }
    h.finalize().into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockHeader {
    pub height: u64,
    pub prev_hash: BlockHash,
    pub tx_root: BlockHash,
    pub timestamp_us: u64,
    pub leader_id: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub header: BlockHeader,
    pub transactions: Vec<DigestRecord>,
}

impl Block {
    /// Builds a block over `records`, computing the tx root.
    pub fn new(
        height: u64,
        prev_hash: BlockHash,
        timestamp_us: u64,
        leader_id: u16,
        transactions: Vec<DigestRecord>,
    ) -> Self {
        let tx_root = compute_tx_root(&transactions);
        Block {
            header: BlockHeader {
                height,
                prev_hash,
                tx_root,
                timestamp_us,
                leader_id,
            },
            transactions,
        }
    }

    /// The canonical encoding described in the module docs.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(86 + self.transactions.len() * 75);
        out.extend_from_slice(&self.header.height.to_le_bytes());
        out.extend_from_slice(&self.header.prev_hash);
        out.extend_from_slice(&self.header.tx_root);
        out.extend_from_slice(&self.header.timestamp_us.to_le_bytes());
        out.extend_from_slice(&self.header.leader_id.to_le_bytes());
        out.extend_from_slice(&(self.transactions.len() as u32).to_le_bytes());
        for record in &self.transactions {
            crate::wire::encode_record(record, &mut out);
        }
        out
    }

    /// SHA-256 of the canonical encoding; what votes sign and what the
    /// next block's prev_hash chains to.
    pub fn hash(&self) -> BlockHash {
        Sha256::digest(self.canonical_bytes()).into()
    }

    /// Decodes one canonical block from the front of a slice; returns
    /// bytes consumed.
    pub fn decode(buf: &[u8]) -> Result<(Self, usize), WireError> {
        const FIXED: usize = 8 + 32 + 32 + 8 + 2 + 4;
        if buf.len() < FIXED {
            return Err(WireError::Truncated {
                what: "block header",
                offset: buf.len(),
            });
        }
        let height = u64::from_le_bytes(buf[0..8].try_into().unwrap());
        let mut prev_hash = [0u8; 32];
        prev_hash.copy_from_slice(&buf[8..40]);
        let mut tx_root = [0u8; 32];
        tx_root.copy_from_slice(&buf[40..72]);
        let timestamp_us = u64::from_le_bytes(buf[72..80].try_into().unwrap());
        let leader_id = u16::from_le_bytes(buf[80..82].try_into().unwrap());
        let tx_count = u32::from_le_bytes(buf[82..86].try_into().unwrap());
        let mut offset = FIXED;
        let mut transactions = Vec::new();
        for _ in 0..tx_count {
            let (record, used) = decode_record(&buf[offset..])?;
            transactions.push(record);
            offset += used;
        }
        Ok((
            Block {
                header: BlockHeader {
                    height,
                    prev_hash,
                    tx_root,
                    timestamp_us,
                    leader_id,
                },
                transactions,
            },
            offset,
        ))
    }
}

/// A validator's signature over a block hash.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vote {
    pub validator_id: u16,
    pub block_hash: BlockHash,
    pub signature: Vec<u8>,
}

/// Encodes a vote set as persisted after the canonical block bytes.
pub fn encode_votes(votes: &[Vote], out: &mut Vec<u8>) {
    out.extend_from_slice(&(votes.len() as u16).to_le_bytes());
    for vote in votes {
        out.extend_from_slice(&vote.validator_id.to_le_bytes());
        out.extend_from_slice(&(vote.signature.len() as u16).to_le_bytes());
        out.extend_from_slice(&vote.signature);
    }
}

/// Decodes a persisted vote set; the block hash is supplied by context.
pub fn decode_votes(buf: &[u8], block_hash: BlockHash) -> Result<(Vec<Vote>, usize), WireError> {
    if buf.len() < 2 {
        return Err(WireError::Truncated {
            what: "vote count",
            offset: buf.len(),
        });
    }
    let count = u16::from_le_bytes(buf[0..2].try_into().unwrap());
    let mut offset = 2;
    let mut votes = Vec::with_capacity(count.min(64) as usize);
    for _ in 0..count {
        if buf.len() < offset + 4 {
            return Err(WireError::Truncated {
                what: "vote header",
                offset: buf.len(),
            });
        }
        let validator_id = u16::from_le_bytes(buf[offset..offset + 2].try_into().unwrap());
        let sig_len = u16::from_le_bytes(buf[offset + 2..offset + 4].try_into().unwrap()) as usize;
        offset += 4;
        if buf.len() < offset + sig_len {
            return Err(WireError::Truncated {
                what: "vote signature",
                offset: buf.len(),
            });
        }
        votes.push(Vote {
            validator_id,
            block_hash,
            signature: buf[offset..offset + sig_len].to_vec(),
        });
        offset += sig_len;
    }
    Ok((votes, offset))
}

/// Canonicalizes a vote set for persistence: sorted by validator id,
/// one vote per validator, fixed-length signatures only.
pub fn canonical_vote_set(votes: &[Vote]) -> Vec<Vote> {
    let mut out: Vec<Vote> = Vec::with_capacity(votes.len());
    for vote in votes {
        if vote.signature.len() != SIGNATURE_LEN {
            continue;
        }
        if !out.iter().any(|v| v.validator_id == vote.validator_id) {
            out.push(vote.clone());
        }
    }
    out.sort_by_key(|v| v.validator_id);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::digest::{DigestAlgorithm, WriteMode};
    use crate::frame_io::StreamId;

    fn record(i: u8) -> DigestRecord {
        DigestRecord {
            stream_id: StreamId([i; 16]),
            mode: WriteMode::PerFrame,
            frame_id_start: i as u64,
            frame_id_end: i as u64,
            algorithm: DigestAlgorithm::Sha256,
            digest: vec![i; 32],
        }
    }

    #[test]
    fn tx_root_is_hash_of_concatenated_tx_hashes() {
        let records = vec![record(1), record(2), record(3)];
        let mut concat = Vec::new();
        for r in &records {
            concat.extend_from_slice(&Sha256::digest(record_bytes(r)));
        }
        let expected: BlockHash = Sha256::digest(&concat).into();
        assert_eq!(compute_tx_root(&records), expected);
    }

    #[test]
    fn block_encode_decode_round_trip() {
        let block = Block::new(3, [7; 32], 123_456, 2, vec![record(1), record(9)]);
        let bytes = block.canonical_bytes();
        let (decoded, used) = Block::decode(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(decoded, block);
    }

    #[test]
    fn block_hash_changes_with_any_field() {
        let base = Block::new(3, [7; 32], 123_456, 2, vec![record(1)]);
        let mut other = base.clone();
        other.header.timestamp_us += 1;
        assert_ne!(base.hash(), other.hash());
    }

    #[test]
    fn vote_set_round_trip_and_canonicalization() {
        let votes = vec![
            Vote {
                validator_id: 2,
                block_hash: [1; 32],
                signature: vec![0xA; SIGNATURE_LEN],
            },
            Vote {
                validator_id: 0,
                block_hash: [1; 32],
                signature: vec![0xB; SIGNATURE_LEN],
            },
            Vote {
                validator_id: 2,
                block_hash: [1; 32],
                signature: vec![0xC; SIGNATURE_LEN],
            },
        ];
        let canonical = canonical_vote_set(&votes);
        assert_eq!(canonical.len(), 2);
        assert_eq!(canonical[0].validator_id, 0);
        assert_eq!(canonical[1].validator_id, 2);
        assert_eq!(canonical[1].signature, vec![0xA; SIGNATURE_LEN]);

        let mut buf = Vec::new();
        encode_votes(&canonical, &mut buf);
        let (decoded, used) = decode_votes(&buf, [1; 32]).unwrap();
        assert_eq!(used, buf.len());
        assert_eq!(decoded, canonical);
    }
}
