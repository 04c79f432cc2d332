//! Append-only block storage with a frame index and tamper detection.
//!
//! Each node persists its chain as a log of length-prefixed entries, one
//! per block: `u32 LE entry length`, then the canonical block bytes, then
//! the persisted vote set. Entry 0 is the genesis block derived from the
//! cluster config. The in-memory frame index is rebuilt by replay on
//! open; the log itself is the evidence — a corrupt index is recoverable,
//! a corrupt log is a finding.
//!
//! [`validate_chain_bytes`] re-verifies everything from genesis: entry
//! framing, genesis byte-equality, prev-hash links, tx roots, and the
//! vote sets. Every persisted vote must verify (append only stores
//! verified votes, so an invalid one can only mean mutation) and distinct
//! valid votes must meet quorum. Any single-byte change to the log
//! surfaces as a violation at the height it touched.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::digest::DigestRecord;
use crate::frame_io::StreamId;

use super::block::{
    canonical_vote_set, decode_votes, encode_votes, Block, BlockHash, Transaction, Vote,
    GENESIS_PREV_HASH,
};
use super::cluster::ClusterConfig;
use super::keys::verify_hash;
use super::LedgerError;

/// Current end of a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainTip {
    pub height: u64,
    pub hash: BlockHash,
}

/// A committed block together with its persisted vote set.
#[derive(Debug, Clone)]
pub struct StoredBlock {
    pub block: Block,
    pub votes: Vec<Vote>,
}

/// One query result: a committed record and where it sits on the chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordHit {
    pub record: DigestRecord,
    pub height: u64,
    pub timestamp_us: u64,
}

type DedupKey = (StreamId, u8, u64, u64, u64, u8);

/// Block store: genesis plus every committed block, an optional backing
/// log file, and a per-stream range index for frame queries.
pub struct BlockStore {
    config: ClusterConfig,
    blocks: Vec<StoredBlock>,
    log: Option<File>,
    path: Option<PathBuf>,
    // stream -> (start, end, height, tx position, timestamp)
    index: HashMap<StreamId, Vec<(u64, u64, u64, u32, u64)>>,
    committed_keys: HashMap<DedupKey, u64>,
}

/// Builds the deterministic genesis block for a cluster.
pub fn genesis_block(config: &ClusterConfig) -> Block {
    Block::new(
        0,
        GENESIS_PREV_HASH,
        config.genesis_timestamp_us,
        0,
        Vec::new(),
    )
}

fn encode_entry(block: &Block, votes: &[Vote]) -> Vec<u8> {
    let mut body = block.canonical_bytes();
    encode_votes(votes, &mut body);
    let mut entry = Vec::with_capacity(4 + body.len());
    entry.extend_from_slice(&(body.len() as u32).to_le_bytes());
    entry.extend_from_slice(&body);
    entry
}

impl BlockStore {
    /// In-memory store seeded with genesis.
    pub fn in_memory(config: ClusterConfig) -> Result<Self, LedgerError> {
        config.validate()?;
        let mut store = BlockStore {
            config,
            blocks: Vec::new(),
            log: None,
            path: None,
            index: HashMap::new(),
            committed_keys: HashMap::new(),
        };
        store.install_genesis();
        Ok(store)
    }

    /// Opens (or initializes) a file-backed store at `path`.
    pub fn open(config: ClusterConfig, path: &Path) -> Result<Self, LedgerError> {
        config.validate()?;
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let exists = path.exists() && std::fs::metadata(path)?.len() > 0;
        let mut store = BlockStore {
            config,
            blocks: Vec::new(),
            log: None,
            path: Some(path.to_path_buf()),
            index: HashMap::new(),
            committed_keys: HashMap::new(),
        };
        if exists {
            let mut bytes = Vec::new();
            File::open(path)?.read_to_end(&mut bytes)?;
            let entries = parse_entries(&bytes).map_err(|v| LedgerError::CorruptLog {
                height: v.height,
                reason: v.reason.to_string(),
            })?;
            let genesis = genesis_block(&store.config);
            for (i, (block, votes)) in entries.into_iter().enumerate() {
                if i == 0 {
                    if block != genesis {
                        return Err(LedgerError::CorruptLog {
                            height: 0,
                            reason: "genesis mismatch".into(),
                        });
                    }
                    store.install_block(StoredBlock { block, votes });
                } else {
                    store.verify_append(&block, &votes)?;
                    store.install_block(StoredBlock { block, votes });
                }
            }
        } else {
            let genesis = genesis_block(&store.config);
            let entry = encode_entry(&genesis, &[]);
            let mut file = OpenOptions::new()
                .create(true)
                .truncate(true)
                .write(true)
                .open(path)?;
            file.write_all(&entry)?;
            file.sync_data()?;
            store.install_block(StoredBlock {
                block: genesis,
                votes: Vec::new(),
            });
        }
        store.log = Some(OpenOptions::new().append(true).open(path)?);
        Ok(store)
    }

    fn install_genesis(&mut self) {
        let genesis = genesis_block(&self.config);
        self.install_block(StoredBlock {
            block: genesis,
            votes: Vec::new(),
        });
    }

    fn install_block(&mut self, stored: StoredBlock) {
        let height = stored.block.header.height;
        let timestamp = stored.block.header.timestamp_us;
        for (pos, record) in stored.block.transactions.iter().enumerate() {
            self.index.entry(record.stream_id).or_default().push((
                record.frame_id_start,
                record.frame_id_end,
                height,
                pos as u32,
                timestamp,
            ));
            self.committed_keys.insert(record.dedup_key(), height);
        }
        self.blocks.push(stored);
    }

    pub fn config(&self) -> &ClusterConfig {
        &self.config
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn tip(&self) -> ChainTip {
        let last = self.blocks.last().expect("genesis always present");
        ChainTip {
            height: last.block.header.height,
            hash: last.block.hash(),
        }
    }

    /// Height of the newest block (genesis is 0).
    pub fn height(&self) -> u64 {
        self.tip().height
    }

    pub fn block_at(&self, height: u64) -> Option<&StoredBlock> {
        self.blocks.get(height as usize)
    }

    pub fn blocks(&self) -> &[StoredBlock] {
        &self.blocks
    }

    /// Whether a record with this dedup key is already on chain.
    pub fn is_committed(&self, record: &DigestRecord) -> bool {
        self.committed_keys.contains_key(&record.dedup_key())
    }

    /// Builds the next block from pending transactions.
    ///
    /// `expected_tip` guards against assembling on a stale view; pass
    /// [`BlockStore::tip`] in normal flow. Transactions are ordered by
    /// receipt time then tx hash, deduplicated, and capped at the
    /// configured block size. Returns `None` when nothing is pending.
    pub fn assemble_block(
        &self,
        pool: &[Transaction],
        leader_id: u16,
        timestamp_us: u64,
        expected_tip: &ChainTip,
    ) -> Result<Option<Block>, LedgerError> {
        let tip = self.tip();
        if *expected_tip != tip {
            return Err(LedgerError::StaleTip {
                expected: tip.height,
                got: expected_tip.height,
            });
        }
        let mut candidates: Vec<&Transaction> = pool
            .iter()
            .filter(|tx| !self.is_committed(&tx.record))
            .collect();
        candidates.sort_by(|a, b| {
            a.receipt_time_us
                .cmp(&b.receipt_time_us)
                .then(a.tx_hash.cmp(&b.tx_hash))
        });
        let mut seen = std::collections::HashSet::new();
        let mut records = Vec::new();
        for tx in candidates {
            if records.len() as u32 >= self.config.block_max_txs {
                break;
            }
            if tx.record.validate().is_err() {
                continue;
            }
            if seen.insert(tx.record.dedup_key()) {
                records.push(tx.record.clone());
            }
        }
        if records.is_empty() {
            return Ok(None);
        }
        Ok(Some(Block::new(
            tip.height + 1,
            tip.hash,
            timestamp_us,
            leader_id,
            records,
        )))
    }

    /// Checks a proposed block against the local tip without committing.
    pub fn verify_proposal(&self, block: &Block) -> Result<(), LedgerError> {
        let tip = self.tip();
        if block.header.height != tip.height + 1 {
            return Err(LedgerError::ChainGap {
                expected: tip.height + 1,
                got: block.header.height,
            });
        }
        if block.header.prev_hash != tip.hash {
            return Err(LedgerError::PrevHashMismatch {
                height: block.header.height,
            });
        }
        if !self.config.is_member(block.header.leader_id) {
            return Err(LedgerError::UnknownMember(block.header.leader_id));
        }
        if block.transactions.is_empty() {
            return Err(LedgerError::EmptyBlock);
        }
        if block.header.tx_root != super::block::compute_tx_root(&block.transactions) {
            return Err(LedgerError::TxRootMismatch {
                height: block.header.height,
            });
        }
        let mut seen = std::collections::HashSet::new();
        for record in &block.transactions {
            record.validate().map_err(LedgerError::InvalidTransaction)?;
            if !seen.insert(record.dedup_key()) || self.is_committed(record) {
                return Err(LedgerError::DuplicateTransaction);
            }
        }
        Ok(())
    }

    fn verify_append(&self, block: &Block, votes: &[Vote]) -> Result<(), LedgerError> {
        self.verify_proposal(block)?;
        let hash = block.hash();
        let mut voters = std::collections::HashSet::new();
        for vote in votes {
            let member = self
                .config
                .member(vote.validator_id)
                .ok_or(LedgerError::UnknownMember(vote.validator_id))?;
            if vote.block_hash != hash
                || !verify_hash(&member.verifying_key, &hash, &vote.signature)
            {
                return Err(LedgerError::InvalidVote {
                    validator_id: vote.validator_id,
                });
            }
            if !voters.insert(vote.validator_id) {
                return Err(LedgerError::DuplicateVote {
                    validator_id: vote.validator_id,
                });
            }
        }
        if voters.len() < self.config.quorum() {
            return Err(LedgerError::QuorumNotMet {
                got: voters.len(),
                need: self.config.quorum(),
            });
        }
        Ok(())
    }

    /// Commits a block with its quorum vote set; advances the tip.
    pub fn append_block(&mut self, block: Block, votes: &[Vote]) -> Result<ChainTip, LedgerError> {
        let votes = canonical_vote_set(votes);
        self.verify_append(&block, &votes)?;
        let entry = encode_entry(&block, &votes);
        if let Some(log) = self.log.as_mut() {
            log.write_all(&entry)?;
            log.sync_data()?;
        }
        self.install_block(StoredBlock { block, votes });
        Ok(self.tip())
    }

    /// Every committed record whose covered range contains `frame_id`.
    pub fn query_digest(&self, stream_id: StreamId, frame_id: u64) -> Vec<RecordHit> {
        let Some(ranges) = self.index.get(&stream_id) else {
            return Vec::new();
        };
        let mut hits = Vec::new();
        for &(start, end, height, pos, timestamp_us) in ranges {
            if start <= frame_id && frame_id <= end {
                let record =
                    self.blocks[height as usize].block.transactions[pos as usize].clone();
                hits.push(RecordHit {
                    record,
                    height,
                    timestamp_us,
                });
            }
        }
        hits
    }

    /// All committed records for a stream, in chain order.
    pub fn records_for_stream(&self, stream_id: StreamId) -> Vec<RecordHit> {
        let Some(ranges) = self.index.get(&stream_id) else {
            return Vec::new();
        };
        ranges
            .iter()
            .map(|&(_, _, height, pos, timestamp_us)| RecordHit {
                record: self.blocks[height as usize].block.transactions[pos as usize].clone(),
                height,
                timestamp_us,
            })
            .collect()
    }
}

/// Why a chain failed validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationReason {
    Framing(String),
    GenesisMismatch,
    HeightMismatch { expected: u64, got: u64 },
    PrevHashMismatch,
    TxRootMismatch,
    BadTransaction(String),
    UnknownLeader(u16),
    EmptyBlock,
    UnknownVoter(u16),
    DuplicateVote(u16),
    InvalidVote(u16),
    QuorumNotMet { got: usize, need: usize },
    TrailingBytes(usize),
}

impl std::fmt::Display for ViolationReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ViolationReason::Framing(what) => write!(f, "framing: {what}"),
            ViolationReason::GenesisMismatch => write!(f, "genesis does not match cluster config"),
            ViolationReason::HeightMismatch { expected, got } => {
                write!(f, "height {got} where {expected} expected")
            }
            ViolationReason::PrevHashMismatch => write!(f, "prev_hash does not match predecessor"),
            ViolationReason::TxRootMismatch => write!(f, "tx_root does not match transactions"),
            ViolationReason::BadTransaction(e) => write!(f, "bad transaction: {e}"),
            ViolationReason::UnknownLeader(id) => write!(f, "unknown leader id {id}"),
            ViolationReason::EmptyBlock => write!(f, "block carries no transactions"),
            ViolationReason::UnknownVoter(id) => write!(f, "vote from unknown member {id}"),
            ViolationReason::DuplicateVote(id) => write!(f, "duplicate vote from member {id}"),
            ViolationReason::InvalidVote(id) => write!(f, "invalid signature from member {id}"),
            ViolationReason::QuorumNotMet { got, need } => {
                write!(f, "{got} valid votes where {need} required")
            }
            ViolationReason::TrailingBytes(n) => write!(f, "{n} trailing bytes in entry"),
        }
    }
}

/// First violation found while walking a chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainViolation {
    pub height: u64,
    pub reason: ViolationReason,
}

impl std::fmt::Display for ChainViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "height {}: {}", self.height, self.reason)
    }
}

impl std::error::Error for ChainViolation {}

fn parse_entries(bytes: &[u8]) -> Result<Vec<(Block, Vec<Vote>)>, ChainViolation> {
    let mut entries = Vec::new();
    let mut offset = 0usize;
    let mut height = 0u64;
    while offset < bytes.len() {
        let fail = |reason: ViolationReason| ChainViolation { height, reason };
        if bytes.len() - offset < 4 {
            return Err(fail(ViolationReason::Framing(
                "truncated entry length".into(),
            )));
        }
        let len = u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap()) as usize;
        offset += 4;
        if len > crate::wire::MAX_FRAME_LEN as usize || bytes.len() - offset < len {
            return Err(fail(ViolationReason::Framing(format!(
                "entry length {len} exceeds remaining bytes"
            ))));
        }
        let entry = &bytes[offset..offset + len];
        offset += len;
        let (block, used) = Block::decode(entry)
            .map_err(|e| fail(ViolationReason::Framing(e.to_string())))?;
        let (votes, vote_used) = decode_votes(&entry[used..], block.hash())
            .map_err(|e| fail(ViolationReason::Framing(e.to_string())))?;
        if used + vote_used != entry.len() {
            return Err(fail(ViolationReason::TrailingBytes(
                entry.len() - used - vote_used,
            )));
        }
        entries.push((block, votes));
        height += 1;
    }
    Ok(entries)
}

/// Walks a persisted chain from genesis, re-verifying every link, root
/// and vote. Returns the tip height or the first violation.
pub fn validate_chain_bytes(
    config: &ClusterConfig,
    bytes: &[u8],
) -> Result<u64, ChainViolation> {
    let entries = parse_entries(bytes)?;
    if entries.is_empty() {
        return Err(ChainViolation {
            height: 0,
            reason: ViolationReason::Framing("empty chain log".into()),
        });
    }
    let genesis = genesis_block(config);
    let mut prev_hash = genesis.hash();
    let mut tip = 0u64;
    for (i, (block, votes)) in entries.iter().enumerate() {
        let expected_height = i as u64;
        let fail = |reason: ViolationReason| ChainViolation {
            height: expected_height,
            reason,
        };
        if block.header.height != expected_height {
            return Err(fail(ViolationReason::HeightMismatch {
                expected: expected_height,
                got: block.header.height,
            }));
        }
        if i == 0 {
            if *block != genesis || !votes.is_empty() {
                return Err(fail(ViolationReason::GenesisMismatch));
            }
            continue;
        }
        if block.header.prev_hash != prev_hash {
            return Err(fail(ViolationReason::PrevHashMismatch));
        }
        if !config.is_member(block.header.leader_id) {
            return Err(fail(ViolationReason::UnknownLeader(block.header.leader_id)));
        }
        if block.transactions.is_empty() {
            return Err(fail(ViolationReason::EmptyBlock));
        }
        if block.header.tx_root != super::block::compute_tx_root(&block.transactions) {
            return Err(fail(ViolationReason::TxRootMismatch));
        }
        for record in &block.transactions {
            record
                .validate()
                .map_err(|e| fail(ViolationReason::BadTransaction(e.to_string())))?;
        }
        let hash = block.hash();
        let mut voters = std::collections::HashSet::new();
        for vote in votes {
            let member = config
                .member(vote.validator_id)
                .ok_or_else(|| fail(ViolationReason::UnknownVoter(vote.validator_id)))?;
            if !voters.insert(vote.validator_id) {
                return Err(fail(ViolationReason::DuplicateVote(vote.validator_id)));
            }
            if !verify_hash(&member.verifying_key, &hash, &vote.signature) {
                return Err(fail(ViolationReason::InvalidVote(vote.validator_id)));
            }
        }
        if voters.len() < config.quorum() {
            return Err(fail(ViolationReason::QuorumNotMet {
                got: voters.len(),
                need: config.quorum(),
            }));
        }
        prev_hash = hash;
        tip = expected_height;
    }
    Ok(tip)
}

/// [`validate_chain_bytes`] over a chain log file.
pub fn validate_chain_file(config: &ClusterConfig, path: &Path) -> Result<u64, LedgerError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    validate_chain_bytes(config, &bytes).map_err(LedgerError::ChainViolation)
}

/// Loads a chain log file as a queryable read-only store, verifying it
/// fully first. This is the "snapshot" access path for verification
/// without a live cluster.
pub fn open_snapshot(config: &ClusterConfig, path: &Path) -> Result<BlockStore, LedgerError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    validate_chain_bytes(config, &bytes).map_err(LedgerError::ChainViolation)?;
    let entries = parse_entries(&bytes).map_err(LedgerError::ChainViolation)?;
    let mut store = BlockStore {
        config: config.clone(),
        blocks: Vec::new(),
        log: None,
        path: None,
        index: HashMap::new(),
        committed_keys: HashMap::new(),
    };
    for (block, votes) in entries {
        store.install_block(StoredBlock { block, votes });
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::digest::{DigestAlgorithm, WriteMode};
    use crate::ledger::cluster::bootstrap_cluster;
    use crate::ledger::keys::sign_hash;

    fn test_cluster() -> super::super::cluster::Bootstrap {
        bootstrap_cluster(3, &[], 42, 7100).unwrap()
    }

    fn record(stream: u8, frame: u64) -> DigestRecord {
        DigestRecord {
            stream_id: StreamId([stream; 16]),
            mode: WriteMode::PerFrame,
            frame_id_start: frame,
            frame_id_end: frame,
            algorithm: DigestAlgorithm::Md5,
            digest: vec![frame as u8; 16],
        }
    }

    fn vote_for(boot: &super::super::cluster::Bootstrap, id: u16, hash: BlockHash) -> Vote {
        Vote {
            validator_id: id,
            block_hash: hash,
            signature: sign_hash(&boot.signing_keys[id as usize], &hash),
        }
    }

    fn committed_store(boot: &super::super::cluster::Bootstrap) -> BlockStore {
        let mut store = BlockStore::in_memory(boot.config.clone()).unwrap();
        let pool = vec![
            Transaction::new(record(1, 0), 10),
            Transaction::new(record(1, 1), 11),
        ];
        let tip = store.tip();
        let block = store
            .assemble_block(&pool, 1, 999, &tip)
            .unwrap()
            .unwrap();
        let hash = block.hash();
        let votes: Vec<Vote> = (0..3).map(|i| vote_for(boot, i, hash)).collect();
        store.append_block(block, &votes).unwrap();
        store
    }

    #[test]
    fn genesis_successor_chains_correctly() {
        let boot = test_cluster();
        let store = BlockStore::in_memory(boot.config.clone()).unwrap();
        let genesis_hash = genesis_block(&boot.config).hash();
        let pool = vec![Transaction::new(record(1, 0), 5)];
        let tip = store.tip();
        let block = store.assemble_block(&pool, 1, 7, &tip).unwrap().unwrap();
        assert_eq!(block.header.height, 1);
        assert_eq!(block.header.prev_hash, genesis_hash);
    }

    #[test]
    fn assemble_dedups_and_orders() {
        let boot = test_cluster();
        let store = BlockStore::in_memory(boot.config).unwrap();
        let pool = vec![
            Transaction::new(record(1, 1), 20),
            Transaction::new(record(1, 0), 10),
            Transaction::new(record(1, 1), 30), // duplicate key
        ];
        let tip = store.tip();
        let block = store.assemble_block(&pool, 1, 7, &tip).unwrap().unwrap();
        assert_eq!(block.transactions.len(), 2);
        assert_eq!(block.transactions[0].frame_id_start, 0);
        assert_eq!(block.transactions[1].frame_id_start, 1);
    }

    #[test]
    fn assemble_empty_pool_is_none() {
        let boot = test_cluster();
        let store = BlockStore::in_memory(boot.config).unwrap();
        let tip = store.tip();
        assert!(store.assemble_block(&[], 1, 7, &tip).unwrap().is_none());
    }

    #[test]
    fn assemble_rejects_stale_tip() {
        let boot = test_cluster();
        let store = committed_store(&boot);
        let stale = ChainTip {
            height: 0,
            hash: genesis_block(&boot.config).hash(),
        };
        let pool = vec![Transaction::new(record(2, 0), 1)];
        assert!(matches!(
            store.assemble_block(&pool, 1, 7, &stale),
            Err(LedgerError::StaleTip { .. })
        ));
    }

    #[test]
    fn append_requires_quorum_and_valid_votes() {
        let boot = test_cluster();
        let mut store = BlockStore::in_memory(boot.config.clone()).unwrap();
        let pool = vec![Transaction::new(record(1, 0), 5)];
        let tip = store.tip();
        let block = store.assemble_block(&pool, 1, 7, &tip).unwrap().unwrap();
        let hash = block.hash();

        // One vote: below quorum of 2.
        let one = vec![vote_for(&boot, 0, hash)];
        assert!(matches!(
            store.append_block(block.clone(), &one),
            Err(LedgerError::QuorumNotMet { got: 1, need: 2 })
        ));

        // Forged signature among the set: rejected.
        let mut forged = vote_for(&boot, 1, hash);
        forged.signature[0] ^= 1;
        let with_forged = vec![vote_for(&boot, 0, hash), forged];
        assert!(matches!(
            store.append_block(block.clone(), &with_forged),
            Err(LedgerError::InvalidVote { validator_id: 1 })
        ));

        let good = vec![vote_for(&boot, 0, hash), vote_for(&boot, 2, hash)];
        let tip = store.append_block(block.clone(), &good).unwrap();
        assert_eq!(tip.height, 1);

        // Same block twice: height conflict.
        assert!(store.append_block(block, &good).is_err());
    }

    #[test]
    fn query_by_frame_id() {
        let boot = test_cluster();
        let store = committed_store(&boot);
        let hits = store.query_digest(StreamId([1; 16]), 1);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].record.frame_id_start, 1);
        assert_eq!(hits[0].height, 1);
        assert!(store.query_digest(StreamId([1; 16]), 10).is_empty());
        assert!(store.query_digest(StreamId([2; 16]), 0).is_empty());
    }

    #[test]
    fn query_finds_covering_batch_range() {
        let boot = test_cluster();
        let mut store = BlockStore::in_memory(boot.config.clone()).unwrap();
        let batch = DigestRecord {
            stream_id: StreamId([5; 16]),
            mode: WriteMode::BatchBytes(30),
            frame_id_start: 0,
            frame_id_end: 29,
            algorithm: DigestAlgorithm::Md5,
            digest: vec![9; 16],
        };
        let pool = vec![Transaction::new(batch.clone(), 1)];
        let tip = store.tip();
        let block = store.assemble_block(&pool, 1, 7, &tip).unwrap().unwrap();
        let hash = block.hash();
        let votes: Vec<Vote> = (0..3).map(|i| vote_for(&boot, i, hash)).collect();
        store.append_block(block, &votes).unwrap();
        let hits = store.query_digest(StreamId([5; 16]), 12);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].record, batch);
    }

    #[test]
    fn file_store_round_trips_and_validates() {
        let boot = test_cluster();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chain.log");
        {
            let mut store = BlockStore::open(boot.config.clone(), &path).unwrap();
            let pool = vec![Transaction::new(record(3, 7), 5)];
            let tip = store.tip();
            let block = store.assemble_block(&pool, 1, 7, &tip).unwrap().unwrap();
            let hash = block.hash();
            let votes: Vec<Vote> = (0..3).map(|i| vote_for(&boot, i, hash)).collect();
            store.append_block(block, &votes).unwrap();
        }
        let reopened = BlockStore::open(boot.config.clone(), &path).unwrap();
        assert_eq!(reopened.height(), 1);
        assert_eq!(reopened.query_digest(StreamId([3; 16]), 7).len(), 1);
        assert_eq!(validate_chain_file(&boot.config, &path).unwrap(), 1);

        let snapshot = open_snapshot(&boot.config, &path).unwrap();
        assert_eq!(snapshot.height(), 1);
    }

    #[test]
    fn validate_detects_digest_mutation_at_height() {
        let boot = test_cluster();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chain.log");
        let mut store = BlockStore::open(boot.config.clone(), &path).unwrap();
        for h in 0..5u64 {
            let pool = vec![Transaction::new(record(1, 100 + h), h)];
            let tip = store.tip();
            let block = store
                .assemble_block(&pool, 1, 7 + h, &tip)
                .unwrap()
                .unwrap();
            let hash = block.hash();
            let votes: Vec<Vote> = (0..3).map(|i| vote_for(&boot, i, hash)).collect();
            store.append_block(block, &votes).unwrap();
        }
        let mut bytes = std::fs::read(&path).unwrap();
        assert_eq!(validate_chain_bytes(&boot.config, &bytes).unwrap(), 5);

        // Locate block 4's digest bytes and flip one.
        let entry_spans = entry_spans(&bytes);
        let (start, _) = entry_spans[4];
        // digest starts 43 bytes into the record; the record starts at
        // entry start + 4 (length) + 86 (block header fields).
        let digest_offset = start + 4 + 86 + 43;
        bytes[digest_offset] ^= 0xFF;
        let violation = validate_chain_bytes(&boot.config, &bytes).unwrap_err();
        assert_eq!(violation.height, 4);
        assert_eq!(violation.reason, ViolationReason::TxRootMismatch);
    }

    #[test]
    fn validate_detects_removed_vote() {
        let boot = test_cluster();
        let mut store = BlockStore::in_memory(boot.config.clone()).unwrap();
        let pool = vec![Transaction::new(record(1, 0), 5)];
        let tip = store.tip();
        let block = store.assemble_block(&pool, 1, 7, &tip).unwrap().unwrap();
        let hash = block.hash();
        let votes: Vec<Vote> = (0..2).map(|i| vote_for(&boot, i, hash)).collect();
        store.append_block(block.clone(), &votes).unwrap();

        // Rebuild the log with one vote stripped from block 1.
        let mut bytes = encode_entry(&genesis_block(&boot.config), &[]);
        bytes.extend_from_slice(&encode_entry(&block, &votes[..1]));
        let violation = validate_chain_bytes(&boot.config, &bytes).unwrap_err();
        assert_eq!(violation.height, 1);
        assert_eq!(
            violation.reason,
            ViolationReason::QuorumNotMet { got: 1, need: 2 }
        );
    }

    /// Byte spans (start, end) of each length-prefixed entry.
    pub(crate) fn entry_spans(bytes: &[u8]) -> Vec<(usize, usize)> {
        let mut spans = Vec::new();
        let mut offset = 0;
        while offset < bytes.len() {
            let len =
                u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap()) as usize;
            spans.push((offset, offset + 4 + len));
            offset += 4 + len;
        }
        spans
    }
}
