//! Permissioned voting ledger: membership, blocks, storage, the
//! consensus round state machine, a deterministic cluster simulator and
//! a socket runtime.

pub mod block;
pub mod cluster;
pub mod consensus;
pub mod keys;
pub mod service;
pub mod sim;
pub mod store;

use thiserror::Error;

pub use block::{Block, BlockHash, BlockHeader, Transaction, Vote};
pub use cluster::{bootstrap_cluster, quorum, Bootstrap, ClusterConfig, LeaderRule, Member};
pub use consensus::{ConsensusMessage, ConsensusNode, Outbound, RoundOutcome};
pub use sim::{Behavior, NetScript, RoundReport, SimCluster};
pub use store::{
    genesis_block, open_snapshot, validate_chain_bytes, validate_chain_file, BlockStore,
    ChainTip, ChainViolation, RecordHit, StoredBlock, ViolationReason,
};

/// Ledger-side errors.
#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("a voting cluster needs at least three members, got {0}")]
    TooFewMembers(usize),
    #[error("cluster config invalid: {0}")]
    Config(String),
    #[error("tip moved: store at height {expected}, caller assumed {got}")]
    StaleTip { expected: u64, got: u64 },
    #[error("block height {got} does not extend chain at {expected}")]
    ChainGap { expected: u64, got: u64 },
    #[error("block at height {height} does not chain to its predecessor")]
    PrevHashMismatch { height: u64 },
    #[error("tx_root does not match transactions at height {height}")]
    TxRootMismatch { height: u64 },
    #[error("invalid transaction: {0}")]
    InvalidTransaction(crate::digest::DigestError),
    #[error("duplicate transaction in block or already committed")]
    DuplicateTransaction,
    #[error("block carries no transactions")]
    EmptyBlock,
    #[error("vote from unknown member {0}")]
    UnknownMember(u16),
    #[error("invalid vote from member {validator_id}")]
    InvalidVote { validator_id: u16 },
    #[error("duplicate vote from member {validator_id}")]
    DuplicateVote { validator_id: u16 },
    #[error("quorum not met: {got} valid votes, {need} required")]
    QuorumNotMet { got: usize, need: usize },
    #[error("chain validation failed: {0}")]
    ChainViolation(ChainViolation),
    #[error("chain log corrupt at height {height}: {reason}")]
    CorruptLog { height: u64, reason: String },
    #[error("pool not drained after allotted rounds ({committed} blocks committed)")]
    RoundsExhausted { committed: u64 },
    #[error("wire: {0}")]
    Wire(#[from] crate::wire::WireError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
