//! The voting round state machine, shared by the deterministic simulator
//! and the socket runtime.
//!
//! One round commits at most one block:
//!
//! 1. The round's leader assembles a block from its pending pool, signs
//!    its hash, and sends `Propose` to every validator.
//! 2. Each validator verifies the block (chain link, tx root, transaction
//!    validity, the leader's vote), signs the hash, and relays its vote
//!    to every other validator with `SignedRelay`.
//! 3. When a node has gathered votes from all members — or the round is
//!    ended by timeout/quiescence — it tallies. It commits iff at least
//!    quorum distinct valid votes carry the proposal hash and no valid
//!    vote carries a different hash; differing signed versions mean the
//!    leader equivocated and the round aborts.
//! 4. Committing validators inform the leader with `Confirm`, carrying
//!    the full vote set; the leader verifies that set and commits too.
//!
//! Commit persists every valid vote gathered, canonically sorted, which
//! is why honest nodes that commit a height write byte-identical chain
//! entries. A failed round leaves transactions pending; the next attempt
//! rotates the leader.

use std::collections::{BTreeMap, BTreeSet};

use ed25519_dalek::SigningKey;

use crate::digest::DigestRecord;
use crate::wire::WireError;

use super::block::{Block, BlockHash, Transaction, Vote};
use super::cluster::ClusterConfig;
use super::keys::{sign_hash, verify_hash};
use super::store::{BlockStore, ChainTip};

/// Messages exchanged between cluster members during a round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConsensusMessage {
    /// Leader's proposal, carrying its own vote on the block hash.
    Propose {
        height: u64,
        attempt: u32,
        block: Block,
        leader_vote: Vote,
    },
    /// A validator's signed copy, relayed to the other validators.
    SignedRelay {
        height: u64,
        attempt: u32,
        vote: Vote,
    },
    /// A committing validator informing the leader, with the vote set.
    Confirm {
        height: u64,
        attempt: u32,
        block_hash: BlockHash,
        votes: Vec<Vote>,
    },
}

const PEER_PROPOSE: u8 = 0x01;
const PEER_SIGNED_RELAY: u8 = 0x02;
const PEER_CONFIRM: u8 = 0x03;

fn encode_vote(vote: &Vote, out: &mut Vec<u8>) {
    out.extend_from_slice(&vote.validator_id.to_le_bytes());
    out.extend_from_slice(&vote.block_hash);
    out.extend_from_slice(&(vote.signature.len() as u16).to_le_bytes());
    out.extend_from_slice(&vote.signature);
}

fn decode_vote(buf: &[u8]) -> Result<(Vote, usize), WireError> {
    if buf.len() < 2 + 32 + 2 {
        return Err(WireError::Truncated {
            what: "vote",
            offset: buf.len(),
        });
    }
    let validator_id = u16::from_le_bytes(buf[0..2].try_into().unwrap());
    let mut block_hash = [0u8; 32];
    block_hash.copy_from_slice(&buf[2..34]);
    let sig_len = u16::from_le_bytes(buf[34..36].try_into().unwrap()) as usize;
    if buf.len() < 36 + sig_len {
        return Err(WireError::Truncated {
            what: "vote signature",
            offset: buf.len(),
        });
    }
    Ok((
        Vote {
            validator_id,
            block_hash,
            signature: buf[36..36 + sig_len].to_vec(),
        },
        36 + sig_len,
    ))
}

impl ConsensusMessage {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            ConsensusMessage::Propose {
                height,
                attempt,
                block,
                leader_vote,
            } => {
                out.push(PEER_PROPOSE);
                out.extend_from_slice(&height.to_le_bytes());
                out.extend_from_slice(&attempt.to_le_bytes());
                let block_bytes = block.canonical_bytes();
                out.extend_from_slice(&(block_bytes.len() as u32).to_le_bytes());
                out.extend_from_slice(&block_bytes);
                encode_vote(leader_vote, &mut out);
            }
            ConsensusMessage::SignedRelay {
                height,
                attempt,
                vote,
            } => {
                out.push(PEER_SIGNED_RELAY);
                out.extend_from_slice(&height.to_le_bytes());
                out.extend_from_slice(&attempt.to_le_bytes());
                encode_vote(vote, &mut out);
            }
            ConsensusMessage::Confirm {
                height,
                attempt,
                block_hash,
                votes,
            } => {
                out.push(PEER_CONFIRM);
                out.extend_from_slice(&height.to_le_bytes());
                out.extend_from_slice(&attempt.to_le_bytes());
                out.extend_from_slice(block_hash);
                out.extend_from_slice(&(votes.len() as u16).to_le_bytes());
                for vote in votes {
                    encode_vote(vote, &mut out);
                }
            }
        }
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, WireError> {
        let (&opcode, rest) = buf.split_first().ok_or(WireError::EmptyPayload)?;
        let need = |n: usize| -> Result<(), WireError> {
            if rest.len() < n {
                Err(WireError::Truncated {
                    what: "consensus message",
                    offset: rest.len(),
                })
            } else {
                Ok(())
            }
        };
        match opcode {
            PEER_PROPOSE => {
                need(8 + 4 + 4)?;
                let height = u64::from_le_bytes(rest[0..8].try_into().unwrap());
                let attempt = u32::from_le_bytes(rest[8..12].try_into().unwrap());
                let block_len = u32::from_le_bytes(rest[12..16].try_into().unwrap()) as usize;
                need(16 + block_len)?;
                let (block, used) = Block::decode(&rest[16..16 + block_len])?;
                if used != block_len {
                    return Err(WireError::TrailingBytes(block_len - used));
                }
                let (leader_vote, vote_used) = decode_vote(&rest[16 + block_len..])?;
                if 16 + block_len + vote_used != rest.len() {
                    return Err(WireError::TrailingBytes(
                        rest.len() - 16 - block_len - vote_used,
                    ));
                }
                Ok(ConsensusMessage::Propose {
                    height,
                    attempt,
                    block,
                    leader_vote,
                })
            }
            PEER_SIGNED_RELAY => {
                need(12)?;
                let height = u64::from_le_bytes(rest[0..8].try_into().unwrap());
                let attempt = u32::from_le_bytes(rest[8..12].try_into().unwrap());
                let (vote, used) = decode_vote(&rest[12..])?;
                if 12 + used != rest.len() {
                    return Err(WireError::TrailingBytes(rest.len() - 12 - used));
                }
                Ok(ConsensusMessage::SignedRelay {
                    height,
                    attempt,
                    vote,
                })
            }
            PEER_CONFIRM => {
                need(8 + 4 + 32 + 2)?;
                let height = u64::from_le_bytes(rest[0..8].try_into().unwrap());
                let attempt = u32::from_le_bytes(rest[8..12].try_into().unwrap());
                let mut block_hash = [0u8; 32];
                block_hash.copy_from_slice(&rest[12..44]);
                let count = u16::from_le_bytes(rest[44..46].try_into().unwrap());
                let mut offset = 46;
                let mut votes = Vec::with_capacity(count.min(64) as usize);
                for _ in 0..count {
                    let (vote, used) = decode_vote(&rest[offset..])?;
                    votes.push(vote);
                    offset += used;
                }
                if offset != rest.len() {
                    return Err(WireError::TrailingBytes(rest.len() - offset));
                }
                Ok(ConsensusMessage::Confirm {
                    height,
                    attempt,
                    block_hash,
                    votes,
                })
            }
            other => Err(WireError::UnknownMessageType(other)),
        }
    }
}

/// A message addressed to one member.
#[derive(Debug, Clone)]
pub struct Outbound {
    pub to: u16,
    pub msg: ConsensusMessage,
}

/// How a round ended at one node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RoundOutcome {
    /// Block committed; new tip.
    Committed(ChainTip),
    /// No (valid) proposal arrived.
    NoProposal,
    /// Valid votes below quorum; transactions stay pending.
    NoQuorum { valid: usize, need: usize },
    /// Valid votes exist for more than one block hash: the leader
    /// equivocated, no single version can be trusted.
    Conflict,
    /// The node was not participating in a round.
    Idle,
}

struct RoundState {
    height: u64,
    attempt: u32,
    leader: u16,
    proposal: Option<Block>,
    proposal_hash: BlockHash,
    /// First valid-signature vote per member, any hash.
    votes: BTreeMap<u16, Vote>,
    /// Distinct hashes seen on valid votes.
    hashes_seen: BTreeSet<BlockHash>,
    committed: bool,
}

/// One cluster member's consensus state machine.
///
/// The node is sans-IO: callers feed messages in and drain [`Outbound`]
/// messages to deliver, whether that delivery is a deterministic
/// simulator queue or a TCP mesh.
pub struct ConsensusNode {
    config: ClusterConfig,
    me: u16,
    signing_key: SigningKey,
    store: BlockStore,
    pool: Vec<Transaction>,
    round: Option<RoundState>,
}

impl ConsensusNode {
    pub fn new(config: ClusterConfig, me: u16, signing_key: SigningKey, store: BlockStore) -> Self {
        ConsensusNode {
            config,
            me,
            signing_key,
            store,
            pool: Vec::new(),
            round: None,
        }
    }

    pub fn id(&self) -> u16 {
        self.me
    }

    pub fn store(&self) -> &BlockStore {
        &self.store
    }

    pub fn config(&self) -> &ClusterConfig {
        &self.config
    }

    pub fn tip(&self) -> ChainTip {
        self.store.tip()
    }

    /// Adds a submitted record to the pending pool. Duplicates of pending
    /// or committed records are accepted idempotently but will not be
    /// included twice.
    pub fn submit(&mut self, record: DigestRecord, receipt_time_us: u64) -> bool {
        if record.validate().is_err() {
            return false;
        }
        if self.store.is_committed(&record)
            || self
                .pool
                .iter()
                .any(|tx| tx.record.dedup_key() == record.dedup_key())
        {
            return true;
        }
        self.pool.push(Transaction::new(record, receipt_time_us));
        true
    }

    pub fn pending_len(&self) -> usize {
        self.pool.len()
    }

    /// Whether this node leads the round that proposes the next height.
    pub fn leads_next(&self, attempt: u32) -> bool {
        self.config.leader_for(self.tip().height + 1, attempt) == self.me
    }

    fn own_vote(&self, hash: BlockHash) -> Vote {
        Vote {
            validator_id: self.me,
            block_hash: hash,
            signature: sign_hash(&self.signing_key, &hash),
        }
    }

    /// Assembles a proposal for the next height without mutating state.
    pub fn craft_proposal(&self, timestamp_us: u64) -> Option<(Block, Vote)> {
        let tip = self.store.tip();
        let block = self
            .store
            .assemble_block(&self.pool, self.me, timestamp_us, &tip)
            .ok()??;
        let vote = self.own_vote(block.hash());
        Some((block, vote))
    }

    /// Leader entry point: assemble and broadcast a proposal. Returns
    /// false when the pool is empty or this node does not lead.
    pub fn propose(&mut self, attempt: u32, timestamp_us: u64, out: &mut Vec<Outbound>) -> bool {
        let height = self.tip().height + 1;
        let leader = self.config.leader_for(height, attempt);
        if leader != self.me {
            return false;
        }
        let Some((block, leader_vote)) = self.craft_proposal(timestamp_us) else {
            return false;
        };
        let hash = block.hash();
        let mut round = RoundState {
            height,
            attempt,
            leader,
            proposal: Some(block.clone()),
            proposal_hash: hash,
            votes: BTreeMap::new(),
            hashes_seen: BTreeSet::new(),
            committed: false,
        };
        round.votes.insert(self.me, leader_vote.clone());
        round.hashes_seen.insert(hash);
        self.round = Some(round);
        for member in &self.config.members {
            if member.id != self.me {
                out.push(Outbound {
                    to: member.id,
                    msg: ConsensusMessage::Propose {
                        height,
                        attempt,
                        block: block.clone(),
                        leader_vote: leader_vote.clone(),
                    },
                });
            }
        }
        true
    }

    /// Arms (or matches) the round for (height, attempt). Returns false
    /// for stale or mismatched rounds.
    fn ensure_round(&mut self, height: u64, attempt: u32) -> bool {
        if height != self.tip().height + 1 {
            return false;
        }
        match &self.round {
            Some(r) if r.height == height && r.attempt == attempt => true,
            Some(r) if r.height == height && attempt > r.attempt && !r.committed => {
                self.arm_round(height, attempt);
                true
            }
            Some(_) => false,
            None => {
                self.arm_round(height, attempt);
                true
            }
        }
    }

    fn arm_round(&mut self, height: u64, attempt: u32) {
        self.round = Some(RoundState {
            height,
            attempt,
            leader: self.config.leader_for(height, attempt),
            proposal: None,
            proposal_hash: [0; 32],
            votes: BTreeMap::new(),
            hashes_seen: BTreeSet::new(),
            committed: false,
        });
    }

    fn record_vote(round: &mut RoundState, vote: Vote) {
        round.hashes_seen.insert(vote.block_hash);
        round.votes.entry(vote.validator_id).or_insert(vote);
    }

    /// Feeds one message from `from`; any responses are pushed to `out`.
    pub fn handle(&mut self, from: u16, msg: ConsensusMessage, out: &mut Vec<Outbound>) {
        if !self.config.is_member(from) {
            return;
        }
        match msg {
            ConsensusMessage::Propose {
                height,
                attempt,
                block,
                leader_vote,
            } => self.handle_propose(from, height, attempt, block, leader_vote, out),
            ConsensusMessage::SignedRelay {
                height,
                attempt,
                vote,
            } => self.handle_relay(from, height, attempt, vote),
            ConsensusMessage::Confirm {
                height,
                attempt,
                block_hash,
                votes,
            } => self.handle_confirm(from, height, attempt, block_hash, votes),
        }
    }

    fn handle_propose(
        &mut self,
        from: u16,
        height: u64,
        attempt: u32,
        block: Block,
        leader_vote: Vote,
        out: &mut Vec<Outbound>,
    ) {
        if !self.ensure_round(height, attempt) {
            return;
        }
        let leader = self.config.leader_for(height, attempt);
        if from != leader || self.me == leader {
            return;
        }
        let hash = block.hash();
        // The leader's vote must be its signature over this block.
        let leader_key = &self.config.member(leader).expect("leader is member").verifying_key;
        let leader_vote_ok = leader_vote.validator_id == leader
            && leader_vote.block_hash == hash
            && verify_hash(leader_key, &hash, &leader_vote.signature);
        if !leader_vote_ok {
            return;
        }
        {
            let round = self.round.as_mut().expect("round armed");
            if round.proposal.is_some() {
                if round.proposal_hash != hash {
                    // A second signed version from the same leader: equivocation.
                    Self::record_vote(round, leader_vote);
                }
                return;
            }
        }
        if self.store.verify_proposal(&block).is_err() {
            // Structurally invalid proposal: treat as absent. Its valid
            // leader vote still counts toward conflict detection.
            let round = self.round.as_mut().expect("round armed");
            Self::record_vote(round, leader_vote);
            return;
        }
        let own = self.own_vote(hash);
        let round = self.round.as_mut().expect("round armed");
        round.proposal = Some(block);
        round.proposal_hash = hash;
        Self::record_vote(round, leader_vote);
        Self::record_vote(round, own.clone());
        // Relay the signed copy to every other validator.
        for member in &self.config.members {
            if member.id != self.me && member.id != leader {
                out.push(Outbound {
                    to: member.id,
                    msg: ConsensusMessage::SignedRelay {
                        height,
                        attempt,
                        vote: own.clone(),
                    },
                });
            }
        }
    }

    fn handle_relay(&mut self, from: u16, height: u64, attempt: u32, vote: Vote) {
        if !self.ensure_round(height, attempt) {
            return;
        }
        // Members only relay their own signed copy.
        if vote.validator_id != from {
            return;
        }
        let Some(member) = self.config.member(from) else {
            return;
        };
        if !verify_hash(&member.verifying_key, &vote.block_hash, &vote.signature) {
            return;
        }
        let round = self.round.as_mut().expect("round armed");
        if round.committed {
            return;
        }
        Self::record_vote(round, vote);
    }

    fn handle_confirm(
        &mut self,
        _from: u16,
        height: u64,
        attempt: u32,
        block_hash: BlockHash,
        votes: Vec<Vote>,
    ) {
        // Only the leader of the matching round acts on confirmations.
        let Some(round) = self.round.as_ref() else {
            return;
        };
        if round.height != height
            || round.attempt != attempt
            || round.leader != self.me
            || round.committed
        {
            return;
        }
        if round.proposal_hash != block_hash {
            return;
        }
        let Some(block) = round.proposal.clone() else {
            return;
        };
        // append_block re-verifies the whole vote set and the quorum.
        if let Ok(tip) = self.store.append_block(block, &votes) {
            let round = self.round.as_mut().unwrap();
            round.committed = true;
            let _ = tip;
            self.prune_pool();
        }
    }

    /// True once votes from every member are in, or the node committed;
    /// there is nothing more this round can learn.
    pub fn round_complete(&self) -> bool {
        match &self.round {
            Some(r) => r.committed || r.votes.len() == self.config.n(),
            None => false,
        }
    }

    pub fn in_round(&self) -> bool {
        self.round.is_some()
    }

    /// Ends the current round: tally, commit if quorum agrees on one
    /// hash, otherwise report why not. Validators that commit emit a
    /// `Confirm` to the leader.
    pub fn end_round(&mut self, out: &mut Vec<Outbound>) -> RoundOutcome {
        let Some(round) = self.round.take() else {
            return RoundOutcome::Idle;
        };
        if round.committed {
            return RoundOutcome::Committed(self.tip());
        }
        let Some(block) = round.proposal else {
            return RoundOutcome::NoProposal;
        };
        let matching: Vec<Vote> = round
            .votes
            .values()
            .filter(|v| v.block_hash == round.proposal_hash)
            .cloned()
            .collect();
        if round.hashes_seen.len() > 1 {
            return RoundOutcome::Conflict;
        }
        let need = self.config.quorum();
        if matching.len() < need {
            return RoundOutcome::NoQuorum {
                valid: matching.len(),
                need,
            };
        }
        match self.store.append_block(block, &matching) {
            Ok(tip) => {
                self.prune_pool();
                if round.leader != self.me {
                    out.push(Outbound {
                        to: round.leader,
                        msg: ConsensusMessage::Confirm {
                            height: round.height,
                            attempt: round.attempt,
                            block_hash: round.proposal_hash,
                            votes: matching,
                        },
                    });
                }
                RoundOutcome::Committed(tip)
            }
            Err(_) => RoundOutcome::NoQuorum {
                valid: matching.len(),
                need,
            },
        }
    }

    fn prune_pool(&mut self) {
        let store = &self.store;
        self.pool.retain(|tx| !store.is_committed(&tx.record));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::digest::{DigestAlgorithm, WriteMode};
    use crate::frame_io::StreamId;
    use crate::ledger::cluster::bootstrap_cluster;

    fn record(frame: u64) -> DigestRecord {
        DigestRecord {
            stream_id: StreamId([1; 16]),
            mode: WriteMode::PerFrame,
            frame_id_start: frame,
            frame_id_end: frame,
            algorithm: DigestAlgorithm::Md5,
            digest: vec![frame as u8; 16],
        }
    }

    fn make_nodes(n: usize) -> Vec<ConsensusNode> {
        let boot = bootstrap_cluster(n, &[], 77, 7100).unwrap();
        boot.signing_keys
            .into_iter()
            .enumerate()
            .map(|(i, key)| {
                ConsensusNode::new(
                    boot.config.clone(),
                    i as u16,
                    key,
                    BlockStore::in_memory(boot.config.clone()).unwrap(),
                )
            })
            .collect()
    }

    /// Synchronous in-order delivery: good enough for the state machine's
    /// own unit tests; scheduling variations live in the simulator tests.
    fn run_sync_round(nodes: &mut [ConsensusNode], attempt: u32) -> Vec<RoundOutcome> {
        let mut queue: Vec<(u16, Outbound)> = Vec::new();
        let mut out = Vec::new();
        let leader = nodes[0].config.leader_for(nodes[0].tip().height + 1, attempt);
        nodes[leader as usize].propose(attempt, 1000, &mut out);
        queue.extend(out.drain(..).map(|o| (leader, o)));
        while let Some((from, outbound)) = queue.pop() {
            let node = &mut nodes[outbound.to as usize];
            node.handle(from, outbound.msg, &mut out);
            let to = outbound.to;
            queue.extend(out.drain(..).map(|o| (to, o)));
        }
        let mut outcomes: Vec<Option<RoundOutcome>> = nodes.iter().map(|_| None).collect();
        // Validators first; their confirms let the leader commit.
        for i in 0..nodes.len() {
            if nodes[i].id() != leader && nodes[i].in_round() {
                let outcome = nodes[i].end_round(&mut out);
                let from = nodes[i].id();
                let deliveries: Vec<Outbound> = out.drain(..).collect();
                for o in deliveries {
                    let to = o.to as usize;
                    nodes[to].handle(from, o.msg, &mut out);
                }
                outcomes[i] = Some(outcome);
            }
        }
        let leader_outcome = nodes[leader as usize].end_round(&mut out);
        outcomes[leader as usize] = Some(leader_outcome);
        outcomes.into_iter().map(|o| o.unwrap_or(RoundOutcome::Idle)).collect()
    }

    #[test]
    fn three_honest_nodes_commit() {
        let mut nodes = make_nodes(3);
        for node in nodes.iter_mut() {
            assert!(node.submit(record(0), 10));
            assert!(node.submit(record(1), 11));
        }
        let outcomes = run_sync_round(&mut nodes, 0);
        for (node, outcome) in nodes.iter().zip(&outcomes) {
            assert!(
                matches!(outcome, RoundOutcome::Committed(tip) if tip.height == 1),
                "node {} got {outcome:?}",
                node.id()
            );
            assert_eq!(node.store().height(), 1);
            assert_eq!(node.pending_len(), 0);
        }
        let hashes: Vec<_> = nodes.iter().map(|n| n.tip().hash).collect();
        assert!(hashes.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn consecutive_rounds_rotate_leader() {
        let mut nodes = make_nodes(3);
        for node in nodes.iter_mut() {
            for f in 0..250 {
                node.submit(record(f), f);
            }
        }
        // block_max_txs is 100: three rounds drain 250 records.
        for expected_height in 1..=3 {
            let outcomes = run_sync_round(&mut nodes, 0);
            for outcome in &outcomes {
                assert!(matches!(outcome, RoundOutcome::Committed(tip) if tip.height == expected_height));
            }
        }
        assert!(nodes.iter().all(|n| n.pending_len() == 0));
        let leaders: Vec<u16> = (1..=3)
            .map(|h| nodes[0].store().block_at(h).unwrap().block.header.leader_id)
            .collect();
        assert_eq!(leaders, vec![1, 2, 0]);
    }

    #[test]
    fn submit_is_idempotent() {
        let mut nodes = make_nodes(3);
        assert!(nodes[0].submit(record(5), 1));
        assert!(nodes[0].submit(record(5), 2));
        assert_eq!(nodes[0].pending_len(), 1);
    }

    #[test]
    fn message_encoding_round_trip() {
        let mut nodes = make_nodes(3);
        nodes[1].submit(record(3), 9);
        let (block, vote) = nodes[1].craft_proposal(500).unwrap();
        let msgs = vec![
            ConsensusMessage::Propose {
                height: 1,
                attempt: 0,
                block: block.clone(),
                leader_vote: vote.clone(),
            },
            ConsensusMessage::SignedRelay {
                height: 1,
                attempt: 2,
                vote: vote.clone(),
            },
            ConsensusMessage::Confirm {
                height: 1,
                attempt: 0,
                block_hash: block.hash(),
                votes: vec![vote],
            },
        ];
        for msg in msgs {
            let bytes = msg.encode();
            assert_eq!(ConsensusMessage::decode(&bytes).unwrap(), msg);
        }
    }

    #[test]
    fn propose_from_non_leader_is_ignored() {
        let mut nodes = make_nodes(3);
        for node in nodes.iter_mut() {
            node.submit(record(0), 1);
        }
        // Member 2 is not the leader for height 1 (round-robin picks 1).
        let mut out = Vec::new();
        assert!(!nodes[2].propose(0, 1000, &mut out));
        assert!(out.is_empty());
    }
}
