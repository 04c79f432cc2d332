//! Deterministic in-process cluster: seeded message scheduler plus
//! scripted member faults.
//!
//! Messages are delivered from a priority queue keyed by (delivery time,
//! sequence). Random per-message delays reorder traffic, a drop
//! probability loses it, and both draw from one ChaCha8 stream, so a
//! given (cluster, script) pair replays the exact same schedule every
//! run. Member faults are applied to a node's *output*: a silent member
//! sends nothing, a garbage signer emits votes whose signatures cannot
//! verify.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest as _, Sha256};

use crate::digest::DigestRecord;

use super::block::BlockHash;
use super::cluster::{bootstrap_cluster, Bootstrap, ClusterConfig};
use super::consensus::{ConsensusMessage, ConsensusNode, Outbound, RoundOutcome};
use super::store::BlockStore;
use super::LedgerError;

/// Scripted behavior of one member.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Behavior {
    Honest,
    /// Crashed or partitioned: neither sends nor receives.
    Silent,
    /// Participates but every signature it emits is garbage. Such a node
    /// can still convince *itself* with the honest votes it receives;
    /// assertions about cluster behavior are over honest members.
    GarbageSig,
}

/// Message scheduling parameters for one simulated round.
#[derive(Debug, Clone, Copy)]
pub struct NetScript {
    pub seed: u64,
    /// Probability that any single message is dropped.
    pub drop_prob: f64,
    /// Uniform delivery delay range, microseconds.
    pub min_delay_us: u64,
    pub max_delay_us: u64,
}

impl NetScript {
    /// Reliable delivery with seeded reordering delays.
    pub fn reorder_only(seed: u64) -> Self {
        NetScript {
            seed,
            drop_prob: 0.0,
            min_delay_us: 1,
            max_delay_us: 5_000,
        }
    }
}

struct Scheduled {
    at_us: u64,
    seq: u64,
    from: u16,
    outbound: Outbound,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.at_us == other.at_us && self.seq == other.seq
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    // BinaryHeap is a max-heap; invert for earliest-first delivery.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at_us, other.seq).cmp(&(self.at_us, self.seq))
    }
}

/// Uniform draw in [0, 1) from the top 53 bits of a u64.
fn unit_draw(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

fn script_rng(script: &NetScript) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"veriframe.sim.v1");
    h.update(script.seed.to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Result of one simulated round.
#[derive(Debug, Clone)]
pub struct RoundReport {
    /// Outcome per member, indexed by member id.
    pub outcomes: Vec<RoundOutcome>,
    /// Hash every committing node agreed on, if any committed.
    pub committed_hash: Option<BlockHash>,
    pub messages_delivered: u64,
    pub messages_dropped: u64,
}

impl RoundReport {
    pub fn committed_count(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| matches!(o, RoundOutcome::Committed(_)))
            .count()
    }
}

/// An in-process cluster of consensus nodes under a virtual clock.
pub struct SimCluster {
    pub config: ClusterConfig,
    pub nodes: Vec<ConsensusNode>,
    pub behaviors: Vec<Behavior>,
    clock_us: u64,
    next_attempt: u32,
}

impl SimCluster {
    /// Bootstraps `n` members with in-memory stores.
    pub fn new_in_memory(n: usize, seed: u64) -> Result<Self, LedgerError> {
        let boot = bootstrap_cluster(n, &[], seed, 7100)?;
        Self::from_bootstrap(boot, None)
    }

    /// Bootstraps `n` members with one chain log file per node under
    /// `dir` (`node-<id>/chain.log`).
    pub fn new_persistent(n: usize, seed: u64, dir: &std::path::Path) -> Result<Self, LedgerError> {
        let boot = bootstrap_cluster(n, &[], seed, 7100)?;
        Self::from_bootstrap(boot, Some(dir))
    }

    pub fn from_bootstrap(
        boot: Bootstrap,
        dir: Option<&std::path::Path>,
    ) -> Result<Self, LedgerError> {
        let config = boot.config;
        let mut nodes = Vec::with_capacity(config.n());
        for (i, key) in boot.signing_keys.into_iter().enumerate() {
            let id = config.members[i].id;
            let store = match dir {
                Some(dir) => {
                    BlockStore::open(config.clone(), &dir.join(format!("node-{id}/chain.log")))?
                }
                None => BlockStore::in_memory(config.clone())?,
            };
            nodes.push(ConsensusNode::new(config.clone(), id, key, store));
        }
        let behaviors = vec![Behavior::Honest; nodes.len()];
        Ok(SimCluster {
            config,
            nodes,
            behaviors,
            clock_us: 1_000_000,
            next_attempt: 0,
        })
    }

    pub fn set_behavior(&mut self, member_id: u16, behavior: Behavior) {
        self.behaviors[member_id as usize] = behavior;
    }

    pub fn now_us(&self) -> u64 {
        self.clock_us
    }

    /// Submits a record to every member's pool, as a broadcasting client
    /// would.
    pub fn submit(&mut self, record: DigestRecord) {
        self.clock_us += 1;
        for node in self.nodes.iter_mut() {
            node.submit(record.clone(), self.clock_us);
        }
    }

    fn apply_behavior(
        &self,
        from: u16,
        outbound: Outbound,
        rng: &mut ChaCha8Rng,
    ) -> Option<Outbound> {
        match self.behaviors[from as usize] {
            Behavior::Honest => Some(outbound),
            Behavior::Silent => None,
            Behavior::GarbageSig => {
                let mut outbound = outbound;
                let corrupt = |sig: &mut Vec<u8>, rng: &mut ChaCha8Rng| {
                    for byte in sig.iter_mut() {
                        *byte = (rng.next_u64() & 0xFF) as u8;
                    }
                };
                match &mut outbound.msg {
                    ConsensusMessage::Propose { leader_vote, .. } => {
                        corrupt(&mut leader_vote.signature, rng)
                    }
                    ConsensusMessage::SignedRelay { vote, .. } => {
                        corrupt(&mut vote.signature, rng)
                    }
                    ConsensusMessage::Confirm { votes, .. } => {
                        for vote in votes {
                            corrupt(&mut vote.signature, rng);
                        }
                    }
                }
                Some(outbound)
            }
        }
    }

    /// Runs one full round at the given attempt under a network script.
    ///
    /// The round's leader proposes (unless scripted silent), messages are
    /// delivered per the script, nodes that gather every vote end early,
    /// and the rest end at quiescence. Deterministic for fixed inputs.
    pub fn run_consensus_round(&mut self, attempt: u32, script: &NetScript) -> RoundReport {
        let mut rng = script_rng(script);
        let mut queue: BinaryHeap<Scheduled> = BinaryHeap::new();
        let mut seq = 0u64;
        let mut delivered = 0u64;
        let mut dropped = 0u64;
        let n = self.nodes.len();
        let mut ended: Vec<Option<RoundOutcome>> = vec![None; n];

        self.clock_us += 1_000;
        let proposal_time = self.clock_us;
        let height = self.nodes[0].tip().height + 1;
        let leader = self.config.leader_for(height, attempt);

        let mut fresh: Vec<(u16, Outbound)> = Vec::new();
        {
            let mut out = Vec::new();
            self.nodes[leader as usize].propose(attempt, proposal_time, &mut out);
            fresh.extend(out.into_iter().map(|o| (leader, o)));
        }

        loop {
            // Schedule everything produced since the last delivery.
            for (from, outbound) in fresh.drain(..) {
                let Some(outbound) = self.apply_behavior(from, outbound, &mut rng) else {
                    continue;
                };
                if script.drop_prob > 0.0 && unit_draw(&mut rng) < script.drop_prob {
                    dropped += 1;
                    continue;
                }
                let spread = script.max_delay_us.saturating_sub(script.min_delay_us);
                let delay = script.min_delay_us
                    + if spread == 0 {
                        0
                    } else {
                        rng.next_u64() % (spread + 1)
                    };
                queue.push(Scheduled {
                    at_us: self.clock_us + delay,
                    seq,
                    from,
                    outbound,
                });
                seq += 1;
            }
            let Some(event) = queue.pop() else {
                break;
            };
            self.clock_us = self.clock_us.max(event.at_us);
            let to = event.outbound.to as usize;
            if self.behaviors[to] == Behavior::Silent {
                dropped += 1;
                continue;
            }
            delivered += 1;
            let mut out = Vec::new();
            self.nodes[to].handle(event.from, event.outbound.msg, &mut out);
            fresh.extend(out.into_iter().map(|o| (event.outbound.to, o)));
            // A node that has gathered every member's vote can decide now.
            if ended[to].is_none() && self.nodes[to].round_complete() {
                let mut end_out = Vec::new();
                let outcome = self.nodes[to].end_round(&mut end_out);
                fresh.extend(end_out.into_iter().map(|o| (event.outbound.to, o)));
                ended[to] = Some(outcome);
            }
        }

        // Quiescence: validators decide first so their confirms can still
        // reach the leader, then the leader decides.
        for round_member in 0..n {
            if round_member as u16 == leader || ended[round_member].is_some() {
                continue;
            }
            let mut out = Vec::new();
            let outcome = self.nodes[round_member].end_round(&mut out);
            ended[round_member] = Some(outcome);
            for outbound in out {
                let Some(outbound) =
                    self.apply_behavior(round_member as u16, outbound, &mut rng)
                else {
                    continue;
                };
                if script.drop_prob > 0.0 && unit_draw(&mut rng) < script.drop_prob {
                    dropped += 1;
                    continue;
                }
                delivered += 1;
                let to = outbound.to as usize;
                let mut nested = Vec::new();
                self.nodes[to].handle(round_member as u16, outbound.msg, &mut nested);
                // Confirm handling produces no further traffic.
                debug_assert!(nested.is_empty());
            }
        }
        if ended[leader as usize].is_none() {
            let mut out = Vec::new();
            let outcome = self.nodes[leader as usize].end_round(&mut out);
            debug_assert!(out.is_empty());
            ended[leader as usize] = Some(outcome);
        }

        let outcomes: Vec<RoundOutcome> = ended
            .into_iter()
            .map(|o| o.unwrap_or(RoundOutcome::Idle))
            .collect();
        let mut committed_hash = None;
        for (i, outcome) in outcomes.iter().enumerate() {
            if matches!(outcome, RoundOutcome::Committed(_)) {
                let hash = self.nodes[i].tip().hash;
                if let Some(existing) = committed_hash {
                    assert_eq!(existing, hash, "committing nodes disagree on block hash");
                } else {
                    committed_hash = Some(hash);
                }
            }
        }
        RoundReport {
            outcomes,
            committed_hash,
            messages_delivered: delivered,
            messages_dropped: dropped,
        }
    }

    /// Runs rounds until every honest pool drains or `max_rounds` pass.
    /// Returns the number of blocks committed.
    pub fn run_until_drained(
        &mut self,
        script: &NetScript,
        max_rounds: u32,
    ) -> Result<u64, LedgerError> {
        let mut committed = 0u64;
        for round in 0..max_rounds {
            let leader = self
                .config
                .leader_for(self.nodes[0].tip().height + 1, self.next_attempt);
            if self.nodes[leader as usize].pending_len() == 0 {
                // Rotate if this particular leader has nothing; drained
                // when nobody has anything.
                if self.nodes.iter().all(|n| n.pending_len() == 0) {
                    return Ok(committed);
                }
                self.next_attempt += 1;
                continue;
            }
            let script = NetScript {
                seed: script.seed.wrapping_add(round as u64),
                ..*script
            };
            let report = self.run_consensus_round(self.next_attempt, &script);
            if report.committed_hash.is_some() {
                committed += 1;
                self.next_attempt = 0;
            } else {
                self.next_attempt += 1;
            }
        }
        if self.nodes.iter().all(|n| n.pending_len() == 0) {
            Ok(committed)
        } else {
            Err(LedgerError::RoundsExhausted { committed })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::digest::{DigestAlgorithm, WriteMode};
    use crate::frame_io::StreamId;

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

    #[test]
    fn all_honest_commit_under_reordering() {
        let mut cluster = SimCluster::new_in_memory(3, 5).unwrap();
        for f in 0..10 {
            cluster.submit(record(f));
        }
        let report = cluster.run_consensus_round(0, &NetScript::reorder_only(17));
        assert_eq!(report.committed_count(), 3);
        assert!(report.committed_hash.is_some());
    }

    #[test]
    fn one_silent_validator_of_four_still_commits() {
        let mut cluster = SimCluster::new_in_memory(4, 5).unwrap();
        for f in 0..4 {
            cluster.submit(record(f));
        }
        // Leader for height 1 is member 1; silence member 3.
        cluster.set_behavior(3, Behavior::Silent);
        let report = cluster.run_consensus_round(0, &NetScript::reorder_only(2));
        // Members 0, 1, 2 commit (quorum 3 of leader + two validators).
        assert_eq!(report.committed_count(), 3);
    }

    #[test]
    fn two_byzantine_validators_of_four_block_commit() {
        for behavior in [Behavior::Silent, Behavior::GarbageSig] {
            let mut cluster = SimCluster::new_in_memory(4, 5).unwrap();
            for f in 0..4 {
                cluster.submit(record(f));
            }
            cluster.set_behavior(2, behavior);
            cluster.set_behavior(3, behavior);
            let report = cluster.run_consensus_round(0, &NetScript::reorder_only(3));
            assert_eq!(
                report.committed_count(),
                0,
                "{behavior:?} pair must prevent quorum"
            );
            assert!(report.committed_hash.is_none());
            // Transactions stay pending for a retry.
            assert!(cluster.nodes[0].pending_len() > 0);
        }
    }

    #[test]
    fn equivocating_leader_aborts_round() {
        let mut cluster = SimCluster::new_in_memory(3, 5).unwrap();
        for f in 0..6 {
            cluster.submit(record(f));
        }
        // Craft two different valid proposals from the leader (member 1)
        // and send one to each validator.
        let leader = 1u16;
        let (block_a, vote_a) = cluster.nodes[leader as usize].craft_proposal(2_000).unwrap();
        let (block_b, vote_b) = cluster.nodes[leader as usize].craft_proposal(2_001).unwrap();
        assert_ne!(block_a.hash(), block_b.hash());
        let mut out = Vec::new();
        cluster.nodes[0].handle(
            leader,
            ConsensusMessage::Propose {
                height: 1,
                attempt: 0,
                block: block_a,
                leader_vote: vote_a,
            },
            &mut out,
        );
        cluster.nodes[2].handle(
            leader,
            ConsensusMessage::Propose {
                height: 1,
                attempt: 0,
                block: block_b,
                leader_vote: vote_b,
            },
            &mut out,
        );
        // Cross-deliver the relays each validator produced.
        let deliveries: Vec<Outbound> = out.drain(..).collect();
        for outbound in deliveries {
            let from = if outbound.to == 2 { 0 } else { 2 };
            cluster.nodes[outbound.to as usize].handle(from, outbound.msg, &mut out);
        }
        for v in [0usize, 2usize] {
            let outcome = cluster.nodes[v].end_round(&mut out);
            assert_eq!(outcome, RoundOutcome::Conflict, "validator {v}");
            assert_eq!(cluster.nodes[v].store().height(), 0);
        }
    }

    #[test]
    fn drained_run_commits_all_and_matches_across_nodes() {
        let mut cluster = SimCluster::new_in_memory(3, 8).unwrap();
        for f in 0..250 {
            cluster.submit(record(f));
        }
        let committed = cluster
            .run_until_drained(&NetScript::reorder_only(9), 20)
            .unwrap();
        assert_eq!(committed, 3); // 100 + 100 + 50
        let tips: Vec<_> = cluster.nodes.iter().map(|n| n.tip()).collect();
        assert!(tips.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(tips[0].height, 3);
    }

    #[test]
    fn same_seed_same_schedule() {
        let run = |seed| {
            let mut cluster = SimCluster::new_in_memory(5, 3).unwrap();
            for f in 0..10 {
                cluster.submit(record(f));
            }
            let report = cluster.run_consensus_round(0, &NetScript::reorder_only(seed));
            (
                report.messages_delivered,
                report.committed_hash,
                cluster.nodes[0].tip().hash,
            )
        };
        assert_eq!(run(4), run(4));
    }
}
