//! Cluster membership, quorum arithmetic and bootstrap.
//!
//! A cluster is a fixed, identified membership of at least three
//! organizations. Commitment requires a quorum of q(n) = ceil((2n-1)/3)
//! matching valid votes. Note this is the voting threshold as specified
//! for this ledger; classical BFT liveness analysis instead requires
//! n >= 3f+1 — see docs/threat-model.md for the contrast.

use std::fs;
use std::path::Path;

use ed25519_dalek::VerifyingKey;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use super::keys;
use super::LedgerError;

/// Default member names for a three-organization cluster.
pub const DEFAULT_MEMBER_NAMES: [&str; 3] = ["court", "police", "fire"];

/// Quorum threshold q(n) = ceil((2n - 1) / 3).
pub fn quorum(n: usize) -> usize {
    (2 * n + 1) / 3
}

/// How the proposing member is picked each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeaderRule {
    /// members[(height + attempt) mod n] — deterministic and testable.
    RoundRobin,
    /// Seeded pseudo-random pick per (height, attempt).
    SeededRandom(u64),
}

/// One cluster member.
#[derive(Debug, Clone)]
pub struct Member {
    pub id: u16,
    pub name: String,
    pub address: String,
    pub verifying_key: VerifyingKey,
}

/// Static cluster configuration shared by every node.
#[derive(Debug, Clone)]
pub struct ClusterConfig {
    /// Members sorted by id.
    pub members: Vec<Member>,
    pub leader_rule: LeaderRule,
    /// Timestamp of the genesis block, microseconds since epoch.
    pub genesis_timestamp_us: u64,
    /// Maximum transactions per assembled block.
    pub block_max_txs: u32,
}

impl ClusterConfig {
    pub fn n(&self) -> usize {
        self.members.len()
    }

    pub fn quorum(&self) -> usize {
        quorum(self.n())
    }

    pub fn member(&self, id: u16) -> Option<&Member> {
        self.members.iter().find(|m| m.id == id)
    }

    pub fn is_member(&self, id: u16) -> bool {
        self.member(id).is_some()
    }

    /// Member id that leads the round proposing `height` on `attempt`.
    pub fn leader_for(&self, height: u64, attempt: u32) -> u16 {
        let n = self.n() as u64;
        let slot = match self.leader_rule {
            LeaderRule::RoundRobin => (height + attempt as u64) % n,
            LeaderRule::SeededRandom(seed) => {
                let mut h = Sha256::new();
                h.update(b"veriframe.leader.v1");
                h.update(seed.to_le_bytes());
                h.update(height.to_le_bytes());
                h.update(attempt.to_le_bytes());
                let key: [u8; 32] = h.finalize().into();
                ChaCha8Rng::from_seed(key).next_u64() % n
            }
        };
        self.members[slot as usize].id
    }

    pub fn validate(&self) -> Result<(), LedgerError> {
        if self.n() < 3 {
            return Err(LedgerError::TooFewMembers(self.n()));
        }
        let ids: Vec<u16> = self.members.iter().map(|m| m.id).collect();
        if !ids.windows(2).all(|w| w[0] < w[1]) {
            return Err(LedgerError::Config(
                "member ids must be unique and sorted ascending".into(),
            ));
        }
        if self.block_max_txs == 0 {
            return Err(LedgerError::Config("block_max_txs must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ConfigFile {
    quorum: usize,
    genesis_timestamp_us: u64,
    block_max_txs: u32,
    leader_rule: String,
    #[serde(default)]
    leader_seed: u64,
    members: Vec<MemberEntry>,
}

#[derive(Serialize, Deserialize)]
struct MemberEntry {
    id: u16,
    name: String,
    address: String,
    verifying_key: String,
}

impl ClusterConfig {
    pub fn to_toml(&self) -> String {
        let file = ConfigFile {
            quorum: self.quorum(),
            genesis_timestamp_us: self.genesis_timestamp_us,
            block_max_txs: self.block_max_txs,
            leader_rule: match self.leader_rule {
                LeaderRule::RoundRobin => "round-robin".into(),
                LeaderRule::SeededRandom(_) => "seeded-random".into(),
            },
            leader_seed: match self.leader_rule {
                LeaderRule::RoundRobin => 0,
                LeaderRule::SeededRandom(s) => s,
            },
            members: self
                .members
                .iter()
                .map(|m| MemberEntry {
                    id: m.id,
                    name: m.name.clone(),
                    address: m.address.clone(),
                    verifying_key: hex::encode(m.verifying_key.as_bytes()),
                })
                .collect(),
        };
        toml::to_string_pretty(&file).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, LedgerError> {
        let file: ConfigFile =
            toml::from_str(text).map_err(|e| LedgerError::Config(e.to_string()))?;
        let mut members = Vec::with_capacity(file.members.len());
        for entry in file.members {
            let verifying_key = keys::verifying_key_from_hex(&entry.verifying_key)
                .ok_or_else(|| {
                    LedgerError::Config(format!("member {}: bad verifying key", entry.id))
                })?;
            members.push(Member {
                id: entry.id,
                name: entry.name,
                address: entry.address,
                verifying_key,
            });
        }
        members.sort_by_key(|m| m.id);
        let leader_rule = match file.leader_rule.as_str() {
            "round-robin" => LeaderRule::RoundRobin,
            "seeded-random" => LeaderRule::SeededRandom(file.leader_seed),
            other => {
                return Err(LedgerError::Config(format!(
                    "unknown leader rule {other:?} (expected round-robin or seeded-random)"
                )))
            }
        };
        let config = ClusterConfig {
            members,
            leader_rule,
            genesis_timestamp_us: file.genesis_timestamp_us,
            block_max_txs: file.block_max_txs,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, LedgerError> {
        let text = fs::read_to_string(path)?;
        Self::from_toml(&text)
    }
}

/// Full bootstrap output: public config plus each member's signing key.
pub struct Bootstrap {
    pub config: ClusterConfig,
    pub signing_keys: Vec<ed25519_dalek::SigningKey>,
}

/// Derives a deterministic cluster of `n` members from a seed.
///
/// Names default to court/police/fire, then member-3, member-4, ...
/// Addresses default to consecutive loopback ports from `base_port`.
pub fn bootstrap_cluster(
    n: usize,
    names: &[String],
    seed: u64,
    base_port: u16,
) -> Result<Bootstrap, LedgerError> {
    if n < 3 {
        return Err(LedgerError::TooFewMembers(n));
    }
    if n > u16::MAX as usize {
        return Err(LedgerError::Config("member count exceeds u16".into()));
    }
    let mut members = Vec::with_capacity(n);
    let mut signing_keys = Vec::with_capacity(n);
    for i in 0..n {
        let id = i as u16;
        let signing_key = keys::derive_signing_key(seed, id);
        let name = names
            .get(i)
            .cloned()
            .or_else(|| DEFAULT_MEMBER_NAMES.get(i).map(|s| s.to_string()))
            .unwrap_or_else(|| format!("member-{i}"));
        members.push(Member {
            id,
            name,
            address: format!("127.0.0.1:{}", base_port + i as u16),
            verifying_key: signing_key.verifying_key(),
        });
        signing_keys.push(signing_key);
    }
    let config = ClusterConfig {
        members,
        leader_rule: LeaderRule::RoundRobin,
        genesis_timestamp_us: 0,
        block_max_txs: 100,
    };
    config.validate()?;
    Ok(Bootstrap {
        config,
        signing_keys,
    })
}

/// Writes `cluster.toml` and one `node-<id>.key` file per member.
pub fn write_bootstrap(bootstrap: &Bootstrap, out_dir: &Path) -> Result<(), LedgerError> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("cluster.toml"), bootstrap.config.to_toml())?;
    for (member, key) in bootstrap.config.members.iter().zip(&bootstrap.signing_keys) {
        let path = out_dir.join(format!("node-{}.key", member.id));
        fs::write(path, format!("{}\n", hex::encode(key.to_bytes())))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quorum_arithmetic() {
        assert_eq!(quorum(3), 2);
        assert_eq!(quorum(4), 3);
        assert_eq!(quorum(5), 3);
        assert_eq!(quorum(7), 5);
    }

    #[test]
    fn bootstrap_default_names() {
        let b = bootstrap_cluster(3, &[], 1, 7100).unwrap();
        let names: Vec<_> = b.config.members.iter().map(|m| m.name.as_str()).collect();
        assert_eq!(names, ["court", "police", "fire"]);
        assert_eq!(b.config.quorum(), 2);
    }

    #[test]
    fn bootstrap_refuses_below_three() {
        assert!(matches!(
            bootstrap_cluster(2, &[], 1, 7100),
            Err(LedgerError::TooFewMembers(2))
        ));
    }

    #[test]
    fn bootstrap_seven_members() {
        let b = bootstrap_cluster(7, &[], 1, 7100).unwrap();
        assert_eq!(b.config.quorum(), 5);
        assert_eq!(b.config.members[3].name, "member-3");
    }

    #[test]
    fn config_toml_round_trip() {
        let b = bootstrap_cluster(4, &["a".into(), "b".into(), "c".into(), "d".into()], 9, 7200)
            .unwrap();
        let text = b.config.to_toml();
        let parsed = ClusterConfig::from_toml(&text).unwrap();
        assert_eq!(parsed.n(), 4);
        assert_eq!(parsed.members[2].name, "c");
        assert_eq!(
            parsed.members[1].verifying_key.as_bytes(),
            b.config.members[1].verifying_key.as_bytes()
        );
    }

    #[test]
    fn round_robin_leader_rotates() {
        let b = bootstrap_cluster(3, &[], 1, 7100).unwrap();
        assert_eq!(b.config.leader_for(1, 0), 1);
        assert_eq!(b.config.leader_for(2, 0), 2);
        assert_eq!(b.config.leader_for(3, 0), 0);
        assert_eq!(b.config.leader_for(1, 1), 2);
    }

    #[test]
    fn seeded_random_leader_is_deterministic() {
        let mut b = bootstrap_cluster(5, &[], 1, 7100).unwrap();
        b.config.leader_rule = LeaderRule::SeededRandom(11);
        let a = b.config.leader_for(4, 0);
        assert_eq!(a, b.config.leader_for(4, 0));
        assert!(b.config.is_member(a));
    }
}
