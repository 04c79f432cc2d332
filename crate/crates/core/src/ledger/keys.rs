//! Member signing keys.
//!
//! Votes are Ed25519 signatures over the 32-byte block hash. Bootstrap
//! derives each member's signing key from the cluster seed with
//! SHA-256("veriframe.key.v1", seed LE64, member id LE16), so a cluster
//! generated twice from the same seed has identical keys.

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use sha2::{Digest as _, Sha256};

/// Length of a vote signature in bytes.
pub const SIGNATURE_LEN: usize = 64;

/// Derives a member's signing key from the cluster seed.
pub fn derive_signing_key(seed: u64, member_id: u16) -> SigningKey {
    let mut h = Sha256::new();
    h.update(b"veriframe.key.v1");
    h.update(seed.to_le_bytes());
    h.update(member_id.to_le_bytes());
    let secret: [u8; 32] = h.finalize().into();
    SigningKey::from_bytes(&secret)
}

/// Signs a 32-byte block hash.
pub fn sign_hash(key: &SigningKey, hash: &[u8; 32]) -> Vec<u8> {
    key.sign(hash).to_bytes().to_vec()
}

/// Verifies a vote signature over a 32-byte block hash.
pub fn verify_hash(key: &VerifyingKey, hash: &[u8; 32], signature: &[u8]) -> bool {
    let Ok(sig_bytes) = <[u8; SIGNATURE_LEN]>::try_from(signature) else {
        return false;
    };
    let sig = Signature::from_bytes(&sig_bytes);
    key.verify(hash, &sig).is_ok()
}

/// Parses a hex-encoded verifying key.
pub fn verifying_key_from_hex(s: &str) -> Option<VerifyingKey> {
    let bytes = hex::decode(s).ok()?;
    let arr: [u8; 32] = bytes.try_into().ok()?;
    VerifyingKey::from_bytes(&arr).ok()
}

/// Parses a hex-encoded 32-byte signing key seed.
pub fn signing_key_from_hex(s: &str) -> Option<SigningKey> {
    let bytes = hex::decode(s.trim()).ok()?;
    let arr: [u8; 32] = bytes.try_into().ok()?;
    Some(SigningKey::from_bytes(&arr))
}
