//! SHA-256 helpers used for stable split assignment, vocabulary and artifact
//! fingerprints, and per-stage seed derivation.

use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// First eight digest bytes as a little-endian u64. Stable across platforms
/// and releases, unlike the std hasher.
pub fn hash64(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Derives a stage-local seed so inserting a stage never perturbs the seeds
/// of its neighbors.
pub fn stage_seed(global_seed: u64, stage: &str) -> u64 {
    let mut bytes = global_seed.to_le_bytes().to_vec();
    bytes.extend_from_slice(stage.as_bytes());
    hash64(&bytes)
}

pub fn sha256_file(path: &std::path::Path) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(sha256_hex(&bytes))
}
