//! Seeded, platform-independent hashing used for IAA sampling and the stub
//! encoder. Both need values that never change across builds or machines.

use sha2::{Digest, Sha256};

/// First eight bytes (big endian) of SHA-256 over `seed || data`.
pub fn seeded_u64(seed: u64, data: &[u8]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_be_bytes());
    h.update(data);
    let out = h.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&out[..8]);
    u64::from_be_bytes(head)
}

/// Maps `seed || data` to a uniform value in `[0, 1)` with 53 bits of precision.
pub fn unit_interval(seed: u64, data: &[u8]) -> f64 {
    (seeded_u64(seed, data) >> 11) as f64 / (1u64 << 53) as f64
}
