//! Small shared helpers.

/// FNV-1a 64-bit hash. Used wherever a stable, dependency-free hash is
/// needed (seed derivation, content addressing); std's hasher is not
/// guaranteed stable across releases.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Derives a child seed from a master seed and a label.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut data = master.to_le_bytes().to_vec();
    data.extend_from_slice(label.as_bytes());
    fnv1a64(&data)
}
