//! Small numeric and hashing helpers shared across modules.

use sha2::{Digest, Sha256};

/// Rounds half away from zero at `decimals` places, which is half-up for the
/// non-negative quantities reported here (rates, prices, scores).
///
/// A relative nudge absorbs binary representation error so that values such
/// as `0.1025` (stored as `0.10249999…`) still round up.
pub fn round_half_up(value: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    let scaled = value * scale;
    let nudged = scaled + scaled.signum() * scaled.abs().max(1.0) * 1e-12;
    nudged.round() / scale
}

/// FNV-1a over `bytes`, with `salt` folded in first. Stable across platforms
/// and toolchains, unlike `std::hash`.
pub fn fnv1a64(salt: u8, bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET;
    for &b in std::iter::once(&salt).chain(bytes) {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(PRIME);
    }
    hash
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(bytes.as_ref()))
}

/// First 16 hex characters of the SHA-256, used for evidence digests in
/// traces and tickets.
pub fn short_digest(bytes: impl AsRef<[u8]>) -> String {
    let mut full = sha256_hex(bytes);
    full.truncate(16);
    full
}

/// Truncates `text` to at most `max_bytes`, backing off to a char boundary.
pub fn truncate_utf8(text: &str, max_bytes: usize) -> &str {
    if text.len() <= max_bytes {
        return text;
    }
    let mut end = max_bytes;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    &text[..end]
}
