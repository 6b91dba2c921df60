//! Named random sub-streams derived from a single run seed.
//!
//! Every consumer of randomness asks for a stream by name plus a key path
//! (task id, instance id, ...). The derived seed depends only on those
//! values, so parallel and serial builds draw identical numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const STREAM_SPLIT: &str = "split";
pub const STREAM_SHUFFLE: &str = "shuffle";
pub const STREAM_LABELS: &str = "labels";
pub const STREAM_DEMOS: &str = "demos";

pub fn derive_seed(root: u64, stream: &str, keys: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(stream.as_bytes());
    for k in keys {
        // length prefix keeps ("ab","c") distinct from ("a","bc")
        h.update((k.len() as u64).to_le_bytes());
        h.update(k.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 is 32 bytes"))
}

pub fn stream_rng(root: u64, stream: &str, keys: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, stream, keys))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
