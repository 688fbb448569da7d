//! Content hashes used for artifacts, traces and report metadata.

use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_id(bytes: &[u8]) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(bytes)))
}

/// Hash of the compact JSON serialization. `serde_json` maps keep keys
/// sorted, so equal values always hash equally.
pub fn digest_json<T: Serialize + ?Sized>(value: &T) -> String {
    sha256_id(&serde_json::to_vec(value).expect("value serializes to JSON"))
}
