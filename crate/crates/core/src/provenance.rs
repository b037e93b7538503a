//! Tool version and configuration hashes stamped into every artifact.

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const TOOL: &str = "jointloc";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// SHA-256 of the value's JSON encoding, hex encoded.
pub fn config_hash<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("configuration serializes to JSON");
    hex::encode(Sha256::digest(&bytes))
}

/// One-line stamp, e.g. `jointloc 0.1.0 config-hash=ab12…`.
pub fn stamp(hash: &str) -> String {
    format!("{TOOL} {VERSION} config-hash={hash}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_sensitive() {
        assert_eq!(config_hash(&[1, 2]), config_hash(&[1, 2]));
        assert_ne!(config_hash(&[1, 2]), config_hash(&[2, 1]));
        assert_eq!(config_hash(&0).len(), 64);
        assert!(stamp("x").starts_with("jointloc "));
    }
}
