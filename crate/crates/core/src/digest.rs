use serde::Serialize;
use sha2::{Digest, Sha256};

/// First 16 hex characters of the SHA-256 of `bytes`.
pub fn digest_bytes(bytes: &[u8]) -> String {
    let out = Sha256::digest(bytes);
    hex::encode(&out[..8])
}

/// Digest of the compact JSON form of `value`. Struct fields serialize in
/// declaration order, so this is stable for a given type.
pub fn digest_json<T: Serialize + ?Sized>(value: &T) -> String {
    let text = serde_json::to_vec(value).expect("serializable value");
    digest_bytes(&text)
}
