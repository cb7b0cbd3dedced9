//! Canonical JSON: object keys sorted lexicographically, no insignificant
//! whitespace, UTF-8.

use serde::Serialize;
use serde_json::Value;

/// Serializes `value` to canonical JSON bytes.
///
/// Relies on `serde_json::Map` being ordered (the `preserve_order` feature
/// must stay disabled for this crate graph).
pub fn to_vec<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let tree = serde_json::to_value(value).expect("value serializes to JSON");
    serde_json::to_vec(&tree).expect("JSON value serializes")
}

pub fn to_string<T: Serialize + ?Sized>(value: &T) -> String {
    String::from_utf8(to_vec(value)).expect("serde_json emits UTF-8")
}

/// Re-encodes arbitrary JSON bytes canonically.
pub fn recanonicalize(bytes: &[u8]) -> serde_json::Result<Vec<u8>> {
    let tree: Value = serde_json::from_slice(bytes)?;
    Ok(to_vec(&tree))
}
