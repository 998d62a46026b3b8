//! Canonical JSON and content digests.
//!
//! Objects are written with keys in sorted order (serde_json's default map is
//! a `BTreeMap`), so two values that are structurally equal always serialize
//! to the same bytes regardless of the field order they were parsed from.

use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn canonical_json<T: Serialize + ?Sized>(value: &T) -> Result<String, serde_json::Error> {
    let tree = serde_json::to_value(value)?;
    let mut out = serde_json::to_string_pretty(&tree)?;
    out.push('\n');
    Ok(out)
}

/// Single-line canonical form, for stdout and golden comparisons.
pub fn canonical_json_line<T: Serialize + ?Sized>(value: &T) -> Result<String, serde_json::Error> {
    serde_json::to_string(&serde_json::to_value(value)?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
