//! Canonical JSON: keys sorted, no insignificant whitespace.

use serde::Serialize;

use crate::Result;

/// Serializes through `serde_json::Value`, whose object map is ordered by key.
pub fn to_canonical_string<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    Ok(serde_json::to_string(&v)?)
}

/// Same as [`to_canonical_string`] but pretty-printed, still with sorted keys.
pub fn to_canonical_pretty<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}
