//! Byte-stable JSON: object keys sorted, floats in shortest round-trip form.

use serde::Serialize;

/// Serializes through [`serde_json::Value`], whose maps are ordered.
pub fn to_canonical_json<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    serde_json::to_string(&serde_json::to_value(value)?)
}

pub fn to_canonical_json_pretty<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    serde_json::to_string_pretty(&serde_json::to_value(value)?)
}
