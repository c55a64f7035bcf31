//! Canonical JSON rendering.
//!
//! Transcripts and protocol responses must be bit-stable, so everything that
//! leaves the crate as JSON text goes through [`to_canonical_string`], which
//! sorts object keys recursively regardless of how `serde_json` was built.

use serde::Serialize;
use serde_json::Value;

/// Renders a value as compact JSON with object keys sorted at every level.
pub fn to_canonical_string(value: &Value) -> String {
    let mut out = String::new();
    write_value(value, &mut out);
    out
}

/// Serializes `value` and renders it canonically.
pub fn canonical<T: Serialize + ?Sized>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("serializable types never fail to convert");
    to_canonical_string(&v)
}

fn write_value(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).unwrap());
                out.push(':');
                write_value(&map[k.as_str()], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(item, out);
            }
            out.push(']');
        }
        other => out.push_str(&serde_json::to_string(other).unwrap()),
    }
}
