//! Report envelope and output formats.

use std::fmt::Write as _;

use ndarray::Array2;
use serde_json::{json, Value};

pub const SCHEMA_VERSION: &str = "1.0";

pub fn matrix(m: &Array2<f64>) -> Value {
    json!(lrst_core::nested::to_rows(m))
}

pub fn envelope(command: &str, inputs: Value, result: Value) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "tool": { "name": env!("CARGO_PKG_NAME"), "version": env!("CARGO_PKG_VERSION") },
        "command": command,
        "inputs": inputs,
        "result": result,
    })
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        Value::Array(items) => {
            for (i, child) in items.iter().enumerate() {
                flatten(&format!("{prefix}[{i}]"), child, out);
            }
        }
        Value::Null => out.push((prefix.to_string(), String::new())),
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

fn quote(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// One `key,value` row per scalar, nested keys joined with dots and
/// array positions in brackets.
pub fn csv_summary(report: &Value) -> String {
    let mut rows = Vec::new();
    flatten("", report, &mut rows);
    let mut s = String::from("key,value\n");
    for (k, v) in rows {
        let _ = writeln!(s, "{},{}", quote(&k), quote(&v));
    }
    s
}
