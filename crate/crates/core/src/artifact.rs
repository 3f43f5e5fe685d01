//! Reproducible JSON artifacts: sorted keys, floats rounded to 12
//! significant digits, sha256 digests.

use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const SIGNIFICANT_DIGITS: usize = 12;

pub fn round_significant(x: f64, digits: usize) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", digits - 1, x).parse().expect("formatted float parses")
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = round_significant(n.as_f64().expect("f64 number"), SIGNIFICANT_DIGITS);
            if let Some(r) = serde_json::Number::from_f64(x) {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

/// The value as JSON with object keys sorted and floats rounded.
pub fn canonical_value<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<Value> {
    let mut v = serde_json::to_value(value)?;
    round_value(&mut v);
    Ok(v)
}

/// Pretty canonical JSON with a trailing newline.
pub fn to_canonical_json<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let mut s = serde_json::to_string_pretty(&canonical_value(value)?)?;
    s.push('\n');
    Ok(s)
}

/// One compact canonical JSON line per item.
pub fn to_canonical_jsonl<T: Serialize>(items: &[T]) -> serde_json::Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&canonical_value(item)?)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn to_io(e: serde_json::Error) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, e)
}

/// Writes canonical JSON and returns the sha256 of the bytes written.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> io::Result<String> {
    let text = to_canonical_json(value).map_err(to_io)?;
    write_text(path, &text)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> io::Result<String> {
    let text = to_canonical_jsonl(items).map_err(to_io)?;
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> io::Result<String> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text)?;
    Ok(sha256_hex(text.as_bytes()))
}
