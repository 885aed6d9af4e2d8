//! JSON manifests with content hashes of inputs and outputs.

use std::fs;
use std::path::Path;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use scribe_core::Tensor;

use crate::{stk, Failure};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_file(path: &Path) -> Result<String, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// `{"path": ..., "sha256": ...}` for each file; paths are reported relative
/// to `root` when possible so manifests do not depend on the output location.
pub fn file_entries(root: &Path, files: &[&Path]) -> Result<Value, Failure> {
    files
        .iter()
        .map(|p| {
            let shown = p.strip_prefix(root).unwrap_or(p);
            Ok(json!({ "path": shown.display().to_string(), "sha256": sha256_file(p)? }))
        })
        .collect::<Result<Vec<_>, Failure>>()
        .map(Value::Array)
}

pub fn write_json(path: &Path, value: &Value) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).expect("json value serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Failure::io(path, e))
}

pub fn read_json(path: &Path) -> Result<Value, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Failure::format(path, e.to_string()))
}

pub fn write_stk(path: &Path, t: &Tensor) -> Result<(), Failure> {
    stk::write(path, t).map_err(|e| Failure::io(path, e))
}

pub fn read_stk(path: &Path) -> Result<Tensor, Failure> {
    stk::read(path).map_err(|e| Failure::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path).map_err(|e| Failure::io(path, e))
}

/// Typed field access with a format error naming the manifest.
pub fn field<'a>(path: &Path, v: &'a Value, key: &str) -> Result<&'a Value, Failure> {
    v.get(key).ok_or_else(|| Failure::format(path, format!("missing field {:?}", key)))
}

pub fn usize_list(path: &Path, v: &Value) -> Result<Vec<usize>, Failure> {
    v.as_array()
        .and_then(|a| a.iter().map(|x| x.as_u64().map(|u| u as usize)).collect::<Option<Vec<_>>>())
        .ok_or_else(|| Failure::format(path, "expected a list of indices"))
}
