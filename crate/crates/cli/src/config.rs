//! JSON config files mirror the command-line flags; flags win.

use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

/// Overlays the non-null fields of `flags` on the config file (if any) and
/// returns the merged settings.
pub fn merge<T: Serialize + DeserializeOwned>(flags: &T, config: Option<&Path>) -> Result<T> {
    let mut merged = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            let v: Value = serde_json::from_str(&text)
                .map_err(|e| trec::Error::Parse(format!("{}: {e}", path.display())))?;
            if !v.is_object() {
                return Err(trec::Error::Parse(format!("{}: config must be a JSON object", path.display())).into());
            }
            v
        }
        None => Value::Object(Default::default()),
    };
    let Value::Object(flag_map) = serde_json::to_value(flags)? else {
        unreachable!("argument structs serialize to objects");
    };
    let target = merged.as_object_mut().expect("checked above");
    for (k, v) in flag_map {
        if !v.is_null() {
            target.insert(k, v);
        }
    }
    serde_json::from_value(merged).map_err(|e| trec::Error::Parse(format!("config: {e}")).into())
}
