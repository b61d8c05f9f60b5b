//! Merging TOML config files with command-line flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

/// Reads `path` and returns the settings for `section`: top-level scalar keys
/// first, then the keys of the `[section]` table on top.
pub fn load_section(path: &Path, section: &str) -> Result<Map<String, Value>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Invalid(format!("cannot read config {}: {e}", path.display())))?;
    let table: toml::Table =
        toml::from_str(&text).map_err(|e| CliError::Invalid(format!("config {}: {e}", path.display())))?;
    let mut out = Map::new();
    for (k, v) in &table {
        if !v.is_table() {
            out.insert(k.clone(), to_json(v)?);
        }
    }
    if let Some(sec) = table.get(section) {
        let sec = sec
            .as_table()
            .ok_or_else(|| CliError::Invalid(format!("config key `{section}` must be a table")))?;
        for (k, v) in sec {
            out.insert(k.clone(), to_json(v)?);
        }
    }
    Ok(out)
}

fn to_json(v: &toml::Value) -> Result<Value, CliError> {
    serde_json::to_value(v).map_err(|e| CliError::Invalid(e.to_string()))
}

/// Flags that were given override the file settings.
pub fn merge<T: Serialize + DeserializeOwned>(flags: &T, file: Map<String, Value>) -> Result<T, CliError> {
    let mut merged = file;
    if let Value::Object(given) = serde_json::to_value(flags).map_err(|e| CliError::Invalid(e.to_string()))? {
        for (k, v) in given {
            if !v.is_null() {
                merged.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Invalid(format!("config: {e}")))
}
