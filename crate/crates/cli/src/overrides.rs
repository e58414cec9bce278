//! JSON configuration files with `key=value` overrides layered on top.

use std::path::Path;

use metaaug::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Parses `key=value`; the value is read as JSON and falls back to a plain string.
pub fn parse_assignment(s: &str) -> Result<(String, Value)> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {s:?} is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("override {s:?} has an empty key")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.replace('-', "_"), value))
}

/// Loads `T` from an optional JSON file, applies overrides in order and
/// re-validates through serde, so unknown keys are rejected by name.
pub fn resolve<T>(file: Option<&Path>, base: T, overrides: &[(String, Value)]) -> Result<T>
where
    T: Serialize + DeserializeOwned,
{
    let mut value = serde_json::to_value(base)?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let from_file: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let obj = from_file
            .as_object()
            .ok_or_else(|| Error::Config(format!("{}: expected a JSON object", path.display())))?;
        merge(&mut value, obj);
    }
    let mut patch = Map::new();
    for (k, v) in overrides {
        patch.insert(k.clone(), v.clone());
    }
    merge(&mut value, &patch);
    serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
}

fn merge(target: &mut Value, patch: &Map<String, Value>) {
    let Value::Object(t) = target else { return };
    for (k, v) in patch {
        match (t.get_mut(k), v) {
            (Some(existing @ Value::Object(_)), Value::Object(inner)) => merge(existing, inner),
            _ => {
                t.insert(k.clone(), v.clone());
            }
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}
