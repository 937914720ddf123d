use std::fmt;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// An error the user can fix by changing the invocation or config; exits 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Reads a JSON (`.json`) or TOML (anything else) config, rejecting keys
/// the target type does not know and listing all of them.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    let mut unknown = Vec::new();
    let parsed: std::result::Result<T, String> = if path.extension().is_some_and(|e| e == "json") {
        let mut de = serde_json::Deserializer::from_str(&text);
        serde_ignored::deserialize(&mut de, |p| unknown.push(p.to_string())).map_err(|e| e.to_string())
    } else {
        let de = toml::Deserializer::new(&text);
        serde_ignored::deserialize(de, |p| unknown.push(p.to_string())).map_err(|e| e.to_string())
    };
    if !unknown.is_empty() {
        return Err(UsageError(format!(
            "unknown config keys in {}: {}",
            path.display(),
            unknown.join(", ")
        ))
        .into());
    }
    parsed.map_err(|e| UsageError(format!("invalid config {}: {e}", path.display())).into())
}

pub fn digest<T: Serialize>(value: &T) -> Result<String> {
    Ok(uhrnet::metrics::config_digest(value)?)
}
