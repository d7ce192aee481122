//! JSON config loading with `key=value` overrides and the seed variable.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::Value;

use crate::exit::{io_error, CliError, CliResult};

pub const SEED_VAR: &str = "PHYCOSF_SEED";

/// Reads `path`, applies `overrides` (`key=json` or `key=text`), then the
/// seed variable when `seeded`, and returns the resolved JSON and its typed
/// form.
pub fn load<T: DeserializeOwned>(path: &Path, overrides: &[String], seeded: bool) -> CliResult<(Value, T)> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let mut value: Value =
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: invalid JSON: {e}", path.display())))?;
    let Value::Object(map) = &mut value else {
        return Err(CliError::config(format!("{}: config must be a JSON object", path.display())));
    };
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("override {item:?} must look like key=value")))?;
        let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        map.insert(key.to_string(), parsed);
    }
    if seeded {
        if let Some(seed) = env_seed()? {
            map.insert("seed".into(), Value::from(seed));
        }
    }
    let typed = serde_json::from_value(value.clone())
        .map_err(|e| CliError::config(format!("{}: config does not match the schema: {e}", path.display())))?;
    Ok((value, typed))
}

pub fn env_seed() -> CliResult<Option<u64>> {
    match std::env::var(SEED_VAR) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::config(format!("{SEED_VAR}={s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}
