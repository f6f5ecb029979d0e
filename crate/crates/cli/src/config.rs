//! Config file loading shared by the subcommands.
//!
//! Every configurable stage follows the same precedence: command-line
//! flags override values from a JSON file, which override built-in
//! defaults. The JSON structs all carry serde defaults, so a partial file
//! (or no file at all) is valid.

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use std::path::Path;

/// Parses `path` as JSON into `T`, or returns `T::default()` when no path
/// was given. Missing fields fall back to the struct's serde defaults.
pub fn load_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

/// Serializes a config for manifests and logs. Pretty-printed so the echo
/// in output directories stays diffable.
pub fn to_json_pretty<T: serde::Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}
