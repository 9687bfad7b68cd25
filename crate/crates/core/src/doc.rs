//! Shared plain-text document helpers (JSON).
//!
//! Floats are written in shortest round-trip form, so every `f64` reads back
//! bit-identically.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::Result;

pub fn to_pretty_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("in-memory serialisation cannot fail")
}

pub fn to_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("in-memory serialisation cannot fail")
}

pub fn write<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = to_pretty_json(value);
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
