//! JSON configuration and metadata files.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::{read_file, write_file, IoError};

/// Parses JSON bytes; `origin` names the source in error messages.
pub fn parse_json<T: DeserializeOwned>(bytes: &[u8], origin: &str) -> Result<T, IoError> {
    serde_json::from_slice(bytes).map_err(|e| IoError::Config {
        path: origin.to_string(),
        message: e.to_string(),
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    parse_json(&read_file(path)?, &path.display().to_string())
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable value");
    out.push(b'\n');
    out
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    write_file(path, &to_json_pretty(value))
}
