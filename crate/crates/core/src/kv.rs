//! `key=value` text files shared by the rig manifest, phoneme map, rules and
//! fit config formats.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Splits `text` into entries. Blank lines and `#` comments are skipped.
pub fn parse(origin: &str, text: &str) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::parse(origin, idx + 1, format!("expected key=value, got `{line}`")));
        };
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::parse(origin, idx + 1, "empty key"));
        }
        out.push(Entry {
            line: idx + 1,
            key: key.to_string(),
            value: value.trim().to_string(),
        });
    }
    Ok(out)
}

pub fn read(path: &Path) -> Result<(String, Vec<Entry>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let origin = path.display().to_string();
    let entries = parse(&origin, &text)?;
    Ok((origin, entries))
}

pub(crate) fn parse_f64(origin: &str, e: &Entry) -> Result<f64> {
    let v: f64 = e
        .value
        .parse()
        .map_err(|_| Error::parse(origin, e.line, format!("`{}` is not a number", e.value)))?;
    if !v.is_finite() {
        return Err(Error::parse(origin, e.line, format!("`{}` is not finite", e.value)));
    }
    Ok(v)
}

pub(crate) fn parse_usize(origin: &str, e: &Entry) -> Result<usize> {
    e.value
        .parse()
        .map_err(|_| Error::parse(origin, e.line, format!("`{}` is not a non-negative integer", e.value)))
}
