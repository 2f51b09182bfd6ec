//! Key-value config files.
//!
//! ```text
//! # applies to every subcommand
//! seed = 7
//!
//! [train]
//! lr = 0.1
//! no-key-events = true
//! ```
//!
//! Keys are long flag names without the leading dashes. Entries before the
//! first section header are global. Boolean flags take `true` or `false`.
//! Values may be wrapped in double quotes.

use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for ConfigError {}

/// One `key = value` line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigFile {
    pub global: Vec<Entry>,
    pub sections: BTreeMap<String, Vec<Entry>>,
}

impl ConfigFile {
    /// Global entries followed by the section for `subcommand`.
    pub fn entries_for(&self, subcommand: &str) -> Vec<&Entry> {
        self.global
            .iter()
            .chain(self.sections.get(subcommand).into_iter().flatten())
            .collect()
    }
}

fn valid_name(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-' || c == '_')
}

pub fn parse_config(text: &str) -> Result<ConfigFile, ConfigError> {
    let mut out = ConfigFile::default();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |message: String| ConfigError { line, message };
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| err("unterminated section header".into()))?
                .trim();
            if !valid_name(name) {
                return Err(err(format!("bad section name {name:?}")));
            }
            if out.sections.contains_key(name) {
                return Err(err(format!("section [{name}] appears twice")));
            }
            out.sections.insert(name.to_string(), Vec::new());
            current = Some(name.to_string());
            continue;
        }
        let (key, value) = trimmed
            .split_once('=')
            .ok_or_else(|| err("expected `key = value`".into()))?;
        let key = key.trim();
        if !valid_name(key) {
            return Err(err(format!("bad key {key:?}")));
        }
        let mut value = value.trim();
        if value.len() >= 2 && value.starts_with('"') && value.ends_with('"') {
            value = &value[1..value.len() - 1];
        } else if value.contains('"') {
            return Err(err("unbalanced quotes".into()));
        }
        let bucket = match &current {
            Some(name) => out.sections.get_mut(name).expect("section inserted"),
            None => &mut out.global,
        };
        if bucket.iter().any(|e| e.key == key) {
            return Err(err(format!("key {key:?} set twice in the same section")));
        }
        bucket.push(Entry {
            line,
            key: key.to_string(),
            value: value.to_string(),
        });
    }
    Ok(out)
}
