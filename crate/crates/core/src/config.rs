//! Flat `key = value` configuration text.
//!
//! Blank lines and `#` comments are ignored; a `#` after a value starts a
//! trailing comment. Keys may not repeat.

use std::collections::BTreeMap;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { key: String, line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("missing key `{0}`")]
    MissingKey(String),
    #[error("key `{key}`: cannot parse `{value}`")]
    BadValue { key: String, value: String },
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: idx + 1 })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || value.is_empty() {
                return Err(ConfigError::Syntax { line: idx + 1 });
            }
            if entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(ConfigError::Duplicate { key: key.to_string(), line: idx + 1 });
            }
        }
        Ok(Self { entries })
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Reject any key for which `allowed` returns false.
    pub fn check_keys(&self, allowed: impl Fn(&str) -> bool) -> Result<()> {
        match self.keys().find(|k| !allowed(k)) {
            Some(k) => Err(ConfigError::UnknownKey(k.to_string())),
            None => Ok(()),
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| ConfigError::BadValue { key: key.to_string(), value: v.clone() }),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?.ok_or_else(|| ConfigError::MissingKey(key.to_string()))
    }

    /// A real number, also accepting `pi`, `pi/N` and `K*pi`.
    pub fn get_angle(&self, key: &str) -> Result<Option<f64>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => parse_angle(v)
                .map(Some)
                .ok_or_else(|| ConfigError::BadValue { key: key.to_string(), value: v.clone() }),
        }
    }
}

pub fn parse_angle(text: &str) -> Option<f64> {
    use std::f64::consts::PI;
    let t = text.trim();
    if let Ok(v) = t.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    if t == "pi" {
        return Some(PI);
    }
    if let Some(den) = t.strip_prefix("pi/") {
        return den.trim().parse::<f64>().ok().filter(|d| *d != 0.0).map(|d| PI / d);
    }
    if let Some(num) = t.strip_suffix("*pi") {
        return num.trim().parse::<f64>().ok().map(|k| k * PI);
    }
    None
}

/// A positive count written as an integer or in scientific notation (`1e8`).
pub fn parse_count(text: &str) -> Option<u128> {
    let t = text.trim();
    if let Ok(v) = t.parse::<u128>() {
        return Some(v);
    }
    let v: f64 = t.parse().ok()?;
    // 2^128 as f64
    (v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v < 3.402_823_669_209_385e38).then_some(v as u128)
}
