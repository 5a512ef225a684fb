//! `key=value` configuration text.
//!
//! Blank lines and `#` comments are ignored. Keys must be unique within a file.

use std::path::Path;
use std::str::FromStr;

use crate::fcn::{FcnConfig, TrainConfig};
use crate::{Error, Result};

pub fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

pub fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::Config(format!("{key}: expected true/false, got '{other}'"))),
    }
}

pub fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

/// Splits text into `(key, value)` pairs, rejecting malformed lines and duplicates.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        if out.iter().any(|(e, _)| e == k) {
            return Err(Error::Config(format!("line {}: duplicate key '{k}'", n + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Network and training settings read from one file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: FcnConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Starts from the full-size defaults (or `preset=compact`) at the given `n_f`
    /// and applies every other key on top.
    pub fn parse(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        let get = |k: &str| pairs.iter().find(|(p, _)| p == k).map(|(_, v)| v.as_str());
        let n_f = match get("n_f") {
            Some(v) => parse_num("n_f", v)?,
            None => 24_000,
        };
        let mut model = match get("preset").unwrap_or("default") {
            "default" => FcnConfig::for_nf(n_f),
            "compact" => FcnConfig::compact(n_f),
            other => return Err(Error::Config(format!("unknown preset '{other}'"))),
        };
        let mut train = TrainConfig::default();
        for (k, v) in &pairs {
            if k == "preset" {
                continue;
            }
            if !model.apply(k, v)? && !train.apply(k, v)? {
                return Err(Error::Config(format!("unknown key '{k}'")));
            }
        }
        model.validate()?;
        train.validate()?;
        Ok(Self { model, train })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.model.to_pairs().into_iter().chain(self.train.to_pairs()) {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }
}
