//! Flat `key = value` run configuration with command-line overrides.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mscnn::{Error, Result};

/// One accepted key of a command and its default; `None` marks a key that
/// has no default and is optional unless the command requires it.
pub type KeySpec = (&'static str, Option<&'static str>);

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// Parse `key = value` lines; `#` starts a comment, blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected key=value", i + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if key.is_empty() {
            return Err(Error::Config("empty config key".into()));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Apply a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{pair}` is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    /// Reject keys outside `keys` and fill in defaults.
    pub fn resolve(mut self, command: &str, keys: &[KeySpec]) -> Result<Self> {
        if let Some(k) = self.values.keys().find(|k| !keys.iter().any(|(name, _)| name == k)) {
            let known: Vec<&str> = keys.iter().map(|k| k.0).collect();
            return Err(Error::Config(format!(
                "unknown key `{k}` for {command} (accepted: {})",
                known.join(", ")
            )));
        }
        for (k, default) in keys {
            if let Some(d) = default {
                self.values.entry(k.to_string()).or_insert_with(|| d.to_string());
            }
        }
        Ok(self)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    }

    pub fn parse_key<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.require(key)?;
        v.parse()
            .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
    }

    pub fn parse_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None | Some("default") => Ok(None),
            Some(_) => self.parse_key(key).map(Some),
        }
    }

    pub fn bool_key(&self, key: &str) -> Result<bool> {
        match self.require(key)? {
            "true" | "yes" | "1" | "on" => Ok(true),
            "false" | "no" | "0" | "off" => Ok(false),
            v => Err(Error::Config(format!("bad boolean `{v}` for `{key}`"))),
        }
    }

    /// An input path that must exist.
    pub fn input_path(&self, key: &str) -> Result<PathBuf> {
        let p = PathBuf::from(self.require(key)?);
        if !p.exists() {
            return Err(Error::Config(format!("`{key}`: {} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn optional_input_path(&self, key: &str) -> Result<Option<PathBuf>> {
        match self.get(key) {
            None => Ok(None),
            Some(_) => self.input_path(key).map(Some),
        }
    }

    /// `key = value` lines of every set key, sorted.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}
