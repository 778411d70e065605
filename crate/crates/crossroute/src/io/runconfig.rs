//! Plain key-value run configuration files: one `key = value` per line,
//! `#` comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    entries: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(format!("expected key = value, got {line:?}"), Some(i + 1)))?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(RunConfig { entries })
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|s| s.as_str())
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::invalid_argument(format!("config key {key} has bad value {v:?}"))),
        }
    }

    /// Full resolved configuration, deterministic order, for run logs.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_renders() {
        let cfg = RunConfig::parse("epochs = 5\nlr = 1e-4  # learning rate\n\n# comment\nbatch_size=64\n").unwrap();
        assert_eq!(cfg.get("epochs"), Some("5"));
        assert_eq!(cfg.get_parsed::<f64>("lr").unwrap(), Some(1e-4));
        assert_eq!(cfg.get_parsed::<usize>("batch_size").unwrap(), Some(64));
        let rendered = cfg.render();
        assert!(rendered.contains("batch_size = 64"));
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(RunConfig::parse("no equals sign").is_err());
    }
}
