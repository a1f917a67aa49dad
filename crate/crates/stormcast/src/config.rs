//! Line-based `key = value` configuration files with `#` comments.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// A parsed configuration file; key order is preserved for echoing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    entries: Vec<(String, String)>,
    map: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<ConfigFile> {
        let mut entries = Vec::new();
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected `key = value`, got `{raw}`",
                    lineno + 1
                ))
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            if map.insert(key.clone(), value.clone()).is_some() {
                return Err(Error::Config(format!(
                    "line {}: duplicate key `{key}`",
                    lineno + 1
                )));
            }
            entries.push((key, value));
        }
        Ok(ConfigFile { entries, map })
    }

    pub fn read(path: &Path) -> Result<ConfigFile> {
        ConfigFile::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    /// Parse the value under `key`, if present.
    pub fn parsed<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|e| {
                Error::Config(format!("key `{key}`: cannot parse `{raw}`: {e}"))
            }),
        }
    }

    /// Reject any key outside the allowed set (typo protection).
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for (key, _) in &self.entries {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::Config(format!("unknown configuration key `{key}`")));
            }
        }
        Ok(())
    }

    /// Canonical text form, used to echo the configuration into
    /// checkpoints and recover settings at load time.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_values_comments_and_blanks() {
        let text = "\n# a comment\nepochs = 30\nlr0 = 0.01  # inline note\n\nseed=7\n";
        let cfg = ConfigFile::parse(text).unwrap();
        assert_eq!(cfg.get("epochs"), Some("30"));
        assert_eq!(cfg.get("lr0"), Some("0.01"));
        assert_eq!(cfg.get("seed"), Some("7"));
        assert_eq!(cfg.get("missing"), None);
        assert_eq!(cfg.parsed::<usize>("epochs").unwrap(), Some(30));
        assert_eq!(cfg.parsed::<f64>("lr0").unwrap(), Some(0.01));
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(matches!(
            ConfigFile::parse("no equals sign"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ConfigFile::parse("= value"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ConfigFile::parse("a = 1\na = 2"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn rejects_unparseable_and_unknown() {
        let cfg = ConfigFile::parse("epochs = many").unwrap();
        assert!(matches!(
            cfg.parsed::<usize>("epochs"),
            Err(Error::Config(_))
        ));
        let cfg = ConfigFile::parse("epochz = 30").unwrap();
        assert!(cfg.check_keys(&["epochs"]).is_err());
        assert!(cfg.check_keys(&["epochz"]).is_ok());
    }

    #[test]
    fn echo_round_trips() {
        let text = "b = 2\na = 1\n";
        let cfg = ConfigFile::parse(text).unwrap();
        assert_eq!(cfg.echo(), text);
        let again = ConfigFile::parse(&cfg.echo()).unwrap();
        assert_eq!(again, cfg);
    }
}
