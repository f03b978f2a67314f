//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Values are raw
//! strings; typed accessors report the line a bad value came from.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvConfig {
    entries: BTreeMap<String, (String, usize)>,
    path: Option<PathBuf>,
}

impl KvConfig {
    pub fn parse(text: &str, path: Option<&Path>) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, line_no, "expected `key = value`"))?;
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(Error::parse(path, line_no, "empty key"));
            }
            if entries.insert(key.clone(), (v.trim().to_string(), line_no)).is_some() {
                return Err(Error::parse(path, line_no, format!("duplicate key `{key}`")));
            }
        }
        Ok(Self {
            entries,
            path: path.map(Path::to_path_buf),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?, Some(path))
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Sets or replaces a key, as command-line overrides do.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), (value.to_string(), 0));
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((v, line)) => v.parse().map(Some).map_err(|_| {
                Error::parse(self.path.as_deref(), *line, format!("invalid value `{v}` for `{key}`"))
            }),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn get_bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.raw(key) {
            None => Ok(default),
            Some("true" | "1" | "yes" | "on") => Ok(true),
            Some("false" | "0" | "no" | "off") => Ok(false),
            Some(v) => Err(Error::Config(format!("invalid boolean `{v}` for `{key}`"))),
        }
    }

    /// Errors on the first key not in `known`.
    pub fn check_known(&self, known: &[&str]) -> Result<()> {
        for (k, (_, line)) in &self.entries {
            if !known.contains(&k.as_str()) {
                return Err(Error::parse(self.path.as_deref(), *line, format!("unknown key `{k}`")));
            }
        }
        Ok(())
    }

    /// Serializes in key order.
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, (v, _))| format!("{k} = {v}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_types() {
        let cfg = KvConfig::parse("# comment\nalpha = 0.5\n\nbackbone=gcn\nrecon_detach = false\n", None).unwrap();
        assert_eq!(cfg.get::<f64>("alpha").unwrap(), Some(0.5));
        assert_eq!(cfg.raw("backbone"), Some("gcn"));
        assert!(!cfg.get_bool("recon_detach", true).unwrap());
        assert_eq!(cfg.get_or("epochs", 200usize).unwrap(), 200);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = KvConfig::parse("a = 1\nnonsense\n", None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let cfg = KvConfig::parse("a = 1\nb = x\n", None).unwrap();
        assert!(matches!(cfg.get::<f64>("b"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(cfg.check_known(&["a"]), Err(Error::Parse { line: 2, .. })));
    }
}
