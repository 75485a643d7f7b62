//! Flat `key = value` config file format with `#` comments. Every key has a
//! CLI-flag override; precedence is defaults < file < flags.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: source.into(),
                    line: lineno + 1,
                    msg: "expected `key = value`".into(),
                });
            };
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() || value.is_empty() {
                return Err(Error::Parse {
                    path: source.into(),
                    line: lineno + 1,
                    msg: "empty key or value".into(),
                });
            }
            if entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(Error::Parse {
                    path: source.into(),
                    line: lineno + 1,
                    msg: format!("duplicate key {key:?}"),
                });
            }
        }
        Ok(KvConfig { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|s| s.as_str())
    }

    /// Typed lookup; a present-but-unparsable value is an error.
    pub fn get_parsed<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|e| {
                Error::InvalidConfig(format!("key {key:?}: cannot parse {raw:?}: {e}"))
            }),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blanks() {
        let cfg = KvConfig::parse("# top\nlr = 0.001\n\nseed = 7 # trailing\n", "t").unwrap();
        assert_eq!(cfg.get("lr"), Some("0.001"));
        assert_eq!(cfg.get_parsed::<u64>("seed").unwrap(), Some(7));
        assert_eq!(cfg.get("missing"), None);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(KvConfig::parse("just a line\n", "t").is_err());
        assert!(KvConfig::parse("lr =\n", "t").is_err());
        assert!(KvConfig::parse("a = 1\na = 2\n", "t").is_err());
    }

    #[test]
    fn typed_parse_errors_name_the_key() {
        let cfg = KvConfig::parse("lr = fast\n", "t").unwrap();
        let err = cfg.get_parsed::<f64>("lr").unwrap_err();
        assert!(err.to_string().contains("lr"));
    }
}
