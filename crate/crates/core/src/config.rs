//! Flat `key = value` configuration files.
//!
//! `#` starts a comment, blank lines are ignored, and dotted keys such as
//! `train.steps` group settings. Every lookup error names the line it came from.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Result, ScudError};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, (String, usize)>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ScudError::Parse {
                line: line_no,
                message: format!("expected `key = value`, found `{line}`"),
            })?;
            let key = key.trim();
            let valid = !key.is_empty()
                && key
                    .split('.')
                    .all(|part| !part.is_empty() && part.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'));
            if !valid {
                return Err(ScudError::Parse { line: line_no, message: format!("bad key `{key}`") });
            }
            if let Some((_, first)) = entries.get(key) {
                return Err(ScudError::Parse {
                    line: line_no,
                    message: format!("`{key}` already set on line {first}"),
                });
            }
            entries.insert(key.to_string(), (value.trim().to_string(), line_no));
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ScudError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        let line = self.entries.get(key).map_or(0, |e| e.1);
        self.entries.insert(key.to_string(), (value.to_string(), line));
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |e| e.1)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.0.as_str())
    }

    /// Parsed value, or `default` when the key is absent.
    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(default),
            Some((v, line)) => {
                v.parse().map_err(|e| ScudError::Parse { line: *line, message: format!("`{key}`: {e}") })
            }
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.entries
            .get(key)
            .map(|(v, line)| v.parse().map_err(|e| ScudError::Parse { line: *line, message: format!("`{key}`: {e}") }))
            .transpose()
    }

    pub fn list_or(&self, key: &str, default: Vec<f64>) -> Result<Vec<f64>> {
        match self.entries.get(key) {
            None => Ok(default),
            Some((v, line)) => v
                .split(',')
                .map(|tok| {
                    tok.trim().parse::<f64>().map_err(|e| ScudError::Parse {
                        line: *line,
                        message: format!("`{key}`: `{}`: {e}", tok.trim()),
                    })
                })
                .collect(),
        }
    }

    pub fn error(&self, key: &str, message: impl std::fmt::Display) -> ScudError {
        ScudError::Parse { line: self.line_of(key), message: format!("`{key}`: {message}") }
    }

    /// Canonical text: sorted keys, one per line.
    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, (v, _))| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_dotted_keys() {
        let c = Config::parse("# top\nseed = 7\n\ntrain.steps = 20  # inline\nprocess.kind=uniform\n").unwrap();
        assert_eq!(c.get_or("seed", 0u64).unwrap(), 7);
        assert_eq!(c.get_or("train.steps", 0usize).unwrap(), 20);
        assert_eq!(c.raw("process.kind"), Some("uniform"));
        assert_eq!(c.get_or("missing", 3usize).unwrap(), 3);
        assert_eq!(c.line_of("train.steps"), 4);
    }

    #[test]
    fn errors_name_the_line() {
        for (text, line) in [("a = 1\nbroken\n", 2), ("a = 1\n\na = 2\n", 3), ("x..y = 1\n", 1)] {
            match Config::parse(text) {
                Err(ScudError::Parse { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{other:?}"),
            }
        }
        let c = Config::parse("\n\nsteps = many\n").unwrap();
        match c.get_or("steps", 0usize) {
            Err(ScudError::Parse { line: 3, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn lists_and_round_trip() {
        let c = Config::parse("p = 0.8, 0.2\n").unwrap();
        assert_eq!(c.list_or("p", vec![]).unwrap(), vec![0.8, 0.2]);
        let again = Config::parse(&c.to_text()).unwrap();
        assert_eq!(again.raw("p"), c.raw("p"));
    }
}
