//! Plain `key=value` run configuration files.
//!
//! One pair per line, `#` starts a comment, blank lines are ignored. Keys
//! are flag names without the leading dashes; `_` and `-` are
//! interchangeable. Each key may appear once.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: expected `key=value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: key `{key}` already set on line {first}")]
    Duplicate { line: usize, key: String, first: usize },
    #[error("{path}: {reason}")]
    Read { path: String, reason: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues {
    pairs: Vec<(String, String, usize)>,
}

impl KeyValues {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        parse_key_values(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        let key = normalize(key);
        self.pairs.iter().find(|(k, _, _)| *k == key).map(|(_, v, _)| v.as_str())
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// The pairs as long flags (`--key value`), in file order.
    pub fn to_args(&self) -> Vec<String> {
        self.pairs
            .iter()
            .flat_map(|(k, v, _)| [format!("--{k}"), v.clone()])
            .collect()
    }
}

fn normalize(key: &str) -> String {
    key.trim().trim_start_matches("--").replace('_', "-")
}

pub fn parse_key_values(text: &str) -> Result<KeyValues, ConfigError> {
    let mut pairs: Vec<(String, String, usize)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line,
            text: raw.to_string(),
        })?;
        let key = normalize(key);
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(ConfigError::Syntax {
                line,
                text: raw.to_string(),
            });
        }
        if let Some((_, _, first)) = pairs.iter().find(|(k, _, _)| *k == key) {
            return Err(ConfigError::Duplicate {
                line,
                key,
                first: *first,
            });
        }
        pairs.push((key, value.trim().to_string(), line));
    }
    Ok(KeyValues { pairs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pairs_comments_and_blanks() {
        let kv = parse_key_values("# run\nsteps = 40\n\nstep_param=0.01  # a\nfamily=witchcraft\n").unwrap();
        assert_eq!(kv.len(), 3);
        assert_eq!(kv.get("step-param"), Some("0.01"));
        assert_eq!(kv.get("steps"), Some("40"));
        assert_eq!(
            kv.to_args(),
            ["--steps", "40", "--step-param", "0.01", "--family", "witchcraft"]
        );
    }

    #[test]
    fn rejects_malformed_and_repeated_keys() {
        assert!(matches!(parse_key_values("steps 40"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(parse_key_values("=3"), Err(ConfigError::Syntax { .. })));
        assert_eq!(
            parse_key_values("seed=1\nseed=2"),
            Err(ConfigError::Duplicate {
                line: 2,
                key: "seed".into(),
                first: 1
            })
        );
    }
}
