//! Flat `key = value` config files with `#` comments.

use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

pub fn parse(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError {
            line: i + 1,
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        let key = key.trim().replace('_', "-");
        if key.is_empty() {
            return Err(ConfigError {
                line: i + 1,
                message: "empty key".into(),
            });
        }
        if out.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(ConfigError {
                line: i + 1,
                message: format!("duplicate key `{key}`"),
            });
        }
    }
    Ok(out)
}
