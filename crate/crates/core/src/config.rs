//! Flat key-value configuration with named sections.
//!
//! The on-disk format is diff-friendly text:
//!
//! ```text
//! # comment
//! [train]
//! objective = iw-avb
//! k = 8
//! ```
//!
//! Dotted overrides (`train.k=16`) win over file values. Serialization is
//! canonical (sorted sections and keys), so the config hash is stable.

use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("unknown config key `{key}`")]
    UnknownKey { key: String },

    #[error("config key `{key}`: {detail}")]
    BadValue { key: String, detail: String },

    #[error("missing required config key `{key}`")]
    MissingKey { key: String },

    #[error("override `{spec}` must look like section.key=value")]
    BadOverride { spec: String },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvConfig {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl KvConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = KvConfig::new();
        let mut section = String::from("default");
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let Some(name) = name.strip_suffix(']') else {
                    return Err(ConfigError::Parse {
                        line: line_no,
                        detail: "unterminated section header".into(),
                    });
                };
                section = name.trim().to_string();
                if section.is_empty() {
                    return Err(ConfigError::Parse {
                        line: line_no,
                        detail: "empty section name".into(),
                    });
                }
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Parse {
                    line: line_no,
                    detail: format!("expected `key = value`, found `{line}`"),
                });
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::Parse { line: line_no, detail: "empty key".into() });
            }
            cfg.sections
                .entry(section.clone())
                .or_default()
                .insert(key.to_string(), value.trim().to_string());
        }
        Ok(cfg)
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl Into<String>) {
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value.into());
    }

    /// Apply a `section.key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), ConfigError> {
        let Some((dotted, value)) = spec.split_once('=') else {
            return Err(ConfigError::BadOverride { spec: spec.to_string() });
        };
        let Some((section, key)) = dotted.trim().split_once('.') else {
            return Err(ConfigError::BadOverride { spec: spec.to_string() });
        };
        if section.is_empty() || key.is_empty() {
            return Err(ConfigError::BadOverride { spec: spec.to_string() });
        }
        self.set(section.trim(), key.trim(), value.trim());
        Ok(())
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section).and_then(|s| s.get(key)).map(String::as_str)
    }

    pub fn get_or<'a>(&'a self, section: &str, key: &str, default: &'a str) -> &'a str {
        self.get(section, key).unwrap_or(default)
    }

    pub fn require(&self, section: &str, key: &str) -> Result<&str, ConfigError> {
        self.get(section, key)
            .ok_or_else(|| ConfigError::MissingKey { key: format!("{section}.{key}") })
    }

    pub fn get_f64(&self, section: &str, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.get(section, key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e| ConfigError::BadValue {
                key: format!("{section}.{key}"),
                detail: format!("`{v}` is not a number: {e}"),
            }),
        }
    }

    pub fn get_usize(&self, section: &str, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.get(section, key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e| ConfigError::BadValue {
                key: format!("{section}.{key}"),
                detail: format!("`{v}` is not an integer: {e}"),
            }),
        }
    }

    pub fn get_u64(&self, section: &str, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.get(section, key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e| ConfigError::BadValue {
                key: format!("{section}.{key}"),
                detail: format!("`{v}` is not an integer: {e}"),
            }),
        }
    }

    pub fn get_bool(&self, section: &str, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.get(section, key) {
            None => Ok(default),
            Some("true") | Some("1") => Ok(true),
            Some("false") | Some("0") => Ok(false),
            Some(v) => Err(ConfigError::BadValue {
                key: format!("{section}.{key}"),
                detail: format!("`{v}` is not a boolean"),
            }),
        }
    }

    /// Comma-separated positive integers.
    pub fn get_usize_list(
        &self,
        section: &str,
        key: &str,
        default: &[usize],
    ) -> Result<Vec<usize>, ConfigError> {
        match self.get(section, key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|part| {
                    part.trim().parse().map_err(|e| ConfigError::BadValue {
                        key: format!("{section}.{key}"),
                        detail: format!("`{part}` is not an integer: {e}"),
                    })
                })
                .collect(),
        }
    }

    /// Every `(section, key)` pair present.
    pub fn keys(&self) -> impl Iterator<Item = (&str, &str)> {
        self.sections
            .iter()
            .flat_map(|(s, kv)| kv.keys().map(move |k| (s.as_str(), k.as_str())))
    }

    /// Reject keys outside the allowed set (unknown keys are configuration
    /// typos, not extension points).
    pub fn validate_keys(&self, allowed: &[(&str, &str)]) -> Result<(), ConfigError> {
        for (section, key) in self.keys() {
            if !allowed.iter().any(|(s, k)| *s == section && *k == key) {
                return Err(ConfigError::UnknownKey { key: format!("{section}.{key}") });
            }
        }
        Ok(())
    }

    /// Canonical text form: sorted sections and keys.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (section, kv) in &self.sections {
            let _ = writeln!(out, "[{section}]");
            for (key, value) in kv {
                let _ = writeln!(out, "{key} = {value}");
            }
            let _ = writeln!(out);
        }
        out
    }

    /// Short hex digest of the canonical text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }
}
