//! Structured metric reports: one line per metric with a stable field
//! order, round-trippable by `parse_report`.

use super::EvalError;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub name: String,
    pub value: f64,
    pub std_error: Option<f64>,
    pub config_hash: String,
}

impl MetricRecord {
    pub fn new(name: impl Into<String>, value: f64, std_error: Option<f64>, hash: &str) -> Self {
        MetricRecord { name: name.into(), value, std_error, config_hash: hash.to_string() }
    }
}

/// Write records as line-delimited `metric=<n> value=<v> se=<s> config=<h>`.
pub fn emit_report(records: &[MetricRecord], path: &Path) -> Result<(), EvalError> {
    if records.is_empty() {
        return Err(EvalError::TooFewSamples { op: "emit_report", min: 1, got: 0 });
    }
    let mut out = String::new();
    for r in records {
        let se = match r.std_error {
            Some(v) => format!("{v:?}"),
            None => "-".to_string(),
        };
        let _ = writeln!(
            out,
            "metric={} value={:?} se={} config={}",
            r.name, r.value, se, r.config_hash
        );
    }
    std::fs::write(path, out).map_err(|e| EvalError::Unsupported {
        op: "emit_report",
        detail: format!("cannot write {}: {e}", path.display()),
    })
}

pub fn parse_report(text: &str) -> Result<Vec<MetricRecord>, EvalError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut name = None;
        let mut value = None;
        let mut se = None;
        let mut hash = None;
        for field in line.split_whitespace() {
            let Some((key, raw)) = field.split_once('=') else {
                return Err(EvalError::Unsupported {
                    op: "parse_report",
                    detail: format!("line {}: malformed field `{field}`", idx + 1),
                });
            };
            match key {
                "metric" => name = Some(raw.to_string()),
                "value" => value = raw.parse::<f64>().ok(),
                "se" => se = if raw == "-" { Some(None) } else { raw.parse::<f64>().ok().map(Some) },
                "config" => hash = Some(raw.to_string()),
                other => {
                    return Err(EvalError::Unsupported {
                        op: "parse_report",
                        detail: format!("line {}: unknown field `{other}`", idx + 1),
                    })
                }
            }
        }
        match (name, value, se, hash) {
            (Some(name), Some(value), Some(std_error), Some(config_hash)) => {
                out.push(MetricRecord { name, value, std_error, config_hash });
            }
            _ => {
                return Err(EvalError::Unsupported {
                    op: "parse_report",
                    detail: format!("line {}: missing fields", idx + 1),
                })
            }
        }
    }
    Ok(out)
}
