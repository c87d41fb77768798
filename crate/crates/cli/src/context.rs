//! Run setup shared by every subcommand: config layering (file, dedicated
//! flags, dotted overrides), output directory, and resolved-config
//! persistence.

use iwavi::config::KvConfig;
use std::fmt::Display;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation: unknown keys, malformed values, missing arguments.
    Usage(String),
    /// Valid invocation, failed work: I/O, training, numeric failures.
    Domain(String),
}

impl CliError {
    pub fn usage(msg: impl Display) -> Self {
        CliError::Usage(msg.to_string())
    }

    pub fn domain(msg: impl Display) -> Self {
        CliError::Domain(msg.to_string())
    }
}

pub struct RunContext {
    pub cfg: KvConfig,
    pub out_dir: PathBuf,
}

impl RunContext {
    pub fn prepare(
        command: &str,
        config_path: &Option<PathBuf>,
        overrides: &[String],
        out: &Option<PathBuf>,
    ) -> Result<Self, CliError> {
        let mut cfg = match config_path {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    CliError::usage(format!("cannot read config {}: {e}", path.display()))
                })?;
                KvConfig::parse(&text).map_err(CliError::usage)?
            }
            None => KvConfig::new(),
        };
        for spec in overrides {
            cfg.apply_override(spec).map_err(CliError::usage)?;
        }
        let out_dir = match out {
            Some(dir) => dir.clone(),
            None => {
                let root = std::env::var("IWAVI_OUTPUT_ROOT")
                    .map(PathBuf::from)
                    .unwrap_or_else(|_| PathBuf::from("iwavi-out"));
                root.join(command)
            }
        };
        std::fs::create_dir_all(&out_dir)
            .map_err(|e| CliError::domain(format!("cannot create {}: {e}", out_dir.display())))?;
        Ok(RunContext { cfg, out_dir })
    }

    /// Layer a dedicated flag value into the config (flags sit between the
    /// file and the dotted overrides).
    pub fn flag<V: Display>(&mut self, section: &str, key: &str, value: Option<V>) {
        if let Some(v) = value {
            self.cfg.set(section, key, v.to_string());
        }
    }

    /// Dotted overrides win over dedicated flags; reapply them last.
    pub fn reapply_overrides(&mut self, overrides: &[String]) -> Result<(), CliError> {
        for spec in overrides {
            self.cfg.apply_override(spec).map_err(CliError::usage)?;
        }
        Ok(())
    }

    /// Reject unknown keys, then persist the fully resolved config next to
    /// the run's artifacts.
    pub fn finalize(&self, allowed: &[(&str, &str)]) -> Result<(), CliError> {
        self.cfg.validate_keys(allowed).map_err(CliError::usage)?;
        let path = self.out_dir.join("config.resolved.txt");
        std::fs::write(&path, self.cfg.to_text())
            .map_err(|e| CliError::domain(format!("cannot write {}: {e}", path.display())))?;
        Ok(())
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn require_path(&self, section: &str, key: &str) -> Result<PathBuf, CliError> {
        let raw = self
            .cfg
            .require(section, key)
            .map_err(|e| CliError::usage(format!("{e} (flag --{key} or config {section}.{key})")))?;
        let path = PathBuf::from(raw);
        if !path.exists() {
            return Err(CliError::domain(format!("input file not found: {}", path.display())));
        }
        Ok(path)
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::domain(format!("cannot write {}: {e}", path.display())))
}
