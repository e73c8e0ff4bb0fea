//! Effective configuration: defaults, then the `--config` file, then flags.

use std::fmt;
use std::path::{Path, PathBuf};

use wda::experiment::ExperimentConfig;

use crate::cli::Common;

pub const EFFECTIVE_CONFIG: &str = "effective_config.toml";

/// Process-level failure; each variant has its own exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Numeric(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Data(m) => write!(f, "data error: {m}"),
            Failure::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl From<wda::Error> for Failure {
    fn from(e: wda::Error) -> Self {
        match e {
            wda::Error::Config(m) => Failure::Config(m),
            wda::Error::Numeric(m) => Failure::Numeric(m),
            e @ (wda::Error::RejectedInput(_) | wda::Error::Ingestion { .. } | wda::Error::Io { .. }) => {
                Failure::Data(e.to_string())
            }
        }
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

pub fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

/// Output level from `WDA_VERBOSITY` (`quiet`, `normal`, `debug`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Verbosity {
    Quiet,
    Normal,
    Debug,
}

impl Verbosity {
    pub fn from_env() -> Self {
        match std::env::var("WDA_VERBOSITY").as_deref() {
            Ok("quiet") => Verbosity::Quiet,
            Ok("debug") => Verbosity::Debug,
            _ => Verbosity::Normal,
        }
    }
}

/// Dotted paths present in `file` but absent from `known`.
fn unknown_keys(file: &toml::Value, known: &toml::Value, prefix: &str, out: &mut Vec<String>) {
    if let (toml::Value::Table(f), toml::Value::Table(k)) = (file, known) {
        for (key, v) in f {
            let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
            match k.get(key) {
                None if is_optional(&path) => {}
                None => out.push(path),
                Some(kv) => unknown_keys(v, kv, &path, out),
            }
        }
    }
}

/// Keys whose default is "unset" and so never appear when serialized.
fn is_optional(path: &str) -> bool {
    matches!(path, "adapt.steps_per_epoch" | "divergence.classifier_clip")
}

pub struct Resolved {
    pub config: ExperimentConfig,
    pub file: Option<PathBuf>,
    pub flags: Vec<String>,
}

impl Resolved {
    pub fn describe(&self) -> String {
        let file = self.file.as_ref().map_or("none".to_string(), |p| p.display().to_string());
        let flags = if self.flags.is_empty() { "none".to_string() } else { self.flags.join(", ") };
        format!("config precedence: flags [{flags}] > file [{file}] > defaults")
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string_pretty(&self.config).map_err(|e| Failure::Config(format!("cannot encode config: {e}")))
    }

    /// Writes the merged configuration next to a command's outputs.
    pub fn write_to(&self, dir: &Path) -> CliResult<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
        let path = dir.join(EFFECTIVE_CONFIG);
        let body = format!("# {}\n{}", self.describe(), self.to_toml()?);
        std::fs::write(&path, body).map_err(|e| io_failure(&path, e))?;
        Ok(path)
    }
}

/// A flag value that, when present, overwrites one config field.
pub struct Overrides<'a> {
    entries: Vec<(&'static str, Box<dyn FnOnce(&mut ExperimentConfig) + 'a>)>,
}

impl<'a> Overrides<'a> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn set<T: 'a>(mut self, flag: &'static str, value: Option<T>, apply: impl FnOnce(&mut ExperimentConfig, T) + 'a) -> Self {
        if let Some(v) = value {
            self.entries.push((flag, Box::new(move |c| apply(c, v))));
        }
        self
    }
}

pub fn resolve(common: &Common, overrides: Overrides<'_>) -> CliResult<Resolved> {
    let mut config = ExperimentConfig::default();
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        let value: toml::Value = toml::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        config = value
            .clone()
            .try_into()
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        let known = toml::Value::try_from(&config).map_err(|e| Failure::Config(e.to_string()))?;
        let mut unknown = Vec::new();
        unknown_keys(&value, &known, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(Failure::Config(format!("{}: unknown keys {unknown:?}", path.display())));
        }
    }
    let mut flags = Vec::new();
    if let Some(seed) = common.seed {
        config.seed = seed;
        flags.push("--seed".to_string());
    }
    for (flag, apply) in overrides.entries {
        apply(&mut config);
        flags.push(flag.to_string());
    }
    // one seed drives every substream
    config = config.clone().seeded(config.seed);
    config.data.validate()?;
    config.adapt.validate()?;
    config.divergence.validate()?;
    Ok(Resolved {
        config,
        file: common.config.clone(),
        flags,
    })
}
