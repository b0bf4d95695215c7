use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
}

/// Startup configuration, read from TOML. Relative paths resolve against
/// the directory holding the config file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    /// Cohort directory with `samples.jsonl` and `vocabulary.jsonl`.
    pub cohort: PathBuf,
    pub checkpoint: PathBuf,
    /// JSON-lines disease descriptions.
    #[serde(default)]
    pub descriptions: Option<PathBuf>,
    #[serde(default = "default_bind")]
    pub bind_address: String,
    #[serde(default = "default_port")]
    pub port: u16,
    /// Append-only scenario edit log, replayed at startup.
    #[serde(default)]
    pub scenario_log: Option<PathBuf>,
}

fn default_bind() -> String {
    "127.0.0.1".to_string()
}

fn default_port() -> u16 {
    8080
}

impl ServiceConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        resolve(&mut cfg.cohort);
        resolve(&mut cfg.checkpoint);
        cfg.descriptions.as_mut().map(resolve);
        cfg.scenario_log.as_mut().map(resolve);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn address(&self) -> String {
        format!("{}:{}", self.bind_address, self.port)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_relative_paths() {
        let cfg = ServiceConfig::parse("cohort = \"data/c\"\ncheckpoint = \"/abs/m.json\"\n", Path::new("/etc/app")).unwrap();
        assert_eq!(cfg.cohort, PathBuf::from("/etc/app/data/c"));
        assert_eq!(cfg.checkpoint, PathBuf::from("/abs/m.json"));
        assert_eq!(cfg.address(), "127.0.0.1:8080");
        assert_eq!(cfg.descriptions, None);
    }

    #[test]
    fn unknown_and_missing_keys_are_errors() {
        assert!(ServiceConfig::parse("cohort = \"c\"\n", Path::new(".")).is_err());
        assert!(ServiceConfig::parse("cohort = \"c\"\ncheckpoint = \"m\"\nprot = 1\n", Path::new(".")).is_err());
    }
}
