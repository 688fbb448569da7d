//! TOML configuration. Relative paths are resolved against the directory of
//! the config file.

use std::path::{Path, PathBuf};

use echoagent_core::hub::HubConfig;
use echoagent_core::HttpConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Knowledge index file.
    pub kb: Option<PathBuf>,
    /// Registry file (JSON `{"tools": [...]}`); builtins when absent.
    pub registry: Option<PathBuf>,
    /// Fixture root: `corpus/` and `dataset/` below it are the defaults for
    /// build-kb and evaluate.
    pub fixtures: Option<PathBuf>,
    /// Where traces go when no explicit path is given.
    pub out: Option<PathBuf>,
    /// View taxonomy file, one name per line.
    pub taxonomy: Option<PathBuf>,
}

fn d_encoder_dim() -> usize {
    echoagent_core::kb::embed::HASHED_DIM
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Backends {
    pub encoder_url: Option<String>,
    #[serde(default = "d_encoder_dim")]
    pub encoder_dim: usize,
    pub summarizer_url: Option<String>,
    pub planner_url: Option<String>,
}

impl Default for Backends {
    fn default() -> Self {
        Backends { encoder_url: None, encoder_dim: d_encoder_dim(), summarizer_url: None, planner_url: None }
    }
}

fn d_verbosity() -> String {
    "warn".into()
}

fn d_threshold() -> f64 {
    45.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub thresholds: HubConfig,
    /// Extra AUROC cut-off for evaluate.
    #[serde(default = "d_threshold")]
    pub auroc_threshold: f64,
    #[serde(default)]
    pub backends: Backends,
    #[serde(default)]
    pub http: Option<HttpConfig>,
    /// tracing filter: error, warn, info, debug or trace.
    #[serde(default = "d_verbosity")]
    pub verbosity: String,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            paths: Paths::default(),
            thresholds: HubConfig::default(),
            auroc_threshold: d_threshold(),
            backends: Backends::default(),
            http: None,
            verbosity: d_verbosity(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let invalid = |message: String| ConfigError::Invalid { path: path.into(), message };
        let mut cfg: CliConfig = toml::from_str(&text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate().map_err(invalid)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.paths.kb,
            &mut cfg.paths.registry,
            &mut cfg.paths.fixtures,
            &mut cfg.paths.out,
            &mut cfg.paths.taxonomy,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.thresholds.validate().map_err(|e| e.to_string())?;
        if !matches!(self.verbosity.as_str(), "error" | "warn" | "info" | "debug" | "trace") {
            return Err(format!("verbosity {:?} is not one of error, warn, info, debug, trace", self.verbosity));
        }
        if !(0.0..=100.0).contains(&self.auroc_threshold) {
            return Err(format!("auroc_threshold {} must lie in [0, 100]", self.auroc_threshold));
        }
        if self.backends.encoder_dim == 0 {
            return Err("encoder_dim must be positive".into());
        }
        Ok(())
    }

    pub fn http(&self) -> HttpConfig {
        self.http.clone().unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_unknown_keys() {
        let c: CliConfig = toml::from_str("").unwrap();
        assert_eq!(c, CliConfig::default());
        let c: CliConfig = toml::from_str("[thresholds]\nD_max = 12\np_stop = 0.95\n").unwrap();
        assert_eq!((c.thresholds.d_max, c.thresholds.p_stop), (12, 0.95));
        assert!(toml::from_str::<CliConfig>("[paths]\nkbb = \"x\"\n").is_err());
        assert!(toml::from_str::<CliConfig>("colour = true\n").is_err());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("echo.toml");
        std::fs::write(&p, "[paths]\nkb = \"kb.json\"\nout = \"/abs/out\"\n").unwrap();
        let c = CliConfig::load(&p).unwrap();
        assert_eq!(c.paths.kb.unwrap(), dir.path().join("kb.json"));
        assert_eq!(c.paths.out.unwrap(), PathBuf::from("/abs/out"));
    }

    #[test]
    fn out_of_range_threshold_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("echo.toml");
        std::fs::write(&p, "[thresholds]\nc_min = 1.5\n").unwrap();
        assert!(matches!(CliConfig::load(&p), Err(ConfigError::Invalid { .. })));
    }
}
