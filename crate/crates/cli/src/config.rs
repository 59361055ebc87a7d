use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use tvws_core::spectrum::{PathLossParams, RegulatoryConfig};

pub const CONFIG_ENV: &str = "TVWS_CONFIG";
pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

/// Optional JSON settings file. Relative paths inside it resolve against
/// the file's own directory.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub regulatory: Option<RegulatoryConfig>,
    pub dataset: Option<PathBuf>,
    pub bind: Option<SocketAddr>,
    pub propagation: Option<String>,
    pub path_loss: Option<PathLossParams>,
    pub log_path: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let mut cfg: FileConfig =
            serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.dataset, &mut cfg.log_path].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}
