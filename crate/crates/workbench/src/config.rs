use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use cdcr_core::baselines::Linkage;
use cdcr_core::engine::QueueConfig;
use cdcr_core::ingestion::MatchConfig;
use cdcr_core::store::DEFAULT_SNAPSHOT_EVERY;
use serde::Deserialize;

/// Contents of the workbench TOML file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Event store directory, relative to the config file.
    pub store_dir: PathBuf,
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: u64,
    pub queue: QueueConfig,
    #[serde(default)]
    pub matching: MatchConfig,
    #[serde(default)]
    pub service: ServiceConfig,
    #[serde(default)]
    pub baselines: BaselineConfig,
}

fn default_snapshot_every() -> u64 {
    DEFAULT_SNAPSHOT_EVERY
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub addr: SocketAddr,
    /// Registered at startup if not yet known.
    pub annotators: Vec<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            addr: ([127, 0, 0, 1], 8080).into(),
            annotators: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub tau: f64,
    pub linkage: Linkage,
    pub bin_width: f64,
    pub bcos_threshold: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            linkage: Linkage::Average,
            bin_width: 0.05,
            bcos_threshold: 0.65,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: Config = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if cfg.store_dir.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            cfg.store_dir = base.join(&cfg.store_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.queue.validate()?;
        if !self.baselines.tau.is_finite() && self.baselines.tau != f64::NEG_INFINITY {
            bail!("baselines.tau must be finite or -inf");
        }
        if self.baselines.bin_width.is_nan() || self.baselines.bin_width <= 0.0 {
            bail!("baselines.bin_width must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config() {
        let cfg: Config = toml::from_str(
            r#"
            store_dir = "data"
            [queue]
            sampling_seed = 2021
            "#,
        )
        .unwrap();
        assert_eq!(cfg.queue.iaa_fraction, 0.05);
        assert_eq!(cfg.queue.weekly_iaa_cap, 150);
        assert_eq!(cfg.snapshot_every, 1000);
        assert_eq!(cfg.matching.date_window_days, 14);
        assert_eq!(cfg.baselines.linkage, Linkage::Average);
    }

    #[test]
    fn seed_is_mandatory() {
        let err = toml::from_str::<Config>("store_dir = \"d\"\n[queue]\niaa_fraction = 0.1\n");
        assert!(err.unwrap_err().to_string().contains("sampling_seed"));
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = toml::from_str::<Config>("store_dir = \"d\"\nbogus = 1\n[queue]\nsampling_seed = 1\n");
        assert!(err.is_err());
    }

    #[test]
    fn relative_store_dir_follows_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wb.toml");
        std::fs::write(
            &path,
            "store_dir = \"store\"\n[queue]\nsampling_seed = 5\n[service]\naddr = \"127.0.0.1:9000\"\nannotators = [\"a\"]\n[matching]\ndate_window_days = 30\n",
        )
        .unwrap();
        let cfg = Config::load(&path).unwrap();
        assert_eq!(cfg.store_dir, dir.path().join("store"));
        assert_eq!(cfg.service.addr.port(), 9000);
        assert_eq!(cfg.matching.date_window_days, 30);
        assert_eq!(cfg.matching.min_author_overlap, 0.5);
    }
}
