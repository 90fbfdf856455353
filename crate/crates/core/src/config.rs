//! Run configuration, read from a TOML file. Every key is optional.
//!
//! ```toml
//! [sharing]
//! min_token_length = 8
//! scan_path_segments = false
//! es_rules = [{ host = "doubleclick.net", param = "google_nid" }]
//!
//! [graph]
//! redirect_window_ms = 30000
//!
//! [pixels]
//! invisible_max_dim = 1
//! big_min_exclusive = 50
//!
//! [cookies]
//! id_as_key_min_value_len = 8
//!
//! [behavior]
//! basic_tracker_scope = "global"   # or "per_page"
//! measure_crawl = "A"
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::behavior::BehaviorConfig;
use crate::cookies::CookieConfig;
use crate::error::{Error, Result};
use crate::graph::DEFAULT_REDIRECT_WINDOW_MS;
use crate::pixel::PixelThresholds;
use crate::sharing::SharingConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub redirect_window_ms: i64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            redirect_window_ms: DEFAULT_REDIRECT_WINDOW_MS,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sharing: SharingConfig,
    pub graph: GraphConfig,
    pub pixels: PixelThresholds,
    pub cookies: CookieConfig,
    pub behavior: BehaviorConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    fn validate(&self) -> Result<()> {
        if self.graph.redirect_window_ms < 0 {
            return Err(Error::Config("graph.redirect_window_ms must be non-negative".into()));
        }
        if self.sharing.min_token_length == 0 {
            return Err(Error::Config("sharing.min_token_length must be at least 1".into()));
        }
        if self.pixels.big_min_exclusive < self.pixels.invisible_max_dim {
            return Err(Error::Config("pixels.big_min_exclusive is below invisible_max_dim".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.sharing.min_token_length = 10;
        cfg.graph.redirect_window_ms = 5_000;
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(RunConfig::parse("[graph]\nwindow = 3"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("[sharing]\nmin_token_length = 0"), Err(Error::Config(_))));
    }
}
