//! Scenario configuration (TOML).
//!
//! ```toml
//! seed = 7
//! n_sites = 200
//! pages_per_site = 3
//! n_third_parties = 50        # generated when no [[third_parties]] are listed
//! noise_requests = 300        # non-tracking third-party requests with Safe/Unknown/IdAsKey cookies
//! functional_trackers = 5     # BasicTracking plants on a CDN-like host, domain-scoped cookie
//! invisible_pixel_rate = 0.35 # optional; pads the corpus with images to hit this share
//! es_param = "google_nid"
//!
//! [planted]                   # per-category instance counts
//! basic_tracking = 50
//! basic_tracking_by_tracker = 50
//! third_to_third_sync = 50
//! cookie_forwarding = 50
//! first_to_third_sync = 50
//! analytics = 50
//!
//! [filter_fixture]
//! blocked_trackers = 10       # the first N third parties get a `||ads.<domain>^` rule
//! follow_up_chains = 20       # blocked cookie-setting request, then an allowed request reusing it
//! blocked_frames = 10
//! blocked_redirects = 10
//! extra_rules = []
//!
//! [[third_parties]]
//! domain = "adnet.example"
//! behaviors = ["BasicTracking", "ThirdToThirdSync"]
//! techniques = ["DS", "ES"]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::behavior::BehaviorCategory;
use crate::error::{Error, Result};
use crate::sharing::Technique;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThirdPartySpec {
    pub domain: String,
    #[serde(default = "all_behaviors")]
    pub behaviors: Vec<BehaviorCategory>,
    #[serde(default = "all_techniques")]
    pub techniques: Vec<Technique>,
}

fn all_behaviors() -> Vec<BehaviorCategory> {
    BehaviorCategory::ALL.to_vec()
}

fn all_techniques() -> Vec<Technique> {
    Technique::ALL.to_vec()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedCounts {
    pub basic_tracking: usize,
    pub basic_tracking_by_tracker: usize,
    pub third_to_third_sync: usize,
    pub cookie_forwarding: usize,
    pub first_to_third_sync: usize,
    pub analytics: usize,
}

impl PlantedCounts {
    pub fn uniform(n: usize) -> Self {
        Self {
            basic_tracking: n,
            basic_tracking_by_tracker: n,
            third_to_third_sync: n,
            cookie_forwarding: n,
            first_to_third_sync: n,
            analytics: n,
        }
    }

    pub fn get(&self, c: BehaviorCategory) -> usize {
        match c {
            BehaviorCategory::BasicTracking => self.basic_tracking,
            BehaviorCategory::BasicTrackingByTracker => self.basic_tracking_by_tracker,
            BehaviorCategory::ThirdToThirdSync => self.third_to_third_sync,
            BehaviorCategory::CookieForwarding => self.cookie_forwarding,
            BehaviorCategory::FirstToThirdSync => self.first_to_third_sync,
            BehaviorCategory::Analytics => self.analytics,
        }
    }

    pub fn total(&self) -> usize {
        BehaviorCategory::ALL.iter().map(|&c| self.get(c)).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterFixture {
    pub blocked_trackers: usize,
    pub follow_up_chains: usize,
    pub blocked_frames: usize,
    pub blocked_redirects: usize,
    pub extra_rules: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub n_sites: usize,
    pub pages_per_site: usize,
    pub n_third_parties: usize,
    pub third_parties: Vec<ThirdPartySpec>,
    pub planted: PlantedCounts,
    pub filter_fixture: FilterFixture,
    pub functional_trackers: usize,
    pub noise_requests: usize,
    pub invisible_pixel_rate: Option<f64>,
    pub es_param: String,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n_sites: 10,
            pages_per_site: 3,
            n_third_parties: 12,
            third_parties: Vec::new(),
            planted: PlantedCounts::default(),
            filter_fixture: FilterFixture::default(),
            functional_trackers: 0,
            noise_requests: 0,
            invisible_pixel_rate: None,
            es_param: "google_nid".into(),
        }
    }
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("scenario: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario always serializes")
    }

    /// Third parties, generating `n_third_parties` full-repertoire ones
    /// when none are listed.
    pub fn resolved_third_parties(&self) -> Vec<ThirdPartySpec> {
        if !self.third_parties.is_empty() {
            return self.third_parties.clone();
        }
        (0..self.n_third_parties)
            .map(|i| ThirdPartySpec {
                domain: format!("tracker{i:02}.net"),
                behaviors: all_behaviors(),
                techniques: all_techniques(),
            })
            .collect()
    }
}
