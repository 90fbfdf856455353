//! Synthetic corpora with known ground truth.

mod generate;
pub mod scenario;
mod truth;

use std::path::{Path, PathBuf};

pub use generate::{generate, SyntheticCorpus, MAX_PLANTS_PER_VISIT};
pub use scenario::{FilterFixture, PlantedCounts, ScenarioConfig, ThirdPartySpec};
pub use truth::{score, CategoryScore, GroundTruth, Score, TruthEntry};

use crate::error::{Error, Result};
use crate::ingest::serialize_crawl_log;

pub const CRAWL_A_FILE: &str = "crawl_a.jsonl";
pub const CRAWL_B_FILE: &str = "crawl_b.jsonl";
pub const TRUTH_FILE: &str = "truth.json";
pub const RUN_CONFIG_FILE: &str = "run.toml";
pub const FILTER_FILE: &str = "filters.txt";

impl SyntheticCorpus {
    /// File name and contents of every corpus file.
    pub fn files(&self) -> Vec<(&'static str, String)> {
        let mut filters = self.filter_rules.join("\n");
        filters.push('\n');
        vec![
            (CRAWL_A_FILE, serialize_crawl_log(&self.crawl_a)),
            (CRAWL_B_FILE, serialize_crawl_log(&self.crawl_b)),
            (TRUTH_FILE, self.truth.to_json()),
            (RUN_CONFIG_FILE, self.run_config.to_toml()),
            (FILTER_FILE, filters),
        ]
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let unwritable = |p: &Path, e: std::io::Error| Error::UnwritablePath {
            path: p.to_path_buf(),
            source: e,
        };
        std::fs::create_dir_all(dir).map_err(|e| unwritable(dir, e))?;
        let mut out = Vec::new();
        for (name, body) in self.files() {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| unwritable(&path, e))?;
            out.push(path);
        }
        Ok(out)
    }
}
