//! Ground truth for synthetic corpora and scoring against it.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::scenario::PlantedCounts;
use crate::behavior::{BehaviorCategory, BehaviorLabel};
use crate::error::{Error, Result};
use crate::filter::{BlockStatus, BlockVerdict};
use crate::model::CrawlLabel;
use crate::sharing::{SharingEvent, Technique};

/// What the generator planted on one transaction of the measured crawl.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthEntry {
    pub transaction_id: String,
    pub categories: Vec<BehaviorCategory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub technique: Option<Technique>,
    pub verdict: BlockStatus,
    pub follow_up: bool,
}

impl TruthEntry {
    pub fn unlabeled(transaction_id: &str) -> Self {
        Self {
            transaction_id: transaction_id.to_string(),
            categories: Vec::new(),
            technique: None,
            verdict: BlockStatus::Allowed,
            follow_up: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub measure_crawl: CrawlLabel,
    pub planted: PlantedCounts,
    /// Every transaction of the measured crawl, sorted by id.
    pub transactions: Vec<TruthEntry>,
}

impl GroundTruth {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("truth always serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("ground truth: {e}")))
    }

    pub fn entry(&self, id: &str) -> Option<&TruthEntry> {
        self.transactions
            .binary_search_by(|e| e.transaction_id.as_str().cmp(id))
            .ok()
            .map(|i| &self.transactions[i])
    }

    /// Planted `(transaction, category)` pairs.
    pub fn labels(&self) -> BTreeSet<(&str, BehaviorCategory)> {
        self.transactions
            .iter()
            .flat_map(|e| e.categories.iter().map(move |&c| (e.transaction_id.as_str(), c)))
            .collect()
    }

    pub fn count(&self, c: BehaviorCategory) -> usize {
        self.transactions.iter().filter(|e| e.categories.contains(&c)).count()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
}

impl CategoryScore {
    fn finish(mut self) -> Self {
        self.precision = match self.tp + self.fp {
            0 if self.fn_ == 0 => 1.0,
            0 => 0.0,
            n => self.tp as f64 / n as f64,
        };
        self.recall = match self.tp + self.fn_ {
            0 => 1.0,
            n => self.tp as f64 / n as f64,
        };
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub categories: BTreeMap<BehaviorCategory, CategoryScore>,
    /// Share of transactions whose technique set is exactly the planted one.
    pub technique_accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub follow_up_accuracy: Option<f64>,
}

impl Score {
    pub fn min_precision(&self) -> f64 {
        self.categories.values().map(|c| c.precision).fold(1.0, f64::min)
    }

    pub fn min_recall(&self) -> f64 {
        self.categories.values().map(|c| c.recall).fold(1.0, f64::min)
    }
}

fn ratio(hits: usize, n: usize) -> f64 {
    if n == 0 {
        1.0
    } else {
        hits as f64 / n as f64
    }
}

/// Scores predicted labels, sharing events and (optionally) block verdicts
/// against `truth`. Predictions on transactions the truth does not know
/// mean the corpus and the predictions come from different runs.
pub fn score(
    truth: &GroundTruth,
    labels: &[BehaviorLabel],
    events: &[SharingEvent],
    verdicts: Option<&BTreeMap<String, BlockVerdict>>,
) -> Result<Score> {
    let unknown = |id: &str| Error::CorpusMismatch(format!("transaction {id} is not in the ground truth"));
    for l in labels {
        truth.entry(&l.transaction_id).ok_or_else(|| unknown(&l.transaction_id))?;
    }
    let predicted: BTreeSet<(&str, BehaviorCategory)> =
        labels.iter().map(|l| (l.transaction_id.as_str(), l.category)).collect();
    let planted = truth.labels();

    let mut categories: BTreeMap<BehaviorCategory, CategoryScore> =
        BehaviorCategory::ALL.iter().map(|&c| (c, CategoryScore::default())).collect();
    for p in &predicted {
        let s = categories.get_mut(&p.1).expect("all categories present");
        if planted.contains(p) {
            s.tp += 1;
        } else {
            s.fp += 1;
        }
    }
    for p in planted.difference(&predicted) {
        categories.get_mut(&p.1).expect("all categories present").fn_ += 1;
    }
    let categories = categories.into_iter().map(|(c, s)| (c, s.finish())).collect();

    let mut techniques: BTreeMap<&str, BTreeSet<Technique>> = BTreeMap::new();
    for e in events {
        truth.entry(&e.transaction_id).ok_or_else(|| unknown(&e.transaction_id))?;
        techniques.entry(e.transaction_id.as_str()).or_default().insert(e.technique);
    }
    let with_technique: Vec<&TruthEntry> = truth.transactions.iter().filter(|e| e.technique.is_some()).collect();
    let technique_hits = with_technique
        .iter()
        .filter(|e| {
            techniques
                .get(e.transaction_id.as_str())
                .is_some_and(|set| set.len() == 1 && set.contains(&e.technique.unwrap()))
        })
        .count();

    let (verdict_accuracy, follow_up_accuracy) = match verdicts {
        None => (None, None),
        Some(v) => {
            let n = truth.transactions.len();
            let mut status_hits = 0;
            let mut follow_hits = 0;
            for e in &truth.transactions {
                let got = v.get(&e.transaction_id);
                status_hits += usize::from(got.map_or(BlockStatus::Allowed, |g| g.status) == e.verdict);
                follow_hits += usize::from(got.is_some_and(|g| g.follow_up) == e.follow_up);
            }
            (Some(ratio(status_hits, n)), Some(ratio(follow_hits, n)))
        }
    };

    Ok(Score {
        categories,
        technique_accuracy: ratio(technique_hits, with_technique.len()),
        verdict_accuracy,
        follow_up_accuracy,
    })
}
