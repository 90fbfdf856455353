//! End-to-end orchestration over a pair of crawls.
//!
//! Cross-crawl steps (cookie classification, the global basic-tracker set,
//! follow-up detection) run once; everything per page visit is mapped with
//! the chosen [`Parallelism`]. Results are collected in visit order, so the
//! output is identical for any worker count.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::behavior::{self, BasicTrackerScope, BehaviorLabel, VisitContext};
use crate::config::RunConfig;
use crate::cookies::{classify_cookies, CookieClassification};
use crate::filter::{trackers_follow_up, BlockVerdict, Blocker, ListConfig};
use crate::graph::RequestGraph;
use crate::model::{CrawlDataset, PairedCrawls};
use crate::par::Parallelism;
use crate::psl::PublicSuffixTable;
use crate::report::{compare, ComparisonReport, ListVerdicts};
use crate::sharing::{SharingDetector, SharingEvent};

#[derive(Debug, Clone, Serialize)]
pub struct Analysis {
    #[serde(skip)]
    pub cookies: CookieClassification,
    pub sharing_events: Vec<SharingEvent>,
    pub labels: Vec<BehaviorLabel>,
    pub redirect_chains: usize,
    pub ambiguity_warnings: usize,
}

impl Analysis {
    pub fn labels_by_transaction(&self) -> BTreeMap<&str, Vec<&BehaviorLabel>> {
        let mut out: BTreeMap<&str, Vec<&BehaviorLabel>> = BTreeMap::new();
        for l in &self.labels {
            out.entry(l.transaction_id.as_str()).or_default().push(l);
        }
        out
    }
}

struct VisitOutput {
    events: Vec<SharingEvent>,
    labels: Vec<BehaviorLabel>,
    chains: usize,
    warnings: usize,
}

/// The crawl that labels and verdicts are computed on.
pub fn measured<'p>(paired: &'p PairedCrawls, cfg: &RunConfig) -> &'p CrawlDataset {
    paired.crawl(cfg.behavior.measure_crawl)
}

pub fn analyze(paired: &PairedCrawls, psl: &PublicSuffixTable, cfg: &RunConfig, par: Parallelism) -> Analysis {
    let cookies = classify_cookies(paired, &cfg.cookies);
    let d = measured(paired, cfg);
    let detector = SharingDetector::new(d, &cookies, psl, &cfg.sharing);
    let global_trackers = behavior::basic_trackers(d, &cookies, psl);
    let window = cfg.graph.redirect_window_ms;

    let outputs = par.map(d.page_visits(), |visit| {
        let graph = RequestGraph::build(visit, window);
        let events = detector.detect_visit(visit, &graph);
        let local;
        let trackers = match cfg.behavior.basic_tracker_scope {
            BasicTrackerScope::Global => &global_trackers,
            BasicTrackerScope::PerPage => {
                local = behavior::visit_basic_trackers(visit, &cookies, psl);
                &local
            }
        };
        let ctx = VisitContext {
            visit,
            graph: &graph,
            cookies: &cookies,
            events: &events,
            psl,
            basic_trackers: trackers,
        };
        let labels = if visit.is_orphan() {
            Vec::new()
        } else {
            behavior::classify_visit(&ctx)
        };
        VisitOutput {
            labels,
            chains: graph.chains().iter().filter(|c| c.steps.len() > 1).count(),
            warnings: graph.ambiguity_warnings(),
            events,
        }
    });

    let mut analysis = Analysis {
        cookies: CookieClassification::default(),
        sharing_events: Vec::new(),
        labels: Vec::new(),
        redirect_chains: 0,
        ambiguity_warnings: 0,
    };
    for o in outputs {
        analysis.sharing_events.extend(o.events);
        analysis.labels.extend(o.labels);
        analysis.redirect_chains += o.chains;
        analysis.ambiguity_warnings += o.warnings;
    }
    analysis.cookies = cookies;
    analysis
}

/// Verdicts for one list configuration over a whole crawl, with follow-up
/// flags set.
pub fn list_verdicts(
    d: &CrawlDataset,
    cookies: &CookieClassification,
    blocker: &Blocker,
    list: ListConfig,
    psl: &PublicSuffixTable,
    cfg: &RunConfig,
    par: Parallelism,
) -> ListVerdicts {
    let window = cfg.graph.redirect_window_ms;
    let per_visit = par.map(d.page_visits(), |visit| {
        let graph = RequestGraph::build(visit, window);
        blocker.visit_verdicts(list, visit, &graph, psl)
    });
    let mut verdicts: BTreeMap<String, BlockVerdict> = per_visit.into_iter().flatten().collect();
    let follow_ups = {
        let index: HashMap<&str, &BlockVerdict> = verdicts.iter().map(|(k, v)| (k.as_str(), v)).collect();
        trackers_follow_up(d, &index, cookies)
    };
    for id in follow_ups {
        if let Some(v) = verdicts.get_mut(&id) {
            v.follow_up = true;
        }
    }
    ListVerdicts { list, verdicts }
}

pub fn all_list_verdicts(
    d: &CrawlDataset,
    cookies: &CookieClassification,
    blocker: &Blocker,
    psl: &PublicSuffixTable,
    cfg: &RunConfig,
    par: Parallelism,
) -> Vec<ListVerdicts> {
    ListConfig::ALL
        .iter()
        .map(|&list| list_verdicts(d, cookies, blocker, list, psl, cfg, par))
        .collect()
}

/// Full comparison: analysis, verdicts for every list configuration, and
/// the joined report.
pub fn run_comparison(
    paired: &PairedCrawls,
    blocker: &Blocker,
    psl: &PublicSuffixTable,
    cfg: &RunConfig,
    par: Parallelism,
) -> (Analysis, Vec<ListVerdicts>, ComparisonReport) {
    let analysis = analyze(paired, psl, cfg, par);
    let d = measured(paired, cfg);
    let lists = all_list_verdicts(d, &analysis.cookies, blocker, psl, cfg, par);
    let report = compare(&analysis.labels, &lists, d, psl);
    (analysis, lists, report)
}
