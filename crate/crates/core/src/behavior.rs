//! Tracking-behavior labels for third-party transactions and their
//! prevalence across sites.
//!
//! Six categories, decided per transaction `t` to a third-party domain `T`:
//!
//! | category | rule |
//! |---|---|
//! | `BasicTracking` | `t` sends or sets an Identifier cookie scoped to `T` |
//! | `BasicTrackingByTracker` | as above, and `t` was initiated by another third party that is itself a basic tracker |
//! | `ThirdToThirdSync` | a third-party-owned identifier reaches `t`, and `t` carries its own identifier |
//! | `CookieForwarding` | same, but `t` carries no identifier of its own |
//! | `FirstToThirdSync` | the site's own identifier reaches `t`, and `t` carries its own identifier |
//! | `Analytics` | same, but `t` carries no identifier of its own |
//!
//! Any syncing label suppresses the two basic categories on the same
//! transaction, and `BasicTrackingByTracker` replaces `BasicTracking`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cookies::CookieClassification;
use crate::error::{Error, Result};
use crate::graph::{Initiator, RequestGraph};
use crate::model::{CookieKey, CrawlDataset, CrawlLabel, HttpTransaction, PageVisit};
use crate::psl::PublicSuffixTable;
use crate::sharing::SharingEvent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BehaviorCategory {
    BasicTracking,
    BasicTrackingByTracker,
    ThirdToThirdSync,
    CookieForwarding,
    FirstToThirdSync,
    Analytics,
}

impl BehaviorCategory {
    pub const ALL: [BehaviorCategory; 6] = [
        BehaviorCategory::BasicTracking,
        BehaviorCategory::BasicTrackingByTracker,
        BehaviorCategory::ThirdToThirdSync,
        BehaviorCategory::CookieForwarding,
        BehaviorCategory::FirstToThirdSync,
        BehaviorCategory::Analytics,
    ];

    /// Attribution order for single-category summaries; lower wins.
    pub fn precedence(self) -> u8 {
        match self {
            BehaviorCategory::ThirdToThirdSync => 0,
            BehaviorCategory::CookieForwarding => 1,
            BehaviorCategory::FirstToThirdSync => 2,
            BehaviorCategory::Analytics => 3,
            BehaviorCategory::BasicTrackingByTracker => 4,
            BehaviorCategory::BasicTracking => 5,
        }
    }

    pub fn is_syncing(self) -> bool {
        matches!(
            self,
            BehaviorCategory::ThirdToThirdSync | BehaviorCategory::CookieForwarding | BehaviorCategory::FirstToThirdSync
        )
    }

    pub fn is_basic(self) -> bool {
        matches!(self, BehaviorCategory::BasicTracking | BehaviorCategory::BasicTrackingByTracker)
    }
}

impl fmt::Display for BehaviorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// The highest-precedence category of a label set.
pub fn primary_category(cats: impl IntoIterator<Item = BehaviorCategory>) -> Option<BehaviorCategory> {
    cats.into_iter().min_by_key(|c| c.precedence())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasicTrackerScope {
    /// An initiator counts as a basic tracker if it is one anywhere in the crawl.
    #[default]
    Global,
    /// Only if it is one on the same page visit.
    PerPage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BehaviorConfig {
    pub basic_tracker_scope: BasicTrackerScope,
    /// Which crawl of the pair is labeled.
    pub measure_crawl: CrawlLabel,
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        Self {
            basic_tracker_scope: BasicTrackerScope::Global,
            measure_crawl: CrawlLabel::A,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Evidence {
    /// Identifier cookies of the receiving domain on the transaction.
    pub cookie_refs: Vec<CookieKey>,
    pub sharing_events: Vec<SharingEvent>,
    pub initiator: Initiator,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BehaviorLabel {
    pub transaction_id: String,
    pub category: BehaviorCategory,
    pub page_visit_id: String,
    pub receiver_domain: String,
    pub evidence: Evidence,
}

/// Everything the rules need about one page visit.
pub struct VisitContext<'a> {
    pub visit: &'a PageVisit,
    pub graph: &'a RequestGraph,
    pub cookies: &'a CookieClassification,
    /// Sharing events detected on this visit.
    pub events: &'a [SharingEvent],
    pub psl: &'a PublicSuffixTable,
    /// Domains treated as basic trackers for initiator checks.
    pub basic_trackers: &'a BTreeSet<String>,
}

fn third_party_domain(t: &HttpTransaction, visit: &PageVisit, psl: &PublicSuffixTable) -> Option<String> {
    t.registrable_domain(psl)
        .ok()
        .filter(|d| *d != visit.first_party_domain)
}

/// Identifier cookies scoped to `domain` that `t` sends or sets.
pub fn own_identifier_cookies(
    t: &HttpTransaction,
    domain: &str,
    cls: &CookieClassification,
    psl: &PublicSuffixTable,
) -> Vec<CookieKey> {
    let keys: BTreeSet<CookieKey> = t
        .cookies_sent
        .iter()
        .chain(&t.cookies_set)
        .map(|c| c.cookie_key())
        .filter(|k| cls.is_identifier(k) && psl.registrable_domain(&k.host).ok().as_deref() == Some(domain))
        .collect();
    keys.into_iter().collect()
}

fn is_basic(t: &HttpTransaction, visit: &PageVisit, cls: &CookieClassification, psl: &PublicSuffixTable) -> bool {
    third_party_domain(t, visit, psl).is_some_and(|d| !own_identifier_cookies(t, &d, cls, psl).is_empty())
}

/// Third-party domains holding an Identifier cookie they send or set as a
/// third party somewhere in `d`.
pub fn basic_trackers(d: &CrawlDataset, cls: &CookieClassification, psl: &PublicSuffixTable) -> BTreeSet<String> {
    d.page_visits().iter().flat_map(|v| visit_basic_trackers(v, cls, psl)).collect()
}

pub fn visit_basic_trackers(visit: &PageVisit, cls: &CookieClassification, psl: &PublicSuffixTable) -> BTreeSet<String> {
    visit
        .transactions
        .iter()
        .filter(|t| is_basic(t, visit, cls, psl))
        .filter_map(|t| t.registrable_domain(psl).ok())
        .collect()
}

pub fn rule_basic(t: &HttpTransaction, ctx: &VisitContext<'_>) -> bool {
    is_basic(t, ctx.visit, ctx.cookies, ctx.psl)
}

fn initiator(t: &HttpTransaction, ctx: &VisitContext<'_>) -> Initiator {
    ctx.graph
        .position(&t.transaction_id)
        .map_or_else(Initiator::unknown, |pos| ctx.graph.initiator_of(pos, ctx.visit, ctx.psl))
}

pub fn rule_basic_by_tracker(t: &HttpTransaction, ctx: &VisitContext<'_>) -> bool {
    if !rule_basic(t, ctx) {
        return false;
    }
    let Ok(own) = t.registrable_domain(ctx.psl) else {
        return false;
    };
    initiator(t, ctx)
        .third_party_domain()
        .is_some_and(|d| d != own && ctx.basic_trackers.contains(d))
}

/// Sharing events received by `t` whose identifier is owned by a party
/// other than `t`, split by whether the owner is the visited site.
fn inbound_events<'c>(t: &HttpTransaction, ctx: &'c VisitContext<'_>, first_party_source: bool) -> Vec<&'c SharingEvent> {
    let Some(receiver) = third_party_domain(t, ctx.visit, ctx.psl) else {
        return Vec::new();
    };
    ctx.events
        .iter()
        .filter(|e| e.transaction_id == t.transaction_id && e.receiver_domain == receiver)
        .filter(|e| (e.sender_domain == ctx.visit.first_party_domain) == first_party_source)
        .collect()
}

fn has_own_identifier(t: &HttpTransaction, ctx: &VisitContext<'_>) -> bool {
    third_party_domain(t, ctx.visit, ctx.psl).is_some_and(|d| !own_identifier_cookies(t, &d, ctx.cookies, ctx.psl).is_empty())
}

pub fn rule_syncing(t: &HttpTransaction, ctx: &VisitContext<'_>) -> Option<BehaviorCategory> {
    if inbound_events(t, ctx, false).is_empty() {
        return None;
    }
    Some(if has_own_identifier(t, ctx) {
        BehaviorCategory::ThirdToThirdSync
    } else {
        BehaviorCategory::CookieForwarding
    })
}

pub fn rule_first_to_third(t: &HttpTransaction, ctx: &VisitContext<'_>) -> Option<BehaviorCategory> {
    if inbound_events(t, ctx, true).is_empty() {
        return None;
    }
    Some(if has_own_identifier(t, ctx) {
        BehaviorCategory::FirstToThirdSync
    } else {
        BehaviorCategory::Analytics
    })
}

pub fn classify_request(t: &HttpTransaction, ctx: &VisitContext<'_>) -> Vec<BehaviorLabel> {
    let Some(receiver) = third_party_domain(t, ctx.visit, ctx.psl) else {
        return Vec::new();
    };
    let own = own_identifier_cookies(t, &receiver, ctx.cookies, ctx.psl);
    let initiator = initiator(t, ctx);
    let label = |category, events: Vec<&SharingEvent>| BehaviorLabel {
        transaction_id: t.transaction_id.clone(),
        category,
        page_visit_id: ctx.visit.page_visit_id.clone(),
        receiver_domain: receiver.clone(),
        evidence: Evidence {
            cookie_refs: own.clone(),
            sharing_events: events.into_iter().cloned().collect(),
            initiator: initiator.clone(),
        },
    };

    let mut out = Vec::new();
    if let Some(cat) = rule_syncing(t, ctx) {
        out.push(label(cat, inbound_events(t, ctx, false)));
    }
    if let Some(cat) = rule_first_to_third(t, ctx) {
        out.push(label(cat, inbound_events(t, ctx, true)));
    }
    let suppressed = out.iter().any(|l| l.category.is_syncing());
    if !suppressed && !own.is_empty() {
        let cat = if rule_basic_by_tracker(t, ctx) {
            BehaviorCategory::BasicTrackingByTracker
        } else {
            BehaviorCategory::BasicTracking
        };
        out.push(label(cat, Vec::new()));
    }
    out.sort();
    out
}

/// Labels for every transaction of a visit, in transaction order.
pub fn classify_visit(ctx: &VisitContext<'_>) -> Vec<BehaviorLabel> {
    ctx.visit.transactions.iter().flat_map(|t| classify_request(t, ctx)).collect()
}

/// Checks that a label's own evidence supports its category.
pub fn evidence_supports(label: &BehaviorLabel, first_party_domain: &str) -> bool {
    let ev = &label.evidence;
    let has_own = !ev.cookie_refs.is_empty();
    let events_ok = |first_party: bool| {
        !ev.sharing_events.is_empty()
            && ev.sharing_events.iter().all(|e| {
                e.transaction_id == label.transaction_id
                    && e.receiver_domain == label.receiver_domain
                    && (e.sender_domain == first_party_domain) == first_party
            })
    };
    match label.category {
        BehaviorCategory::BasicTracking => has_own,
        BehaviorCategory::BasicTrackingByTracker => {
            has_own && ev.initiator.third_party_domain().is_some_and(|d| d != label.receiver_domain)
        }
        BehaviorCategory::ThirdToThirdSync => has_own && events_ok(false),
        BehaviorCategory::CookieForwarding => !has_own && events_ok(false),
        BehaviorCategory::FirstToThirdSync => has_own && events_ok(true),
        BehaviorCategory::Analytics => !has_own && events_ok(true),
    }
}

/// Registrable domain to company name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CompanyMap(BTreeMap<String, String>);

impl CompanyMap {
    /// Two columns per line: domain, then company name (tab- or
    /// whitespace-separated; the company may contain spaces). `#` starts a
    /// comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let split = line.split_once('\t').or_else(|| line.split_once(char::is_whitespace));
            let (domain, company) = match split {
                Some((d, c)) if !d.trim().is_empty() && !c.trim().is_empty() => (d.trim(), c.trim()),
                _ => {
                    return Err(Error::MappingFileInvalid {
                        line: i + 1,
                        message: "expected two columns: domain and company".into(),
                    })
                }
            };
            if !domain.contains('.') || domain.contains('/') {
                return Err(Error::MappingFileInvalid {
                    line: i + 1,
                    message: format!("{domain:?} is not a domain name"),
                });
            }
            map.insert(domain.to_ascii_lowercase(), company.to_string());
        }
        Ok(Self(map))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::UnreadableInput)?;
        Self::parse(&text)
    }

    pub fn company(&self, domain: &str) -> Option<&str> {
        self.0.get(domain).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteCount {
    pub name: String,
    pub sites: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryPrevalence {
    pub category: BehaviorCategory,
    pub sites: usize,
    pub site_fraction: f64,
    pub transactions: usize,
    pub top_trackers: Vec<SiteCount>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentTypeShare {
    pub content_type: String,
    pub requests: usize,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceReport {
    pub total_sites: usize,
    pub labeled_transactions: usize,
    pub categories: Vec<CategoryPrevalence>,
    /// Sites tracked per third-party domain, any category.
    pub trackers: Vec<SiteCount>,
    /// Present only when a company mapping was supplied.
    pub companies: Option<Vec<SiteCount>>,
    pub content_types: Vec<ContentTypeShare>,
    /// Analytics receivers that also appear on other sites.
    pub analytics_receivers_cross_site: Vec<String>,
}

pub const TOP_TRACKERS: usize = 10;

/// Media type without parameters, lowercased; `"unknown"` when absent.
pub fn media_type(t: &HttpTransaction) -> String {
    t.content_type()
        .filter(|ct| !ct.is_empty())
        .unwrap_or_else(|| "unknown".to_string())
}

fn ranked(counts: BTreeMap<String, BTreeSet<String>>, limit: Option<usize>) -> Vec<SiteCount> {
    let mut v: Vec<SiteCount> = counts
        .into_iter()
        .map(|(name, sites)| SiteCount { name, sites: sites.len() })
        .collect();
    v.sort_by(|a, b| b.sites.cmp(&a.sites).then_with(|| a.name.cmp(&b.name)));
    if let Some(n) = limit {
        v.truncate(n);
    }
    v
}

fn fraction(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

pub fn aggregate(labels: &[BehaviorLabel], d: &CrawlDataset, mapping: Option<&CompanyMap>) -> PrevalenceReport {
    let site_of: HashMap<&str, &str> = d
        .page_visits()
        .iter()
        .filter(|v| !v.is_orphan())
        .map(|v| (v.page_visit_id.as_str(), v.first_party_domain.as_str()))
        .collect();
    let total_sites = d.sites().len();

    // Per category: sites, pages, and tracker domain to the sites it was seen on.
    type Tally<'a> = (BTreeSet<&'a str>, BTreeSet<&'a str>, BTreeMap<String, BTreeSet<String>>);
    let mut per_cat: BTreeMap<BehaviorCategory, Tally> = BTreeMap::new();
    let mut trackers: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut companies: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut labeled: BTreeSet<&str> = BTreeSet::new();
    let mut analytics_sites: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut receiver_sites: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();

    for l in labels {
        let Some(&site) = site_of.get(l.page_visit_id.as_str()) else {
            continue;
        };
        let entry = per_cat.entry(l.category).or_default();
        entry.0.insert(site);
        entry.1.insert(&l.transaction_id);
        entry.2.entry(l.receiver_domain.clone()).or_default().insert(site.to_string());
        trackers.entry(l.receiver_domain.clone()).or_default().insert(site.to_string());
        if let Some(c) = mapping.and_then(|m| m.company(&l.receiver_domain)) {
            companies.entry(c.to_string()).or_default().insert(site.to_string());
        }
        labeled.insert(&l.transaction_id);
        receiver_sites.entry(&l.receiver_domain).or_default().insert(site);
        if l.category == BehaviorCategory::Analytics {
            analytics_sites.entry(&l.receiver_domain).or_default().insert(site);
        }
    }

    let categories = BehaviorCategory::ALL
        .iter()
        .map(|&category| {
            let (sites, txs, top) = per_cat.remove(&category).unwrap_or_default();
            CategoryPrevalence {
                category,
                sites: sites.len(),
                site_fraction: fraction(sites.len(), total_sites),
                transactions: txs.len(),
                top_trackers: ranked(top, Some(TOP_TRACKERS)),
            }
        })
        .collect();

    let mut ct_counts: BTreeMap<String, usize> = BTreeMap::new();
    for (_, t) in d.transactions() {
        if labeled.contains(t.transaction_id.as_str()) {
            *ct_counts.entry(media_type(t)).or_default() += 1;
        }
    }
    let mut content_types: Vec<ContentTypeShare> = ct_counts
        .into_iter()
        .map(|(content_type, requests)| ContentTypeShare {
            content_type,
            requests,
            share: fraction(requests, labeled.len()),
        })
        .collect();
    content_types.sort_by(|a, b| b.requests.cmp(&a.requests).then_with(|| a.content_type.cmp(&b.content_type)));

    let analytics_receivers_cross_site = analytics_sites
        .keys()
        .filter(|r| receiver_sites.get(*r).is_some_and(|s| s.len() > 1))
        .map(|r| r.to_string())
        .collect();

    PrevalenceReport {
        total_sites,
        labeled_transactions: labeled.len(),
        categories,
        trackers: ranked(trackers, None),
        companies: mapping.map(|_| ranked(companies, None)),
        content_types,
        analytics_receivers_cross_site,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cookies::{classify_cookies, CookieConfig};
    use crate::graph::DEFAULT_REDIRECT_WINDOW_MS;
    use crate::model::{pair_crawls, CookieInstance, Headers};
    use crate::sharing::{SharingConfig, SharingDetector, Technique};
    use url::Url;

    fn tx(id: &str, url: &str, ts: i64) -> HttpTransaction {
        HttpTransaction {
            transaction_id: id.into(),
            page_visit_id: "v1".into(),
            url: Url::parse(url).unwrap(),
            method: "GET".into(),
            request_headers: Headers::default(),
            response_status: Some(200),
            response_headers: Headers::default(),
            cookies_sent: vec![],
            cookies_set: vec![],
            body: None,
            timestamp: ts,
        }
    }

    fn visit(txs: Vec<HttpTransaction>) -> PageVisit {
        PageVisit {
            page_visit_id: "v1".into(),
            first_party_url: "http://site.com/".into(),
            first_party_domain: "site.com".into(),
            transactions: txs,
        }
    }

    /// Builds both crawls from `make(value_suffix)` so identifier cookies
    /// differ across crawls, then labels crawl A.
    fn label_fixture(make: impl Fn(&str) -> Vec<HttpTransaction>) -> Vec<BehaviorLabel> {
        let build = |label, suffix: &str| {
            let v = visit(make(suffix));
            CrawlDataset::from_visits(label, vec![v], Vec::new())
        };
        let psl = PublicSuffixTable::naive();
        let paired = pair_crawls(build(CrawlLabel::A, "aaaa"), build(CrawlLabel::B, "bbbb"));
        let cls = classify_cookies(&paired, &CookieConfig::default());
        let scfg = SharingConfig::default();
        let d = &paired.crawl_a;
        let det = SharingDetector::new(d, &cls, &psl, &scfg);
        let trackers = basic_trackers(d, &cls, &psl);
        d.page_visits()
            .iter()
            .flat_map(|v| {
                let graph = RequestGraph::build(v, DEFAULT_REDIRECT_WINDOW_MS);
                let events = det.detect_visit(v, &graph);
                let ctx = VisitContext {
                    visit: v,
                    graph: &graph,
                    cookies: &cls,
                    events: &events,
                    psl: &psl,
                    basic_trackers: &trackers,
                };
                classify_visit(&ctx)
            })
            .collect()
    }

    fn cats(labels: &[BehaviorLabel], id: &str) -> Vec<BehaviorCategory> {
        labels.iter().filter(|l| l.transaction_id == id).map(|l| l.category).collect()
    }

    fn with_referer(mut t: HttpTransaction, r: &str) -> HttpTransaction {
        t.request_headers.push("Referer", r);
        t
    }

    #[test]
    fn basic_tracking_from_first_party_initiator() {
        let labels = label_fixture(|s| {
            let mut t = with_referer(tx("t1", "http://px.tracker.com/p.gif", 10), "http://site.com/");
            t.cookies_sent.push(CookieInstance::new("tracker.com", "uid", &format!("uid-{s}-12345")));
            vec![tx("doc", "http://site.com/", 1), t]
        });
        assert_eq!(cats(&labels, "t1"), [BehaviorCategory::BasicTracking]);
        assert!(labels.iter().all(|l| evidence_supports(l, "site.com")));
    }

    #[test]
    fn first_party_and_safe_cookies_are_not_tracking() {
        let labels = label_fixture(|_| {
            let mut fp = tx("fp", "http://site.com/x", 5);
            fp.cookies_sent.push(CookieInstance::new("site.com", "sess", "same-value-123"));
            let mut t = tx("t1", "http://px.tracker.com/p.gif", 10);
            t.cookies_sent.push(CookieInstance::new("tracker.com", "lang", "en-US-constant"));
            vec![fp, t]
        });
        assert!(labels.is_empty());
    }

    #[test]
    fn basic_tracker_included_by_tracker() {
        let labels = label_fixture(|s| {
            let mut a = with_referer(tx("a", "http://ad.alpha.com/frame", 10), "http://site.com/");
            a.cookies_sent.push(CookieInstance::new("alpha.com", "id", &format!("alpha-{s}-0001")));
            let mut b = with_referer(tx("b", "http://px.beta.com/p.gif", 20), "http://ad.alpha.com/frame");
            b.cookies_sent.push(CookieInstance::new("beta.com", "id", &format!("beta-{s}-0002")));
            vec![a, b]
        });
        assert_eq!(cats(&labels, "a"), [BehaviorCategory::BasicTracking]);
        assert_eq!(cats(&labels, "b"), [BehaviorCategory::BasicTrackingByTracker]);
    }

    #[test]
    fn unknown_initiator_is_plain_basic() {
        let labels = label_fixture(|s| {
            let mut a = tx("a", "http://ad.alpha.com/frame", 10);
            a.cookies_sent.push(CookieInstance::new("alpha.com", "id", &format!("alpha-{s}-0001")));
            let mut b = tx("b", "http://px.beta.com/p.gif", 20);
            b.cookies_sent.push(CookieInstance::new("beta.com", "id", &format!("beta-{s}-0002")));
            vec![a, b]
        });
        assert_eq!(cats(&labels, "b"), [BehaviorCategory::BasicTracking]);
    }

    fn sync_fixture(receiver_has_cookie: bool) -> Vec<BehaviorLabel> {
        label_fixture(move |s| {
            let value = format!("alpha{s}identifier");
            let mut a = with_referer(tx("a", "http://ad.alpha.com/x", 10), "http://site.com/");
            a.cookies_set.push(CookieInstance::new("alpha.com", "id", &value));
            let mut b = with_referer(tx("b", &format!("http://sync.beta.com/s?partner_uid={value}"), 20), "http://ad.alpha.com/x");
            if receiver_has_cookie {
                b.cookies_sent.push(CookieInstance::new("beta.com", "bid", &format!("beta-{s}-0002")));
            }
            vec![a, b]
        })
    }

    #[test]
    fn third_to_third_sync_suppresses_basic() {
        let labels = sync_fixture(true);
        assert_eq!(cats(&labels, "b"), [BehaviorCategory::ThirdToThirdSync]);
        let l = labels.iter().find(|l| l.transaction_id == "b").unwrap();
        assert_eq!(l.evidence.sharing_events[0].technique, Technique::DS);
        assert!(evidence_supports(l, "site.com"));
    }

    #[test]
    fn cookieless_receiver_is_forwarding() {
        let labels = sync_fixture(false);
        assert_eq!(cats(&labels, "b"), [BehaviorCategory::CookieForwarding]);
    }

    #[test]
    fn first_party_identifier_to_third_party() {
        for with_own in [false, true] {
            let labels = label_fixture(move |s| {
                let value = format!("fp{s}identifier");
                let mut doc = tx("doc", "http://site.com/", 1);
                doc.cookies_set.push(CookieInstance::new("site.com", "_fpid", &value));
                let mut g = with_referer(tx("g", &format!("http://collect.metrics.com/c?cid={value}"), 10), "http://site.com/");
                if with_own {
                    g.cookies_set.push(CookieInstance::new("metrics.com", "mid", &format!("m-{s}-000001")));
                }
                vec![doc, g]
            });
            let want = if with_own {
                BehaviorCategory::FirstToThirdSync
            } else {
                BehaviorCategory::Analytics
            };
            assert_eq!(cats(&labels, "g"), [want]);
        }
    }

    #[test]
    fn precedence_order() {
        use BehaviorCategory::*;
        assert_eq!(primary_category([BasicTracking, Analytics]), Some(Analytics));
        assert_eq!(primary_category([CookieForwarding, ThirdToThirdSync]), Some(ThirdToThirdSync));
        assert_eq!(primary_category([]), None);
    }

    #[test]
    fn company_map_parsing() {
        let m = CompanyMap::parse("# comment\ndoubleclick.net\tGoogle LLC\nfacebook.com Meta Platforms\n").unwrap();
        assert_eq!(m.company("doubleclick.net"), Some("Google LLC"));
        assert_eq!(m.company("facebook.com"), Some("Meta Platforms"));
        assert!(matches!(
            CompanyMap::parse("ok.com A\nbroken\n"),
            Err(Error::MappingFileInvalid { line: 2, .. })
        ));
    }

    #[test]
    fn aggregate_empty_and_shares() {
        let d = CrawlDataset::new(CrawlLabel::A, vec![visit(vec![tx("t", "http://x.com/", 1)])], vec![]);
        let r = aggregate(&[], &d, None);
        assert!(r.categories.iter().all(|c| c.site_fraction == 0.0));
        assert!(r.companies.is_none());
        assert_eq!(r.total_sites, 1);
    }
}
