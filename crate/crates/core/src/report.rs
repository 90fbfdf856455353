//! Behavior labels joined with filter-list verdicts: what each list
//! configuration blocks, what it misses, and why the missed cookies look
//! innocuous.
//!
//! A transaction is *missed* by a list when it carries at least one
//! behavior label, its verdict is Allowed, and it is not a follow-up of a
//! blocked request.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::behavior::{media_type, primary_category, BehaviorCategory, BehaviorLabel};
use crate::error::{Error, Result};
use crate::filter::{BlockVerdict, ListConfig};
use crate::model::{CookieAction, CookieKey, CrawlDataset, HttpTransaction, PageVisit};
use crate::psl::{normalize_host, PublicSuffixTable};

/// Verdicts of one list configuration over a whole crawl, follow-up flags
/// already applied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListVerdicts {
    pub list: ListConfig,
    pub verdicts: BTreeMap<String, BlockVerdict>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VennCounts {
    pub behavior_only: usize,
    pub list_only: usize,
    pub both: usize,
}

impl VennCounts {
    pub fn total(&self) -> usize {
        self.behavior_only + self.list_only + self.both
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissedRequest {
    pub transaction_id: String,
    pub page_visit_id: String,
    pub categories: Vec<BehaviorCategory>,
    pub primary_category: BehaviorCategory,
    pub hostname: String,
    pub content_type: String,
    /// Carries a cookie first set while its own site was the visited page.
    pub fp_context: bool,
    /// Sent to a subdomain with a cookie scoped to the registrable domain.
    pub large_scope: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Share {
    pub name: String,
    pub count: usize,
    pub share: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CookieExplanations {
    pub missed_requests: usize,
    pub fp_context_requests: usize,
    pub fp_context_share: f64,
    pub third_party_cookies: usize,
    pub large_scope_cookies: usize,
    pub large_scope_share: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceCookie {
    pub host: String,
    pub name: String,
    pub expiry: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissedService {
    pub hostname: String,
    pub requests: usize,
    pub cookies: Vec<ServiceCookie>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListComparison {
    pub list: ListConfig,
    pub venn: VennCounts,
    pub blocked: usize,
    pub follow_up: usize,
    pub missed: Vec<MissedRequest>,
    pub missed_by_content_type: Vec<Share>,
    pub missed_by_category: Vec<Share>,
    pub cookie_explanations: CookieExplanations,
    pub top_missed_services: Vec<MissedService>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub third_party_transactions: usize,
    pub labeled_transactions: usize,
    pub lists: Vec<ListComparison>,
}

pub const TOP_MISSED_SERVICES: usize = 20;

/// Section names, one table each in tabular export.
pub const REPORT_SECTIONS: [&str; 6] = [
    "venn",
    "missed",
    "missed_by_content_type",
    "missed_by_category",
    "cookie_explanations",
    "top_missed_services",
];

fn share(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

fn shares(counts: BTreeMap<String, usize>, total: usize) -> Vec<Share> {
    let mut v: Vec<Share> = counts
        .into_iter()
        .map(|(name, count)| Share {
            name,
            count,
            share: share(count, total),
        })
        .collect();
    v.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.name.cmp(&b.name)));
    v
}

/// `(host, key)` pairs whose earliest `Set` happened on a visit to the
/// cookie's own site.
fn first_party_context_cookies(d: &CrawlDataset, psl: &PublicSuffixTable) -> BTreeSet<CookieKey> {
    let mut earliest: BTreeMap<CookieKey, Option<&str>> = BTreeMap::new();
    for e in d.journal() {
        if e.action == CookieAction::Set {
            earliest.entry(e.cookie.cookie_key()).or_insert(e.page_visit_id.as_deref());
        }
    }
    earliest
        .into_iter()
        .filter(|(key, visit)| {
            let site = visit.and_then(|v| d.visit(v)).map(|v| v.first_party_domain.as_str());
            site.is_some() && psl.registrable_domain(&key.host).ok().as_deref() == site
        })
        .map(|(k, _)| k)
        .collect()
}

struct Context<'a> {
    psl: &'a PublicSuffixTable,
    categories: BTreeMap<&'a str, BTreeSet<BehaviorCategory>>,
    third_party: Vec<(&'a PageVisit, &'a HttpTransaction)>,
    fp_context: BTreeSet<CookieKey>,
}

fn registrable_scope(cookie_host: &str, psl: &PublicSuffixTable) -> bool {
    let host = normalize_host(cookie_host);
    psl.registrable_domain(&host).is_ok_and(|d| d == host)
}

impl<'a> Context<'a> {
    fn compare_list(&self, lv: &ListVerdicts) -> ListComparison {
        let allowed = BlockVerdict::allowed();
        let verdict = |id: &str| lv.verdicts.get(id).unwrap_or(&allowed);

        let mut venn = VennCounts::default();
        let mut missed_txs = Vec::new();
        for &(v, t) in &self.third_party {
            let labeled = self.categories.contains_key(t.transaction_id.as_str());
            let vd = verdict(&t.transaction_id);
            match (labeled, vd.is_blocked()) {
                (true, true) => venn.both += 1,
                (true, false) => {
                    venn.behavior_only += 1;
                    if !vd.follow_up {
                        missed_txs.push((v, t));
                    }
                }
                (false, true) => venn.list_only += 1,
                (false, false) => {}
            }
        }
        let blocked = lv.verdicts.values().filter(|v| v.is_blocked()).count();
        let follow_up = lv.verdicts.values().filter(|v| v.follow_up).count();

        let mut missed = Vec::with_capacity(missed_txs.len());
        let mut by_type: BTreeMap<String, usize> = BTreeMap::new();
        let mut by_category: BTreeMap<String, usize> = BTreeMap::new();
        let mut third_party_cookies: BTreeSet<CookieKey> = BTreeSet::new();
        let mut services: BTreeMap<String, (usize, BTreeMap<CookieKey, Option<i64>>)> = BTreeMap::new();
        for &(v, t) in &missed_txs {
            let cats = &self.categories[t.transaction_id.as_str()];
            let primary = primary_category(cats.iter().copied()).expect("missed transactions are labeled");
            let cookies = t.cookies_sent.iter().chain(&t.cookies_set);
            let request_domain = t.registrable_domain(self.psl).ok();
            let mut large_scope = false;
            for c in cookies.clone() {
                let key = c.cookie_key();
                let owner = self.psl.registrable_domain(&key.host).ok();
                if owner.as_deref() != Some(v.first_party_domain.as_str()) {
                    third_party_cookies.insert(key.clone());
                }
                if registrable_scope(&key.host, self.psl)
                    && owner == request_domain
                    && normalize_host(&key.host) != t.host()
                {
                    large_scope = true;
                }
            }
            let fp_context = t.cookies_sent.iter().any(|c| self.fp_context.contains(&c.cookie_key()));
            let content_type = media_type(t);
            *by_type.entry(content_type.clone()).or_default() += 1;
            *by_category.entry(primary.to_string()).or_default() += 1;
            let service = services.entry(t.host().to_string()).or_default();
            service.0 += 1;
            for c in cookies {
                let slot = service.1.entry(c.cookie_key()).or_insert(None);
                *slot = (*slot).max(c.expiry);
            }
            missed.push(MissedRequest {
                transaction_id: t.transaction_id.clone(),
                page_visit_id: v.page_visit_id.clone(),
                categories: cats.iter().copied().collect(),
                primary_category: primary,
                hostname: t.host().to_string(),
                content_type,
                fp_context,
                large_scope,
            });
        }

        let large_scope_cookies = third_party_cookies
            .iter()
            .filter(|k| registrable_scope(&k.host, self.psl))
            .count();
        let fp_context_requests = missed.iter().filter(|m| m.fp_context).count();
        let cookie_explanations = CookieExplanations {
            missed_requests: missed.len(),
            fp_context_requests,
            fp_context_share: share(fp_context_requests, missed.len()),
            third_party_cookies: third_party_cookies.len(),
            large_scope_cookies,
            large_scope_share: share(large_scope_cookies, third_party_cookies.len()),
        };

        let mut top_missed_services: Vec<MissedService> = services
            .into_iter()
            .map(|(hostname, (requests, cookies))| MissedService {
                hostname,
                requests,
                cookies: cookies
                    .into_iter()
                    .map(|(k, expiry)| ServiceCookie {
                        host: k.host,
                        name: k.key,
                        expiry,
                    })
                    .collect(),
            })
            .collect();
        top_missed_services.sort_by(|a, b| b.requests.cmp(&a.requests).then_with(|| a.hostname.cmp(&b.hostname)));
        top_missed_services.truncate(TOP_MISSED_SERVICES);

        let total = missed.len();
        ListComparison {
            list: lv.list,
            venn,
            blocked,
            follow_up,
            missed,
            missed_by_content_type: shares(by_type, total),
            missed_by_category: shares(by_category, total),
            cookie_explanations,
            top_missed_services,
        }
    }
}

pub fn compare(labels: &[BehaviorLabel], lists: &[ListVerdicts], d: &CrawlDataset, psl: &PublicSuffixTable) -> ComparisonReport {
    let mut categories: BTreeMap<&str, BTreeSet<BehaviorCategory>> = BTreeMap::new();
    for l in labels {
        categories.entry(l.transaction_id.as_str()).or_default().insert(l.category);
    }
    let third_party: Vec<_> = d
        .transactions()
        .filter(|(v, t)| {
            !v.is_orphan()
                && t.registrable_domain(psl)
                    .is_ok_and(|dom| dom != v.first_party_domain)
        })
        .collect();
    let ctx = Context {
        psl,
        categories,
        third_party,
        fp_context: first_party_context_cookies(d, psl),
    };
    ComparisonReport {
        third_party_transactions: ctx.third_party.len(),
        labeled_transactions: ctx.categories.len(),
        lists: lists.iter().map(|lv| ctx.compare_list(lv)).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Structured,
    Tabular,
}

impl std::str::FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "structured" => Ok(Self::Structured),
            "tabular" => Ok(Self::Tabular),
            other => Err(Error::Config(format!("unknown report format {other:?}"))),
        }
    }
}

pub const STRUCTURED_FILE: &str = "report.json";

/// Structured form: pretty JSON with a trailing newline. Key order follows
/// struct field order, so identical reports give identical bytes.
pub fn to_structured(report: &ComparisonReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report always serializes");
    s.push('\n');
    s
}

pub fn from_structured(text: &str) -> Result<ComparisonReport> {
    Ok(serde_json::from_str(text)?)
}

fn unwritable(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::UnwritablePath {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::UnwritablePath {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    }
}

/// One delimited table per section, as `(section, csv text)`.
pub fn to_tabular(report: &ComparisonReport) -> Vec<(&'static str, String)> {
    fn table(header: &[&str], rows: Vec<Vec<String>>) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).expect("in-memory write");
        for r in rows {
            w.write_record(&r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
    }
    let mut venn = Vec::new();
    let mut missed = Vec::new();
    let mut by_type = Vec::new();
    let mut by_cat = Vec::new();
    let mut expl = Vec::new();
    let mut services = Vec::new();
    for l in &report.lists {
        let list = l.list.to_string();
        venn.push(vec![
            list.clone(),
            l.venn.behavior_only.to_string(),
            l.venn.list_only.to_string(),
            l.venn.both.to_string(),
            l.blocked.to_string(),
            l.follow_up.to_string(),
        ]);
        for m in &l.missed {
            let cats: Vec<String> = m.categories.iter().map(|c| c.to_string()).collect();
            missed.push(vec![
                list.clone(),
                m.transaction_id.clone(),
                m.page_visit_id.clone(),
                m.hostname.clone(),
                m.content_type.clone(),
                cats.join("|"),
                m.primary_category.to_string(),
                m.fp_context.to_string(),
                m.large_scope.to_string(),
            ]);
        }
        for (rows, src) in [(&mut by_type, &l.missed_by_content_type), (&mut by_cat, &l.missed_by_category)] {
            for s in src {
                rows.push(vec![list.clone(), s.name.clone(), s.count.to_string(), s.share.to_string()]);
            }
        }
        let e = &l.cookie_explanations;
        expl.push(vec![
            list.clone(),
            e.missed_requests.to_string(),
            e.fp_context_requests.to_string(),
            e.fp_context_share.to_string(),
            e.third_party_cookies.to_string(),
            e.large_scope_cookies.to_string(),
            e.large_scope_share.to_string(),
        ]);
        for (rank, s) in l.top_missed_services.iter().enumerate() {
            let names: Vec<String> = s.cookies.iter().map(|c| format!("{}:{}", c.host, c.name)).collect();
            let expiries: Vec<String> = s
                .cookies
                .iter()
                .map(|c| c.expiry.map_or_else(String::new, |e| e.to_string()))
                .collect();
            services.push(vec![
                list.clone(),
                (rank + 1).to_string(),
                s.hostname.clone(),
                s.requests.to_string(),
                names.join("|"),
                expiries.join("|"),
            ]);
        }
    }
    vec![
        ("venn", table(&["list", "behavior_only", "list_only", "both", "blocked", "follow_up"], venn)),
        (
            "missed",
            table(
                &[
                    "list",
                    "transaction_id",
                    "page_visit_id",
                    "hostname",
                    "content_type",
                    "categories",
                    "primary_category",
                    "fp_context",
                    "large_scope",
                ],
                missed,
            ),
        ),
        ("missed_by_content_type", table(&["list", "content_type", "count", "share"], by_type)),
        ("missed_by_category", table(&["list", "category", "count", "share"], by_cat)),
        (
            "cookie_explanations",
            table(
                &[
                    "list",
                    "missed_requests",
                    "fp_context_requests",
                    "fp_context_share",
                    "third_party_cookies",
                    "large_scope_cookies",
                    "large_scope_share",
                ],
                expl,
            ),
        ),
        (
            "top_missed_services",
            table(&["list", "rank", "hostname", "requests", "cookie_names", "cookie_expiry"], services),
        ),
    ]
}

/// Writes the report under `dir`, returning the files written.
pub fn export(report: &ComparisonReport, dir: &Path, format: ExportFormat) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(unwritable(dir))?;
    match format {
        ExportFormat::Structured => {
            let path = dir.join(STRUCTURED_FILE);
            fs::write(&path, to_structured(report)).map_err(unwritable(&path))?;
            Ok(vec![path])
        }
        ExportFormat::Tabular => {
            let mut written = Vec::new();
            for (section, text) in to_tabular(report) {
                let path = dir.join(format!("{section}.csv"));
                fs::write(&path, text).map_err(unwritable(&path))?;
                written.push(path);
            }
            Ok(written)
        }
    }
}

/// Reads a tabular export back as raw records per section.
pub fn read_tabular(dir: &Path) -> Result<HashMap<String, Vec<csv::StringRecord>>> {
    let mut out = HashMap::new();
    for section in REPORT_SECTIONS {
        let path = dir.join(format!("{section}.csv"));
        let mut r = csv::Reader::from_path(&path).map_err(|e| csv_error(&path, e))?;
        let rows = r.records().collect::<std::result::Result<Vec<_>, _>>().map_err(|e| csv_error(&path, e))?;
        out.insert(section.to_string(), rows);
    }
    Ok(out)
}
