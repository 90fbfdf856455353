//! Crawl-log data model: transactions, cookies, page visits and the indexed
//! per-crawl dataset.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use url::Url;

use crate::psl::{normalize_host, DomainError, PublicSuffixTable};

pub const ORPHAN_VISIT_ID: &str = "__orphan__";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CrawlLabel {
    A,
    B,
}

impl fmt::Display for CrawlLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CrawlLabel::A => f.write_str("A"),
            CrawlLabel::B => f.write_str("B"),
        }
    }
}

/// Ordered header multimap; lookups are case-insensitive.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Headers(pub Vec<(String, String)>);

impl Headers {
    pub fn get(&self, name: &str) -> Option<&str> {
        self.0
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn get_all<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.0
            .iter()
            .filter(move |(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn push(&mut self, name: impl Into<String>, value: impl Into<String>) {
        self.0.push((name.into(), value.into()));
    }
}

impl<K: Into<String>, V: Into<String>> FromIterator<(K, V)> for Headers {
    fn from_iter<I: IntoIterator<Item = (K, V)>>(iter: I) -> Self {
        Headers(iter.into_iter().map(|(k, v)| (k.into(), v.into())).collect())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CookieContext {
    FirstParty,
    ThirdParty,
    #[default]
    Unknown,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CookieOrigin {
    HttpHeader,
    Script,
    #[default]
    Unknown,
}

/// One observation of a cookie. `(host, key, value)` is its identity when
/// crawls are compared.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CookieInstance {
    pub host: String,
    pub key: String,
    pub value: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expiry: Option<i64>,
    #[serde(default)]
    pub set_context: CookieContext,
    #[serde(default)]
    pub origin: CookieOrigin,
}

impl CookieInstance {
    pub fn new(host: &str, key: &str, value: &str) -> Self {
        Self {
            host: normalize_host(host),
            key: key.to_string(),
            value: value.to_string(),
            expiry: None,
            set_context: CookieContext::Unknown,
            origin: CookieOrigin::Unknown,
        }
    }

    pub fn cookie_key(&self) -> CookieKey {
        CookieKey {
            host: self.host.clone(),
            key: self.key.clone(),
        }
    }
}

/// The `(host, key)` pair that cookie classification is keyed on.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CookieKey {
    pub host: String,
    pub key: String,
}

impl CookieKey {
    pub fn new(host: &str, key: &str) -> Self {
        Self {
            host: normalize_host(host),
            key: key.to_string(),
        }
    }
}

impl fmt::Display for CookieKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.host, self.key)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpTransaction {
    pub transaction_id: String,
    pub page_visit_id: String,
    pub url: Url,
    pub method: String,
    pub request_headers: Headers,
    pub response_status: Option<u16>,
    pub response_headers: Headers,
    pub cookies_sent: Vec<CookieInstance>,
    pub cookies_set: Vec<CookieInstance>,
    pub body: Option<Vec<u8>>,
    pub timestamp: i64,
}

impl HttpTransaction {
    pub fn host(&self) -> &str {
        self.url.host_str().unwrap_or("")
    }

    pub fn referer(&self) -> Option<&str> {
        self.request_headers.get("referer")
    }

    pub fn location(&self) -> Option<&str> {
        self.response_headers.get("location")
    }

    /// Media type of the response without parameters, lowercased.
    pub fn content_type(&self) -> Option<String> {
        self.response_headers.get("content-type").map(|ct| {
            ct.split(';')
                .next()
                .unwrap_or("")
                .trim()
                .to_ascii_lowercase()
        })
    }

    pub fn content_length(&self) -> Option<u64> {
        self.response_headers
            .get("content-length")
            .and_then(|v| v.trim().parse().ok())
    }

    pub fn is_redirect(&self) -> bool {
        matches!(self.response_status, Some(300..=399))
    }

    /// Location resolved against the request URL, when this is a redirect.
    pub fn redirect_target(&self) -> Option<Url> {
        if !self.is_redirect() {
            return None;
        }
        self.url.join(self.location()?.trim()).ok()
    }

    pub fn is_image(&self) -> bool {
        self.content_type()
            .is_some_and(|ct| ct.starts_with("image/"))
    }

    pub fn registrable_domain(&self, psl: &PublicSuffixTable) -> Result<String, DomainError> {
        psl.registrable_domain(self.host())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageVisit {
    pub page_visit_id: String,
    pub first_party_url: String,
    /// Empty for the synthetic orphan visit.
    pub first_party_domain: String,
    pub transactions: Vec<HttpTransaction>,
}

impl PageVisit {
    pub fn is_orphan(&self) -> bool {
        self.page_visit_id == ORPHAN_VISIT_ID
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CookieAction {
    Set,
    Sent,
    Deleted,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct JournalEntry {
    pub timestamp: i64,
    pub action: CookieAction,
    pub cookie: CookieInstance,
    pub transaction_id: Option<String>,
    pub page_visit_id: Option<String>,
}

/// Location of a transaction inside a dataset: (visit index, position).
pub type TxRef = (usize, usize);

/// One crawl, fully indexed. Immutable once built.
#[derive(Debug, Clone)]
pub struct CrawlDataset {
    label: CrawlLabel,
    page_visits: Vec<PageVisit>,
    journal: Vec<JournalEntry>,
    by_transaction: HashMap<String, TxRef>,
    by_host: BTreeMap<String, Vec<TxRef>>,
    by_visit: HashMap<String, usize>,
}

impl PartialEq for CrawlDataset {
    fn eq(&self, other: &Self) -> bool {
        self.label == other.label
            && self.page_visits == other.page_visits
            && self.journal == other.journal
    }
}

impl CrawlDataset {
    /// Builds the indexes. Visits keep their given order; transactions and
    /// journal entries are sorted by time (ties broken by id / content).
    pub fn new(label: CrawlLabel, mut page_visits: Vec<PageVisit>, mut journal: Vec<JournalEntry>) -> Self {
        for visit in &mut page_visits {
            visit
                .transactions
                .sort_by(|a, b| (a.timestamp, &a.transaction_id).cmp(&(b.timestamp, &b.transaction_id)));
        }
        journal.sort();
        journal.dedup();

        let mut by_transaction = HashMap::new();
        let mut by_host: BTreeMap<String, Vec<TxRef>> = BTreeMap::new();
        let mut by_visit = HashMap::new();
        for (vi, visit) in page_visits.iter().enumerate() {
            by_visit.insert(visit.page_visit_id.clone(), vi);
            for (ti, tx) in visit.transactions.iter().enumerate() {
                by_transaction.insert(tx.transaction_id.clone(), (vi, ti));
                by_host.entry(tx.host().to_string()).or_default().push((vi, ti));
            }
        }
        Self {
            label,
            page_visits,
            journal,
            by_transaction,
            by_host,
            by_visit,
        }
    }

    /// Like [`CrawlDataset::new`], deriving `Sent` and `Set` journal entries
    /// from every transaction's cookies and adding `events` on top.
    pub fn from_visits(label: CrawlLabel, page_visits: Vec<PageVisit>, mut events: Vec<JournalEntry>) -> Self {
        for visit in &page_visits {
            for tx in &visit.transactions {
                let derived = |c: &CookieInstance, action| JournalEntry {
                    timestamp: tx.timestamp,
                    action,
                    cookie: c.clone(),
                    transaction_id: Some(tx.transaction_id.clone()),
                    page_visit_id: Some(visit.page_visit_id.clone()),
                };
                events.extend(tx.cookies_sent.iter().map(|c| derived(c, CookieAction::Sent)));
                events.extend(tx.cookies_set.iter().map(|c| derived(c, CookieAction::Set)));
            }
        }
        Self::new(label, page_visits, events)
    }

    pub fn empty(label: CrawlLabel) -> Self {
        Self::new(label, Vec::new(), Vec::new())
    }

    pub fn label(&self) -> CrawlLabel {
        self.label
    }

    pub fn page_visits(&self) -> &[PageVisit] {
        &self.page_visits
    }

    pub fn journal(&self) -> &[JournalEntry] {
        &self.journal
    }

    pub fn transaction_count(&self) -> usize {
        self.page_visits.iter().map(|v| v.transactions.len()).sum()
    }

    pub fn transactions(&self) -> impl Iterator<Item = (&PageVisit, &HttpTransaction)> {
        self.page_visits
            .iter()
            .flat_map(|v| v.transactions.iter().map(move |t| (v, t)))
    }

    pub fn transaction(&self, id: &str) -> Option<(&PageVisit, &HttpTransaction)> {
        let &(vi, ti) = self.by_transaction.get(id)?;
        let visit = &self.page_visits[vi];
        Some((visit, &visit.transactions[ti]))
    }

    pub fn visit(&self, id: &str) -> Option<&PageVisit> {
        self.by_visit.get(id).map(|&i| &self.page_visits[i])
    }

    pub fn transactions_for_host(&self, host: &str) -> impl Iterator<Item = &HttpTransaction> {
        self.by_host
            .get(host)
            .into_iter()
            .flatten()
            .map(|&(vi, ti)| &self.page_visits[vi].transactions[ti])
    }

    /// Distinct first-party domains (sites), excluding the orphan visit.
    pub fn sites(&self) -> BTreeSet<&str> {
        self.page_visits
            .iter()
            .filter(|v| !v.is_orphan() && !v.first_party_domain.is_empty())
            .map(|v| v.first_party_domain.as_str())
            .collect()
    }

    /// Keeps only the listed transactions; visits left empty are dropped and
    /// journal entries tied to removed transactions go with them.
    pub fn retain_transactions(&self, keep: &std::collections::HashSet<&str>) -> CrawlDataset {
        let visits = self
            .page_visits
            .iter()
            .filter_map(|v| {
                let txs: Vec<_> = v
                    .transactions
                    .iter()
                    .filter(|t| keep.contains(t.transaction_id.as_str()))
                    .cloned()
                    .collect();
                (!txs.is_empty()).then(|| PageVisit {
                    transactions: txs,
                    ..v.clone()
                })
            })
            .collect();
        let journal = self
            .journal
            .iter()
            .filter(|e| {
                e.transaction_id
                    .as_deref()
                    .is_none_or(|id| keep.contains(id))
            })
            .cloned()
            .collect();
        CrawlDataset::new(self.label, visits, journal)
    }
}

/// Per-(host, key) value sets in each crawl.
pub type Pairing = BTreeMap<CookieKey, (BTreeSet<String>, BTreeSet<String>)>;

#[derive(Debug, Clone)]
pub struct PairedCrawls {
    pub crawl_a: CrawlDataset,
    pub crawl_b: CrawlDataset,
    pub pairing: Pairing,
}

impl PairedCrawls {
    pub fn crawl(&self, label: CrawlLabel) -> &CrawlDataset {
        match label {
            CrawlLabel::A => &self.crawl_a,
            CrawlLabel::B => &self.crawl_b,
        }
    }
}

fn observed_values(d: &CrawlDataset) -> BTreeMap<CookieKey, BTreeSet<String>> {
    let mut out: BTreeMap<CookieKey, BTreeSet<String>> = BTreeMap::new();
    for e in d.journal() {
        if e.action == CookieAction::Deleted {
            continue;
        }
        out.entry(e.cookie.cookie_key())
            .or_default()
            .insert(e.cookie.value.clone());
    }
    out
}

/// Joins the two crawls' cookie observations on `(host, key)`.
pub fn pair_crawls(a: CrawlDataset, b: CrawlDataset) -> PairedCrawls {
    let mut pairing = Pairing::new();
    for (k, vals) in observed_values(&a) {
        pairing.entry(k).or_default().0 = vals;
    }
    for (k, vals) in observed_values(&b) {
        pairing.entry(k).or_default().1 = vals;
    }
    PairedCrawls {
        crawl_a: a,
        crawl_b: b,
        pairing,
    }
}

/// Whether `t` is third-party relative to its page visit.
pub fn is_third_party(t: &HttpTransaction, p: &PageVisit, psl: &PublicSuffixTable) -> Result<bool, DomainError> {
    if p.first_party_domain.is_empty() {
        return Err(DomainError::InvalidHost(p.first_party_url.clone()));
    }
    Ok(t.registrable_domain(psl)? != p.first_party_domain)
}
