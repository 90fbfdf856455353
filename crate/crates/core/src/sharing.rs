//! Detection of identifier values crossing domain boundaries in URL
//! parameters.
//!
//! Six techniques are recognised. Five are value predicates between a URL
//! parameter value `v` and a live identifier cookie value `c`:
//!
//! * `DS`  – `v == c`
//! * `PPS` – `c` is a token of `v`
//! * `PCS` – `v` is a token of `c`
//! * `GA`  – `c` has the `GAX.Y.Z.C` shape and `v == "Z.C"`
//! * `B64` – `v` base64-decodes to `c` (or to a string with `c` as a token)
//!
//! When several hold for the same `(parameter, cookie)` pair, the first in
//! that order is reported. The sixth, `ES`, is inferred from redirect
//! semantics rather than from values (see [`SharingDetector::encrypted_sharing_scan`]).

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use base64::alphabet;
use base64::engine::{DecodePaddingMode, GeneralPurpose, GeneralPurposeConfig};
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::cookies::{CookieClassification, CookieTimeline};
use crate::graph::RequestGraph;
use crate::model::{CookieKey, CrawlDataset, HttpTransaction, PageVisit};
use crate::psl::{host_matches_domain, PublicSuffixTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Technique {
    DS,
    PPS,
    PCS,
    GA,
    B64,
    ES,
}

impl Technique {
    pub const ALL: [Technique; 6] = [
        Technique::DS,
        Technique::PPS,
        Technique::PCS,
        Technique::GA,
        Technique::B64,
        Technique::ES,
    ];
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EsRule {
    pub host: String,
    pub param: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SharingConfig {
    pub min_token_length: usize,
    /// Also treat URL path segments as parameter values.
    pub scan_path_segments: bool,
    pub es_rules: Vec<EsRule>,
}

impl Default for SharingConfig {
    fn default() -> Self {
        Self {
            min_token_length: 8,
            scan_path_segments: false,
            es_rules: vec![EsRule {
                host: "doubleclick.net".into(),
                param: "google_nid".into(),
            }],
        }
    }
}

pub const ENCRYPTED_MARKER: &str = "<encrypted>";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SharingEvent {
    pub transaction_id: String,
    pub technique: Technique,
    pub parameter_name: Option<String>,
    pub cookie_ref: CookieKey,
    pub sender_domain: String,
    pub receiver_domain: String,
    pub identifier_value: String,
    /// Partner id carried by the trigger parameter (ES only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partner_id: Option<String>,
    /// Who put the identifier on the wire: the owner when it redirected,
    /// else the Referer's site, else the first party for its own cookies.
    pub attributed_sender: Option<String>,
}

/// Characters that never split a token.
pub fn is_token_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.')
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Tokens {
    /// Every non-empty token, in order.
    pub raw: Vec<String>,
    /// Tokens long enough to take part in matching.
    pub matching: Vec<String>,
}

pub fn tokenize(value: &str, cfg: &SharingConfig) -> Tokens {
    let raw: Vec<String> = value
        .split(|c: char| !is_token_char(c))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect();
    let matching = raw
        .iter()
        .filter(|t| t.chars().count() >= cfg.min_token_length.max(1))
        .cloned()
        .collect();
    Tokens { raw, matching }
}

/// `GAX.Y.Z.C` → `Z.C`: the last two of at least four dot-separated parts.
pub fn ga_extract(cookie_value: &str) -> Option<String> {
    let parts: Vec<&str> = cookie_value.split('.').collect();
    if parts.len() < 4 {
        return None;
    }
    Some(parts[parts.len() - 2..].join("."))
}

fn engines() -> [GeneralPurpose; 2] {
    let cfg = GeneralPurposeConfig::new().with_decode_padding_mode(DecodePaddingMode::Indifferent);
    [
        GeneralPurpose::new(&alphabet::STANDARD, cfg),
        GeneralPurpose::new(&alphabet::URL_SAFE, cfg),
    ]
}

/// UTF-8 decodings of `value` under the standard and URL-safe alphabets.
pub fn base64_decodings(value: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    if value.is_empty() {
        return out;
    }
    for engine in engines() {
        if let Ok(bytes) = engine.decode(value) {
            if let Ok(s) = String::from_utf8(bytes) {
                if !out.contains(&s) {
                    out.push(s);
                }
            }
        }
    }
    out
}

pub fn base64_match(param_value: &str, cookie_value: &str, cfg: &SharingConfig) -> bool {
    base64_decodings(param_value)
        .iter()
        .any(|d| d == cookie_value || tokenize(d, cfg).matching.iter().any(|t| t == cookie_value))
}

/// `(name, value)` pairs scanned on a request.
pub fn url_values(t: &HttpTransaction, cfg: &SharingConfig) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = t.url.query_pairs().map(|(k, v)| (k.into_owned(), v.into_owned())).collect();
    if cfg.scan_path_segments {
        if let Some(segs) = t.url.path_segments() {
            for (i, s) in segs.enumerate().filter(|(_, s)| !s.is_empty()) {
                let decoded = percent_decode(s);
                out.push((format!("path[{i}]"), decoded));
            }
        }
    }
    out
}

fn percent_decode(s: &str) -> String {
    url::form_urlencoded::parse(format!("x={}", s.replace('+', "%2B")).as_bytes())
        .next()
        .map(|(_, v)| v.into_owned())
        .unwrap_or_default()
}

#[derive(Debug)]
struct IndexedValue {
    key: CookieKey,
    value: String,
    owner: String,
}

/// Identifier cookie values of one crawl, indexed by value, by token and by
/// GA extraction.
#[derive(Debug, Default)]
struct ValueIndex {
    entries: Vec<IndexedValue>,
    by_value: HashMap<String, Vec<usize>>,
    by_token: HashMap<String, Vec<usize>>,
    by_ga: HashMap<String, Vec<usize>>,
}

impl ValueIndex {
    fn build(d: &CrawlDataset, cls: &CookieClassification, psl: &PublicSuffixTable, cfg: &SharingConfig) -> Self {
        let mut seen: BTreeMap<(CookieKey, String), ()> = BTreeMap::new();
        for e in d.journal() {
            let key = e.cookie.cookie_key();
            if cls.is_identifier(&key) {
                seen.insert((key, e.cookie.value.clone()), ());
            }
        }
        let mut idx = ValueIndex::default();
        for ((key, value), ()) in seen {
            let Ok(owner) = psl.registrable_domain(&key.host) else {
                continue;
            };
            let i = idx.entries.len();
            idx.by_value.entry(value.clone()).or_default().push(i);
            for tok in tokenize(&value, cfg).matching {
                idx.by_token.entry(tok).or_default().push(i);
            }
            if let Some(ga) = ga_extract(&value) {
                idx.by_ga.entry(ga).or_default().push(i);
            }
            idx.entries.push(IndexedValue { key, value, owner });
        }
        for list in idx.by_token.values_mut() {
            list.dedup();
        }
        idx
    }
}

/// Per-crawl sharing detector over an immutable cookie timeline.
pub struct SharingDetector<'a> {
    psl: &'a PublicSuffixTable,
    cfg: &'a SharingConfig,
    timeline: CookieTimeline,
    index: ValueIndex,
}

impl<'a> SharingDetector<'a> {
    pub fn new(d: &CrawlDataset, cls: &CookieClassification, psl: &'a PublicSuffixTable, cfg: &'a SharingConfig) -> Self {
        Self {
            psl,
            cfg,
            timeline: CookieTimeline::build(d, cls),
            index: ValueIndex::build(d, cls, psl, cfg),
        }
    }

    pub fn timeline(&self) -> &CookieTimeline {
        &self.timeline
    }

    fn min_len(&self) -> usize {
        self.cfg.min_token_length.max(1)
    }

    fn long_enough(&self, s: &str) -> bool {
        s.chars().count() >= self.min_len()
    }

    /// Candidate cookie entries for one parameter value, each with the
    /// highest-priority technique that matched.
    fn candidates(&self, v: &str) -> BTreeMap<usize, Technique> {
        let mut found: BTreeMap<usize, Technique> = BTreeMap::new();
        let mut note = |ids: Option<&Vec<usize>>, tech: Technique| {
            for &i in ids.into_iter().flatten() {
                found
                    .entry(i)
                    .and_modify(|t| *t = (*t).min(tech))
                    .or_insert(tech);
            }
        };
        let idx = &self.index;
        if self.long_enough(v) {
            note(idx.by_value.get(v), Technique::DS);
            note(idx.by_token.get(v), Technique::PCS);
            note(idx.by_ga.get(v), Technique::GA);
        }
        for tok in tokenize(v, self.cfg).matching {
            note(idx.by_value.get(&tok), Technique::PPS);
        }
        for decoded in base64_decodings(v) {
            note(idx.by_value.get(&decoded), Technique::B64);
            for tok in tokenize(&decoded, self.cfg).matching {
                note(idx.by_value.get(&tok), Technique::B64);
            }
        }
        // Recorded identifiers must clear the length bar.
        found.retain(|&i, tech| {
            let c = &idx.entries[i].value;
            match tech {
                Technique::DS | Technique::PPS | Technique::B64 => self.long_enough(c),
                _ => true,
            }
        });
        found
    }

    /// URL-parameter sharing on one transaction.
    pub fn detect_url_sharing(&self, t: &HttpTransaction, visit: &PageVisit, graph: Option<&RequestGraph>) -> Vec<SharingEvent> {
        let Ok(receiver) = t.registrable_domain(self.psl) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for (name, v) in url_values(t, self.cfg) {
            for (i, tech) in self.candidates(&v) {
                let entry = &self.index.entries[i];
                if entry.owner == receiver {
                    continue;
                }
                if self.timeline.live_value(&entry.key, t.timestamp) != Some(entry.value.as_str()) {
                    continue;
                }
                let identifier_value = match tech {
                    Technique::PCS | Technique::GA => v.clone(),
                    _ => entry.value.clone(),
                };
                out.push(SharingEvent {
                    transaction_id: t.transaction_id.clone(),
                    technique: tech,
                    parameter_name: Some(name.clone()),
                    cookie_ref: entry.key.clone(),
                    sender_domain: entry.owner.clone(),
                    receiver_domain: receiver.clone(),
                    identifier_value,
                    partner_id: None,
                    attributed_sender: self.attribute(t, visit, graph, &entry.owner),
                });
            }
        }
        out.sort();
        out.dedup();
        out
    }

    fn attribute(&self, t: &HttpTransaction, visit: &PageVisit, graph: Option<&RequestGraph>, owner: &str) -> Option<String> {
        if let Some(g) = graph {
            if let Some(p) = g.position(&t.transaction_id).and_then(|pos| g.predecessor(pos)) {
                if visit.transactions[p].registrable_domain(self.psl).ok().as_deref() == Some(owner) {
                    return Some(owner.to_string());
                }
            }
        }
        let referer = t
            .referer()
            .and_then(|r| url::Url::parse(r.trim()).ok())
            .and_then(|u| u.host_str().and_then(|h| self.psl.registrable_domain(h).ok()));
        if referer.is_some() {
            return referer;
        }
        (owner == visit.first_party_domain).then(|| owner.to_string())
    }

    /// Encrypted sharing: a request to a rule host carrying the trigger
    /// parameter, answered by a redirect to another site, while the rule
    /// host holds a live identifier cookie.
    pub fn encrypted_sharing_scan(&self, visit: &PageVisit, graph: &RequestGraph) -> Vec<SharingEvent> {
        let mut out = Vec::new();
        for (pos, t) in visit.transactions.iter().enumerate() {
            let Some(target) = t.redirect_target() else {
                continue;
            };
            let Ok(sender) = t.registrable_domain(self.psl) else {
                continue;
            };
            let Some(receiver) = target.host_str().and_then(|h| self.psl.registrable_domain(h).ok()) else {
                continue;
            };
            if receiver == sender {
                continue;
            }
            for rule in &self.cfg.es_rules {
                if !host_matches_domain(t.host(), &rule.host.to_ascii_lowercase()) {
                    continue;
                }
                let Some((_, partner)) = t.url.query_pairs().find(|(k, _)| k == rule.param.as_str()) else {
                    continue;
                };
                let owned = self.timeline.live_at(t.timestamp).find(|(k, _)| {
                    self.psl.registrable_domain(&k.host).ok().as_deref() == Some(sender.as_str())
                });
                let Some((cookie_key, _)) = owned else {
                    continue;
                };
                let carrier = graph.successor(pos).map_or(t.transaction_id.as_str(), |s| graph.id(s));
                out.push(SharingEvent {
                    transaction_id: carrier.to_string(),
                    technique: Technique::ES,
                    parameter_name: None,
                    cookie_ref: cookie_key.clone(),
                    sender_domain: sender.clone(),
                    receiver_domain: receiver.clone(),
                    identifier_value: ENCRYPTED_MARKER.to_string(),
                    partner_id: Some(partner.into_owned()),
                    attributed_sender: Some(sender.clone()),
                });
            }
        }
        out.sort();
        out.dedup();
        out
    }

    /// All events for one visit, sorted.
    pub fn detect_visit(&self, visit: &PageVisit, graph: &RequestGraph) -> Vec<SharingEvent> {
        let mut out: Vec<SharingEvent> = visit
            .transactions
            .iter()
            .flat_map(|t| self.detect_url_sharing(t, visit, Some(graph)))
            .collect();
        out.extend(self.encrypted_sharing_scan(visit, graph));
        out.sort();
        out.dedup();
        out
    }
}
