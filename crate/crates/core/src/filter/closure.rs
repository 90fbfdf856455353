use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::disconnect::DisconnectList;
use super::rules::{MatchOutcome, RequestContext, ResourceType, RuleSet};
use crate::cookies::CookieClassification;
use crate::graph::RequestGraph;
use crate::model::{CookieAction, CrawlDataset, HttpTransaction, PageVisit};
use crate::psl::PublicSuffixTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BlockStatus {
    DirectMatch,
    RedirectDescendant,
    BlockedFrameChild,
    Allowed,
}

impl BlockStatus {
    pub fn is_blocked(self) -> bool {
        self != BlockStatus::Allowed
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockVerdict {
    pub status: BlockStatus,
    /// Raw text of the rule (or Disconnect entry) behind a direct match.
    pub matched_rule: Option<String>,
    pub follow_up: bool,
}

impl BlockVerdict {
    pub fn allowed() -> Self {
        Self {
            status: BlockStatus::Allowed,
            matched_rule: None,
            follow_up: false,
        }
    }

    pub fn is_blocked(&self) -> bool {
        self.status.is_blocked()
    }
}

/// Verdicts keyed by transaction id.
pub type VisitVerdicts = BTreeMap<String, BlockVerdict>;

/// A text/html response loaded with a Referer from somewhere other than the
/// top-level document itself.
pub fn is_subdocument(t: &HttpTransaction, visit: &PageVisit) -> bool {
    t.content_type().as_deref() == Some("text/html")
        && t.referer().is_some()
        && t.url.as_str() != visit.first_party_url
}

pub fn resource_type_of(t: &HttpTransaction, visit: &PageVisit) -> ResourceType {
    ResourceType::from_content_type(t.content_type().as_deref(), is_subdocument(t, visit))
}

/// Applies the three blocking conditions to one visit: a direct match, a
/// redirect from a blocked step, or loading from inside a blocked frame.
/// `direct` returns the matching rule text for a transaction, if any.
pub fn blocked_closure<F>(visit: &PageVisit, graph: &RequestGraph, direct: F) -> VisitVerdicts
where
    F: Fn(&HttpTransaction) -> Option<String>,
{
    let txs = &visit.transactions;
    let mut status: Vec<BlockStatus> = Vec::with_capacity(txs.len());
    let mut rules: Vec<Option<String>> = Vec::with_capacity(txs.len());
    // Predecessors and referer parents always sit at earlier positions.
    for (pos, t) in txs.iter().enumerate() {
        let hit = direct(t);
        let s = if hit.is_some() {
            BlockStatus::DirectMatch
        } else if let Some(p) = graph.predecessor(pos) {
            match status[p] {
                BlockStatus::DirectMatch | BlockStatus::RedirectDescendant => BlockStatus::RedirectDescendant,
                other => other,
            }
        } else {
            match graph.referer_parent(pos) {
                Some(r) if status[r] == BlockStatus::BlockedFrameChild => BlockStatus::BlockedFrameChild,
                Some(r) if status[r].is_blocked() && is_subdocument(&txs[r], visit) => BlockStatus::BlockedFrameChild,
                _ => BlockStatus::Allowed,
            }
        };
        status.push(s);
        rules.push(hit);
    }
    txs.iter()
        .zip(status)
        .zip(rules)
        .map(|((t, status), matched_rule)| {
            (
                t.transaction_id.clone(),
                BlockVerdict {
                    status,
                    matched_rule,
                    follow_up: false,
                },
            )
        })
        .collect()
}

/// Allowed transactions sending an Identifier cookie whose earliest `Set`
/// came from a blocked transaction. Walks the journal once, in crawl order.
pub fn trackers_follow_up(
    d: &CrawlDataset,
    verdicts: &HashMap<&str, &BlockVerdict>,
    cls: &CookieClassification,
) -> BTreeSet<String> {
    let mut first_set: HashMap<(&str, &str, &str), Option<&str>> = HashMap::new();
    for e in d.journal() {
        if e.action != CookieAction::Set {
            continue;
        }
        let c = &e.cookie;
        first_set
            .entry((c.host.as_str(), c.key.as_str(), c.value.as_str()))
            .or_insert(e.transaction_id.as_deref());
    }
    let blocked = |id: &str| verdicts.get(id).is_some_and(|v| v.is_blocked());
    let mut out = BTreeSet::new();
    for (_, t) in d.transactions() {
        if verdicts.get(t.transaction_id.as_str()).is_none_or(|v| v.is_blocked()) {
            continue;
        }
        let rides_on_blocked = t.cookies_sent.iter().any(|c| {
            cls.is_identifier(&c.cookie_key())
                && first_set
                    .get(&(c.host.as_str(), c.key.as_str(), c.value.as_str()))
                    .copied()
                    .flatten()
                    .is_some_and(blocked)
        });
        if rides_on_blocked {
            out.insert(t.transaction_id.clone());
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ListConfig {
    /// EasyList and EasyPrivacy combined.
    EasyListPrivacy,
    Disconnect,
    Union,
}

impl ListConfig {
    pub const ALL: [ListConfig; 3] = [ListConfig::EasyListPrivacy, ListConfig::Disconnect, ListConfig::Union];

    pub fn name(self) -> &'static str {
        match self {
            ListConfig::EasyListPrivacy => "easylist+easyprivacy",
            ListConfig::Disconnect => "disconnect",
            ListConfig::Union => "union",
        }
    }
}

impl fmt::Display for ListConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Both list families, ready to produce direct-match decisions.
#[derive(Debug, Clone, Default)]
pub struct Blocker {
    pub rules: RuleSet,
    pub disconnect: DisconnectList,
}

impl Blocker {
    pub fn new(rules: RuleSet, disconnect: DisconnectList) -> Self {
        Self { rules, disconnect }
    }

    fn adblock_match(&self, t: &HttpTransaction, visit: &PageVisit, psl: &PublicSuffixTable) -> Option<String> {
        let initiator = t
            .referer()
            .and_then(|r| url::Url::parse(r.trim()).ok())
            .and_then(|u| u.host_str().and_then(|h| psl.registrable_domain(h).ok()));
        let req = RequestContext {
            url: &t.url,
            resource_type: resource_type_of(t, visit),
            page_domain: &visit.first_party_domain,
            initiator_domain: initiator.as_deref(),
        };
        match self.rules.match_request(&req, psl) {
            MatchOutcome::Blocked(rule) => Some(rule.raw.clone()),
            MatchOutcome::Allowed => None,
        }
    }

    /// Disconnect entries block third-party requests only.
    fn disconnect_match(&self, t: &HttpTransaction, visit: &PageVisit, psl: &PublicSuffixTable) -> Option<String> {
        let third_party = t
            .registrable_domain(psl)
            .map(|d| d != visit.first_party_domain)
            .unwrap_or(true);
        if !third_party {
            return None;
        }
        self.disconnect
            .matching_entry(t.host())
            .map(|e| format!("disconnect:{e}"))
    }

    pub fn direct_match(
        &self,
        config: ListConfig,
        t: &HttpTransaction,
        visit: &PageVisit,
        psl: &PublicSuffixTable,
    ) -> Option<String> {
        match config {
            ListConfig::EasyListPrivacy => self.adblock_match(t, visit, psl),
            ListConfig::Disconnect => self.disconnect_match(t, visit, psl),
            ListConfig::Union => self
                .adblock_match(t, visit, psl)
                .or_else(|| self.disconnect_match(t, visit, psl)),
        }
    }

    pub fn visit_verdicts(
        &self,
        config: ListConfig,
        visit: &PageVisit,
        graph: &RequestGraph,
        psl: &PublicSuffixTable,
    ) -> VisitVerdicts {
        blocked_closure(visit, graph, |t| self.direct_match(config, t, visit, psl))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::DEFAULT_REDIRECT_WINDOW_MS;
    use crate::model::Headers;
    use url::Url;

    fn tx(id: &str, url: &str, ts: i64, ct: &str, status: u16, location: Option<&str>, referer: Option<&str>) -> HttpTransaction {
        let mut response_headers = Headers::default();
        response_headers.push("Content-Type", ct);
        if let Some(l) = location {
            response_headers.push("Location", l);
        }
        let mut request_headers = Headers::default();
        if let Some(r) = referer {
            request_headers.push("Referer", r);
        }
        HttpTransaction {
            transaction_id: id.into(),
            page_visit_id: "v".into(),
            url: Url::parse(url).unwrap(),
            method: "GET".into(),
            request_headers,
            response_status: Some(status),
            response_headers,
            cookies_sent: vec![],
            cookies_set: vec![],
            body: None,
            timestamp: ts,
        }
    }

    fn visit(txs: Vec<HttpTransaction>) -> PageVisit {
        PageVisit {
            page_visit_id: "v".into(),
            first_party_url: "http://site.com/".into(),
            first_party_domain: "site.com".into(),
            transactions: txs,
        }
    }

    fn statuses(v: &PageVisit, blocked_hosts: &[&str]) -> Vec<BlockStatus> {
        let g = RequestGraph::build(v, DEFAULT_REDIRECT_WINDOW_MS);
        let verdicts = blocked_closure(v, &g, |t| blocked_hosts.contains(&t.host()).then(|| t.host().to_string()));
        v.transactions.iter().map(|t| verdicts[&t.transaction_id].status).collect()
    }

    #[test]
    fn redirect_successors_inherit() {
        let v = visit(vec![
            tx("d", "http://site.com/", 0, "text/html", 200, None, None),
            tx("a", "http://ads.com/r", 10, "text/html", 302, Some("http://b.com/r"), Some("http://site.com/")),
            tx("b", "http://b.com/r", 20, "text/html", 302, Some("http://c.com/p.gif"), Some("http://site.com/")),
            tx("c", "http://c.com/p.gif", 30, "image/gif", 200, None, Some("http://site.com/")),
        ]);
        use BlockStatus::*;
        assert_eq!(statuses(&v, &["ads.com"]), [Allowed, DirectMatch, RedirectDescendant, RedirectDescendant]);
        assert_eq!(statuses(&v, &["b.com"]), [Allowed, Allowed, DirectMatch, RedirectDescendant]);
        assert_eq!(statuses(&v, &[]), [Allowed; 4]);
    }

    #[test]
    fn frame_children_inherit() {
        let v = visit(vec![
            tx("d", "http://site.com/", 0, "text/html", 200, None, None),
            tx("f", "http://frames.com/f", 10, "text/html", 200, None, Some("http://site.com/")),
            tx("i", "http://img.com/x.png", 20, "image/png", 200, None, Some("http://frames.com/f")),
            tx("s", "http://js.com/s.js", 25, "application/javascript", 200, None, Some("http://site.com/")),
        ]);
        use BlockStatus::*;
        assert_eq!(statuses(&v, &["frames.com"]), [Allowed, DirectMatch, BlockedFrameChild, Allowed]);
    }

    #[test]
    fn blocked_script_does_not_block_its_referees() {
        let v = visit(vec![
            tx("s", "http://js.com/s.js", 10, "application/javascript", 200, None, Some("http://site.com/")),
            tx("i", "http://img.com/x.png", 20, "image/png", 200, None, Some("http://js.com/s.js")),
        ]);
        use BlockStatus::*;
        assert_eq!(statuses(&v, &["js.com"]), [DirectMatch, Allowed]);
    }

    #[test]
    fn resource_types() {
        let v = visit(vec![]);
        let doc = tx("d", "http://site.com/", 0, "text/html", 200, None, None);
        let frame = tx("f", "http://x.com/f", 0, "text/html; charset=utf-8", 200, None, Some("http://site.com/"));
        let js = tx("s", "http://x.com/s", 0, "text/javascript", 200, None, None);
        let css = tx("c", "http://x.com/c", 0, "text/css", 200, None, None);
        assert_eq!(resource_type_of(&doc, &v), ResourceType::Other);
        assert_eq!(resource_type_of(&frame, &v), ResourceType::Subdocument);
        assert_eq!(resource_type_of(&js, &v), ResourceType::Script);
        assert_eq!(resource_type_of(&css, &v), ResourceType::Stylesheet);
    }
}
