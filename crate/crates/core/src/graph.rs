//! Per-visit request graph: redirect chains linked through 3xx `Location`
//! headers, and Referer ancestry.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::model::{HttpTransaction, PageVisit};
use crate::psl::PublicSuffixTable;

pub const DEFAULT_REDIRECT_WINDOW_MS: i64 = 30_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedirectChain {
    pub page_visit_id: String,
    pub steps: Vec<String>,
    pub terminal: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum InitiatorKind {
    FirstParty,
    ThirdParty,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum InitiatorVia {
    Redirect,
    Referer,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Initiator {
    pub kind: InitiatorKind,
    pub domain: Option<String>,
    pub via: Option<InitiatorVia>,
}

impl Initiator {
    pub fn unknown() -> Self {
        Self {
            kind: InitiatorKind::Unknown,
            domain: None,
            via: None,
        }
    }

    /// The initiating third-party domain, if any.
    pub fn third_party_domain(&self) -> Option<&str> {
        match self.kind {
            InitiatorKind::ThirdParty => self.domain.as_deref(),
            _ => None,
        }
    }
}

/// Chains and referer links for one page visit. Indices refer to positions
/// in `PageVisit::transactions`.
#[derive(Debug, Clone)]
pub struct RequestGraph {
    page_visit_id: String,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    predecessor: Vec<Option<usize>>,
    successor: Vec<Option<usize>>,
    referer_parent: Vec<Option<usize>>,
    chains: Vec<RedirectChain>,
    chain_of: Vec<usize>,
    ambiguity_warnings: usize,
}

impl RequestGraph {
    /// Greedy linkage: each redirect claims the earliest later, unclaimed
    /// transaction whose URL equals its resolved `Location`, within
    /// `window_ms`.
    pub fn build(visit: &PageVisit, window_ms: i64) -> Self {
        let txs = &visit.transactions;
        let n = txs.len();
        let mut by_url: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, t) in txs.iter().enumerate() {
            by_url.entry(t.url.as_str()).or_default().push(i);
        }

        let mut predecessor = vec![None; n];
        let mut successor = vec![None; n];
        let mut ambiguity_warnings = 0;
        for (i, t) in txs.iter().enumerate() {
            let Some(target) = t.redirect_target() else {
                continue;
            };
            let Some(candidates) = by_url.get(target.as_str()) else {
                continue;
            };
            let mut open = candidates.iter().copied().filter(|&j| {
                j > i
                    && predecessor[j].is_none()
                    && txs[j].timestamp >= t.timestamp
                    && txs[j].timestamp - t.timestamp <= window_ms
            });
            if let Some(j) = open.next() {
                if open.next().is_some() {
                    ambiguity_warnings += 1;
                }
                predecessor[j] = Some(i);
                successor[i] = Some(j);
            }
        }

        let mut referer_parent = vec![None; n];
        for (i, t) in txs.iter().enumerate() {
            let Some(referer) = t.referer().and_then(|r| url::Url::parse(r.trim()).ok()) else {
                continue;
            };
            if let Some(cands) = by_url.get(referer.as_str()) {
                referer_parent[i] = cands.iter().copied().rev().find(|&j| j < i);
            }
        }

        let mut chains = Vec::new();
        let mut chain_of = vec![0; n];
        for head in (0..n).filter(|&i| predecessor[i].is_none()) {
            let mut steps = Vec::new();
            let mut cur = Some(head);
            while let Some(i) = cur {
                chain_of[i] = chains.len();
                steps.push(txs[i].transaction_id.clone());
                cur = successor[i];
            }
            chains.push(RedirectChain {
                page_visit_id: visit.page_visit_id.clone(),
                terminal: steps.last().cloned().unwrap_or_default(),
                steps,
            });
        }

        let ids: Vec<String> = txs.iter().map(|t| t.transaction_id.clone()).collect();
        let index = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Self {
            page_visit_id: visit.page_visit_id.clone(),
            ids,
            index,
            predecessor,
            successor,
            referer_parent,
            chains,
            chain_of,
            ambiguity_warnings,
        }
    }

    pub fn page_visit_id(&self) -> &str {
        &self.page_visit_id
    }

    pub fn chains(&self) -> &[RedirectChain] {
        &self.chains
    }

    pub fn ambiguity_warnings(&self) -> usize {
        self.ambiguity_warnings
    }

    pub fn position(&self, transaction_id: &str) -> Option<usize> {
        self.index.get(transaction_id).copied()
    }

    pub fn id(&self, pos: usize) -> &str {
        &self.ids[pos]
    }

    pub fn predecessor(&self, pos: usize) -> Option<usize> {
        self.predecessor[pos]
    }

    pub fn successor(&self, pos: usize) -> Option<usize> {
        self.successor[pos]
    }

    /// Latest earlier transaction whose URL equals this one's Referer.
    pub fn referer_parent(&self, pos: usize) -> Option<usize> {
        self.referer_parent[pos]
    }

    pub fn chain_of(&self, pos: usize) -> &RedirectChain {
        &self.chains[self.chain_of[pos]]
    }

    /// Redirect ancestors, nearest first.
    pub fn redirect_ancestors(&self, transaction_id: &str) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = self.position(transaction_id).and_then(|p| self.predecessor[p]);
        while let Some(p) = cur {
            out.push(p);
            cur = self.predecessor[p];
        }
        out
    }

    /// Who caused the request at `pos`: the redirect predecessor, else the
    /// Referer's site, else unknown.
    pub fn initiator_of(&self, pos: usize, visit: &PageVisit, psl: &PublicSuffixTable) -> Initiator {
        let classify = |domain: String, via| Initiator {
            kind: if domain == visit.first_party_domain {
                InitiatorKind::FirstParty
            } else {
                InitiatorKind::ThirdParty
            },
            domain: Some(domain),
            via: Some(via),
        };
        if let Some(p) = self.predecessor[pos] {
            let pred = &visit.transactions[p];
            return match pred.registrable_domain(psl) {
                Ok(d) => classify(d, InitiatorVia::Redirect),
                Err(_) => Initiator::unknown(),
            };
        }
        let referer_domain = visit.transactions[pos]
            .referer()
            .and_then(|r| url::Url::parse(r.trim()).ok())
            .and_then(|u| u.host_str().and_then(|h| psl.registrable_domain(h).ok()));
        match referer_domain {
            Some(d) => classify(d, InitiatorVia::Referer),
            None => Initiator::unknown(),
        }
    }
}

/// Convenience wrapper returning only the chains.
pub fn build_chains(visit: &PageVisit, window_ms: i64) -> Vec<RedirectChain> {
    RequestGraph::build(visit, window_ms).chains
}

/// Re-checks chain consistency: each non-terminal step redirects to the URL
/// of the next one.
pub fn chain_is_consistent(chain: &RedirectChain, visit: &PageVisit) -> bool {
    let find = |id: &str| -> Option<&HttpTransaction> { visit.transactions.iter().find(|t| t.transaction_id == id) };
    chain.steps.windows(2).all(|w| {
        match (find(&w[0]), find(&w[1])) {
            (Some(a), Some(b)) => a.redirect_target().is_some_and(|u| u == b.url) && a.timestamp <= b.timestamp,
            _ => false,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Headers;
    use url::Url;

    pub fn tx(id: &str, url: &str, ts: i64, status: u16, location: Option<&str>, referer: Option<&str>) -> HttpTransaction {
        let mut response_headers = Headers::default();
        if let Some(l) = location {
            response_headers.push("Location", l);
        }
        let mut request_headers = Headers::default();
        if let Some(r) = referer {
            request_headers.push("Referer", r);
        }
        HttpTransaction {
            transaction_id: id.into(),
            page_visit_id: "pv".into(),
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
            page_visit_id: "pv".into(),
            first_party_url: "https://site.com/".into(),
            first_party_domain: "site.com".into(),
            transactions: txs,
        }
    }

    #[test]
    fn two_step_chain() {
        let v = visit(vec![
            tx("1", "https://a.com/r", 1, 302, Some("https://b.com/p"), None),
            tx("2", "https://b.com/p", 2, 200, None, None),
        ]);
        let chains = build_chains(&v, DEFAULT_REDIRECT_WINDOW_MS);
        assert_eq!(chains.len(), 1);
        assert_eq!(chains[0].steps, ["1", "2"]);
        assert_eq!(chains[0].terminal, "2");
        assert!(chain_is_consistent(&chains[0], &v));
    }

    #[test]
    fn all_singletons_without_redirects() {
        let v = visit(vec![
            tx("1", "https://a.com/", 1, 200, None, None),
            tx("2", "https://b.com/", 2, 200, None, None),
        ]);
        let chains = build_chains(&v, DEFAULT_REDIRECT_WINDOW_MS);
        assert_eq!(chains.len(), 2);
        assert!(chains.iter().all(|c| c.steps.len() == 1));
    }

    #[test]
    fn diamond_prefers_earlier_and_warns() {
        let v = visit(vec![
            tx("r", "https://a.com/r", 1, 302, Some("https://b.com/p"), None),
            tx("x", "https://b.com/p", 2, 200, None, None),
            tx("y", "https://b.com/p", 3, 200, None, None),
        ]);
        let g = RequestGraph::build(&v, DEFAULT_REDIRECT_WINDOW_MS);
        assert_eq!(g.ambiguity_warnings(), 1);
        assert_eq!(g.chains()[0].steps, ["r", "x"]);
        assert_eq!(g.chains().len(), 2);
    }

    #[test]
    fn relative_location_and_window() {
        let v = visit(vec![
            tx("1", "https://a.com/r/x", 1, 301, Some("../next?q=1"), None),
            tx("2", "https://a.com/next?q=1", 2, 200, None, None),
            tx("3", "https://a.com/s", 3, 302, Some("/late"), None),
            tx("4", "https://a.com/late", 3 + DEFAULT_REDIRECT_WINDOW_MS + 1, 200, None, None),
        ]);
        let g = RequestGraph::build(&v, DEFAULT_REDIRECT_WINDOW_MS);
        assert_eq!(g.predecessor(1), Some(0));
        assert_eq!(g.predecessor(3), None);
    }

    #[test]
    fn initiators() {
        let psl = PublicSuffixTable::naive();
        let v = visit(vec![
            tx("1", "https://tracker.com/r", 1, 302, Some("https://b.com/p"), Some("https://site.com/page")),
            tx("2", "https://b.com/p", 2, 200, None, Some("https://site.com/page")),
            tx("3", "https://c.com/i", 3, 200, None, Some("https://site.com/page")),
            tx("4", "https://d.com/i", 4, 200, None, None),
        ]);
        let g = RequestGraph::build(&v, DEFAULT_REDIRECT_WINDOW_MS);
        assert_eq!(
            g.initiator_of(1, &v, &psl),
            Initiator {
                kind: InitiatorKind::ThirdParty,
                domain: Some("tracker.com".into()),
                via: Some(InitiatorVia::Redirect)
            }
        );
        assert_eq!(g.initiator_of(2, &v, &psl).kind, InitiatorKind::FirstParty);
        assert_eq!(g.initiator_of(2, &v, &psl).via, Some(InitiatorVia::Referer));
        assert_eq!(g.initiator_of(3, &v, &psl), Initiator::unknown());
    }

    #[test]
    fn referer_parent_is_latest_earlier_match() {
        let v = visit(vec![
            tx("f1", "https://ads.com/frame", 1, 200, None, None),
            tx("f2", "https://ads.com/frame", 2, 200, None, None),
            tx("c", "https://img.com/a.gif", 3, 200, None, Some("https://ads.com/frame")),
        ]);
        let g = RequestGraph::build(&v, DEFAULT_REDIRECT_WINDOW_MS);
        assert_eq!(g.referer_parent(2), Some(1));
        assert_eq!(g.referer_parent(0), None);
    }

    proptest::proptest! {
        #[test]
        fn chains_partition_transactions(spec in proptest::collection::vec((0u8..4, proptest::option::of(0u8..4), 0i64..3), 0..12)) {
            let mut ts = 0;
            let txs: Vec<_> = spec.iter().enumerate().map(|(i, (u, loc, dt))| {
                ts += dt;
                let url = format!("https://h{u}.com/p");
                match loc {
                    Some(l) => tx(&format!("t{i}"), &url, ts, 302, Some(&format!("https://h{l}.com/p")), None),
                    None => tx(&format!("t{i}"), &url, ts, 200, None, None),
                }
            }).collect();
            let v = visit(txs);
            let chains = build_chains(&v, DEFAULT_REDIRECT_WINDOW_MS);
            let mut seen: Vec<&str> = chains.iter().flat_map(|c| c.steps.iter().map(String::as_str)).collect();
            seen.sort();
            let mut all: Vec<&str> = v.transactions.iter().map(|t| t.transaction_id.as_str()).collect();
            all.sort();
            proptest::prop_assert_eq!(seen, all);
            for c in &chains {
                proptest::prop_assert!(chain_is_consistent(c, &v));
            }
        }
    }
}
