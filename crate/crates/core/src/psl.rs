//! Registrable-domain (eTLD+1) resolution backed by a Public Suffix List
//! snapshot, with a naive "last two labels" mode for runs without one.

use std::collections::HashSet;
use std::net::{Ipv4Addr, Ipv6Addr};
use std::path::Path;

use thiserror::Error;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("{0} is itself a public suffix")]
    IsSuffixOnly(String),
    #[error("invalid hostname {0:?}")]
    InvalidHost(String),
}

#[derive(Debug, Clone, Default)]
pub struct PublicSuffixTable {
    exact: HashSet<String>,
    wildcard: HashSet<String>,
    exception: HashSet<String>,
    fallback: bool,
}

impl PublicSuffixTable {
    /// A table with no rules that resolves hosts to their last two labels.
    pub fn naive() -> Self {
        Self {
            fallback: true,
            ..Self::default()
        }
    }

    /// Parses the standard PSL text format. Comments start with `//`; only
    /// the first whitespace-delimited token of a line is significant.
    pub fn parse(text: &str) -> Self {
        let mut table = Self::default();
        for line in text.lines() {
            let Some(rule) = line.split_whitespace().next() else {
                continue;
            };
            if rule.starts_with("//") {
                continue;
            }
            let rule = rule.trim_end_matches('.').to_ascii_lowercase();
            if let Some(rest) = rule.strip_prefix('!') {
                table.exception.insert(rest.to_string());
            } else if let Some(rest) = rule.strip_prefix("*.") {
                table.wildcard.insert(rest.to_string());
            } else if !rule.is_empty() {
                table.exact.insert(rule);
            }
        }
        table
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::UnreadableInput)?;
        Ok(Self::parse(&text))
    }

    pub fn is_fallback(&self) -> bool {
        self.fallback
    }

    pub fn rule_count(&self) -> usize {
        self.exact.len() + self.wildcard.len() + self.exception.len()
    }

    /// Number of labels forming the public suffix of `labels` (which are in
    /// normal left-to-right order).
    fn suffix_len(&self, labels: &[&str]) -> usize {
        if self.fallback {
            return 1;
        }
        let n = labels.len();
        let mut best = 1; // implicit "*" rule
        for start in 0..n {
            let candidate = labels[start..].join(".");
            let count = n - start;
            if self.exception.contains(&candidate) {
                // Exception rules win outright; the suffix is one label shorter.
                return count - 1;
            }
            if self.exact.contains(&candidate) {
                best = best.max(count);
            }
            if start + 1 < n {
                let parent = labels[start + 1..].join(".");
                if self.wildcard.contains(&parent) {
                    best = best.max(count);
                }
            }
        }
        best
    }

    pub fn public_suffix<'a>(&self, host: &'a str) -> &'a str {
        let labels: Vec<&str> = host.split('.').collect();
        let len = self.suffix_len(&labels).min(labels.len());
        tail_labels(host, len)
    }

    /// Resolves `host` to its registrable domain. IP literals pass through.
    pub fn registrable_domain(&self, host: &str) -> Result<String, DomainError> {
        let host = normalize_host(host);
        if host.is_empty() || host.contains("..") {
            return Err(DomainError::InvalidHost(host));
        }
        if is_ip_literal(&host) {
            return Ok(host);
        }
        let labels: Vec<&str> = host.split('.').collect();
        let suffix = self.suffix_len(&labels);
        if labels.len() <= suffix {
            return Err(DomainError::IsSuffixOnly(host));
        }
        Ok(tail_labels(&host, suffix + 1).to_string())
    }
}

fn tail_labels(host: &str, count: usize) -> &str {
    if count == 0 {
        return "";
    }
    let mut seen = 0;
    for (i, b) in host.bytes().enumerate().rev() {
        if b == b'.' {
            seen += 1;
            if seen == count {
                return &host[i + 1..];
            }
        }
    }
    host
}

/// Lowercases, strips a trailing root dot and a leading cookie-scope dot.
pub fn normalize_host(host: &str) -> String {
    host.trim()
        .trim_start_matches('.')
        .trim_end_matches('.')
        .to_ascii_lowercase()
}

pub fn is_ip_literal(host: &str) -> bool {
    let bare = host.trim_start_matches('[').trim_end_matches(']');
    bare.parse::<Ipv4Addr>().is_ok() || bare.parse::<Ipv6Addr>().is_ok()
}

/// True iff `host` equals `domain` or is a dot-boundary subdomain of it.
pub fn host_matches_domain(host: &str, domain: &str) -> bool {
    host == domain
        || (host.len() > domain.len()
            && host.ends_with(domain)
            && host.as_bytes()[host.len() - domain.len() - 1] == b'.')
}

#[cfg(test)]
mod tests {
    use super::*;

    const SNIPPET: &str = "\
// ===BEGIN ICANN DOMAINS===
com
net
uk
co.uk
*.ck
!www.ck
// github.io style private suffix
github.io
";

    #[test]
    fn psl_base_case() {
        let psl = PublicSuffixTable::parse(SNIPPET);
        assert_eq!(psl.registrable_domain("cse.google.com").unwrap(), "google.com");
    }

    #[test]
    fn multi_label_suffix() {
        let psl = PublicSuffixTable::parse(SNIPPET);
        assert_eq!(psl.registrable_domain("foo.bar.co.uk").unwrap(), "bar.co.uk");
        assert_eq!(
            psl.registrable_domain("co.uk"),
            Err(DomainError::IsSuffixOnly("co.uk".into()))
        );
    }

    #[test]
    fn wildcard_and_exception() {
        let psl = PublicSuffixTable::parse(SNIPPET);
        assert_eq!(psl.registrable_domain("a.b.foo.ck").unwrap(), "b.foo.ck");
        assert_eq!(psl.registrable_domain("www.ck").unwrap(), "www.ck");
        assert!(psl.registrable_domain("foo.ck").is_err());
    }

    #[test]
    fn ip_literals_pass_through() {
        let psl = PublicSuffixTable::parse(SNIPPET);
        assert_eq!(psl.registrable_domain("192.0.2.7").unwrap(), "192.0.2.7");
        assert_eq!(psl.registrable_domain("[2001:db8::1]").unwrap(), "[2001:db8::1]");
    }

    #[test]
    fn naive_mode_takes_last_two_labels() {
        let psl = PublicSuffixTable::naive();
        assert_eq!(psl.registrable_domain("foo.bar.co.uk").unwrap(), "co.uk");
        assert_eq!(psl.registrable_domain(".Stats.Tracker.com.").unwrap(), "tracker.com");
        assert!(psl.registrable_domain("localhost").is_err());
    }

    #[test]
    fn unknown_tld_uses_implicit_star_rule() {
        let psl = PublicSuffixTable::parse(SNIPPET);
        assert_eq!(psl.registrable_domain("a.b.example").unwrap(), "b.example");
    }

    #[test]
    fn dot_boundary_matching() {
        assert!(host_matches_domain("stats.doubleclick.net", "doubleclick.net"));
        assert!(host_matches_domain("doubleclick.net", "doubleclick.net"));
        assert!(!host_matches_domain("notdoubleclick.net", "doubleclick.net"));
    }

    proptest::proptest! {
        #[test]
        fn registrable_domain_is_idempotent(labels in proptest::collection::vec("[a-z]{1,6}", 1..5),
                                             tld in proptest::sample::select(vec!["com", "uk", "co.uk", "ck", "github.io", "zz"])) {
            let psl = PublicSuffixTable::parse(SNIPPET);
            let host = format!("{}.{}", labels.join("."), tld);
            if let Ok(rd) = psl.registrable_domain(&host) {
                proptest::prop_assert_eq!(psl.registrable_domain(&rd).unwrap(), rd);
            }
        }
    }
}
