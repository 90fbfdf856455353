//! Adblock Plus network rule syntax: parsing and request matching.
//!
//! Supported: `||` / `|` anchors, trailing `|`, `*`, `^`, `@@` exceptions
//! and the options `third-party`, `domain=` and the resource types
//! `script`, `image`, `stylesheet`, `subdocument`, `xmlhttprequest`,
//! `other` (each negatable with `~`). A rule carrying any other option, or a
//! `/regex/` pattern, is kept as inert and never matches.

use std::fmt;

use serde::{Deserialize, Serialize};
use url::Url;

use crate::psl::{host_matches_domain, PublicSuffixTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResourceType {
    Script,
    Image,
    Stylesheet,
    Subdocument,
    Xmlhttprequest,
    Other,
}

impl ResourceType {
    fn from_option(name: &str) -> Option<Self> {
        Some(match name {
            "script" => Self::Script,
            "image" => Self::Image,
            "stylesheet" => Self::Stylesheet,
            "subdocument" => Self::Subdocument,
            "xmlhttprequest" => Self::Xmlhttprequest,
            "other" => Self::Other,
            _ => return None,
        })
    }

    /// Offline approximation from the response media type.
    pub fn from_content_type(content_type: Option<&str>, is_subframe: bool) -> Self {
        let ct = content_type.unwrap_or("").to_ascii_lowercase();
        if ct.starts_with("image/") {
            Self::Image
        } else if ct.contains("javascript") || ct.contains("ecmascript") {
            Self::Script
        } else if ct == "text/css" {
            Self::Stylesheet
        } else if ct == "text/html" && is_subframe {
            Self::Subdocument
        } else {
            Self::Other
        }
    }
}

impl fmt::Display for ResourceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Script => "script",
            Self::Image => "image",
            Self::Stylesheet => "stylesheet",
            Self::Subdocument => "subdocument",
            Self::Xmlhttprequest => "xmlhttprequest",
            Self::Other => "other",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleKind {
    Blocking,
    Exception,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Anchor {
    /// `||` – start of the host or of any subdomain label.
    Domain,
    /// `|` – start of the URL.
    Start,
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Unit {
    Char(u8),
    Separator,
    Wildcard,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    pub anchor: Anchor,
    pub end_anchor: bool,
    units: Vec<Unit>,
    /// Longest wildcard-free literal, used as a cheap prefilter.
    longest_literal: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RuleOptions {
    /// `Some(true)` for `$third-party`, `Some(false)` for `$~third-party`.
    pub third_party: Option<bool>,
    pub include_domains: Vec<String>,
    pub exclude_domains: Vec<String>,
    pub include_types: Vec<ResourceType>,
    pub exclude_types: Vec<ResourceType>,
    pub unsupported: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterRule {
    pub raw: String,
    pub kind: RuleKind,
    pub pattern: Pattern,
    pub options: RuleOptions,
    pub inert: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum SkipReason {
    Comment,
    Cosmetic,
    Malformed,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RuleParseReport {
    pub lines: usize,
    pub comments: usize,
    pub cosmetic: usize,
    pub malformed: Vec<String>,
    pub inert: Vec<String>,
}

fn is_cosmetic(line: &str) -> bool {
    ["##", "#@#", "#?#", "#$#", "#%#"].iter().any(|m| line.contains(m))
}

fn is_separator(b: u8) -> bool {
    !(b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'.' | b'%'))
}

/// `Ok(None)` for lines that are not network rules (comments, cosmetics).
pub fn parse_rule(line: &str) -> Result<Option<FilterRule>, SkipReason> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('!') || line.starts_with('[') {
        return Err(SkipReason::Comment);
    }
    if is_cosmetic(line) {
        return Err(SkipReason::Cosmetic);
    }
    let (kind, body) = match line.strip_prefix("@@") {
        Some(rest) => (RuleKind::Exception, rest),
        None => (RuleKind::Blocking, line),
    };

    let looks_regex = |s: &str| s.len() > 1 && s.starts_with('/') && s.ends_with('/');
    let (pattern_text, options_text) = if looks_regex(body) {
        (body, None)
    } else {
        match body.rfind('$') {
            Some(i) => (&body[..i], Some(&body[i + 1..])),
            None => (body, None),
        }
    };
    let is_regex = looks_regex(pattern_text);

    let mut options = RuleOptions::default();
    if let Some(opts) = options_text {
        if opts.is_empty() {
            return Err(SkipReason::Malformed);
        }
        for opt in opts.split(',') {
            let opt = opt.trim();
            let (negated, name) = match opt.strip_prefix('~') {
                Some(n) => (true, n),
                None => (false, opt),
            };
            let lname = name.to_ascii_lowercase();
            if lname == "third-party" || lname == "3p" {
                options.third_party = Some(!negated);
            } else if lname == "first-party" || lname == "1p" {
                options.third_party = Some(negated);
            } else if let Some(list) = lname.strip_prefix("domain=") {
                if negated || list.is_empty() {
                    return Err(SkipReason::Malformed);
                }
                for d in list.split('|').filter(|d| !d.is_empty()) {
                    match d.strip_prefix('~') {
                        Some(ex) => options.exclude_domains.push(ex.to_string()),
                        None => options.include_domains.push(d.to_string()),
                    }
                }
            } else if let Some(rt) = ResourceType::from_option(&lname) {
                if negated {
                    options.exclude_types.push(rt);
                } else {
                    options.include_types.push(rt);
                }
            } else {
                options.unsupported.push(opt.to_string());
            }
        }
    }

    let (anchor, rest) = if let Some(r) = pattern_text.strip_prefix("||") {
        (Anchor::Domain, r)
    } else if let Some(r) = pattern_text.strip_prefix('|') {
        (Anchor::Start, r)
    } else {
        (Anchor::Plain, pattern_text)
    };
    let (end_anchor, rest) = match rest.strip_suffix('|') {
        Some(r) => (true, r),
        None => (false, rest),
    };
    if rest.is_empty() && anchor != Anchor::Plain {
        return Err(SkipReason::Malformed);
    }

    let lower = rest.to_ascii_lowercase();
    let mut units = Vec::with_capacity(lower.len());
    let mut longest = String::new();
    let mut current = String::new();
    for b in lower.bytes() {
        match b {
            b'*' => {
                if units.last() != Some(&Unit::Wildcard) {
                    units.push(Unit::Wildcard);
                }
            }
            b'^' => units.push(Unit::Separator),
            _ => units.push(Unit::Char(b)),
        }
        if matches!(b, b'*' | b'^') {
            if current.len() > longest.len() {
                longest = std::mem::take(&mut current);
            }
            current.clear();
        } else {
            current.push(b as char);
        }
    }
    if current.len() > longest.len() {
        longest = current;
    }
    if !end_anchor && units.last() != Some(&Unit::Wildcard) {
        units.push(Unit::Wildcard);
    }
    if anchor == Anchor::Plain && units.first() != Some(&Unit::Wildcard) {
        units.insert(0, Unit::Wildcard);
    }

    let inert = is_regex || !options.unsupported.is_empty();
    Ok(Some(FilterRule {
        raw: line.to_string(),
        kind,
        pattern: Pattern {
            anchor,
            end_anchor,
            units,
            longest_literal: longest,
        },
        options,
        inert,
    }))
}

/// Glob-style match of `units` against the whole of `text`, where `^` also
/// matches the end of input.
fn glob_match(units: &[Unit], text: &[u8]) -> bool {
    let (mut p, mut t) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while t < text.len() {
        match units.get(p) {
            Some(Unit::Wildcard) => {
                star = Some((p, t));
                p += 1;
            }
            Some(Unit::Char(c)) if *c == text[t] => {
                p += 1;
                t += 1;
            }
            Some(Unit::Separator) if is_separator(text[t]) => {
                p += 1;
                t += 1;
            }
            _ => match star {
                Some((sp, st)) => {
                    p = sp + 1;
                    t = st + 1;
                    star = Some((sp, st + 1));
                }
                None => return false,
            },
        }
    }
    units[p..].iter().all(|u| matches!(u, Unit::Wildcard | Unit::Separator))
}

impl Pattern {
    pub fn matches(&self, url: &str, host_range: Option<(usize, usize)>) -> bool {
        let url_l = url.to_ascii_lowercase();
        if !url_l.contains(&self.longest_literal) {
            return false;
        }
        let bytes = url_l.as_bytes();
        let units = &self.units;
        match self.anchor {
            Anchor::Start | Anchor::Plain => glob_match(units, bytes),
            Anchor::Domain => {
                let Some((start, end)) = host_range else {
                    return false;
                };
                let host = &bytes[start..end];
                let starts = std::iter::once(start)
                    .chain(host.iter().enumerate().filter(|(_, b)| **b == b'.').map(|(i, _)| start + i + 1));
                starts
                    .filter(|&s| s < end)
                    .any(|s| glob_match(units, &bytes[s..]))
            }
        }
    }
}

/// What a rule is evaluated against.
#[derive(Debug, Clone)]
pub struct RequestContext<'a> {
    pub url: &'a Url,
    pub resource_type: ResourceType,
    pub page_domain: &'a str,
    pub initiator_domain: Option<&'a str>,
}

impl FilterRule {
    fn options_hold(&self, req: &RequestContext<'_>, psl: &PublicSuffixTable) -> bool {
        let o = &self.options;
        if let Some(want_third) = o.third_party {
            let host = req.url.host_str().unwrap_or("");
            let is_third = psl
                .registrable_domain(host)
                .map(|d| d != req.page_domain)
                .unwrap_or(true);
            if is_third != want_third {
                return false;
            }
        }
        if !o.include_domains.is_empty()
            && !o.include_domains.iter().any(|d| host_matches_domain(req.page_domain, d))
        {
            return false;
        }
        if o.exclude_domains.iter().any(|d| host_matches_domain(req.page_domain, d)) {
            return false;
        }
        if !o.include_types.is_empty() && !o.include_types.contains(&req.resource_type) {
            return false;
        }
        !o.exclude_types.contains(&req.resource_type)
    }

    pub fn matches(&self, req: &RequestContext<'_>, psl: &PublicSuffixTable) -> bool {
        if self.inert {
            return false;
        }
        let url = req.url.as_str();
        let host_range = req.url.host_str().and_then(|h| {
            let after_scheme = url.find("://").map_or(0, |i| i + 3);
            let start = after_scheme + url[after_scheme..].find(h)?;
            Some((start, start + h.len()))
        });
        self.pattern.matches(url, host_range) && self.options_hold(req, psl)
    }
}

/// Parsed rules, sorted by their text so verdicts never depend on file order.
#[derive(Debug, Clone, Default)]
pub struct RuleSet {
    blocking: Vec<FilterRule>,
    exceptions: Vec<FilterRule>,
    inert: Vec<FilterRule>,
    pub report: RuleParseReport,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MatchOutcome<'a> {
    Blocked(&'a FilterRule),
    Allowed,
}

impl RuleSet {
    pub fn parse(text: &str) -> Self {
        let mut set = RuleSet::default();
        set.extend(text);
        set
    }

    /// Adds rules from another list (e.g. combining two lists).
    pub fn extend(&mut self, text: &str) {
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            self.report.lines += 1;
            match parse_rule(line) {
                Ok(Some(rule)) if rule.inert => {
                    self.report.inert.push(rule.raw.clone());
                    self.inert.push(rule);
                }
                Ok(Some(rule)) => match rule.kind {
                    RuleKind::Blocking => self.blocking.push(rule),
                    RuleKind::Exception => self.exceptions.push(rule),
                },
                Ok(None) => {}
                Err(SkipReason::Comment) => self.report.comments += 1,
                Err(SkipReason::Cosmetic) => self.report.cosmetic += 1,
                Err(SkipReason::Malformed) => self.report.malformed.push(line.trim().to_string()),
            }
        }
        for list in [&mut self.blocking, &mut self.exceptions, &mut self.inert] {
            list.sort_by(|a, b| a.raw.cmp(&b.raw));
            list.dedup_by(|a, b| a.raw == b.raw);
        }
    }

    pub fn blocking_rules(&self) -> &[FilterRule] {
        &self.blocking
    }

    pub fn exception_rules(&self) -> &[FilterRule] {
        &self.exceptions
    }

    pub fn inert_rules(&self) -> &[FilterRule] {
        &self.inert
    }

    pub fn is_empty(&self) -> bool {
        self.blocking.is_empty()
    }

    /// Exceptions always win over blocking rules.
    pub fn match_request(&self, req: &RequestContext<'_>, psl: &PublicSuffixTable) -> MatchOutcome<'_> {
        let Some(rule) = self.blocking.iter().find(|r| r.matches(req, psl)) else {
            return MatchOutcome::Allowed;
        };
        if self.exceptions.iter().any(|r| r.matches(req, psl)) {
            return MatchOutcome::Allowed;
        }
        MatchOutcome::Blocked(rule)
    }
}
