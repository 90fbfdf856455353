//! Identifier-cookie detection across two crawls from different machines.
//!
//! A `(host, key)` pair is *safe* when the same value shows up in both
//! crawls, *unknown* when it shows up in only one, and an *identifier* when it
//! is present in both with no value in common. Pairs whose value travels
//! between keys across the crawls store the identifier in the key itself and
//! are set aside.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::model::{CookieAction, CookieKey, CrawlDataset, PairedCrawls};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CookieClass {
    Safe,
    Unknown,
    IdAsKey,
    Identifier,
}

impl CookieClass {
    pub const ALL: [CookieClass; 4] = [
        CookieClass::Safe,
        CookieClass::Unknown,
        CookieClass::IdAsKey,
        CookieClass::Identifier,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CookieConfig {
    /// Minimum value length for id-as-key matching.
    pub id_as_key_min_value_len: usize,
}

impl Default for CookieConfig {
    fn default() -> Self {
        Self {
            id_as_key_min_value_len: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IdAsKeyDetection {
    pub host: String,
    pub key_a: String,
    pub key_b: String,
    pub shared_value: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub safe: usize,
    pub unknown: usize,
    pub id_as_key: usize,
    pub identifier: usize,
}

impl ClassCounts {
    fn bump(&mut self, class: CookieClass, by: usize) {
        match class {
            CookieClass::Safe => self.safe += by,
            CookieClass::Unknown => self.unknown += by,
            CookieClass::IdAsKey => self.id_as_key += by,
            CookieClass::Identifier => self.identifier += by,
        }
    }

    pub fn total(&self) -> usize {
        self.safe + self.unknown + self.id_as_key + self.identifier
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CookieClassification {
    classes: HashMap<CookieKey, CookieClass>,
    identifier_values: BTreeMap<CookieKey, (BTreeSet<String>, BTreeSet<String>)>,
    id_as_key: Vec<IdAsKeyDetection>,
    /// Counted over (host, key) pairs.
    pub pair_counts: ClassCounts,
    /// Counted over distinct (crawl, host, key, value) observations.
    pub instance_counts: ClassCounts,
}

impl CookieClassification {
    /// Class of a pair; pairs never observed are `Unknown`.
    pub fn lookup(&self, key: &CookieKey) -> CookieClass {
        self.classes.get(key).copied().unwrap_or(CookieClass::Unknown)
    }

    pub fn is_identifier(&self, key: &CookieKey) -> bool {
        self.lookup(key) == CookieClass::Identifier
    }

    pub fn identifier_values(&self) -> &BTreeMap<CookieKey, (BTreeSet<String>, BTreeSet<String>)> {
        &self.identifier_values
    }

    pub fn id_as_key_detections(&self) -> &[IdAsKeyDetection] {
        &self.id_as_key
    }

    /// Every classified pair, sorted.
    pub fn entries(&self) -> Vec<(&CookieKey, CookieClass)> {
        let mut v: Vec<_> = self.classes.iter().map(|(k, c)| (k, *c)).collect();
        v.sort();
        v
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifiedPair {
    pub host: String,
    pub key: String,
    pub class: CookieClass,
}

/// Serializable view of a [`CookieClassification`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CookieReport {
    pub pair_counts: ClassCounts,
    pub instance_counts: ClassCounts,
    pub pairs: Vec<ClassifiedPair>,
    pub id_as_key: Vec<IdAsKeyDetection>,
}

impl CookieClassification {
    pub fn report(&self) -> CookieReport {
        CookieReport {
            pair_counts: self.pair_counts.clone(),
            instance_counts: self.instance_counts.clone(),
            pairs: self
                .entries()
                .into_iter()
                .map(|(k, class)| ClassifiedPair {
                    host: k.host.clone(),
                    key: k.key.clone(),
                    class,
                })
                .collect(),
            id_as_key: self.id_as_key.clone(),
        }
    }
}

/// Same host and value under different keys across the two crawls.
pub fn detect_id_as_key(p: &PairedCrawls, cfg: &CookieConfig) -> Vec<IdAsKeyDetection> {
    // host -> value -> keys, per crawl
    type ByValue<'a> = BTreeMap<&'a str, BTreeMap<&'a str, BTreeSet<&'a str>>>;
    let mut a: ByValue = BTreeMap::new();
    let mut b: ByValue = BTreeMap::new();
    for (k, (va, vb)) in &p.pairing {
        for v in va.iter().filter(|v| v.chars().count() >= cfg.id_as_key_min_value_len) {
            a.entry(&k.host).or_default().entry(v).or_default().insert(&k.key);
        }
        for v in vb.iter().filter(|v| v.chars().count() >= cfg.id_as_key_min_value_len) {
            b.entry(&k.host).or_default().entry(v).or_default().insert(&k.key);
        }
    }
    let mut out = Vec::new();
    for (host, values_a) in &a {
        let Some(values_b) = b.get(host) else {
            continue;
        };
        for (value, keys_a) in values_a {
            let Some(keys_b) = values_b.get(value) else {
                continue;
            };
            for ka in keys_a {
                for kb in keys_b.iter().filter(|kb| *kb != ka) {
                    out.push(IdAsKeyDetection {
                        host: host.to_string(),
                        key_a: ka.to_string(),
                        key_b: kb.to_string(),
                        shared_value: value.to_string(),
                    });
                }
            }
        }
    }
    out
}

/// Partitions every `(host, key)` of the pairing into the four classes.
///
/// Precedence is Safe, then IdAsKey, then Unknown, then Identifier. No
/// lifetime filter is applied.
pub fn classify_cookies(p: &PairedCrawls, cfg: &CookieConfig) -> CookieClassification {
    let id_as_key = detect_id_as_key(p, cfg);
    let mut rotated: BTreeSet<CookieKey> = BTreeSet::new();
    for d in &id_as_key {
        rotated.insert(CookieKey::new(&d.host, &d.key_a));
        rotated.insert(CookieKey::new(&d.host, &d.key_b));
    }

    let mut out = CookieClassification {
        id_as_key,
        ..Default::default()
    };
    for (k, (va, vb)) in &p.pairing {
        let class = if !va.is_disjoint(vb) {
            CookieClass::Safe
        } else if rotated.contains(k) {
            CookieClass::IdAsKey
        } else if va.is_empty() || vb.is_empty() {
            CookieClass::Unknown
        } else {
            CookieClass::Identifier
        };
        if class == CookieClass::Identifier {
            out.identifier_values.insert(k.clone(), (va.clone(), vb.clone()));
        }
        out.pair_counts.bump(class, 1);
        out.instance_counts.bump(class, va.len() + vb.len());
        out.classes.insert(k.clone(), class);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct JarEvent {
    timestamp: i64,
    value: Option<String>,
    expiry: Option<i64>,
}

/// Replayable view of one crawl's cookie jar, restricted to the pairs the
/// classification marks as identifiers.
#[derive(Debug, Clone, Default)]
pub struct CookieTimeline {
    events: BTreeMap<CookieKey, Vec<JarEvent>>,
}

impl CookieTimeline {
    pub fn build(d: &CrawlDataset, cls: &CookieClassification) -> Self {
        let mut events: BTreeMap<CookieKey, Vec<JarEvent>> = BTreeMap::new();
        for e in d.journal() {
            let key = e.cookie.cookie_key();
            if !cls.is_identifier(&key) {
                continue;
            }
            events.entry(key).or_default().push(JarEvent {
                timestamp: e.timestamp,
                value: (e.action != CookieAction::Deleted).then(|| e.cookie.value.clone()),
                expiry: e.cookie.expiry,
            });
        }
        // Journal order is already by timestamp; keep it.
        Self { events }
    }

    /// Value of `key` in the jar just before time `t`.
    pub fn live_value(&self, key: &CookieKey, t: i64) -> Option<&str> {
        let evs = self.events.get(key)?;
        let idx = evs.partition_point(|e| e.timestamp < t);
        let last = evs.get(idx.checked_sub(1)?)?;
        if last.expiry.is_some_and(|exp| exp <= t) {
            return None;
        }
        last.value.as_deref()
    }

    /// Identifier cookies live just before `t`, as `(key, value)`.
    pub fn live_at(&self, t: i64) -> impl Iterator<Item = (&CookieKey, &str)> {
        self.events
            .keys()
            .filter_map(move |k| self.live_value(k, t).map(|v| (k, v)))
    }

    pub fn keys(&self) -> impl Iterator<Item = &CookieKey> {
        self.events.keys()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{pair_crawls, CookieInstance, CrawlLabel, JournalEntry};

    fn entry(ts: i64, host: &str, key: &str, value: &str) -> JournalEntry {
        JournalEntry {
            timestamp: ts,
            action: CookieAction::Set,
            cookie: CookieInstance::new(host, key, value),
            transaction_id: None,
            page_visit_id: None,
        }
    }

    fn paired(a: &[(&str, &str, &str)], b: &[(&str, &str, &str)]) -> PairedCrawls {
        let mk = |label, xs: &[(&str, &str, &str)]| {
            CrawlDataset::new(
                label,
                vec![],
                xs.iter().enumerate().map(|(i, (h, k, v))| entry(i as i64, h, k, v)).collect(),
            )
        };
        pair_crawls(mk(CrawlLabel::A, a), mk(CrawlLabel::B, b))
    }

    #[test]
    fn basic_classes() {
        let cfg = CookieConfig::default();
        let c = classify_cookies(&paired(&[("t.com", "uid", "abc")], &[("t.com", "uid", "abc")]), &cfg);
        assert_eq!(c.lookup(&CookieKey::new("t.com", "uid")), CookieClass::Safe);

        let c = classify_cookies(&paired(&[("t.com", "uid", "abc")], &[]), &cfg);
        assert_eq!(c.lookup(&CookieKey::new("t.com", "uid")), CookieClass::Unknown);

        let c = classify_cookies(&paired(&[("t.com", "uid", "abc")], &[("t.com", "uid", "xyz")]), &cfg);
        assert_eq!(c.lookup(&CookieKey::new("t.com", "uid")), CookieClass::Identifier);
        assert_eq!(c.identifier_values().len(), 1);
    }

    #[test]
    fn any_shared_value_is_safe() {
        let c = classify_cookies(
            &paired(&[("t.com", "k", "x1"), ("t.com", "k", "x2")], &[("t.com", "k", "x2")]),
            &CookieConfig::default(),
        );
        assert_eq!(c.lookup(&CookieKey::new("t.com", "k")), CookieClass::Safe);
    }

    #[test]
    fn id_as_key() {
        let p = paired(&[("t.com", "u111", "vvvvvvvvvv")], &[("t.com", "u222", "vvvvvvvvvv")]);
        let det = detect_id_as_key(&p, &CookieConfig::default());
        assert_eq!(det.len(), 1);
        assert_eq!(det[0].key_a, "u111");
        assert_eq!(det[0].key_b, "u222");
        let c = classify_cookies(&p, &CookieConfig::default());
        assert_eq!(c.lookup(&CookieKey::new("t.com", "u111")), CookieClass::IdAsKey);
        assert_eq!(c.lookup(&CookieKey::new("t.com", "u222")), CookieClass::IdAsKey);

        let same_key = paired(&[("t.com", "u", "vvvvvvvvvv")], &[("t.com", "u", "vvvvvvvvvv")]);
        assert!(detect_id_as_key(&same_key, &CookieConfig::default()).is_empty());

        let short = paired(&[("t.com", "a", "1")], &[("t.com", "b", "1")]);
        assert!(detect_id_as_key(&short, &CookieConfig::default()).is_empty());
    }

    #[test]
    fn lookup_of_unseen_pair_is_unknown() {
        let c = CookieClassification::default();
        assert_eq!(c.lookup(&CookieKey::new("x.com", "y")), CookieClass::Unknown);
    }

    #[test]
    fn partition_counts() {
        let c = classify_cookies(
            &paired(
                &[("a.com", "s", "same"), ("a.com", "id", "one"), ("b.com", "u", "x")],
                &[("a.com", "s", "same"), ("a.com", "id", "two")],
            ),
            &CookieConfig::default(),
        );
        assert_eq!(c.pair_counts.total(), 3);
        assert_eq!(c.pair_counts, ClassCounts { safe: 1, unknown: 1, id_as_key: 0, identifier: 1 });
        assert_eq!(c.instance_counts.total(), 5);
    }

    #[test]
    fn timeline_replays_jar() {
        let mut journal = vec![entry(10, "t.com", "id", "v1"), entry(20, "t.com", "id", "v2")];
        let mut del = entry(30, "t.com", "id", "v2");
        del.action = CookieAction::Deleted;
        journal.push(del);
        let mut expiring = entry(5, "e.com", "id", "ev");
        expiring.cookie.expiry = Some(15);
        journal.push(expiring);
        let a = CrawlDataset::new(CrawlLabel::A, vec![], journal);
        let b = CrawlDataset::new(
            CrawlLabel::B,
            vec![],
            vec![entry(1, "t.com", "id", "other"), entry(1, "e.com", "id", "other")],
        );
        let p = pair_crawls(a, b);
        let cls = classify_cookies(&p, &CookieConfig::default());
        let tl = CookieTimeline::build(&p.crawl_a, &cls);
        let key = CookieKey::new("t.com", "id");
        assert_eq!(tl.live_value(&key, 10), None);
        assert_eq!(tl.live_value(&key, 11), Some("v1"));
        assert_eq!(tl.live_value(&key, 25), Some("v2"));
        assert_eq!(tl.live_value(&key, 31), None);
        assert_eq!(tl.live_value(&CookieKey::new("e.com", "id"), 10), Some("ev"));
        assert_eq!(tl.live_value(&CookieKey::new("e.com", "id"), 16), None);
    }
}
