use std::collections::BTreeMap;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::psl::normalize_host;

/// Tracker domains with an informational category each. Matching is by
/// host suffix on label boundaries.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DisconnectList {
    entries: BTreeMap<String, Option<String>>,
}

impl DisconnectList {
    /// Accepts the structured form (`categories → [ {entity: {url: [domains]}} ]`)
    /// or plain text with one domain per line (`#` comments).
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            Self::parse_json(text)
        } else {
            Ok(Self::parse_lines(text))
        }
    }

    pub fn parse_lines(text: &str) -> Self {
        let mut list = Self::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            list.insert(line, None);
        }
        list
    }

    fn parse_json(text: &str) -> Result<Self> {
        let root: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("disconnect list: {e}")))?;
        let categories = root.get("categories").unwrap_or(&root);
        let Some(categories) = categories.as_object() else {
            return Err(Error::Config("disconnect list: expected an object of categories".into()));
        };
        let mut list = Self::default();
        for (category, entities) in categories {
            let entities: Vec<&Value> = match entities {
                Value::Array(a) => a.iter().collect(),
                Value::Object(_) => vec![entities],
                _ => continue,
            };
            for entity in entities.iter().filter_map(|e| e.as_object()) {
                for properties in entity.values().filter_map(|p| p.as_object()) {
                    for domains in properties.values().filter_map(|d| d.as_array()) {
                        for domain in domains.iter().filter_map(|d| d.as_str()) {
                            list.insert(domain, Some(category.clone()));
                        }
                    }
                }
            }
        }
        Ok(list)
    }

    pub fn insert(&mut self, domain: &str, category: Option<String>) {
        let d = normalize_host(domain);
        if !d.is_empty() {
            self.entries.entry(d).or_insert(category);
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The entry covering `host`, if any.
    pub fn matching_entry(&self, host: &str) -> Option<&str> {
        let host = normalize_host(host);
        let mut rest = host.as_str();
        loop {
            if let Some((k, _)) = self.entries.get_key_value(rest) {
                return Some(k);
            }
            rest = rest.split_once('.')?.1;
        }
    }

    pub fn matches(&self, host: &str) -> bool {
        self.matching_entry(host).is_some()
    }

    pub fn category(&self, entry: &str) -> Option<&str> {
        self.entries.get(entry).and_then(|c| c.as_deref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suffix_matching_on_dot_boundaries() {
        let l = DisconnectList::parse_lines("doubleclick.net\n# c\n");
        assert!(l.matches("stats.doubleclick.net"));
        assert!(l.matches("doubleclick.net"));
        assert!(!l.matches("notdoubleclick.net"));
        assert!(!DisconnectList::default().matches("doubleclick.net"));
    }

    #[test]
    fn structured_format() {
        let json = r#"{"license": "x", "categories": {
            "Advertising": [{"Google": {"http://www.google.com/": ["doubleclick.net", "googlesyndication.com"]}}],
            "Analytics": [{"Acme": {"http://acme.example/": ["acme-metrics.com"], "performance": "true"}}]
        }}"#;
        let l = DisconnectList::parse(json).unwrap();
        assert_eq!(l.len(), 3);
        assert_eq!(l.category("acme-metrics.com"), Some("Analytics"));
        assert!(l.matches("pagead2.googlesyndication.com"));
        assert!(DisconnectList::parse("{ not json").is_err());
    }
}
