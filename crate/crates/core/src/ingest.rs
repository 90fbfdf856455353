//! Line-delimited crawl-log reader and writer.
//!
//! Every line is one JSON object whose `kind` is `page_visit`, `transaction`
//! or `cookie_event`. Records may appear in any order; grouping and time
//! ordering happen after the whole stream has been read.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use url::Url;

use crate::error::{Error, Result};
use crate::model::{
    CookieAction, CookieInstance, CrawlDataset, CrawlLabel, Headers, HttpTransaction, JournalEntry, PageVisit,
    ORPHAN_VISIT_ID,
};
use crate::psl::{normalize_host, PublicSuffixTable};

/// Response bodies are kept only for images strictly below this size.
pub const BODY_CAP_BYTES: usize = 100 * 1024;

#[derive(Debug, Clone, Copy, Default)]
pub struct IngestOptions {
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ParseReport {
    pub lines: usize,
    pub page_visits: usize,
    pub transactions: usize,
    pub cookie_events: usize,
    pub orphan_transactions: usize,
    pub bodies_dropped: usize,
    pub skipped: Vec<SkippedLine>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PageVisitRecord {
    page_visit_id: String,
    first_party_url: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct TransactionRecord {
    transaction_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    page_visit_id: Option<String>,
    url: String,
    #[serde(default = "default_method")]
    method: String,
    #[serde(default)]
    request_headers: Headers,
    #[serde(default)]
    response_status: Option<u16>,
    #[serde(default)]
    response_headers: Headers,
    #[serde(default)]
    cookies_sent: Vec<CookieInstance>,
    #[serde(default)]
    cookies_set: Vec<CookieInstance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    body_b64: Option<String>,
    timestamp: i64,
}

fn default_method() -> String {
    "GET".into()
}

#[derive(Debug, Serialize, Deserialize)]
struct CookieEventRecord {
    timestamp: i64,
    action: CookieAction,
    cookie: CookieInstance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    transaction_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    page_visit_id: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Record {
    PageVisit(PageVisitRecord),
    Transaction(TransactionRecord),
    CookieEvent(CookieEventRecord),
}

struct Violation {
    field: String,
    message: String,
}

impl Violation {
    fn new(field: &str, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }

    fn from_json(err: &serde_json::Error) -> Self {
        let msg = err.to_string();
        let field = msg
            .split('`')
            .nth(1)
            .filter(|_| msg.contains("field"))
            .unwrap_or("record")
            .to_string();
        Self { field, message: msg }
    }
}

fn normalize_cookie(mut c: CookieInstance) -> CookieInstance {
    c.host = normalize_host(&c.host);
    c
}

fn build_transaction(
    rec: TransactionRecord,
    strict: bool,
    report: &mut ParseReport,
) -> std::result::Result<HttpTransaction, Violation> {
    let url = Url::parse(&rec.url).map_err(|e| Violation::new("url", e.to_string()))?;
    if url.host_str().is_none() {
        return Err(Violation::new("url", "URL has no host"));
    }
    let page_visit_id = match rec.page_visit_id {
        Some(id) if !id.is_empty() => id,
        _ if strict => return Err(Violation::new("page_visit_id", "missing page_visit_id")),
        _ => ORPHAN_VISIT_ID.to_string(),
    };
    let mut tx = HttpTransaction {
        transaction_id: rec.transaction_id,
        page_visit_id,
        url,
        method: rec.method,
        request_headers: rec.request_headers,
        response_status: rec.response_status,
        response_headers: rec.response_headers,
        cookies_sent: rec.cookies_sent.into_iter().map(normalize_cookie).collect(),
        cookies_set: rec.cookies_set.into_iter().map(normalize_cookie).collect(),
        body: None,
        timestamp: rec.timestamp,
    };
    if let Some(b64) = rec.body_b64 {
        let body = STANDARD
            .decode(b64.trim())
            .map_err(|e| Violation::new("body_b64", e.to_string()))?;
        let declared_ok = tx.content_length().is_none_or(|n| n < BODY_CAP_BYTES as u64);
        if tx.is_image() && body.len() < BODY_CAP_BYTES && declared_ok {
            tx.body = Some(body);
        } else {
            report.bodies_dropped += 1;
        }
    }
    Ok(tx)
}

/// Reads a crawl log into an indexed dataset.
///
/// In lenient mode malformed lines are skipped and listed in the report;
/// transactions without a page visit land in a synthetic orphan visit.
pub fn parse_crawl_log<R: BufRead>(
    input: R,
    label: CrawlLabel,
    psl: &PublicSuffixTable,
    opts: IngestOptions,
) -> Result<(CrawlDataset, ParseReport)> {
    let mut report = ParseReport::default();
    let mut visits: Vec<PageVisit> = Vec::new();
    let mut visit_index: BTreeMap<String, usize> = BTreeMap::new();
    let mut transactions: Vec<HttpTransaction> = Vec::new();
    let mut seen_tx: HashSet<String> = HashSet::new();
    let mut journal: Vec<JournalEntry> = Vec::new();

    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(Error::UnreadableInput)?;
        if line.trim().is_empty() {
            continue;
        }
        report.lines += 1;

        let outcome: std::result::Result<(), Violation> = (|| {
            let record: Record = serde_json::from_str(&line).map_err(|e| Violation::from_json(&e))?;
            match record {
                Record::PageVisit(pv) => {
                    if visit_index.contains_key(&pv.page_visit_id) {
                        return Err(Violation::new("page_visit_id", "duplicate page visit"));
                    }
                    let domain = Url::parse(&pv.first_party_url)
                        .ok()
                        .and_then(|u| u.host_str().map(str::to_string))
                        .and_then(|h| psl.registrable_domain(&h).ok());
                    let domain = match domain {
                        Some(d) => d,
                        None if opts.strict => {
                            return Err(Violation::new("first_party_url", "no registrable domain"))
                        }
                        None => String::new(),
                    };
                    visit_index.insert(pv.page_visit_id.clone(), visits.len());
                    visits.push(PageVisit {
                        page_visit_id: pv.page_visit_id,
                        first_party_url: pv.first_party_url,
                        first_party_domain: domain,
                        transactions: Vec::new(),
                    });
                    report.page_visits += 1;
                }
                Record::Transaction(rec) => {
                    if seen_tx.contains(&rec.transaction_id) {
                        return Err(Violation::new("transaction_id", "duplicate transaction"));
                    }
                    let tx = build_transaction(rec, opts.strict, &mut report)?;
                    seen_tx.insert(tx.transaction_id.clone());
                    transactions.push(tx);
                }
                Record::CookieEvent(ev) => {
                    journal.push(JournalEntry {
                        timestamp: ev.timestamp,
                        action: ev.action,
                        cookie: normalize_cookie(ev.cookie),
                        transaction_id: ev.transaction_id,
                        page_visit_id: ev.page_visit_id,
                    });
                    report.cookie_events += 1;
                }
            }
            Ok(())
        })();

        if let Err(v) = outcome {
            if opts.strict {
                return Err(Error::SchemaViolation {
                    line: line_no,
                    field: v.field,
                    message: v.message,
                });
            }
            report.skipped.push(SkippedLine {
                line: line_no,
                reason: format!("{}: {}", v.field, v.message),
            });
        }
    }

    for tx in transactions {
        let vi = match visit_index.get(&tx.page_visit_id) {
            Some(&vi) => vi,
            None if opts.strict => {
                return Err(Error::SchemaViolation {
                    line: 0,
                    field: "page_visit_id".into(),
                    message: format!("transaction {} references unknown visit {}", tx.transaction_id, tx.page_visit_id),
                })
            }
            None => {
                report.orphan_transactions += 1;
                *visit_index.entry(ORPHAN_VISIT_ID.to_string()).or_insert_with(|| {
                    visits.push(PageVisit {
                        page_visit_id: ORPHAN_VISIT_ID.into(),
                        first_party_url: String::new(),
                        first_party_domain: String::new(),
                        transactions: Vec::new(),
                    });
                    visits.len() - 1
                })
            }
        };
        let visit_id = visits[vi].page_visit_id.clone();
        let mut tx = tx;
        tx.page_visit_id = visit_id;
        visits[vi].transactions.push(tx);
        report.transactions += 1;
    }

    // The orphan visit, when present, always sorts last.
    if let Some(pos) = visits.iter().position(PageVisit::is_orphan) {
        let orphan = visits.remove(pos);
        visits.push(orphan);
    }

    Ok((CrawlDataset::from_visits(label, visits, journal), report))
}

pub fn load_crawl_log(
    path: &Path,
    label: CrawlLabel,
    psl: &PublicSuffixTable,
    opts: IngestOptions,
) -> Result<(CrawlDataset, ParseReport)> {
    let file = File::open(path).map_err(Error::UnreadableInput)?;
    parse_crawl_log(BufReader::new(file), label, psl, opts)
}

/// Writes `d` in the line-delimited format: visits, then transactions, then
/// every journal entry as a `cookie_event`.
pub fn write_crawl_log<W: Write>(d: &CrawlDataset, mut out: W) -> std::io::Result<()> {
    let mut emit = |rec: &Record| -> std::io::Result<()> {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n")
    };
    for v in d.page_visits().iter().filter(|v| !v.is_orphan()) {
        emit(&Record::PageVisit(PageVisitRecord {
            page_visit_id: v.page_visit_id.clone(),
            first_party_url: v.first_party_url.clone(),
        }))?;
    }
    for (v, t) in d.transactions() {
        emit(&Record::Transaction(TransactionRecord {
            transaction_id: t.transaction_id.clone(),
            page_visit_id: (!v.is_orphan()).then(|| t.page_visit_id.clone()),
            url: t.url.to_string(),
            method: t.method.clone(),
            request_headers: t.request_headers.clone(),
            response_status: t.response_status,
            response_headers: t.response_headers.clone(),
            cookies_sent: t.cookies_sent.clone(),
            cookies_set: t.cookies_set.clone(),
            body_b64: t.body.as_ref().map(|b| STANDARD.encode(b)),
            timestamp: t.timestamp,
        }))?;
    }
    for e in d.journal() {
        emit(&Record::CookieEvent(CookieEventRecord {
            timestamp: e.timestamp,
            action: e.action,
            cookie: e.cookie.clone(),
            transaction_id: e.transaction_id.clone(),
            page_visit_id: e.page_visit_id.clone(),
        }))?;
    }
    Ok(())
}

pub fn serialize_crawl_log(d: &CrawlDataset) -> String {
    let mut buf = Vec::new();
    write_crawl_log(d, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, strict: bool) -> Result<(CrawlDataset, ParseReport)> {
        parse_crawl_log(
            text.as_bytes(),
            CrawlLabel::A,
            &PublicSuffixTable::naive(),
            IngestOptions { strict },
        )
    }

    const FIXTURE: &str = r#"{"kind":"page_visit","page_visit_id":"pv1","first_party_url":"https://www.site.com/"}
{"kind":"transaction","transaction_id":"t1","page_visit_id":"pv1","url":"https://px.tracker.com/p.gif?u=1","method":"GET","request_headers":[["Referer","https://www.site.com/"]],"response_status":200,"response_headers":[["Content-Type","image/gif"]],"timestamp":1000}
{"kind":"cookie_event","timestamp":1000,"action":"set","cookie":{"host":".tracker.com","key":"uid","value":"abcdef123456"},"transaction_id":"t1","page_visit_id":"pv1"}
"#;

    #[test]
    fn empty_input() {
        let (d, r) = parse("", false).unwrap();
        assert_eq!(d.page_visits().len(), 0);
        assert_eq!(d.transaction_count(), 0);
        assert_eq!(r.lines, 0);
    }

    #[test]
    fn three_line_fixture() {
        let (d, r) = parse(FIXTURE, true).unwrap();
        assert_eq!(d.page_visits().len(), 1);
        assert_eq!(d.transaction_count(), 1);
        assert_eq!(d.journal().len(), 1);
        assert_eq!(d.journal()[0].cookie.host, "tracker.com");
        assert_eq!(d.page_visits()[0].first_party_domain, "site.com");
        assert_eq!(r.cookie_events, 1);
        assert!(r.skipped.is_empty());
    }

    #[test]
    fn invalid_url_is_skipped_in_lenient_mode() {
        let text = format!(
            "{FIXTURE}{}\n",
            r#"{"kind":"transaction","transaction_id":"t2","page_visit_id":"pv1","url":"not a url","timestamp":5}"#
        );
        let (d, r) = parse(&text, false).unwrap();
        assert_eq!(d.transaction_count(), 1);
        assert_eq!(r.skipped.len(), 1);
        assert_eq!(r.skipped[0].line, 4);

        match parse(&text, true) {
            Err(Error::SchemaViolation { line, field, .. }) => {
                assert_eq!(line, 4);
                assert_eq!(field, "url");
            }
            other => panic!("expected schema violation, got {other:?}"),
        }
    }

    #[test]
    fn missing_field_names_the_field() {
        let text = r#"{"kind":"transaction","transaction_id":"t2","page_visit_id":"pv1","timestamp":5}"#;
        match parse(text, true) {
            Err(Error::SchemaViolation { field, .. }) => assert_eq!(field, "url"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn orphans_are_grouped_or_rejected() {
        let text = r#"{"kind":"transaction","transaction_id":"t9","url":"https://x.com/","timestamp":5}"#;
        let (d, r) = parse(text, false).unwrap();
        assert_eq!(r.orphan_transactions, 1);
        assert!(d.page_visits()[0].is_orphan());
        assert!(parse(text, true).is_err());
    }

    #[test]
    fn bodies_respect_image_and_size_cap() {
        let big = STANDARD.encode(vec![0u8; BODY_CAP_BYTES]);
        let small = STANDARD.encode(b"GIF89a\x01\x00\x01\x00");
        let text = format!(
            r#"{{"kind":"page_visit","page_visit_id":"pv","first_party_url":"https://s.com/"}}
{{"kind":"transaction","transaction_id":"a","page_visit_id":"pv","url":"https://t.com/a","response_headers":[["Content-Type","image/gif"]],"body_b64":"{big}","timestamp":1}}
{{"kind":"transaction","transaction_id":"b","page_visit_id":"pv","url":"https://t.com/b","response_headers":[["Content-Type","text/html"]],"body_b64":"{small}","timestamp":2}}
{{"kind":"transaction","transaction_id":"c","page_visit_id":"pv","url":"https://t.com/c","response_headers":[["Content-Type","image/gif"]],"body_b64":"{small}","timestamp":3}}
"#
        );
        let (d, r) = parse(&text, true).unwrap();
        assert_eq!(r.bodies_dropped, 2);
        assert!(d.transaction("a").unwrap().1.body.is_none());
        assert!(d.transaction("b").unwrap().1.body.is_none());
        assert_eq!(d.transaction("c").unwrap().1.body.as_deref().unwrap().len(), 10);
    }

    #[test]
    fn round_trip_reproduces_dataset() {
        let (d, _) = parse(FIXTURE, true).unwrap();
        let text = serialize_crawl_log(&d);
        let (again, _) = parse(&text, true).unwrap();
        assert_eq!(d, again);
    }
}
