//! Plan-then-render corpus generation.
//!
//! A scenario is first expanded into *plants*: small groups of request
//! drafts, each carrying the labels it should receive. Plants are assigned
//! to page visits and rendered twice, once per crawl. Both renderings share
//! structure and timestamps; they differ only where two independent
//! browsers would: identifier values, one-sided cookies, rotated keys.

use std::collections::BTreeSet;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine as _;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use url::Url;

use super::scenario::{ScenarioConfig, ThirdPartySpec};
use super::truth::{GroundTruth, TruthEntry};
use crate::behavior::BehaviorCategory;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::filter::BlockStatus;
use crate::model::{
    CookieAction, CookieContext, CookieInstance, CookieOrigin, CrawlDataset, CrawlLabel, Headers, HttpTransaction,
    JournalEntry, PageVisit,
};
use crate::pixel::fixtures;
use crate::sharing::{ga_extract, EsRule, Technique};

const BASE_TS: i64 = 1_700_000_000_000;
const STEP_MS: i64 = 10;
const VISIT_GAP_MS: i64 = 1_000;
/// Upper bound on plants per page visit before a scenario is rejected.
pub const MAX_PLANTS_PER_VISIT: usize = 64;
const SYNC_PARAM: &str = "partner_uid";
const COLLECT_PARAM: &str = "cid";

const THIRD_PARTY_TECHNIQUES: [Technique; 5] = [Technique::DS, Technique::PPS, Technique::PCS, Technique::B64, Technique::ES];
const FIRST_PARTY_TECHNIQUES: [Technique; 4] = [Technique::DS, Technique::PPS, Technique::GA, Technique::B64];

#[derive(Debug, Clone, Copy)]
enum Transform {
    Raw,
    /// Embeds the value as one token among others.
    Wrap,
    /// The middle token of a composite value.
    Token,
    B64,
    Ga,
}

impl Transform {
    fn for_technique(t: Technique) -> Self {
        match t {
            Technique::DS | Technique::ES => Transform::Raw,
            Technique::PPS => Transform::Wrap,
            Technique::PCS => Transform::Token,
            Technique::B64 => Transform::B64,
            Technique::GA => Transform::Ga,
        }
    }

    fn apply(self, v: &str) -> String {
        match self {
            Transform::Raw => v.to_string(),
            Transform::Wrap => format!("x~{v}~1"),
            Transform::Token => v.split('~').nth(1).unwrap_or(v).to_string(),
            Transform::B64 => URL_SAFE_NO_PAD.encode(v),
            Transform::Ga => ga_extract(v).unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum SiteCookie {
    Fpid,
    Ga,
}

#[derive(Debug, Clone)]
enum Frag {
    Lit(String),
    /// URL of the page being visited.
    Page,
    Value(usize, Transform),
    SiteValue(SiteCookie, Transform),
}

type Tmpl = Vec<Frag>;

fn lit(s: impl Into<String>) -> Tmpl {
    vec![Frag::Lit(s.into())]
}

#[derive(Debug, Clone)]
struct CookieSpec {
    host: String,
    key: [String; 2],
    value: [String; 2],
    in_b: bool,
    identifier: bool,
    context: CookieContext,
    origin: CookieOrigin,
    expiry: Option<i64>,
}

#[derive(Debug, Clone)]
struct TxDraft {
    url: Tmpl,
    status: u16,
    location: Option<Tmpl>,
    referer: Option<Tmpl>,
    content_type: Option<&'static str>,
    body: Option<Vec<u8>>,
    cookies: Vec<usize>,
    categories: Vec<BehaviorCategory>,
    technique: Option<Technique>,
    verdict: BlockStatus,
}

impl TxDraft {
    fn get(url: Tmpl) -> Self {
        Self {
            url,
            status: 200,
            location: None,
            referer: Some(vec![Frag::Page]),
            content_type: None,
            body: None,
            cookies: Vec::new(),
            categories: Vec::new(),
            technique: None,
            verdict: BlockStatus::Allowed,
        }
    }

    fn pixel(url: Tmpl) -> Self {
        Self {
            content_type: Some("image/gif"),
            body: Some(fixtures::TRANSPARENT_GIF.to_vec()),
            ..Self::get(url)
        }
    }

    fn redirect(url: Tmpl, to: Tmpl) -> Self {
        Self {
            status: 302,
            location: Some(to),
            ..Self::get(url)
        }
    }

    fn labeled(mut self, c: BehaviorCategory) -> Self {
        self.categories.push(c);
        self
    }

    fn with_referer(mut self, r: Tmpl) -> Self {
        self.referer = Some(r);
        self
    }

    fn with_cookies(mut self, c: &[usize]) -> Self {
        self.cookies.extend_from_slice(c);
        self
    }

    fn blocked(mut self, s: BlockStatus) -> Self {
        self.verdict = s;
        self
    }

    fn is_image(&self) -> bool {
        self.content_type.is_some_and(|c| c.starts_with("image/"))
    }

    fn is_invisible_image(&self) -> bool {
        self.is_image() && self.body.as_deref() == Some(&fixtures::TRANSPARENT_GIF[..])
    }
}

type Plant = Vec<TxDraft>;

struct Tracker {
    spec: ThirdPartySpec,
    uid: usize,
    sess: usize,
}

impl Tracker {
    fn domain(&self) -> &str {
        &self.spec.domain
    }

    fn does(&self, c: BehaviorCategory) -> bool {
        self.spec.behaviors.contains(&c)
    }

    fn uses(&self, t: Technique) -> bool {
        self.spec.techniques.contains(&t)
    }
}

struct Site {
    domain: String,
    fpid: usize,
    ga: usize,
}

/// Generated corpus: both crawls, ground truth, and the analysis inputs
/// that make the truth reproducible.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub crawl_a: CrawlDataset,
    pub crawl_b: CrawlDataset,
    pub truth: GroundTruth,
    pub run_config: RunConfig,
    pub filter_rules: Vec<String>,
}

struct Generator<'c> {
    cfg: &'c ScenarioConfig,
    rng: ChaCha8Rng,
    cookies: Vec<CookieSpec>,
    trackers: Vec<Tracker>,
    sites: Vec<Site>,
    es_hosts: BTreeSet<String>,
    serial: usize,
}

fn infeasible(msg: impl Into<String>) -> Error {
    Error::InfeasibleConfig(msg.into())
}

impl<'c> Generator<'c> {
    fn new(cfg: &'c ScenarioConfig) -> Self {
        Self {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cookies: Vec::new(),
            trackers: Vec::new(),
            sites: Vec::new(),
            es_hosts: BTreeSet::new(),
            serial: 0,
        }
    }

    fn next_serial(&mut self) -> usize {
        self.serial += 1;
        self.serial
    }

    fn hex(&mut self, len: usize) -> String {
        let mut s = String::with_capacity(len + 16);
        while s.len() < len {
            s.push_str(&format!("{:016x}", self.rng.gen::<u64>()));
        }
        s.truncate(len);
        s
    }

    /// Two distinct values from `make`, one per crawl.
    fn pair(&mut self, make: impl Fn(&mut Self) -> String) -> [String; 2] {
        let a = make(self);
        loop {
            let b = make(self);
            if b != a {
                return [a, b];
            }
        }
    }

    fn identifier_cookie(&mut self, host: &str, key: &str, value: [String; 2], context: CookieContext, origin: CookieOrigin) -> usize {
        self.cookies.push(CookieSpec {
            host: host.to_string(),
            key: [key.to_string(), key.to_string()],
            value,
            in_b: true,
            identifier: true,
            context,
            origin,
            expiry: Some(BASE_TS + 365 * 86_400_000),
        });
        self.cookies.len() - 1
    }

    fn setup(&mut self) -> Result<()> {
        let cfg = self.cfg;
        if cfg.n_sites == 0 || cfg.pages_per_site == 0 {
            return Err(infeasible("scenario needs at least one site and one page per site"));
        }
        let width = cfg.n_sites.saturating_sub(1).to_string().len().max(3);
        for i in 0..cfg.n_sites {
            let domain = format!("site{i:0width$}.org");
            let fpid_value = self.pair(|g| g.hex(16));
            let fpid = self.identifier_cookie(&domain, "_fpid", fpid_value, CookieContext::FirstParty, CookieOrigin::HttpHeader);
            let ga_value = self.pair(|g| {
                let z = g.rng.gen_range(100_000_000u64..1_000_000_000);
                let c = g.rng.gen_range(1_500_000_000u64..1_700_000_000);
                format!("GA1.2.{z}.{c}")
            });
            let ga = self.identifier_cookie(&domain, "_ga", ga_value, CookieContext::FirstParty, CookieOrigin::Script);
            self.sites.push(Site { domain, fpid, ga });
        }
        let specs = cfg.resolved_third_parties();
        let mut seen = BTreeSet::new();
        for spec in specs {
            if !seen.insert(spec.domain.clone()) {
                return Err(infeasible(format!("third party {} is listed twice", spec.domain)));
            }
            let uid_value = self.pair(|g| g.hex(16));
            let uid = self.identifier_cookie(&spec.domain, "uid", uid_value, CookieContext::ThirdParty, CookieOrigin::HttpHeader);
            let sess_value = self.pair(|g| format!("s~{}~1", g.hex(12)));
            let sess = self.identifier_cookie(&spec.domain, "sess", sess_value, CookieContext::ThirdParty, CookieOrigin::HttpHeader);
            self.trackers.push(Tracker { spec, uid, sess });
        }
        Ok(())
    }

    fn tracker_cookies(&self, t: usize) -> [usize; 2] {
        [self.trackers[t].uid, self.trackers[t].sess]
    }

    /// Expands the scenario into Basic plants (in dependency order) and the
    /// remaining plants (order-free).
    fn plan(&mut self) -> Result<(Vec<Plant>, Vec<Plant>)> {
        let cfg = self.cfg;
        let fx = &cfg.filter_fixture;
        let n_blocked = fx.blocked_trackers;
        if n_blocked > self.trackers.len() {
            return Err(infeasible("more blocked trackers than third parties"));
        }
        let needs_blocked = fx.follow_up_chains + fx.blocked_frames + fx.blocked_redirects;
        if needs_blocked > 0 && n_blocked == 0 {
            return Err(infeasible("filter fixture plants need at least one blocked tracker"));
        }
        let active: Vec<usize> = (n_blocked..self.trackers.len()).collect();
        let pool = |c: BehaviorCategory, trackers: &[Tracker]| -> Vec<usize> {
            active.iter().copied().filter(|&t| trackers[t].does(c)).collect()
        };

        // Basic plants: chain heads, establishing plants, chain tails, functional.
        let nb = cfg.planted.basic_tracking;
        let mandatory = 2 * fx.follow_up_chains + cfg.functional_trackers;
        if mandatory > nb {
            return Err(infeasible(format!(
                "{mandatory} BasicTracking plants are needed for follow-up chains and functional trackers, only {nb} planted"
            )));
        }
        let basic_pool = pool(BehaviorCategory::BasicTracking, &self.trackers);
        let n_plain = nb - mandatory;
        if n_plain > 0 && basic_pool.is_empty() {
            return Err(infeasible("no non-blocked third party can do BasicTracking"));
        }

        let mut basic: Vec<Plant> = Vec::new();
        let mut established: BTreeSet<usize> = BTreeSet::new();
        let chain_tracker = |i: usize| i % n_blocked.max(1);
        for i in 0..fx.follow_up_chains {
            let f = chain_tracker(i);
            established.insert(f);
            let n = self.next_serial();
            let d = self.trackers[f].domain().to_string();
            basic.push(vec![TxDraft::pixel(lit(format!("http://ads.{d}/imp.gif?n={n}")))
                .with_cookies(&self.tracker_cookies(f))
                .labeled(BehaviorCategory::BasicTracking)
                .blocked(BlockStatus::DirectMatch)]);
        }
        for i in 0..n_plain {
            let t = basic_pool[i % basic_pool.len()];
            established.insert(t);
            let n = self.next_serial();
            let d = self.trackers[t].domain().to_string();
            basic.push(vec![TxDraft::pixel(lit(format!("http://{d}/px.gif?e=pv&n={n}")))
                .with_cookies(&self.tracker_cookies(t))
                .labeled(BehaviorCategory::BasicTracking)]);
        }
        for i in 0..fx.follow_up_chains {
            let f = chain_tracker(i);
            let n = self.next_serial();
            let d = self.trackers[f].domain().to_string();
            let mut tx = TxDraft::get(lit(format!("http://cdn.{d}/lib.js?n={n}")))
                .with_cookies(&[self.trackers[f].uid])
                .labeled(BehaviorCategory::BasicTracking);
            tx.content_type = Some("application/javascript");
            basic.push(vec![tx]);
        }
        for k in 0..cfg.functional_trackers {
            let domain = format!("media{k}.net");
            let value = self.pair(|g| g.hex(16));
            let fid = self.identifier_cookie(&domain, "fid", value, CookieContext::ThirdParty, CookieOrigin::HttpHeader);
            let mut tx = TxDraft::get(lit(format!("http://static.{domain}/widget.js")))
                .with_cookies(&[fid])
                .labeled(BehaviorCategory::BasicTracking);
            tx.content_type = Some("application/javascript");
            basic.push(vec![tx]);
        }

        let mut others: Vec<Plant> = Vec::new();
        let established: Vec<usize> = established.into_iter().collect();

        // Basic tracking included by another basic tracker.
        let by_pool = pool(BehaviorCategory::BasicTrackingByTracker, &self.trackers);
        for j in 0..cfg.planted.basic_tracking_by_tracker {
            let t = *by_pool
                .get(j % by_pool.len().max(1))
                .ok_or_else(|| infeasible("no third party can do BasicTrackingByTracker"))?;
            let d = self.pick_other(&established, t, j).ok_or_else(|| {
                infeasible("BasicTrackingByTracker needs an initiating basic tracker besides the receiver")
            })?;
            let n = self.next_serial();
            let (td, dd) = (self.trackers[t].domain().to_string(), self.trackers[d].domain().to_string());
            let target = format!("http://{td}/px.gif?e=inc&n={n}");
            let cookies = self.tracker_cookies(t);
            let plant = if j % 2 == 0 {
                vec![TxDraft::pixel(lit(target))
                    .with_referer(lit(format!("http://{dd}/tag.js")))
                    .with_cookies(&cookies)
                    .labeled(BehaviorCategory::BasicTrackingByTracker)]
            } else {
                vec![
                    TxDraft::redirect(lit(format!("http://{dd}/redir?n={n}")), lit(target.clone())),
                    TxDraft::pixel(lit(target))
                        .with_cookies(&cookies)
                        .labeled(BehaviorCategory::BasicTrackingByTracker),
                ]
            };
            others.push(plant);
        }

        // Third-party identifiers synced to another third party.
        for (category, own) in [
            (BehaviorCategory::ThirdToThirdSync, true),
            (BehaviorCategory::CookieForwarding, false),
        ] {
            let receivers = pool(category, &self.trackers);
            for j in 0..cfg.planted.get(category) {
                let (tech, r) = self.pick_receiver(&receivers, &THIRD_PARTY_TECHNIQUES, j, category)?;
                let plant = self.third_party_sync(r, tech, own, j, &established)?;
                others.push(plant);
            }
        }

        // The site's own identifier sent to a third party.
        for (category, own) in [
            (BehaviorCategory::FirstToThirdSync, true),
            (BehaviorCategory::Analytics, false),
        ] {
            let receivers = pool(category, &self.trackers);
            for j in 0..cfg.planted.get(category) {
                let (tech, r) = self.pick_receiver(&receivers, &FIRST_PARTY_TECHNIQUES, j, category)?;
                let site_cookie = if tech == Technique::GA { SiteCookie::Ga } else { SiteCookie::Fpid };
                let n = self.next_serial();
                let rd = self.trackers[r].domain().to_string();
                let mut url = lit(format!("http://{rd}/collect?n={n}&{COLLECT_PARAM}="));
                url.push(Frag::SiteValue(site_cookie, Transform::for_technique(tech)));
                let mut tx = TxDraft::pixel(url).labeled(category);
                tx.technique = Some(tech);
                if own {
                    tx = tx.with_cookies(&self.tracker_cookies(r));
                }
                others.push(vec![tx]);
            }
        }

        // Filter fixture plants without labels.
        for i in 0..fx.blocked_frames {
            let b = self.trackers[i % n_blocked].domain().to_string();
            let n = self.next_serial();
            let host = format!("cdn{}.net", n % 8);
            let frame = format!("http://ads.{b}/frame.html?n={n}");
            let inner = format!("http://{host}/inner{n}.html");
            let mut frame_tx = TxDraft::get(lit(frame.clone())).blocked(BlockStatus::DirectMatch);
            frame_tx.content_type = Some("text/html");
            let mut banner = TxDraft::get(lit(format!("http://{host}/banner{n}.png")))
                .with_referer(lit(frame.clone()))
                .blocked(BlockStatus::BlockedFrameChild);
            banner.content_type = Some("image/png");
            banner.body = Some(fixtures::png(300, 250));
            let mut inner_tx = TxDraft::get(lit(inner.clone()))
                .with_referer(lit(frame))
                .blocked(BlockStatus::BlockedFrameChild);
            inner_tx.content_type = Some("text/html");
            let grandchild = TxDraft::pixel(lit(format!("http://{host}/pixel{n}.gif")))
                .with_referer(lit(inner))
                .blocked(BlockStatus::BlockedFrameChild);
            others.push(vec![frame_tx, banner, inner_tx, grandchild]);
        }
        for i in 0..fx.blocked_redirects {
            let b = self.trackers[i % n_blocked].domain().to_string();
            let n = self.next_serial();
            let landing = format!("http://cdn{}.net/land{n}.gif", n % 8);
            others.push(vec![
                TxDraft::redirect(lit(format!("http://ads.{b}/click?n={n}")), lit(landing.clone()))
                    .blocked(BlockStatus::DirectMatch),
                TxDraft::pixel(lit(landing)).blocked(BlockStatus::RedirectDescendant),
            ]);
        }

        for i in 0..cfg.noise_requests {
            let plant = self.noise(i);
            others.push(plant);
        }

        if let Some(rate) = cfg.invisible_pixel_rate {
            self.pad_images(rate, &basic, &mut others)?;
        }
        Ok((basic, others))
    }

    /// An established tracker other than `not`, rotating with `j`.
    fn pick_other(&self, established: &[usize], not: usize, j: usize) -> Option<usize> {
        let candidates: Vec<usize> = established.iter().copied().filter(|&t| t != not).collect();
        (!candidates.is_empty()).then(|| candidates[j % candidates.len()])
    }

    /// Technique rotates with `j`; the receiver is the next one supporting it.
    fn pick_receiver(
        &self,
        receivers: &[usize],
        techniques: &[Technique],
        j: usize,
        category: BehaviorCategory,
    ) -> Result<(Technique, usize)> {
        for k in 0..techniques.len() {
            let tech = techniques[(j + k) % techniques.len()];
            let able: Vec<usize> = receivers.iter().copied().filter(|&r| self.trackers[r].uses(tech)).collect();
            if !able.is_empty() {
                return Ok((tech, able[(j / techniques.len()) % able.len()]));
            }
        }
        Err(infeasible(format!("no third party can receive {category}")))
    }

    fn third_party_sync(&mut self, r: usize, tech: Technique, own: bool, j: usize, established: &[usize]) -> Result<Plant> {
        let n = self.next_serial();
        let es_param = self.cfg.es_param.clone();
        let rd = self.trackers[r].domain().to_string();
        let own_cookies = if own { self.tracker_cookies(r).to_vec() } else { Vec::new() };
        let finish = |mut tx: TxDraft, category| {
            tx = tx.with_cookies(&own_cookies).labeled(category);
            tx.technique = Some(tech);
            tx
        };
        let category = if own {
            BehaviorCategory::ThirdToThirdSync
        } else {
            BehaviorCategory::CookieForwarding
        };
        if tech == Technique::ES {
            let senders: Vec<usize> = established
                .iter()
                .copied()
                .filter(|&s| s != r && self.trackers[s].uses(Technique::ES))
                .collect();
            let s = *senders
                .get(j % senders.len().max(1))
                .ok_or_else(|| infeasible("ES plants need an established ES-capable sender"))?;
            let sd = self.trackers[s].domain().to_string();
            self.es_hosts.insert(sd.clone());
            let target = format!("http://{rd}/match?src=es&n={n}");
            return Ok(vec![
                TxDraft::redirect(lit(format!("http://{sd}/es?{es_param}=nid{}", n % 100)), lit(target.clone())),
                finish(TxDraft::pixel(lit(target)), category),
            ]);
        }
        let s = self
            .pick_other(established, r, j)
            .ok_or_else(|| infeasible("syncing plants need an established sender besides the receiver"))?;
        let sd = self.trackers[s].domain().to_string();
        let cookie = if tech == Technique::PCS { self.trackers[s].sess } else { self.trackers[s].uid };
        let mut target = lit(format!("http://{rd}/match?n={n}&{SYNC_PARAM}="));
        target.push(Frag::Value(cookie, Transform::for_technique(tech)));
        Ok(if j.is_multiple_of(2) {
            vec![finish(TxDraft::pixel(target).with_referer(lit(format!("http://{sd}/tag.js"))), category)]
        } else {
            vec![
                TxDraft::redirect(lit(format!("http://{sd}/sync?n={n}")), target.clone()),
                finish(TxDraft::pixel(target), category),
            ]
        })
    }

    fn noise(&mut self, i: usize) -> Plant {
        let host = format!("cdn{}.net", i % 8);
        let n = self.next_serial();
        let safe = self.cookies.len();
        self.cookies.push(CookieSpec {
            host: host.clone(),
            key: ["lang".into(), "lang".into()],
            value: ["en-US".into(), "en-US".into()],
            in_b: true,
            identifier: false,
            context: CookieContext::ThirdParty,
            origin: CookieOrigin::HttpHeader,
            expiry: None,
        });
        let mut cookies = vec![safe];
        if i % 4 == 1 {
            let value = self.hex(16);
            self.cookies.push(CookieSpec {
                host: host.clone(),
                key: [format!("tmp{n}"), format!("tmp{n}")],
                value: [value.clone(), value],
                in_b: false,
                identifier: false,
                context: CookieContext::ThirdParty,
                origin: CookieOrigin::HttpHeader,
                expiry: None,
            });
            cookies.push(self.cookies.len() - 1);
        }
        if i % 5 == 2 {
            let value = self.hex(16);
            let keys = self.pair(|g| format!("ab_{}", g.hex(6)));
            self.cookies.push(CookieSpec {
                host: host.clone(),
                key: keys,
                value: [value.clone(), value],
                in_b: true,
                identifier: false,
                context: CookieContext::ThirdParty,
                origin: CookieOrigin::HttpHeader,
                expiry: None,
            });
            cookies.push(self.cookies.len() - 1);
        }
        let mut tx = TxDraft::get(lit(format!("http://{host}/lib{n}.js?v=3"))).with_cookies(&cookies);
        tx.content_type = Some("application/javascript");
        vec![tx]
    }

    /// Adds cookieless image requests until invisible images make up `rate`
    /// of all images.
    fn pad_images(&mut self, rate: f64, basic: &[Plant], others: &mut Vec<Plant>) -> Result<()> {
        if !(0.0..1.0).contains(&rate) {
            return Err(infeasible("invisible_pixel_rate must be in [0, 1)"));
        }
        let drafts = basic.iter().chain(others.iter()).flatten();
        let (mut invisible, mut total) = (0usize, 0usize);
        for d in drafts {
            if d.is_image() {
                total += 1;
                invisible += usize::from(d.is_invisible_image());
            }
        }
        let current = if total == 0 { 0.0 } else { invisible as f64 / total as f64 };
        let (count, big) = if current > rate {
            if rate == 0.0 {
                return Err(infeasible("planted pixels make an invisible rate of 0 unreachable"));
            }
            ((invisible as f64 / rate).round() as usize - total, true)
        } else {
            (((rate * total as f64 - invisible as f64) / (1.0 - rate)).round() as usize, false)
        };
        for _ in 0..count {
            let n = self.next_serial();
            let url = lit(format!("http://cdn{}.net/img{n}.png", n % 8));
            let tx = if big {
                let mut tx = TxDraft::get(url);
                tx.content_type = Some("image/png");
                tx.body = Some(fixtures::png(60, 60));
                tx
            } else {
                TxDraft::pixel(url)
            };
            others.push(vec![tx]);
        }
        Ok(())
    }
}

struct Placed<'p> {
    site: usize,
    page: usize,
    plants: Vec<&'p Plant>,
}

fn resolve(t: &Tmpl, cookies: &[CookieSpec], site: &Site, page_url: &str, crawl: usize) -> String {
    let mut s = String::new();
    for f in t {
        match f {
            Frag::Lit(l) => s.push_str(l),
            Frag::Page => s.push_str(page_url),
            Frag::Value(c, tr) => s.push_str(&tr.apply(&cookies[*c].value[crawl])),
            Frag::SiteValue(which, tr) => {
                let c = match which {
                    SiteCookie::Fpid => site.fpid,
                    SiteCookie::Ga => site.ga,
                };
                s.push_str(&tr.apply(&cookies[c].value[crawl]));
            }
        }
    }
    s
}

fn instance(spec: &CookieSpec, crawl: usize) -> CookieInstance {
    CookieInstance {
        host: spec.host.clone(),
        key: spec.key[crawl].clone(),
        value: spec.value[crawl].clone(),
        expiry: spec.expiry,
        set_context: spec.context,
        origin: spec.origin,
    }
}

fn page_url(site: &Site, page: usize) -> String {
    if page == 0 {
        format!("http://{}/", site.domain)
    } else {
        format!("http://{}/p{page}", site.domain)
    }
}

/// Renders one crawl. For crawl A, also returns the truth entries.
fn render(
    label: CrawlLabel,
    placed: &[Placed<'_>],
    cookies: &[CookieSpec],
    sites: &[Site],
) -> (CrawlDataset, Vec<TruthEntry>) {
    let crawl = match label {
        CrawlLabel::A => 0,
        CrawlLabel::B => 1,
    };
    let prefix = label.to_string().to_ascii_lowercase();
    let mut set_before = vec![false; cookies.len()];
    let mut first_set_blocked = vec![false; cookies.len()];
    let mut visits = Vec::with_capacity(placed.len());
    let mut events = Vec::new();
    let mut truth = Vec::new();
    let mut ts = BASE_TS;
    let mut tx_serial = 0usize;

    for (vi, p) in placed.iter().enumerate() {
        let site = &sites[p.site];
        let visit_id = format!("{prefix}-v{vi:04}");
        let url = page_url(site, p.page);
        let mut txs = Vec::new();
        let mut make_id = || {
            tx_serial += 1;
            format!("{prefix}-t{tx_serial:06}")
        };

        // Top-level document, then the analytics script setting `_ga`.
        let mut doc = HttpTransaction {
            transaction_id: make_id(),
            page_visit_id: visit_id.clone(),
            url: Url::parse(&url).expect("generated page URL"),
            method: "GET".into(),
            request_headers: Headers::default(),
            response_status: Some(200),
            response_headers: [("Content-Type", "text/html")].into_iter().collect(),
            cookies_sent: Vec::new(),
            cookies_set: Vec::new(),
            body: None,
            timestamp: ts,
        };
        if set_before[site.fpid] {
            doc.cookies_sent.push(instance(&cookies[site.fpid], crawl));
            doc.cookies_sent.push(instance(&cookies[site.ga], crawl));
        } else {
            doc.cookies_set.push(instance(&cookies[site.fpid], crawl));
            set_before[site.fpid] = true;
            events.push(JournalEntry {
                timestamp: ts + 1,
                action: CookieAction::Set,
                cookie: instance(&cookies[site.ga], crawl),
                transaction_id: None,
                page_visit_id: Some(visit_id.clone()),
            });
            set_before[site.ga] = true;
        }
        if crawl == 0 {
            truth.push(TruthEntry::unlabeled(&doc.transaction_id));
        }
        txs.push(doc);

        for draft in p.plants.iter().flat_map(|pl| pl.iter()) {
            ts += STEP_MS;
            let mut request_headers = Headers::default();
            if let Some(r) = &draft.referer {
                request_headers.push("Referer", resolve(r, cookies, site, &url, crawl));
            }
            let mut response_headers = Headers::default();
            if let Some(ct) = draft.content_type {
                response_headers.push("Content-Type", ct);
            }
            if let Some(loc) = &draft.location {
                response_headers.push("Location", resolve(loc, cookies, site, &url, crawl));
            }
            if let Some(b) = &draft.body {
                response_headers.push("Content-Length", b.len().to_string());
            }
            let mut tx = HttpTransaction {
                transaction_id: make_id(),
                page_visit_id: visit_id.clone(),
                url: Url::parse(&resolve(&draft.url, cookies, site, &url, crawl)).expect("generated URL"),
                method: "GET".into(),
                request_headers,
                response_status: Some(draft.status),
                response_headers,
                cookies_sent: Vec::new(),
                cookies_set: Vec::new(),
                body: draft.body.clone(),
                timestamp: ts,
            };
            let mut follow_up = false;
            for &c in &draft.cookies {
                let spec = &cookies[c];
                if crawl == 1 && !spec.in_b {
                    continue;
                }
                if set_before[c] {
                    tx.cookies_sent.push(instance(spec, crawl));
                    follow_up |= spec.identifier && first_set_blocked[c] && !draft.verdict.is_blocked();
                } else {
                    tx.cookies_set.push(instance(spec, crawl));
                    set_before[c] = true;
                    first_set_blocked[c] = draft.verdict.is_blocked();
                }
            }
            if crawl == 0 {
                truth.push(TruthEntry {
                    transaction_id: tx.transaction_id.clone(),
                    categories: draft.categories.clone(),
                    technique: draft.technique,
                    verdict: draft.verdict,
                    follow_up,
                });
            }
            txs.push(tx);
        }
        visits.push(PageVisit {
            page_visit_id: visit_id,
            first_party_url: url,
            first_party_domain: site.domain.clone(),
            transactions: txs,
        });
        ts += VISIT_GAP_MS;
    }
    (CrawlDataset::from_visits(label, visits, events), truth)
}

/// Generates both crawls and the ground truth for `cfg`. Identical configs
/// give identical output.
pub fn generate(cfg: &ScenarioConfig) -> Result<SyntheticCorpus> {
    let mut g = Generator::new(cfg);
    g.setup()?;
    let (basic, mut others) = g.plan()?;
    others.shuffle(&mut g.rng);

    let n_visits = cfg.n_sites * cfg.pages_per_site;
    let plants: Vec<&Plant> = basic.iter().chain(others.iter()).collect();
    if plants.len() > n_visits * MAX_PLANTS_PER_VISIT {
        return Err(infeasible(format!(
            "{} plants do not fit into {n_visits} page visits (at most {MAX_PLANTS_PER_VISIT} each)",
            plants.len()
        )));
    }
    let mut placed: Vec<Placed> = (0..n_visits)
        .map(|v| Placed {
            site: v / cfg.pages_per_site,
            page: v % cfg.pages_per_site,
            plants: Vec::new(),
        })
        .collect();
    let total = plants.len();
    for (i, p) in plants.into_iter().enumerate() {
        placed[i * n_visits / total.max(1)].plants.push(p);
    }

    let (crawl_a, mut entries) = render(CrawlLabel::A, &placed, &g.cookies, &g.sites);
    let (crawl_b, _) = render(CrawlLabel::B, &placed, &g.cookies, &g.sites);
    entries.sort_by(|a, b| a.transaction_id.cmp(&b.transaction_id));

    let mut filter_rules: Vec<String> = g.trackers[..cfg.filter_fixture.blocked_trackers]
        .iter()
        .map(|t| format!("||ads.{}^", t.domain()))
        .collect();
    filter_rules.extend(cfg.filter_fixture.extra_rules.iter().cloned());

    let mut run_config = RunConfig::default();
    run_config.sharing.es_rules = g
        .es_hosts
        .iter()
        .map(|h| EsRule {
            host: h.clone(),
            param: cfg.es_param.clone(),
        })
        .collect();

    Ok(SyntheticCorpus {
        crawl_a,
        crawl_b,
        truth: GroundTruth {
            seed: cfg.seed,
            measure_crawl: CrawlLabel::A,
            planted: cfg.planted,
            transactions: entries,
        },
        run_config,
        filter_rules,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{parse_filter_list, Blocker, DisconnectList, ListConfig};
    use crate::model::pair_crawls;
    use crate::par::Parallelism;
    use crate::pipeline::{analyze, list_verdicts};
    use crate::psl::PublicSuffixTable;
    use crate::synth::{score, PlantedCounts, Score};

    fn scenario(n_sites: usize, pages: usize, per_category: usize) -> ScenarioConfig {
        ScenarioConfig {
            seed: 42,
            n_sites,
            pages_per_site: pages,
            n_third_parties: 20,
            planted: PlantedCounts::uniform(per_category),
            ..ScenarioConfig::default()
        }
    }

    fn run(corpus: &SyntheticCorpus) -> Score {
        let psl = PublicSuffixTable::naive();
        let paired = pair_crawls(corpus.crawl_a.clone(), corpus.crawl_b.clone());
        let cfg = &corpus.run_config;
        let analysis = analyze(&paired, &psl, cfg, Parallelism::Sequential);
        let blocker = Blocker {
            rules: parse_filter_list(&corpus.filter_rules.join("\n")),
            disconnect: DisconnectList::default(),
        };
        let v = list_verdicts(
            &paired.crawl_a,
            &analysis.cookies,
            &blocker,
            ListConfig::EasyListPrivacy,
            &psl,
            cfg,
            Parallelism::Sequential,
        );
        score(&corpus.truth, &analysis.labels, &analysis.sharing_events, Some(&v.verdicts)).unwrap()
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = scenario(5, 2, 4);
        let a = generate(&cfg).unwrap().files();
        let b = generate(&cfg).unwrap().files();
        assert_eq!(a, b);
        let mut other = cfg.clone();
        other.seed += 1;
        assert_ne!(generate(&other).unwrap().files()[0], a[0]);
    }

    #[test]
    fn single_basic_plant() {
        let mut cfg = scenario(1, 1, 0);
        cfg.planted.basic_tracking = 1;
        let c = generate(&cfg).unwrap();
        let labeled: Vec<&TruthEntry> = c.truth.transactions.iter().filter(|e| !e.categories.is_empty()).collect();
        assert_eq!(labeled.len(), 1);
        assert_eq!(labeled[0].categories, [BehaviorCategory::BasicTracking]);
        let s = run(&c);
        assert_eq!(s.categories[&BehaviorCategory::BasicTracking].tp, 1);
        assert_eq!(s.min_precision(), 1.0);
    }

    #[test]
    fn planted_counts_are_exact() {
        let c = generate(&scenario(50, 6, 50)).unwrap();
        for cat in BehaviorCategory::ALL {
            assert_eq!(c.truth.count(cat), 50, "{cat}");
        }
        assert_eq!(c.truth.labels().len(), 300);
    }

    #[test]
    fn full_scenario_is_recovered() {
        let mut cfg = scenario(30, 3, 30);
        cfg.functional_trackers = 3;
        cfg.noise_requests = 40;
        cfg.filter_fixture = crate::synth::FilterFixture {
            blocked_trackers: 3,
            follow_up_chains: 5,
            blocked_frames: 4,
            blocked_redirects: 4,
            extra_rules: Vec::new(),
        };
        let c = generate(&cfg).unwrap();
        let s = run(&c);
        assert_eq!(s.min_precision(), 1.0, "{s:#?}");
        assert_eq!(s.min_recall(), 1.0, "{s:#?}");
        assert_eq!(s.technique_accuracy, 1.0);
        assert_eq!(s.verdict_accuracy, Some(1.0));
        assert_eq!(s.follow_up_accuracy, Some(1.0));
    }

    #[test]
    fn invisible_rate_is_hit() {
        let mut cfg = scenario(10, 2, 5);
        cfg.invisible_pixel_rate = Some(0.35);
        let c = generate(&cfg).unwrap();
        let (mut inv, mut all) = (0, 0);
        for v in c.crawl_a.page_visits() {
            for t in &v.transactions {
                if t.is_image() {
                    all += 1;
                    inv += usize::from(t.body.as_deref() == Some(&fixtures::TRANSPARENT_GIF[..]));
                }
            }
        }
        assert!((inv as f64 / all as f64 - 0.35).abs() < 0.01, "{inv}/{all}");
    }

    #[test]
    fn infeasible_configs_are_rejected() {
        let mut cfg = scenario(1, 1, 0);
        cfg.functional_trackers = 2;
        cfg.planted.basic_tracking = 1;
        assert!(matches!(generate(&cfg), Err(Error::InfeasibleConfig(_))));

        let mut cfg = scenario(1, 1, 100);
        cfg.planted = PlantedCounts::uniform(100);
        assert!(matches!(generate(&cfg), Err(Error::InfeasibleConfig(_))));

        let mut cfg = scenario(2, 1, 0);
        cfg.planted.third_to_third_sync = 1;
        cfg.n_third_parties = 1;
        assert!(matches!(generate(&cfg), Err(Error::InfeasibleConfig(_))));
    }
}
