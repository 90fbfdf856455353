use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pixeltrace(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pixeltrace"))
        .args(args)
        .output()
        .expect("binary runs")
}

const SCENARIO: &str = r#"
seed = 5
n_sites = 8
pages_per_site = 2
n_third_parties = 10
noise_requests = 6
[planted]
basic_tracking = 8
basic_tracking_by_tracker = 4
third_to_third_sync = 4
cookie_forwarding = 4
first_to_third_sync = 4
analytics = 4
[filter_fixture]
blocked_trackers = 2
follow_up_chains = 2
blocked_frames = 1
blocked_redirects = 1
"#;

fn simulate(dir: &Path) -> String {
    let cfg = dir.join("scenario.toml");
    fs::write(&cfg, SCENARIO).unwrap();
    let out = dir.join("corpus");
    let o = pixeltrace(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out.to_str().unwrap().to_string()
}

#[test]
fn simulate_then_score_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = simulate(tmp.path());
    let o = pixeltrace(&["score", "--corpus", &corpus]);
    assert!(o.status.success());
    let score: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    for (cat, s) in score["categories"].as_object().unwrap() {
        assert_eq!(s["precision"], 1.0, "{cat}");
        assert_eq!(s["recall"], 1.0, "{cat}");
    }
    assert_eq!(score["verdict_accuracy"], 1.0);
}

#[test]
fn simulate_is_reproducible() {
    let (t1, t2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (a, b) = (simulate(t1.path()), simulate(t2.path()));
    for f in ["crawl_a.jsonl", "crawl_b.jsonl", "truth.json", "run.toml", "filters.txt"] {
        assert_eq!(
            fs::read(Path::new(&a).join(f)).unwrap(),
            fs::read(Path::new(&b).join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn analyze_writes_selected_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = simulate(tmp.path());
    let out = tmp.path().join("analysis");
    let a = format!("{corpus}/crawl_a.jsonl");
    let b = format!("{corpus}/crawl_b.jsonl");
    let o = pixeltrace(&["analyze", "--crawl-a", &a, "--crawl-b", &b, "--pixels", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(out.join("pixels.json").exists());
    assert!(!out.join("behaviors.json").exists());

    let map = tmp.path().join("companies.txt");
    fs::write(&map, "tracker02.net\tAcme\n").unwrap();
    let o = pixeltrace(&[
        "analyze", "--crawl-a", &a, "--crawl-b", &b, "--behaviors", "--company-map", map.to_str().unwrap(), "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("behaviors.json")).unwrap()).unwrap();
    assert!(v["prevalence"]["companies"].is_array());
}

#[test]
fn report_formats_and_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = simulate(tmp.path());
    let a = format!("{corpus}/crawl_a.jsonl");
    let b = format!("{corpus}/crawl_b.jsonl");
    let el = format!("{corpus}/filters.txt");
    let out = tmp.path().join("rep");
    let base = ["report", "--crawl-a", &a, "--crawl-b", &b, "--easylist", &el, "--out", out.to_str().unwrap()];

    let o = pixeltrace(&[&base[..], &["--format", "structured"]].concat());
    assert_eq!(o.status.code(), Some(0));
    assert!(out.join("report.json").exists());

    let o = pixeltrace(&[&base[..], &["--format", "tabular"]].concat());
    assert_eq!(o.status.code(), Some(0));
    assert!(out.join("venn.csv").exists());

    let o = pixeltrace(&[&base[..], &["--format", "yaml"]].concat());
    assert_eq!(o.status.code(), Some(3));

    let bad_cfg = tmp.path().join("bad.toml");
    fs::write(&bad_cfg, "no_such_key = 1\n").unwrap();
    let o = pixeltrace(&[&base[..], &["--config", bad_cfg.to_str().unwrap()]].concat());
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn strict_ingest_rejects_schema_violations() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.jsonl");
    fs::write(&bad, "{\"kind\":\"transaction\",\"url\":\"http://x.com/\"}\n").unwrap();
    let p = bad.to_str().unwrap();
    let o = pixeltrace(&["ingest", "--crawl-a", p, "--crawl-b", p, "--strict"]);
    assert_eq!(o.status.code(), Some(2));
    let o = pixeltrace(&["ingest", "--crawl-a", p, "--crawl-b", p]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["crawl_a"]["skipped"].as_array().unwrap().len(), 1);
}

#[test]
fn infeasible_scenario_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("s.toml");
    fs::write(&cfg, "n_sites = 1\npages_per_site = 1\nfunctional_trackers = 3\n[planted]\nbasic_tracking = 1\n").unwrap();
    let o = pixeltrace(&["simulate", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn compare_prints_one_line_per_list() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = simulate(tmp.path());
    let a = format!("{corpus}/crawl_a.jsonl");
    let b = format!("{corpus}/crawl_b.jsonl");
    let dc = tmp.path().join("services.txt");
    fs::write(&dc, "tracker05.net\n").unwrap();
    let out = tmp.path().join("cmp");
    let o = pixeltrace(&[
        "compare", "--crawl-a", &a, "--crawl-b", &b, "--easyprivacy", &format!("{corpus}/filters.txt"), "--disconnect",
        dc.to_str().unwrap(), "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().filter(|l| l.contains(" blocked, ")).count() == 3, "{text}");
    assert!(out.join("verdicts.json").exists());
}
