use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use pixeltrace::behavior::{aggregate, CompanyMap};
use pixeltrace::config::RunConfig;
use pixeltrace::filter::{Blocker, DisconnectList, ListConfig, RuleSet};
use pixeltrace::ingest::{load_crawl_log, IngestOptions, ParseReport};
use pixeltrace::model::{pair_crawls, CrawlLabel, PairedCrawls};
use pixeltrace::par::Parallelism;
use pixeltrace::pipeline::{all_list_verdicts, analyze, measured, run_comparison};
use pixeltrace::pixel::pixel_prevalence;
use pixeltrace::psl::PublicSuffixTable;
use pixeltrace::report::{export, ExportFormat};
use pixeltrace::synth::{self, score, GroundTruth, ScenarioConfig};
use pixeltrace::{Error, Result};

#[derive(Parser)]
#[command(name = "pixeltrace", version, about = "Cookie-based tracking analysis over paired web crawls")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate both crawl logs, print ingestion statistics.
    Ingest(Inputs),
    /// Write pixel, cookie, sharing and behavior reports.
    Analyze(AnalyzeArgs),
    /// Compute block verdicts for every list configuration.
    Compare(CompareArgs),
    /// Write the full comparison report.
    Report(ReportArgs),
    /// Generate a synthetic corpus with ground truth.
    Simulate(SimulateArgs),
    /// Analyze a synthetic corpus and score it against its ground truth.
    Score(ScoreArgs),
}

#[derive(Args)]
struct Inputs {
    #[arg(long)]
    crawl_a: PathBuf,
    #[arg(long)]
    crawl_b: PathBuf,
    /// Public Suffix List; a last-two-labels fallback is used without it.
    #[arg(long)]
    psl: Option<PathBuf>,
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fail on the first malformed record instead of skipping it.
    #[arg(long)]
    strict: bool,
    /// Process page visits on one thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long)]
    pixels: bool,
    #[arg(long)]
    cookies: bool,
    #[arg(long)]
    sharing: bool,
    #[arg(long)]
    behaviors: bool,
    /// Two-column file: registrable domain, company.
    #[arg(long)]
    company_map: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct Lists {
    #[arg(long)]
    easylist: Option<PathBuf>,
    #[arg(long)]
    easyprivacy: Option<PathBuf>,
    /// Disconnect services file (JSON or one domain per line).
    #[arg(long)]
    disconnect: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    lists: Lists,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    lists: Lists,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "structured")]
    format: String,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    /// Directory written by `simulate`.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    psl: Option<PathBuf>,
    #[arg(long)]
    sequential: bool,
}

struct Loaded {
    paired: PairedCrawls,
    psl: PublicSuffixTable,
    cfg: RunConfig,
    par: Parallelism,
    reports: [ParseReport; 2],
}

fn load_psl(path: Option<&Path>) -> Result<PublicSuffixTable> {
    match path {
        Some(p) => PublicSuffixTable::load(p),
        None => {
            eprintln!("warning: no --psl given, using the last-two-labels fallback");
            Ok(PublicSuffixTable::naive())
        }
    }
}

fn parallelism(sequential: bool) -> Parallelism {
    if sequential {
        Parallelism::Sequential
    } else {
        Parallelism::default()
    }
}

fn load(inputs: &Inputs) -> Result<Loaded> {
    let psl = load_psl(inputs.psl.as_deref())?;
    let cfg = match &inputs.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let opts = IngestOptions { strict: inputs.strict };
    let (a, ra) = load_crawl_log(&inputs.crawl_a, CrawlLabel::A, &psl, opts)?;
    let (b, rb) = load_crawl_log(&inputs.crawl_b, CrawlLabel::B, &psl, opts)?;
    for (label, r) in [("A", &ra), ("B", &rb)] {
        if !r.skipped.is_empty() {
            eprintln!("warning: crawl {label}: skipped {} malformed line(s)", r.skipped.len());
        }
    }
    Ok(Loaded {
        paired: pair_crawls(a, b),
        psl,
        cfg,
        par: parallelism(inputs.sequential),
        reports: [ra, rb],
    })
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(Error::UnreadableInput)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    let unwritable = |path: &Path, source| Error::UnwritablePath {
        path: path.to_path_buf(),
        source,
    };
    fs::create_dir_all(dir).map_err(|e| unwritable(dir, e))?;
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| unwritable(&path, e))?;
    Ok(path)
}

fn blocker(lists: &Lists) -> Result<Blocker> {
    let mut rules = RuleSet::default();
    for path in [&lists.easylist, &lists.easyprivacy].into_iter().flatten() {
        rules.extend(&read(path)?);
    }
    let disconnect = match &lists.disconnect {
        Some(p) => DisconnectList::parse(&read(p)?)?,
        None => DisconnectList::default(),
    };
    if !rules.report.malformed.is_empty() || !rules.report.inert.is_empty() {
        eprintln!(
            "note: {} malformed and {} inert filter rule(s) ignored",
            rules.report.malformed.len(),
            rules.report.inert.len()
        );
    }
    Ok(Blocker { rules, disconnect })
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

#[derive(Serialize)]
struct IngestSummary<'a> {
    crawl_a: &'a ParseReport,
    crawl_b: &'a ParseReport,
    paired_cookie_keys: usize,
}

fn cmd_ingest(inputs: &Inputs) -> Result<()> {
    let l = load(inputs)?;
    let summary = IngestSummary {
        crawl_a: &l.reports[0],
        crawl_b: &l.reports[1],
        paired_cookie_keys: l.paired.pairing.len(),
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<()> {
    let mapping = args.company_map.as_deref().map(CompanyMap::load).transpose()?;
    let l = load(&args.inputs)?;
    let all = !(args.pixels || args.cookies || args.sharing || args.behaviors);
    let d = measured(&l.paired, &l.cfg);
    let mut written = Vec::new();
    if all || args.pixels {
        let r = pixel_prevalence(d, &l.psl, &l.cfg.pixels);
        written.push(write_json(&args.out, "pixels.json", &r)?);
    }
    if all || args.cookies || args.sharing || args.behaviors {
        let analysis = analyze(&l.paired, &l.psl, &l.cfg, l.par);
        if all || args.cookies {
            written.push(write_json(&args.out, "cookies.json", &analysis.cookies.report())?);
        }
        if all || args.sharing {
            written.push(write_json(&args.out, "sharing.json", &analysis.sharing_events)?);
        }
        if all || args.behaviors {
            #[derive(Serialize)]
            struct Behaviors<'a> {
                prevalence: pixeltrace::behavior::PrevalenceReport,
                labels: &'a [pixeltrace::behavior::BehaviorLabel],
            }
            let b = Behaviors {
                prevalence: aggregate(&analysis.labels, d, mapping.as_ref()),
                labels: &analysis.labels,
            };
            written.push(write_json(&args.out, "behaviors.json", &b)?);
        }
    }
    print_paths(&written);
    Ok(())
}

fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let b = blocker(&args.lists)?;
    let l = load(&args.inputs)?;
    let analysis = analyze(&l.paired, &l.psl, &l.cfg, l.par);
    let d = measured(&l.paired, &l.cfg);
    let lists = all_list_verdicts(d, &analysis.cookies, &b, &l.psl, &l.cfg, l.par);
    for v in &lists {
        let blocked = v.verdicts.values().filter(|x| x.is_blocked()).count();
        let follow = v.verdicts.values().filter(|x| x.follow_up).count();
        println!("{}: {blocked} blocked, {follow} follow-up of {}", v.list.name(), v.verdicts.len());
    }
    print_paths(&[write_json(&args.out, "verdicts.json", &lists)?]);
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let format: ExportFormat = args.format.parse()?;
    let b = blocker(&args.lists)?;
    let l = load(&args.inputs)?;
    let (_, _, report) = run_comparison(&l.paired, &b, &l.psl, &l.cfg, l.par);
    print_paths(&export(&report, &args.out, format)?);
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let cfg = ScenarioConfig::load(&args.config)?;
    let corpus = synth::generate(&cfg)?;
    print_paths(&corpus.write(&args.out)?);
    Ok(())
}

fn cmd_score(args: &ScoreArgs) -> Result<()> {
    let dir = &args.corpus;
    let inputs = Inputs {
        crawl_a: dir.join(synth::CRAWL_A_FILE),
        crawl_b: dir.join(synth::CRAWL_B_FILE),
        psl: args.psl.clone(),
        config: Some(dir.join(synth::RUN_CONFIG_FILE)),
        strict: true,
        sequential: args.sequential,
    };
    let truth = GroundTruth::from_json(&read(&dir.join(synth::TRUTH_FILE))?)?;
    let b = Blocker {
        rules: RuleSet::parse(&read(&dir.join(synth::FILTER_FILE))?),
        disconnect: DisconnectList::default(),
    };
    let l = load(&inputs)?;
    let analysis = analyze(&l.paired, &l.psl, &l.cfg, l.par);
    let d = measured(&l.paired, &l.cfg);
    let verdicts = all_list_verdicts(d, &analysis.cookies, &b, &l.psl, &l.cfg, l.par)
        .into_iter()
        .find(|v| v.list == ListConfig::EasyListPrivacy)
        .expect("every list configuration is computed");
    let s = score(&truth, &analysis.labels, &analysis.sharing_events, Some(&verdicts.verdicts))?;
    println!("{}", serde_json::to_string_pretty(&s)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Report(a) => cmd_report(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Score(a) => cmd_score(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
