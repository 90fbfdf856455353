//! Sequential versus data-parallel analysis on a generated corpus.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use pixeltrace::filter::{Blocker, DisconnectList, RuleSet};
use pixeltrace::model::pair_crawls;
use pixeltrace::par::Parallelism;
use pixeltrace::pipeline::{analyze, run_comparison};
use pixeltrace::psl::PublicSuffixTable;
use pixeltrace::synth::{self, FilterFixture, PlantedCounts, ScenarioConfig};

fn scenario() -> ScenarioConfig {
    ScenarioConfig {
        seed: 7,
        n_sites: 200,
        pages_per_site: 3,
        n_third_parties: 40,
        planted: PlantedCounts::uniform(60),
        filter_fixture: FilterFixture {
            blocked_trackers: 5,
            follow_up_chains: 10,
            blocked_frames: 10,
            blocked_redirects: 10,
            extra_rules: Vec::new(),
        },
        functional_trackers: 5,
        noise_requests: 400,
        invisible_pixel_rate: Some(0.3),
        ..ScenarioConfig::default()
    }
}

fn bench(c: &mut Criterion) {
    let corpus = synth::generate(&scenario()).expect("scenario is feasible");
    let paired = pair_crawls(corpus.crawl_a, corpus.crawl_b);
    let psl = PublicSuffixTable::naive();
    let cfg = corpus.run_config;
    let blocker = Blocker {
        rules: RuleSet::parse(&corpus.filter_rules.join("\n")),
        disconnect: DisconnectList::parse_lines("tracker03.net\ntracker07.net\n"),
    };

    let mut group = c.benchmark_group("pipeline");
    group.sample_size(20);
    for (name, par) in [("sequential", Parallelism::Sequential), ("parallel", Parallelism::Parallel)] {
        group.bench_with_input(BenchmarkId::new("analyze", name), &par, |b, &par| {
            b.iter(|| black_box(analyze(&paired, &psl, &cfg, par)))
        });
        group.bench_with_input(BenchmarkId::new("compare", name), &par, |b, &par| {
            b.iter(|| black_box(run_comparison(&paired, &blocker, &psl, &cfg, par)))
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
