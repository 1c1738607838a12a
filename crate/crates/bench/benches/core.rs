use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use storymoral_bench::{reference_corpus, reml_design};
use storymoral_core::lmm::fit_reml;
use storymoral_core::pairs::{enumerate_pairs, PairKind, PairOptions};
use storymoral_core::providers::stub::StubMt;
use storymoral_core::survey::{build_comparisons, PlanOptions};
use storymoral_core::Translator;

fn reml(c: &mut Criterion) {
    let mut g = c.benchmark_group("reml_fit");
    g.sample_size(10);
    for k in [1, 2, 4] {
        let d = reml_design(k);
        g.bench_function(format!("n5000_k{k}"), |b| b.iter(|| fit_reml(black_box(&d)).unwrap()));
    }
    g.finish();
}

fn pairs(c: &mut Criterion) {
    let corpus = reference_corpus();
    let opts = PairOptions::default();
    for kind in [PairKind::HhIntra, PairKind::HhInter, PairKind::MmInter] {
        c.bench_function(&format!("pairs_{}", kind.as_str()), |b| {
            b.iter(|| enumerate_pairs(black_box(&corpus), kind, &opts).len())
        });
    }
}

fn survey_plan(c: &mut Criterion) {
    let corpus = reference_corpus();
    let stories: Vec<String> = corpus.stories.iter().take(5).map(|s| s.story_id.clone()).collect();
    let t = Translator::single(Arc::new(StubMt::tagging()));
    let opts = PlanOptions::default();
    let mut g = c.benchmark_group("survey");
    g.sample_size(10);
    g.bench_function("plan_5x14", |b| {
        b.iter(|| build_comparisons(black_box(&corpus), &stories, &opts, &t).unwrap())
    });
    g.finish();
}

criterion_group!(benches, reml, pairs, survey_plan);
criterion_main!(benches);
