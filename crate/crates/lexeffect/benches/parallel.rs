//! Benchmarks for the data-parallel hot paths: per-tree forest fitting
//! and per-pair estimation.
//!
//! Benchmark ids are feature-independent, so running `cargo bench` with
//! the default `parallel` feature and again with `--no-default-features`
//! compares the rayon and sequential builds through criterion's saved
//! baselines. With the parallel feature enabled, the `threads` groups
//! additionally compare pool sizes within one run.

use criterion::{criterion_group, criterion_main, Criterion};

use lexeffect::candidates::{LseTuple, SubstitutionPair};
use lexeffect::corpus::build_vocabulary;
use lexeffect::estimators::{estimate_all, EstimateConfig, EstimationContext, EstimatorKind};
use lexeffect::features::{fit_tfidf, vectorize_binary, BinaryMatrix};
use lexeffect::forest::{fit_random_forest, ForestConfig};
use lexeffect::synth::{generate_synthetic, PlantedPair, SyntheticSpec};

fn synth_spec() -> SyntheticSpec {
    SyntheticSpec {
        vocabulary_size: 60,
        n_sentences: 2000,
        min_tokens: 5,
        max_tokens: 12,
        pairs: vec![PlantedPair {
            control_word: "plainword".into(),
            treatment_word: "fancyword".into(),
            effect: 0.3,
        }],
        base_positive_rate: 0.35,
        pair_presence_probability: 0.6,
        seed: 17,
    }
}

fn forest_inputs() -> (BinaryMatrix, Vec<u8>) {
    let (corpus, _, _) = generate_synthetic(&synth_spec()).unwrap();
    let vocab = build_vocabulary(&corpus, 1, None);
    let rows: Vec<_> = corpus
        .sentences
        .iter()
        .take(1200)
        .map(|s| vectorize_binary(s, &vocab))
        .collect();
    let y: Vec<u8> = corpus.sentences.iter().take(1200).map(|s| s.label).collect();
    (BinaryMatrix::from_rows(rows, vocab.len()).unwrap(), y)
}

fn bench_forest_fit(c: &mut Criterion) {
    let (x, y) = forest_inputs();
    let config = ForestConfig {
        n_trees: 200,
        seed: 1,
        ..ForestConfig::default()
    };
    let mut group = c.benchmark_group("fit_random_forest");
    group.sample_size(10);
    group.bench_function("200x1200", |b| {
        b.iter(|| fit_random_forest(&x, &y, &config).unwrap())
    });
    group.finish();

    #[cfg(feature = "parallel")]
    {
        let mut group = c.benchmark_group("fit_random_forest_threads");
        group.sample_size(10);
        for threads in [1usize, num_threads_available()] {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            group.bench_function(format!("{threads}"), |b| {
                b.iter(|| pool.install(|| fit_random_forest(&x, &y, &config).unwrap()))
            });
        }
        group.finish();
    }
}

#[cfg(feature = "parallel")]
fn num_threads_available() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(4)
        .max(2)
}

fn bench_estimate_all(c: &mut Criterion) {
    let (corpus, _, truths) = generate_synthetic(&synth_spec()).unwrap();
    let vocab = build_vocabulary(&corpus, 1, None);
    let tfidf = fit_tfidf(&corpus, &vocab);
    let ctx = EstimationContext::new(&corpus, &vocab, &tfidf);
    let pair = SubstitutionPair {
        control_word: "plainword".into(),
        treatment_word: "fancyword".into(),
        equivalence: 0.5,
        pos: "NN".into(),
    };
    let tuples: Vec<LseTuple> = truths
        .iter()
        .take(50)
        .map(|t| LseTuple::new(pair.clone(), t.sentence_id.clone()))
        .collect();
    let config = EstimateConfig {
        estimators: [
            EstimatorKind::Knn,
            EstimatorKind::VtRf,
            EstimatorKind::CfRf,
            EstimatorKind::Csf,
        ]
        .into(),
        knn_k: 30,
        forest: ForestConfig::default(),
        seed: 17,
    };

    let mut group = c.benchmark_group("estimate_all");
    group.sample_size(10);
    group.bench_function("one_pair_50_tuples", |b| {
        b.iter(|| estimate_all(&ctx, &tuples, &config, None).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_forest_fit, bench_estimate_all);
criterion_main!(benches);
