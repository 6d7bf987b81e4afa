//! Pipeline commands. Stages communicate only through files in the
//! output directory; every output embeds the config hash and seed that
//! produced it.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::json;

use lexeffect::candidates::{generate_tuples, representative_words, LseTuple};
use lexeffect::corpus::{
    build_bigram_vocabulary, build_vocabulary, Corpus, PosMap, Vocabulary,
};
use lexeffect::error::Error;
use lexeffect::estimators::{
    estimate_all, rank_estimates, EstimationContext, EstimatorKind,
};
use lexeffect::eval::{
    estimator_agreement_matrix, negative_fraction_top_k, pearson, roc_auc, spearman_rank,
};
use lexeffect::features::{fit_tfidf, SparseVec, TfidfModel};
use lexeffect::io::{self, Meta};
use lexeffect::linear::{fit_logistic_on_vocab, LinearModel};
use lexeffect::perception::{
    fit_perception_classifier, perception_features, LabeledPerceptionExample, PerceptionScorer,
};
use lexeffect::rct::{
    aggregate_effects, dummy_expectations, filter_workers, make_batches, pairwise_agreement,
    select_rct_sample,
};
use lexeffect::synth::generate_synthetic;

use crate::config::{Config, CorpusEntry};

/// Shared command state: the resolved config and its provenance stamp.
pub struct Pipeline {
    pub config: Config,
    pub meta: Meta,
}

impl Pipeline {
    pub fn new(config: Config) -> Result<Self> {
        let meta = Meta {
            config_hash: config.hash(),
            seed: config.seed,
        };
        std::fs::create_dir_all(&config.output_dir).with_context(|| {
            format!(
                "cannot create output directory {}",
                config.output_dir.display()
            )
        })?;
        // Persist the resolved configuration alongside the outputs.
        let resolved = toml::to_string_pretty(&config).context("serialize resolved config")?;
        std::fs::write(
            config.output_dir.join("resolved_config.toml"),
            format!("# config_hash = {}\n{resolved}", meta.config_hash),
        )?;
        Ok(Pipeline { config, meta })
    }

    fn out(&self, stem: &str, domain: &str, ext: &str) -> PathBuf {
        self.config
            .output_dir
            .join(format!("{stem}.{domain}.{ext}"))
    }

    fn load_corpus(&self, entry: &CorpusEntry) -> Result<Corpus> {
        io::read_corpus(&entry.path)
            .with_context(|| format!("corpus {} ({})", entry.domain, entry.path.display()))
    }

    fn build_vocab(&self, corpus: &Corpus) -> Result<Vocabulary> {
        let stoplist = match &self.config.corpus.stoplist {
            Some(path) => Some(io::read_stoplist(path).context("stop-list")?),
            None => None,
        };
        Ok(build_vocabulary(
            corpus,
            self.config.corpus.min_doc_count,
            stoplist.as_ref(),
        ))
    }

    fn tag_lexicon(&self) -> Result<PosMap> {
        let path = self
            .config
            .corpus
            .tag_lexicon
            .as_ref()
            .context("config is missing corpus.tag_lexicon")?;
        io::read_tag_lexicon(path).context("tag lexicon")
    }

    fn sentence_classifier(
        &self,
        corpus: &Corpus,
        vocab: &Vocabulary,
        tfidf: &TfidfModel,
    ) -> Result<LinearModel> {
        let rows: Vec<SparseVec> = corpus
            .sentences
            .iter()
            .map(|s| tfidf.transform(s, vocab))
            .collect();
        let labels: Vec<u8> = corpus.sentences.iter().map(|s| s.label).collect();
        let logistic = self.config.linear.to_logistic(self.config.seed);
        Ok(fit_logistic_on_vocab(&rows, vocab, &labels, &logistic)?)
    }

    pub fn synth(&self) -> Result<()> {
        let spec = self.config.synth.to_spec(self.config.seed);
        let (corpus, table, truths) = generate_synthetic(&spec)?;
        let domain = "synthetic";

        io::write_corpus(&self.out("corpus", domain, "jsonl"), Some(&self.meta), &corpus)?;
        let rows: Vec<(String, String, f64)> = table
            .iter()
            .map(|r| (r.control_word.clone(), r.treatment_word.clone(), r.equivalence))
            .collect();
        io::write_paraphrase_table(
            &self.out("paraphrases", domain, "tsv"),
            Some(&self.meta),
            &rows,
        )?;
        io::write_jsonl(&self.out("truth", domain, "jsonl"), Some(&self.meta), &truths)?;

        // Uniform tag lexicon so planted pairs pass the POS filter.
        let mut words: Vec<String> = corpus
            .sentences
            .iter()
            .flat_map(|s| s.tokens.iter().cloned())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        words.sort();
        let tags: Vec<(String, String, u64)> = words
            .into_iter()
            .map(|w| (w, "NN".to_string(), 1))
            .collect();
        io::write_tag_lexicon(&self.out("tags", domain, "tsv"), Some(&self.meta), &tags)?;

        let positives = corpus.sentences.iter().filter(|s| s.label == 1).count();
        eprintln!(
            "synth: {} sentences ({positives} positive), {} pairs, {} ground-truth tuples",
            corpus.len(),
            table.len(),
            truths.len()
        );
        Ok(())
    }

    pub fn ingest(&self, domain: Option<&str>) -> Result<()> {
        let entry = self.config.corpus_entry(domain)?;
        let corpus = self.load_corpus(entry)?;
        let positives = corpus.sentences.iter().filter(|s| s.label == 1).count();
        let tokens: usize = corpus.sentences.iter().map(|s| s.tokens.len()).sum();
        io::write_corpus(
            &self.out("corpus", &format!("{}.norm", entry.domain), "jsonl"),
            Some(&self.meta),
            &corpus,
        )?;
        eprintln!(
            "ingest {}: {} sentences ({} positive, {} negative), {tokens} tokens",
            entry.domain,
            corpus.len(),
            positives,
            corpus.len() - positives
        );
        Ok(())
    }

    pub fn candidates(&self, domain: Option<&str>) -> Result<()> {
        let entry = self.config.corpus_entry(domain)?;
        let corpus = self.load_corpus(entry)?;
        let table_path = self
            .config
            .candidates
            .paraphrase_table
            .as_ref()
            .context("config is missing candidates.paraphrase_table")?;
        let table = io::read_paraphrase_table(table_path)?;
        let pos_map = self.tag_lexicon()?;

        let vocab = self.build_vocab(&corpus)?;
        let tfidf = fit_tfidf(&corpus, &vocab);
        let logistic = self.config.linear.to_logistic(self.config.seed);
        let reps = representative_words(
            &corpus,
            &vocab,
            &tfidf,
            &logistic,
            self.config.candidates.coefficient_threshold,
        )?;

        // Bigram vocabulary over every configured corpus.
        let mut corpora = Vec::new();
        for other in &self.config.corpora {
            if other.domain == entry.domain {
                continue;
            }
            corpora.push(self.load_corpus(other)?);
        }
        let mut refs: Vec<&Corpus> = vec![&corpus];
        refs.extend(corpora.iter());
        let bigrams = build_bigram_vocabulary(refs);

        let tuples = generate_tuples(
            &corpus,
            &reps,
            &table,
            &pos_map,
            &bigrams,
            self.config.candidates.min_equivalence,
        )?;
        let n_pairs = tuples
            .iter()
            .map(LseTuple::pair_key)
            .collect::<HashSet<_>>()
            .len();
        io::write_jsonl(
            &self.out("tuples", &entry.domain, "jsonl"),
            Some(&self.meta),
            &tuples,
        )?;
        eprintln!(
            "candidates {}: {} representative words, {n_pairs} pairs, {} tuples",
            entry.domain,
            reps.len(),
            tuples.len()
        );
        Ok(())
    }

    fn perception_scorer(
        &self,
        target_domain: &str,
        target_corpus: &Corpus,
        target_vocab: &Vocabulary,
        target_tfidf: &TfidfModel,
    ) -> Result<PerceptionScorer> {
        let sources: Vec<_> = self
            .config
            .perception
            .train
            .iter()
            .filter(|e| e.domain != target_domain)
            .collect();
        if sources.is_empty() {
            bail!(
                "perception_clf needs [[perception.train]] entries for domains other than {target_domain:?}"
            );
        }
        let logistic = self.config.linear.to_logistic(self.config.seed);
        let mut examples = Vec::new();
        for source in sources {
            let corpus = io::read_corpus(&source.corpus)
                .with_context(|| format!("perception corpus for {}", source.domain))?;
            let vocab = self.build_vocab(&corpus)?;
            let tfidf = fit_tfidf(&corpus, &vocab);
            let classifier = self.sentence_classifier(&corpus, &vocab, &tfidf)?;
            let (_, tuples): (_, Vec<LseTuple>) = io::read_jsonl(&source.tuples)?;
            let mut used = 0usize;
            for tuple in &tuples {
                let Some(effect) = tuple.rct_effect else {
                    continue;
                };
                let Some(sentence) = corpus.by_id(&tuple.sentence_id) else {
                    continue;
                };
                let features = perception_features(
                    sentence,
                    &tuple.pair.control_word,
                    &tuple.pair.treatment_word,
                    &classifier,
                    &tfidf,
                    &vocab,
                )?;
                examples.push(LabeledPerceptionExample {
                    features,
                    rct_effect: effect,
                });
                used += 1;
            }
            eprintln!(
                "perception: {used} labeled tuples from {}",
                source.domain
            );
        }
        let model = fit_perception_classifier(&examples, &logistic)?;
        let stamped = json!({
            "config_hash": self.meta.config_hash,
            "seed": self.meta.seed,
            "model": serde_json::from_str::<serde_json::Value>(&model.to_json())?,
        });
        std::fs::write(
            self.out("perception_model", target_domain, "json"),
            serde_json::to_string_pretty(&stamped)?,
        )?;
        let classifier = self.sentence_classifier(target_corpus, target_vocab, target_tfidf)?;
        Ok(PerceptionScorer { model, classifier })
    }

    pub fn estimate(&self, domain: Option<&str>, estimators: Option<&[String]>) -> Result<()> {
        let entry = self.config.corpus_entry(domain)?;
        let corpus = self.load_corpus(entry)?;
        let (_, tuples): (_, Vec<LseTuple>) =
            io::read_jsonl(&self.out("tuples", &entry.domain, "jsonl")).with_context(|| {
                format!("tuples for {} (run `candidates` first)", entry.domain)
            })?;

        let kinds = self.config.estimator_kinds(estimators)?;
        let vocab = self.build_vocab(&corpus)?;
        let tfidf = fit_tfidf(&corpus, &vocab);
        let ctx = EstimationContext::new(&corpus, &vocab, &tfidf);

        let scorer = if kinds.contains(&EstimatorKind::PerceptionClf) {
            Some(self.perception_scorer(&entry.domain, &corpus, &vocab, &tfidf)?)
        } else {
            None
        };
        let config = self.config.estimate_config(kinds)?;
        let outcome = estimate_all(&ctx, &tuples, &config, scorer.as_ref())?;
        for line in &outcome.skipped {
            eprintln!("estimate {}: {line}", entry.domain);
        }
        io::write_jsonl(
            &self.out("estimates", &entry.domain, "jsonl"),
            Some(&self.meta),
            &outcome.tuples,
        )?;
        eprintln!(
            "estimate {}: {} tuples estimated, {} skipped entries",
            entry.domain,
            outcome.tuples.len(),
            outcome.skipped.len()
        );
        Ok(())
    }

    /// Tuples that carry every named estimate; drops (and counts) the
    /// rest so ranking and evaluation see a fully covered table.
    fn covered_tuples(tuples: Vec<LseTuple>, names: &[&str], label: &str) -> Vec<LseTuple> {
        let total = tuples.len();
        let covered: Vec<LseTuple> = tuples
            .into_iter()
            .filter(|t| names.iter().all(|n| t.estimates.contains_key(*n)))
            .collect();
        if covered.len() < total {
            eprintln!(
                "{label}: dropped {} of {total} tuples lacking estimates",
                total - covered.len()
            );
        }
        covered
    }

    pub fn rank(&self, domain: Option<&str>, estimator: &str) -> Result<()> {
        let entry = self.config.corpus_entry(domain)?;
        EstimatorKind::from_name(estimator)
            .with_context(|| format!("--estimator: unknown estimator {estimator:?}"))?;
        let (_, tuples): (_, Vec<LseTuple>) =
            io::read_jsonl(&self.out("estimates", &entry.domain, "jsonl"))?;
        let covered = Self::covered_tuples(tuples, &[estimator], "rank");
        let ranked = rank_estimates(&covered, estimator, true)?;
        io::write_jsonl(
            &self.out(&format!("ranked.{estimator}"), &entry.domain, "jsonl"),
            Some(&self.meta),
            &ranked,
        )?;
        eprintln!("rank {}: {} tuples by {estimator}", entry.domain, ranked.len());
        Ok(())
    }

    pub fn rct_sample(&self, domain: Option<&str>) -> Result<()> {
        let entry = self.config.corpus_entry(domain)?;
        let corpus = self.load_corpus(entry)?;
        let (_, tuples): (_, Vec<LseTuple>) =
            io::read_jsonl(&self.out("estimates", &entry.domain, "jsonl"))?;
        let names: Vec<&str> = self
            .config
            .estimate
            .estimators
            .iter()
            .map(String::as_str)
            .filter(|n| *n != "perception_clf")
            .collect();
        let covered = Self::covered_tuples(tuples, &names, "rct-sample");
        let plan = select_rct_sample(
            &covered,
            &names,
            &corpus,
            self.config.rct.top_pairs,
            self.config.rct.per_pair,
        )?;
        for flag in &plan.flags {
            eprintln!("rct-sample {}: {flag}", entry.domain);
        }
        let dummies = self.config.rct.dummy_sentences()?;
        let batches = make_batches(&plan, self.config.rct.batch_size, &dummies);
        io::write_jsonl(
            &self.out("rct_plan", &entry.domain, "jsonl"),
            Some(&self.meta),
            &plan.items,
        )?;
        io::write_jsonl(
            &self.out("batches", &entry.domain, "jsonl"),
            Some(&self.meta),
            &batches,
        )?;
        eprintln!(
            "rct-sample {}: {} control + {} treatment sentences in {} batches",
            entry.domain,
            plan.control_count(),
            plan.treatment_count(),
            batches.len()
        );
        Ok(())
    }

    pub fn rct_aggregate(&self, domain: Option<&str>, ratings_path: &Path) -> Result<()> {
        let entry = self.config.corpus_entry(domain)?;
        let ratings = io::read_ratings(ratings_path)?;
        let dummies = self.config.rct.dummy_sentences()?;
        let expectations = dummy_expectations(&dummies);
        let (kept, disqualified) = filter_workers(&ratings, &expectations);
        eprintln!(
            "rct-aggregate {}: {} of {} ratings kept, {} workers disqualified",
            entry.domain,
            kept.len(),
            ratings.len(),
            disqualified.len()
        );

        let (effects, uncovered) = aggregate_effects(&kept)?;
        for line in &uncovered {
            eprintln!("rct-aggregate {}: uncovered {line}", entry.domain);
        }
        io::write_jsonl(
            &self.out("rct_effects", &entry.domain, "jsonl"),
            Some(&self.meta),
            &effects,
        )?;

        match pairwise_agreement(&kept) {
            Ok(mean) => {
                let report = json!({
                    "meta": {"config_hash": self.meta.config_hash, "seed": self.meta.seed},
                    "mean_pairwise_pearson": mean,
                    "n_ratings": kept.len(),
                    "n_disqualified_workers": disqualified.len(),
                });
                std::fs::write(
                    self.out("agreement", &entry.domain, "json"),
                    serde_json::to_string_pretty(&report)?,
                )?;
            }
            Err(Error::NoAgreementPairs) => {
                eprintln!("rct-aggregate {}: no defined worker pairs", entry.domain);
            }
            Err(e) => return Err(e.into()),
        }

        // Attach effects to the estimate table when it exists, producing
        // the labeled tuples the perception classifier trains on.
        let estimates_path = self.out("estimates", &entry.domain, "jsonl");
        if estimates_path.exists() {
            let (_, tuples): (_, Vec<LseTuple>) = io::read_jsonl(&estimates_path)?;
            let by_key: HashMap<(String, String, String), f64> = effects
                .iter()
                .map(|e| {
                    (
                        (
                            e.control_word.clone(),
                            e.treatment_word.clone(),
                            e.sentence_id.clone(),
                        ),
                        e.effect,
                    )
                })
                .collect();
            let domain: lexeffect::corpus::Domain = entry.domain.parse().unwrap_or_else(|_| {
                // Config domain names are free-form; unknown ones map to
                // the catch-all variant.
                lexeffect::corpus::Domain::Other
            });
            let mut labeled = Vec::new();
            for mut tuple in tuples {
                let key = (
                    tuple.pair.control_word.clone(),
                    tuple.pair.treatment_word.clone(),
                    tuple.sentence_id.clone(),
                );
                if let Some(&effect) = by_key.get(&key) {
                    tuple.rct_effect = Some(effect);
                    tuple.domain = Some(domain);
                    labeled.push(tuple);
                }
            }
            io::write_jsonl(
                &self.out("labeled_tuples", &entry.domain, "jsonl"),
                Some(&self.meta),
                &labeled,
            )?;
            eprintln!(
                "rct-aggregate {}: {} effects, {} labeled tuples",
                entry.domain,
                effects.len(),
                labeled.len()
            );
        } else {
            eprintln!("rct-aggregate {}: {} effects", entry.domain, effects.len());
        }
        Ok(())
    }

    pub fn eval(&self, domain: Option<&str>, reference: &str) -> Result<()> {
        let entry = self.config.corpus_entry(domain)?;
        let corpus = self.load_corpus(entry)?;
        let (_, tuples): (_, Vec<LseTuple>) =
            io::read_jsonl(&self.out("estimates", &entry.domain, "jsonl"))?;

        // Reference effect per tuple key.
        let reference_effects: HashMap<(String, String, String), f64> = match reference {
            "truth" => {
                let (_, truths): (_, Vec<lexeffect::synth::GroundTruth>) =
                    io::read_jsonl(&self.out("truth", &entry.domain, "jsonl"))?;
                truths
                    .into_iter()
                    .map(|t| ((t.control_word, t.treatment_word, t.sentence_id), t.effect))
                    .collect()
            }
            "rct" => {
                let (_, effects): (_, Vec<lexeffect::rct::AggregatedEffect>) =
                    io::read_jsonl(&self.out("rct_effects", &entry.domain, "jsonl"))?;
                effects
                    .into_iter()
                    .map(|e| ((e.control_word, e.treatment_word, e.sentence_id), e.effect))
                    .collect()
            }
            other => bail!("--reference must be \"truth\" or \"rct\", got {other:?}"),
        };

        let names: Vec<&str> = self
            .config
            .estimate
            .estimators
            .iter()
            .map(String::as_str)
            .collect();
        let covered = Self::covered_tuples(tuples, &names, "eval");
        let mut aligned: Vec<(&LseTuple, f64)> = covered
            .iter()
            .filter_map(|t| {
                let key = (
                    t.pair.control_word.clone(),
                    t.pair.treatment_word.clone(),
                    t.sentence_id.clone(),
                );
                reference_effects.get(&key).map(|&e| (t, e))
            })
            .collect();
        aligned.sort_by(|a, b| {
            (&a.0.pair.control_word, &a.0.pair.treatment_word, &a.0.sentence_id).cmp(&(
                &b.0.pair.control_word,
                &b.0.pair.treatment_word,
                &b.0.sentence_id,
            ))
        });
        if aligned.is_empty() {
            bail!("no tuples shared between estimates and the {reference} reference");
        }
        let reference_values: Vec<f64> = aligned.iter().map(|(_, e)| *e).collect();
        let reference_labels: Vec<u8> = reference_values
            .iter()
            .map(|&e| u8::from(e > 0.0))
            .collect();
        let sentence_labels: HashMap<String, u8> = corpus
            .sentences
            .iter()
            .map(|s| (s.id.clone(), s.label))
            .collect();

        let mut pearson_by = serde_json::Map::new();
        let mut spearman_by = serde_json::Map::new();
        let mut auc_by = serde_json::Map::new();
        let mut negative_by = serde_json::Map::new();
        for &name in &names {
            let estimates: Vec<f64> = aligned.iter().map(|(t, _)| t.estimates[name]).collect();
            let insert = |map: &mut serde_json::Map<String, serde_json::Value>,
                          value: std::result::Result<f64, Error>,
                          what: &str| match value {
                Ok(v) => {
                    map.insert(name.to_string(), json!(v));
                }
                Err(e) => {
                    eprintln!("eval {}: {what} undefined for {name}: {e}", entry.domain);
                    map.insert(name.to_string(), serde_json::Value::Null);
                }
            };
            insert(
                &mut pearson_by,
                pearson(&estimates, &reference_values),
                "pearson",
            );
            insert(
                &mut spearman_by,
                spearman_rank(&estimates, &reference_values),
                "spearman",
            );
            match roc_auc(&estimates, &reference_labels) {
                Ok((auc, curve)) => {
                    auc_by.insert(name.to_string(), json!(auc));
                    io::write_roc_curve(
                        &self.out(&format!("roc.{name}"), &entry.domain, "csv"),
                        Some(&self.meta),
                        &curve,
                    )?;
                }
                Err(e) => {
                    eprintln!("eval {}: auc undefined for {name}: {e}", entry.domain);
                    auc_by.insert(name.to_string(), serde_json::Value::Null);
                }
            }
            let ranked = rank_estimates(&covered, name, true)?;
            insert(
                &mut negative_by,
                negative_fraction_top_k(&ranked, &sentence_labels, 1000),
                "negative fraction",
            );
        }

        let agreement = match estimator_agreement_matrix(&covered, &names) {
            Ok(matrix) => json!({"estimators": names, "matrix": matrix}),
            Err(e) => {
                eprintln!("eval {}: agreement matrix undefined: {e}", entry.domain);
                serde_json::Value::Null
            }
        };

        let report = json!({
            "meta": {"config_hash": self.meta.config_hash, "seed": self.meta.seed},
            "reference": reference,
            "n_tuples": aligned.len(),
            "pearson": pearson_by,
            "spearman": spearman_by,
            "auc": auc_by,
            "negative_fraction_top_1000": negative_by,
            "estimator_agreement_spearman": agreement,
        });
        std::fs::write(
            self.out("metrics", &entry.domain, "json"),
            serde_json::to_string_pretty(&report)?,
        )?;
        eprintln!(
            "eval {}: {} tuples against {reference} reference",
            entry.domain,
            aligned.len()
        );
        Ok(())
    }
}

/// Maps an error chain to the documented process exit code: 3 for
/// missing inputs, 4 for schema violations, 5 for degenerate data,
/// 1 otherwise.
pub fn exit_code_for(error: &anyhow::Error) -> i32 {
    for cause in error.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Io(_) => 3,
                Error::Schema(_)
                | Error::Json(_)
                | Error::Csv(_)
                | Error::FormatVersion(_)
                | Error::InvalidSpec(_)
                | Error::UnknownEstimator(_) => 4,
                Error::DegenerateLabels(_)
                | Error::EmptyGroup(_)
                | Error::NoOobTrees(_)
                | Error::NoValidTrees
                | Error::UncoveredVariant(_)
                | Error::NoAgreementPairs
                | Error::UndefinedCorrelation(_)
                | Error::CoverageMismatch { .. }
                | Error::DimensionMismatch { .. }
                | Error::NonFiniteFeature { .. }
                | Error::ControlWordMissing { .. } => 5,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
        if cause.downcast_ref::<toml::de::Error>().is_some() {
            return 4;
        }
    }
    let text = format!("{error:#}");
    if text.contains("unknown estimator") || text.contains("--estimators") {
        return 4;
    }
    if text.contains("missing") || text.contains("cannot read") || text.contains("run `") {
        return 3;
    }
    1
}

/// Prints the machine-readable error record to stderr.
pub fn emit_error_record(error: &anyhow::Error, code: i32) {
    let record = json!({
        "error": {
            "code": code,
            "message": format!("{error:#}"),
        }
    });
    eprintln!("{record}");
}

