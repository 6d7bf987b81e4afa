//! The four observational effect estimators: KNN matching, virtual-twin
//! random forest, counterfactual random forest and causal forest, plus
//! the per-pair orchestration that reuses fitted models across a pair's
//! sentences.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::candidates::{LseTuple, SubstitutionPair};
use crate::causal::{fit_causal_forest, CausalForestModel};
use crate::corpus::{Corpus, Fnv1a, Sentence, Vocabulary};
use crate::error::{Error, Result};
use crate::exec;
use crate::features::{BinaryMatrix, BinaryVector, SparseVec, TfidfModel};
use crate::forest::{fit_random_forest, ForestConfig, ForestModel};
use crate::perception::PerceptionScorer;

/// The estimators that can fill an [`LseTuple`]'s estimate map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EstimatorKind {
    Knn,
    VtRf,
    CfRf,
    Csf,
    PerceptionClf,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 5] = [
        EstimatorKind::Knn,
        EstimatorKind::VtRf,
        EstimatorKind::CfRf,
        EstimatorKind::Csf,
        EstimatorKind::PerceptionClf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Knn => "knn",
            EstimatorKind::VtRf => "vt_rf",
            EstimatorKind::CfRf => "cf_rf",
            EstimatorKind::Csf => "csf",
            EstimatorKind::PerceptionClf => "perception_clf",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::UnknownEstimator(name.to_string()))
    }
}

/// Immutable per-corpus caches shared by every estimator: binary and
/// tf-idf vectors per sentence plus a token inverted index.
pub struct EstimationContext<'a> {
    pub corpus: &'a Corpus,
    pub vocab: &'a Vocabulary,
    pub tfidf: &'a TfidfModel,
    binary: Vec<BinaryVector>,
    tfidf_vecs: Vec<SparseVec>,
    word_index: HashMap<String, Vec<usize>>,
    id_index: HashMap<String, usize>,
}

impl<'a> EstimationContext<'a> {
    pub fn new(corpus: &'a Corpus, vocab: &'a Vocabulary, tfidf: &'a TfidfModel) -> Self {
        let binary = corpus
            .sentences
            .iter()
            .map(|s| crate::features::vectorize_binary(s, vocab))
            .collect();
        let tfidf_vecs = corpus
            .sentences
            .iter()
            .map(|s| tfidf.transform(s, vocab))
            .collect();
        let mut word_index: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, s) in corpus.sentences.iter().enumerate() {
            for token in s.tokens.iter().collect::<BTreeSet<_>>() {
                word_index.entry(token.clone()).or_default().push(i);
            }
        }
        let id_index = corpus
            .sentences
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.clone(), i))
            .collect();
        EstimationContext {
            corpus,
            vocab,
            tfidf,
            binary,
            tfidf_vecs,
            word_index,
            id_index,
        }
    }

    pub fn binary_vector(&self, sentence_index: usize) -> &BinaryVector {
        &self.binary[sentence_index]
    }

    pub fn tfidf_vector(&self, sentence_index: usize) -> &SparseVec {
        &self.tfidf_vecs[sentence_index]
    }

    pub fn sentence_index(&self, id: &str) -> Option<usize> {
        self.id_index.get(id).copied()
    }

    fn sentences_with(&self, word: &str) -> &[usize] {
        self.word_index
            .get(word)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    fn label(&self, sentence_index: usize) -> u8 {
        self.corpus.sentences[sentence_index].label
    }
}

/// The control/treatment split for one substitutable pair. Sentences
/// containing the control word form the control group; sentences
/// containing only the treatment word form the treatment group. A
/// sentence containing both words goes to control and is flagged.
pub struct EstimationProblem {
    pub pair: SubstitutionPair,
    /// Corpus indices sorted by sentence id.
    pub control: Vec<usize>,
    pub treatment: Vec<usize>,
    pub both_words: BTreeSet<usize>,
    /// Control then treatment merged, sorted by sentence id; forest row
    /// order.
    pub union_rows: Vec<usize>,
    union_pos: HashMap<usize, usize>,
    control_pos: HashMap<usize, usize>,
}

impl EstimationProblem {
    pub fn build(ctx: &EstimationContext, pair: &SubstitutionPair) -> Result<Self> {
        let w1 = pair.control_word.as_str();
        let w2 = pair.treatment_word.as_str();
        let by_id = |&idx: &usize| ctx.corpus.sentences[idx].id.clone();

        let mut control: Vec<usize> = ctx.sentences_with(w1).to_vec();
        control.sort_by_key(by_id);
        let mut both_words = BTreeSet::new();
        for &idx in &control {
            if ctx.corpus.sentences[idx].contains_token(w2) {
                both_words.insert(idx);
            }
        }
        let mut treatment: Vec<usize> = ctx
            .sentences_with(w2)
            .iter()
            .copied()
            .filter(|&idx| !ctx.corpus.sentences[idx].contains_token(w1))
            .collect();
        treatment.sort_by_key(by_id);

        if control.is_empty() {
            return Err(Error::EmptyGroup("control"));
        }
        if treatment.is_empty() {
            return Err(Error::EmptyGroup("treatment"));
        }

        let mut union_rows: Vec<usize> = control.iter().chain(&treatment).copied().collect();
        union_rows.sort_by_key(by_id);
        let union_pos = union_rows
            .iter()
            .enumerate()
            .map(|(row, &idx)| (idx, row))
            .collect();
        let control_pos = control
            .iter()
            .enumerate()
            .map(|(row, &idx)| (idx, row))
            .collect();
        Ok(EstimationProblem {
            pair: pair.clone(),
            control,
            treatment,
            both_words,
            union_rows,
            union_pos,
            control_pos,
        })
    }

    /// Row of a corpus sentence within the union matrix.
    pub fn union_row(&self, sentence_index: usize) -> Option<usize> {
        self.union_pos.get(&sentence_index).copied()
    }

    /// Row of a corpus sentence within the control matrix.
    pub fn control_row(&self, sentence_index: usize) -> Option<usize> {
        self.control_pos.get(&sentence_index).copied()
    }
}

/// An estimator output together with the quality flags raised while
/// computing it.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub value: f64,
    pub flags: Vec<String>,
}

impl Estimate {
    fn plain(value: f64) -> Self {
        Estimate {
            value,
            flags: Vec::new(),
        }
    }
}

/// Builds the virtual-twin feature vector: the sentence's binary vector
/// with the control-word column off and the treatment-word column on.
pub fn twin_vector(
    ctx: &EstimationContext,
    sentence_index: usize,
    pair: &SubstitutionPair,
) -> BinaryVector {
    let mut twin = ctx.binary[sentence_index].clone();
    if let Some(j) = ctx.vocab.index_of(&pair.control_word) {
        twin.set(j, false);
    }
    if let Some(j) = ctx.vocab.index_of(&pair.treatment_word) {
        twin.set(j, true);
    }
    twin
}

/// KNN matching estimate: difference between the mean outcome of the K
/// most cosine-similar treatment sentences and the K most similar control
/// sentences (query excluded), on tf-idf vectors with both pair words
/// zeroed out of the query.
pub fn lse_knn(
    ctx: &EstimationContext,
    problem: &EstimationProblem,
    query_index: usize,
    k: usize,
) -> Result<Estimate> {
    if k < 1 {
        return Err(Error::Schema("k must be at least 1".into()));
    }
    let mut drop = Vec::new();
    if let Some(j) = ctx.vocab.index_of(&problem.pair.control_word) {
        drop.push(j as u32);
    }
    if let Some(j) = ctx.vocab.index_of(&problem.pair.treatment_word) {
        drop.push(j as u32);
    }
    let query = ctx.tfidf_vecs[query_index].without(&drop);

    let mut flags = Vec::new();
    let control_pool: Vec<usize> = problem
        .control
        .iter()
        .copied()
        .filter(|&idx| idx != query_index)
        .collect();
    if control_pool.is_empty() {
        return Err(Error::EmptyGroup("control"));
    }

    let mut select = |pool: &[usize], group: &str| -> f64 {
        let mut scored: Vec<(f64, usize)> = pool
            .iter()
            .map(|&idx| (query.cosine(&ctx.tfidf_vecs[idx]), idx))
            .collect();
        scored.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then_with(|| ctx.corpus.sentences[a.1].id.cmp(&ctx.corpus.sentences[b.1].id))
        });
        let take = k.min(scored.len());
        if take < k {
            flags.push(format!("knn_fewer_than_k_{group}"));
        }
        let sum: f64 = scored[..take]
            .iter()
            .map(|&(_, idx)| f64::from(ctx.label(idx)))
            .sum();
        sum / take as f64
    };

    let treated_mean = select(&problem.treatment, "treatment");
    let control_mean = select(&control_pool, "control");
    Ok(Estimate {
        value: treated_mean - control_mean,
        flags,
    })
}

/// Virtual-twin estimate: full-forest probability of the twin minus the
/// out-of-bag probability of the query sentence. Falls back to the full
/// forest for the query when no tree is out of bag, raising a flag.
pub fn lse_vt_rf(
    ctx: &EstimationContext,
    problem: &EstimationProblem,
    forest: &ForestModel,
    query_index: usize,
) -> Result<Estimate> {
    let twin = twin_vector(ctx, query_index, &problem.pair);
    let p_twin = forest.forest_probability(&twin)?;
    let row = problem
        .union_row(query_index)
        .ok_or(Error::EmptyGroup("control"))?;
    let query = &ctx.binary[query_index];
    let (p_query, flags) = match forest.oob_probability(query, row) {
        Ok(p) => (p, Vec::new()),
        Err(Error::NoOobTrees(_)) => (
            forest.forest_probability(query)?,
            vec!["oob_fallback_full_forest".to_string()],
        ),
        Err(e) => return Err(e),
    };
    Ok(Estimate {
        value: p_twin - p_query,
        flags,
    })
}

/// A probability model for one arm of the counterfactual estimator: a
/// fitted forest, or a constant when the arm's labels are single-class.
pub enum ProbModel {
    Forest(ForestModel),
    Constant(f64),
}

impl ProbModel {
    pub fn probability(&self, x: &BinaryVector) -> Result<f64> {
        match self {
            ProbModel::Forest(f) => f.forest_probability(x),
            ProbModel::Constant(p) => Ok(*p),
        }
    }

    /// OOB probability for a training row; constants have no bags.
    pub fn oob_probability(&self, x: &BinaryVector, row: usize) -> Result<f64> {
        match self {
            ProbModel::Forest(f) => f.oob_probability(x, row),
            ProbModel::Constant(p) => Ok(*p),
        }
    }
}

/// Counterfactual estimate: treatment-forest probability of the twin
/// minus the control-forest OOB probability of the query.
pub fn lse_cf_rf(
    ctx: &EstimationContext,
    problem: &EstimationProblem,
    control_model: &ProbModel,
    treatment_model: &ProbModel,
    query_index: usize,
) -> Result<Estimate> {
    let twin = twin_vector(ctx, query_index, &problem.pair);
    let p_twin = treatment_model.probability(&twin)?;
    let row = problem
        .control_row(query_index)
        .ok_or(Error::EmptyGroup("control"))?;
    let query = &ctx.binary[query_index];
    let (p_query, flags) = match control_model.oob_probability(query, row) {
        Ok(p) => (p, Vec::new()),
        Err(Error::NoOobTrees(_)) => (
            control_model.probability(query)?,
            vec!["oob_fallback_full_forest".to_string()],
        ),
        Err(e) => return Err(e),
    };
    Ok(Estimate {
        value: p_twin - p_query,
        flags,
    })
}

/// Causal-forest estimate for the query sentence, excluding trees whose
/// subsample saw its row.
pub fn lse_csf(
    ctx: &EstimationContext,
    problem: &EstimationProblem,
    model: &CausalForestModel,
    query_index: usize,
) -> Result<Estimate> {
    let row = problem
        .union_row(query_index)
        .ok_or(Error::EmptyGroup("control"))?;
    let value = model.causal_estimate(&ctx.binary[query_index], Some(row))?;
    Ok(Estimate::plain(value))
}

/// Models fitted once per pair and reused across its sentences.
pub struct PairModels {
    pub vt: Option<ForestModel>,
    pub cf_control: Option<ProbModel>,
    pub cf_treatment: Option<ProbModel>,
    pub csf: Option<CausalForestModel>,
    pub flags: BTreeSet<String>,
    pub skipped: Vec<String>,
}

fn matrix_for(ctx: &EstimationContext, rows: &[usize]) -> BinaryMatrix {
    let vectors = rows.iter().map(|&idx| ctx.binary[idx].clone()).collect();
    BinaryMatrix::from_rows(vectors, ctx.vocab.len()).expect("cached rows share the vocab width")
}

fn arm_prob_model(
    ctx: &EstimationContext,
    rows: &[usize],
    config: &ForestConfig,
    flags: &mut BTreeSet<String>,
    arm: &str,
) -> Result<ProbModel> {
    let y: Vec<u8> = rows.iter().map(|&idx| ctx.label(idx)).collect();
    match fit_random_forest(&matrix_for(ctx, rows), &y, config) {
        Ok(model) => Ok(ProbModel::Forest(model)),
        Err(Error::DegenerateLabels(_)) => {
            // Single-class group: degenerate constant predictor at the
            // class rate.
            let rate = y.iter().map(|&v| f64::from(v)).sum::<f64>() / y.len() as f64;
            flags.insert(format!("cf_rf_constant_{arm}_forest"));
            Ok(ProbModel::Constant(rate))
        }
        Err(e) => Err(e),
    }
}

/// Derives a reproducible seed for one pair's models from the master
/// seed, independent of pair iteration order.
pub fn pair_seed(master: u64, w1: &str, w2: &str, salt: u64) -> u64 {
    let mut h = Fnv1a::new();
    h.write(&master.to_le_bytes());
    h.write(w1.as_bytes());
    h.write(&[0x1f]);
    h.write(w2.as_bytes());
    h.write(&salt.to_le_bytes());
    h.finish()
}

/// Fits every model the requested estimators need for one pair.
pub fn fit_pair_models(
    ctx: &EstimationContext,
    problem: &EstimationProblem,
    estimators: &BTreeSet<EstimatorKind>,
    forest_config: &ForestConfig,
    master_seed: u64,
) -> PairModels {
    let w1 = problem.pair.control_word.as_str();
    let w2 = problem.pair.treatment_word.as_str();
    let seeded = |salt: u64| ForestConfig {
        seed: pair_seed(master_seed, w1, w2, salt),
        ..forest_config.clone()
    };
    let mut models = PairModels {
        vt: None,
        cf_control: None,
        cf_treatment: None,
        csf: None,
        flags: BTreeSet::new(),
        skipped: Vec::new(),
    };

    if estimators.contains(&EstimatorKind::VtRf) {
        let y: Vec<u8> = problem.union_rows.iter().map(|&i| ctx.label(i)).collect();
        match fit_random_forest(&matrix_for(ctx, &problem.union_rows), &y, &seeded(1)) {
            Ok(model) => models.vt = Some(model),
            Err(e) => models
                .skipped
                .push(format!("vt_rf skipped for ({w1} -> {w2}): {e}")),
        }
    }
    if estimators.contains(&EstimatorKind::CfRf) {
        let control =
            arm_prob_model(ctx, &problem.control, &seeded(2), &mut models.flags, "control");
        let treatment = arm_prob_model(
            ctx,
            &problem.treatment,
            &seeded(3),
            &mut models.flags,
            "treatment",
        );
        match (control, treatment) {
            (Ok(c), Ok(t)) => {
                models.cf_control = Some(c);
                models.cf_treatment = Some(t);
            }
            (c, t) => {
                for e in [c.err(), t.err()].into_iter().flatten() {
                    models
                        .skipped
                        .push(format!("cf_rf skipped for ({w1} -> {w2}): {e}"));
                }
            }
        }
    }
    if estimators.contains(&EstimatorKind::Csf) {
        let t: Vec<u8> = problem
            .union_rows
            .iter()
            .map(|&i| u8::from(!problem.control_pos.contains_key(&i)))
            .collect();
        let y: Vec<f64> = problem
            .union_rows
            .iter()
            .map(|&i| f64::from(ctx.label(i)))
            .collect();
        match fit_causal_forest(&matrix_for(ctx, &problem.union_rows), &t, &y, &seeded(4)) {
            Ok(model) => models.csf = Some(model),
            Err(e) => models
                .skipped
                .push(format!("csf skipped for ({w1} -> {w2}): {e}")),
        }
    }
    models
}

/// Orchestration settings for [`estimate_all`].
#[derive(Debug, Clone)]
pub struct EstimateConfig {
    pub estimators: BTreeSet<EstimatorKind>,
    pub knn_k: usize,
    pub forest: ForestConfig,
    pub seed: u64,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            estimators: [
                EstimatorKind::Knn,
                EstimatorKind::VtRf,
                EstimatorKind::CfRf,
                EstimatorKind::Csf,
            ]
            .into(),
            knn_k: 30,
            forest: ForestConfig::default(),
            seed: 0,
        }
    }
}

/// The filled estimate table plus a log of skipped pairs and tuples.
pub struct EstimateOutcome {
    pub tuples: Vec<LseTuple>,
    pub skipped: Vec<String>,
}

/// Fills estimates for every tuple, fitting each pair's models once and
/// reusing them across that pair's sentences. Degenerate pairs are
/// skipped and logged, not fatal.
pub fn estimate_all(
    ctx: &EstimationContext,
    tuples: &[LseTuple],
    config: &EstimateConfig,
    perception: Option<&PerceptionScorer>,
) -> Result<EstimateOutcome> {
    if config.estimators.contains(&EstimatorKind::PerceptionClf) && perception.is_none() {
        return Err(Error::Schema(
            "perception_clf requested without a fitted perception scorer".into(),
        ));
    }

    let mut groups: BTreeMap<(String, String), (SubstitutionPair, Vec<LseTuple>)> =
        BTreeMap::new();
    for tuple in tuples {
        groups
            .entry(tuple.pair_key())
            .or_insert_with(|| (tuple.pair.clone(), Vec::new()))
            .1
            .push(tuple.clone());
    }
    let groups: Vec<(SubstitutionPair, Vec<LseTuple>)> = groups.into_values().collect();

    let results = exec::map_slice(&groups, |(pair, pair_tuples)| {
        estimate_pair(ctx, pair, pair_tuples, config, perception)
    });

    let mut outcome = EstimateOutcome {
        tuples: Vec::with_capacity(tuples.len()),
        skipped: Vec::new(),
    };
    for (filled, skipped) in results {
        outcome.tuples.extend(filled);
        outcome.skipped.extend(skipped);
    }
    Ok(outcome)
}

fn estimate_pair(
    ctx: &EstimationContext,
    pair: &SubstitutionPair,
    tuples: &[LseTuple],
    config: &EstimateConfig,
    perception: Option<&PerceptionScorer>,
) -> (Vec<LseTuple>, Vec<String>) {
    let w1 = pair.control_word.as_str();
    let w2 = pair.treatment_word.as_str();
    let problem = match EstimationProblem::build(ctx, pair) {
        Ok(p) => p,
        Err(e) => {
            return (
                Vec::new(),
                vec![format!(
                    "pair ({w1} -> {w2}) skipped ({} tuples): {e}",
                    tuples.len()
                )],
            );
        }
    };
    let models = fit_pair_models(ctx, &problem, &config.estimators, &config.forest, config.seed);
    let mut skipped = models.skipped.clone();

    let mut filled = Vec::with_capacity(tuples.len());
    for tuple in tuples {
        let Some(q) = ctx.sentence_index(&tuple.sentence_id) else {
            skipped.push(format!(
                "tuple ({w1} -> {w2}, {}) skipped: sentence not in corpus",
                tuple.sentence_id
            ));
            continue;
        };
        if problem.control_row(q).is_none() {
            skipped.push(format!(
                "tuple ({w1} -> {w2}, {}) skipped: sentence lacks the control word",
                tuple.sentence_id
            ));
            continue;
        }
        let mut out = tuple.clone();
        let mut flags: BTreeSet<String> = out.flags.iter().cloned().collect();
        flags.extend(models.flags.iter().cloned());
        if problem.both_words.contains(&q) {
            flags.insert("sentence_contains_both_words".to_string());
        }

        let mut apply = |kind: EstimatorKind, result: Result<Estimate>| match result {
            Ok(est) => {
                out.estimates.insert(kind.name().to_string(), est.value);
                flags.extend(est.flags);
            }
            Err(e) => skipped.push(format!(
                "{} skipped for ({w1} -> {w2}, {}): {e}",
                kind.name(),
                out.sentence_id
            )),
        };

        for kind in &config.estimators {
            match kind {
                EstimatorKind::Knn => apply(*kind, lse_knn(ctx, &problem, q, config.knn_k)),
                EstimatorKind::VtRf => {
                    if let Some(forest) = &models.vt {
                        apply(*kind, lse_vt_rf(ctx, &problem, forest, q));
                    }
                }
                EstimatorKind::CfRf => {
                    if let (Some(c), Some(t)) = (&models.cf_control, &models.cf_treatment) {
                        apply(*kind, lse_cf_rf(ctx, &problem, c, t, q));
                    }
                }
                EstimatorKind::Csf => {
                    if let Some(model) = &models.csf {
                        apply(*kind, lse_csf(ctx, &problem, model, q));
                    }
                }
                EstimatorKind::PerceptionClf => {
                    let scorer = perception.expect("checked in estimate_all");
                    let sentence: &Sentence = &ctx.corpus.sentences[q];
                    apply(
                        *kind,
                        scorer
                            .score(sentence, w1, w2, ctx.tfidf, ctx.vocab)
                            .map(Estimate::plain),
                    );
                }
            }
        }
        out.flags = flags.into_iter().collect();
        filled.push(out);
    }
    (filled, skipped)
}

/// Sorts tuples by the named estimator's estimate, ties broken by
/// (control word, treatment word, sentence id). Every tuple must carry
/// the estimate.
pub fn rank_estimates(
    tuples: &[LseTuple],
    estimator: &str,
    descending: bool,
) -> Result<Vec<LseTuple>> {
    EstimatorKind::from_name(estimator)?;
    let missing = tuples
        .iter()
        .filter(|t| !t.estimates.contains_key(estimator))
        .count();
    if missing > 0 {
        return Err(Error::CoverageMismatch {
            estimator: estimator.to_string(),
            missing,
        });
    }
    let mut ranked = tuples.to_vec();
    ranked.sort_by(|a, b| {
        let va = a.estimates[estimator];
        let vb = b.estimates[estimator];
        let primary = if descending {
            vb.total_cmp(&va)
        } else {
            va.total_cmp(&vb)
        };
        primary
            .then_with(|| a.pair.control_word.cmp(&b.pair.control_word))
            .then_with(|| a.pair.treatment_word.cmp(&b.pair.treatment_word))
            .then_with(|| a.sentence_id.cmp(&b.sentence_id))
    });
    Ok(ranked)
}
