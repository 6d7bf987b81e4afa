//! RCT protocol support: sampling the annotation plan from estimator
//! rankings, batching with attention checks, worker filtering and
//! aggregation of ratings into per-tuple effects.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::candidates::LseTuple;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::eval::pearson;

/// One worker's rating of one displayed sentence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatingRecord {
    pub worker_id: String,
    pub batch_id: String,
    pub sentence_key: String,
    /// 1-5 perception rating.
    pub rating: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Control,
    Treatment,
}

impl Variant {
    fn name(self) -> &'static str {
        match self {
            Variant::Control => "control",
            Variant::Treatment => "treatment",
        }
    }
}

/// Key identifying one displayed sentence: pair, source sentence and
/// variant. The separator never occurs in tokens.
pub fn sentence_key(w1: &str, w2: &str, sentence_id: &str, variant: Variant) -> String {
    format!("{w1}|{w2}|{sentence_id}|{}", variant.name())
}

/// Parses a key produced by [`sentence_key`].
pub fn parse_sentence_key(key: &str) -> Result<(String, String, String, Variant)> {
    let parts: Vec<&str> = key.split('|').collect();
    if parts.len() != 4 {
        return Err(Error::Schema(format!("malformed sentence key {key:?}")));
    }
    let variant = match parts[3] {
        "control" => Variant::Control,
        "treatment" => Variant::Treatment,
        other => return Err(Error::Schema(format!("unknown variant {other:?}"))),
    };
    Ok((
        parts[0].to_string(),
        parts[1].to_string(),
        parts[2].to_string(),
        variant,
    ))
}

/// Which extreme of the rating scale a dummy sentence must receive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DummyExpectation {
    /// Correct answers rate 4 or 5.
    High,
    /// Correct answers rate 1 or 2.
    Low,
}

impl DummyExpectation {
    pub fn accepts(self, rating: u8) -> bool {
        match self {
            DummyExpectation::High => rating >= 4,
            DummyExpectation::Low => rating <= 2,
        }
    }
}

/// An attention-check sentence with its expected answer side.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DummySentence {
    pub text: String,
    pub expected: DummyExpectation,
}

/// One selected tuple in the annotation plan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanItem {
    pub estimator: String,
    pub control_word: String,
    pub treatment_word: String,
    pub sentence_id: String,
    pub estimate: f64,
    /// Why this sentence was sampled: the pair's maximum, minimum or
    /// median estimate.
    pub role: String,
    pub control_text: String,
    pub treatment_text: String,
}

#[derive(Debug, Clone, Default)]
pub struct RctPlan {
    pub items: Vec<PlanItem>,
    pub flags: Vec<String>,
}

impl RctPlan {
    pub fn control_count(&self) -> usize {
        self.items.len()
    }

    pub fn treatment_count(&self) -> usize {
        self.items.len()
    }
}

/// Replaces the first whitespace chunk whose cleaned token equals `w1`
/// with `w2`, preserving surrounding punctuation and the rest of the
/// text.
pub fn replace_first_token(text: &str, w1: &str, w2: &str) -> Option<String> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    let mut replaced = false;
    while !rest.is_empty() {
        let start = match rest.find(|c: char| !c.is_whitespace()) {
            Some(i) => i,
            None => {
                out.push_str(rest);
                break;
            }
        };
        out.push_str(&rest[..start]);
        rest = &rest[start..];
        let end = rest
            .find(char::is_whitespace)
            .unwrap_or(rest.len());
        let chunk = &rest[..end];
        if !replaced && chunk_matches(chunk, w1) {
            out.push_str(&rewrite_chunk(chunk, w2));
            replaced = true;
        } else {
            out.push_str(chunk);
        }
        rest = &rest[end..];
    }
    replaced.then_some(out)
}

fn chunk_matches(chunk: &str, word: &str) -> bool {
    crate::corpus::tokenize(chunk).first().map(String::as_str) == Some(word)
}

/// Swaps the word core of a chunk, keeping stripped leading/trailing
/// punctuation in place.
fn rewrite_chunk(chunk: &str, replacement: &str) -> String {
    let is_edge = |c: char| !c.is_alphanumeric() && c != '#' && c != '@';
    let core_start = chunk
        .char_indices()
        .find(|(_, c)| !is_edge(*c))
        .map_or(0, |(i, _)| i);
    let core_end = chunk
        .char_indices()
        .rev()
        .find(|(_, c)| !is_edge(*c))
        .map_or(chunk.len(), |(i, c)| i + c.len_utf8());
    format!(
        "{}{}{}",
        &chunk[..core_start],
        replacement,
        &chunk[core_end..]
    )
}

/// Selects the annotation sample: per estimator the `top_pairs`
/// highest-scoring pairs (pair score is its best sentence estimate), each
/// pair claimed by exactly one estimator (best rank wins, ties by
/// estimator name), then that pair's maximum-, minimum- and
/// median-estimate control sentences.
pub fn select_rct_sample(
    table: &[LseTuple],
    estimators: &[&str],
    corpus: &Corpus,
    top_pairs: usize,
    per_pair: usize,
) -> Result<RctPlan> {
    let mut plan = RctPlan::default();

    // Per estimator: pairs ranked by best sentence estimate descending.
    let mut ranked_pairs: BTreeMap<&str, Vec<(String, String)>> = BTreeMap::new();
    for &name in estimators {
        let mut best: BTreeMap<(String, String), f64> = BTreeMap::new();
        for tuple in table {
            let Some(&value) = tuple.estimates.get(name) else {
                return Err(Error::CoverageMismatch {
                    estimator: name.to_string(),
                    missing: 1,
                });
            };
            let key = tuple.pair_key();
            let entry = best.entry(key).or_insert(f64::NEG_INFINITY);
            if value > *entry {
                *entry = value;
            }
        }
        let mut pairs: Vec<((String, String), f64)> = best.into_iter().collect();
        pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        if pairs.len() < top_pairs {
            plan.flags.push(format!(
                "estimator {name} has only {} distinct pairs",
                pairs.len()
            ));
        }
        ranked_pairs.insert(name, pairs.into_iter().map(|(k, _)| k).collect());
    }

    // Claim pairs in (rank, estimator name) order so a pair wanted by
    // several estimators goes to the one ranking it highest, ties to the
    // lexicographically first estimator, and losers keep filling from
    // deeper ranks.
    let mut by_name: Vec<&str> = estimators.to_vec();
    by_name.sort_unstable();
    let max_len = ranked_pairs.values().map(Vec::len).max().unwrap_or(0);
    let mut claimed: BTreeSet<(String, String)> = BTreeSet::new();
    let mut kept: BTreeMap<&str, Vec<(String, String)>> = BTreeMap::new();
    for rank in 0..max_len {
        for &name in &by_name {
            let list = &ranked_pairs[name];
            if rank >= list.len() {
                continue;
            }
            let pair = &list[rank];
            let mine = kept.entry(name).or_default();
            if mine.len() >= top_pairs || claimed.contains(pair) {
                continue;
            }
            claimed.insert(pair.clone());
            mine.push(pair.clone());
        }
    }

    for &name in estimators {
        let pairs = kept.get(name).cloned().unwrap_or_default();
        if pairs.len() < top_pairs {
            plan.flags.push(format!(
                "estimator {name} kept only {} of {top_pairs} pairs",
                pairs.len()
            ));
        }
        for pair_key in pairs {
            let mut rows: Vec<&LseTuple> = table
                .iter()
                .filter(|t| t.pair_key() == pair_key)
                .collect();
            rows.sort_by(|a, b| {
                a.estimates[name]
                    .total_cmp(&b.estimates[name])
                    .then_with(|| a.sentence_id.cmp(&b.sentence_id))
            });
            let m = rows.len();
            if m < per_pair {
                plan.flags.push(format!(
                    "pair ({} -> {}) has only {m} sentences for {name}",
                    pair_key.0, pair_key.1
                ));
            }
            // Ascending order: minimum, lower-middle median, maximum.
            let mut picks: Vec<usize> = vec![0, (m - 1) / 2, m - 1];
            picks.dedup();
            let roles = ["min", "median", "max"];
            let mut seen = BTreeSet::new();
            for (slot, &idx) in picks.iter().enumerate() {
                if !seen.insert(idx) {
                    continue;
                }
                let tuple = rows[idx];
                let sentence = corpus.by_id(&tuple.sentence_id).ok_or_else(|| {
                    Error::Schema(format!("sentence {:?} not in corpus", tuple.sentence_id))
                })?;
                let treatment_text = replace_first_token(
                    &sentence.text,
                    &tuple.pair.control_word,
                    &tuple.pair.treatment_word,
                )
                .ok_or_else(|| Error::ControlWordMissing {
                    word: tuple.pair.control_word.clone(),
                    sentence_id: tuple.sentence_id.clone(),
                })?;
                plan.items.push(PlanItem {
                    estimator: name.to_string(),
                    control_word: tuple.pair.control_word.clone(),
                    treatment_word: tuple.pair.treatment_word.clone(),
                    sentence_id: tuple.sentence_id.clone(),
                    estimate: tuple.estimates[name],
                    role: roles[slot.min(2)].to_string(),
                    control_text: sentence.text.clone(),
                    treatment_text,
                });
            }
        }
    }
    Ok(plan)
}

/// One sentence as displayed to raters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchItem {
    pub sentence_key: String,
    pub text: String,
    pub dummy: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Batch {
    pub batch_id: String,
    pub variant: Variant,
    pub items: Vec<BatchItem>,
}

impl Batch {
    pub fn real_count(&self) -> usize {
        self.items.iter().filter(|i| !i.dummy).count()
    }
}

fn dummy_key(index: usize) -> String {
    format!("dummy|{index:02}")
}

/// Expected answer side per dummy key, for [`filter_workers`].
pub fn dummy_expectations(dummies: &[DummySentence]) -> BTreeMap<String, DummyExpectation> {
    dummies
        .iter()
        .enumerate()
        .map(|(i, d)| (dummy_key(i), d.expected))
        .collect()
}

/// Splits the plan into control and treatment batches of `batch_size`
/// real sentences, assigned by sorted sentence key, and appends every
/// configured dummy sentence to each batch.
pub fn make_batches(plan: &RctPlan, batch_size: usize, dummies: &[DummySentence]) -> Vec<Batch> {
    let mut batches = Vec::new();
    for variant in [Variant::Control, Variant::Treatment] {
        let mut display: Vec<(String, String)> = plan
            .items
            .iter()
            .map(|item| {
                let key = sentence_key(
                    &item.control_word,
                    &item.treatment_word,
                    &item.sentence_id,
                    variant,
                );
                let text = match variant {
                    Variant::Control => item.control_text.clone(),
                    Variant::Treatment => item.treatment_text.clone(),
                };
                (key, text)
            })
            .collect();
        display.sort_by(|a, b| a.0.cmp(&b.0));
        for (i, chunk) in display.chunks(batch_size.max(1)).enumerate() {
            let mut items: Vec<BatchItem> = chunk
                .iter()
                .map(|(key, text)| BatchItem {
                    sentence_key: key.clone(),
                    text: text.clone(),
                    dummy: false,
                })
                .collect();
            for (d, dummy) in dummies.iter().enumerate() {
                items.push(BatchItem {
                    sentence_key: dummy_key(d),
                    text: dummy.text.clone(),
                    dummy: true,
                });
            }
            batches.push(Batch {
                batch_id: format!("{}-{:03}", variant.name(), i + 1),
                variant,
                items,
            });
        }
    }
    batches
}

/// Drops every rating from any worker with at least one incorrect dummy
/// answer, then drops the dummy ratings themselves. Output order is
/// normalized so the result is independent of input order.
pub fn filter_workers(
    ratings: &[RatingRecord],
    expectations: &BTreeMap<String, DummyExpectation>,
) -> (Vec<RatingRecord>, Vec<String>) {
    let mut failed: BTreeSet<&str> = BTreeSet::new();
    for r in ratings {
        if let Some(expected) = expectations.get(&r.sentence_key) {
            if !expected.accepts(r.rating) {
                failed.insert(&r.worker_id);
            }
        }
    }
    let mut kept: Vec<RatingRecord> = ratings
        .iter()
        .filter(|r| {
            !failed.contains(r.worker_id.as_str()) && !expectations.contains_key(&r.sentence_key)
        })
        .cloned()
        .collect();
    kept.sort_by(|a, b| {
        a.worker_id
            .cmp(&b.worker_id)
            .then_with(|| a.batch_id.cmp(&b.batch_id))
            .then_with(|| a.sentence_key.cmp(&b.sentence_key))
    });
    let disqualified = failed.into_iter().map(String::from).collect();
    (kept, disqualified)
}

fn median(sorted: &[u8]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        f64::from(sorted[n / 2])
    } else {
        (f64::from(sorted[n / 2 - 1]) + f64::from(sorted[n / 2])) / 2.0
    }
}

/// Median treatment rating minus median control rating; the median of an
/// even count is the mean of the two middle values.
pub fn aggregate_effect(control_ratings: &[u8], treatment_ratings: &[u8]) -> Result<f64> {
    if control_ratings.is_empty() {
        return Err(Error::UncoveredVariant("control".into()));
    }
    if treatment_ratings.is_empty() {
        return Err(Error::UncoveredVariant("treatment".into()));
    }
    let mut c = control_ratings.to_vec();
    let mut t = treatment_ratings.to_vec();
    c.sort_unstable();
    t.sort_unstable();
    Ok(median(&t) - median(&c))
}

/// Aggregated RCT effect for one tuple.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregatedEffect {
    pub control_word: String,
    pub treatment_word: String,
    pub sentence_id: String,
    pub effect: f64,
    pub n_control_ratings: usize,
    pub n_treatment_ratings: usize,
}

type TupleKey = (String, String, String);

/// Groups filtered ratings by tuple and aggregates each; tuples with an
/// uncovered variant are reported separately, not fatal.
pub fn aggregate_effects(ratings: &[RatingRecord]) -> Result<(Vec<AggregatedEffect>, Vec<String>)> {
    let mut grouped: BTreeMap<TupleKey, (Vec<u8>, Vec<u8>)> = BTreeMap::new();
    for r in ratings {
        let (w1, w2, sid, variant) = parse_sentence_key(&r.sentence_key)?;
        let entry = grouped.entry((w1, w2, sid)).or_default();
        match variant {
            Variant::Control => entry.0.push(r.rating),
            Variant::Treatment => entry.1.push(r.rating),
        }
    }
    let mut effects = Vec::new();
    let mut uncovered = Vec::new();
    for ((w1, w2, sid), (control, treatment)) in grouped {
        match aggregate_effect(&control, &treatment) {
            Ok(effect) => effects.push(AggregatedEffect {
                control_word: w1,
                treatment_word: w2,
                sentence_id: sid,
                effect,
                n_control_ratings: control.len(),
                n_treatment_ratings: treatment.len(),
            }),
            Err(Error::UncoveredVariant(side)) => {
                uncovered.push(format!("({w1} -> {w2}, {sid}): no {side} ratings"));
            }
            Err(e) => return Err(e),
        }
    }
    Ok((effects, uncovered))
}

/// Mean Pearson correlation over all worker pairs that rated at least two
/// common sentences within a batch. Pairs whose shared ratings are
/// constant are skipped as undefined.
pub fn pairwise_agreement(ratings: &[RatingRecord]) -> Result<f64> {
    let mut by_batch: BTreeMap<&str, BTreeMap<&str, BTreeMap<&str, u8>>> = BTreeMap::new();
    for r in ratings {
        by_batch
            .entry(&r.batch_id)
            .or_default()
            .entry(&r.worker_id)
            .or_default()
            .insert(&r.sentence_key, r.rating);
    }

    let mut correlations = Vec::new();
    for workers in by_batch.values() {
        let ids: Vec<&&str> = workers.keys().collect();
        for i in 0..ids.len() {
            for j in i + 1..ids.len() {
                let a = &workers[*ids[i]];
                let b = &workers[*ids[j]];
                let shared: Vec<&str> = a
                    .keys()
                    .filter(|k| b.contains_key(**k))
                    .copied()
                    .collect();
                if shared.len() < 2 {
                    continue;
                }
                let xs: Vec<f64> = shared.iter().map(|k| f64::from(a[*k])).collect();
                let ys: Vec<f64> = shared.iter().map(|k| f64::from(b[*k])).collect();
                match pearson(&xs, &ys) {
                    Ok(r) => correlations.push(r),
                    Err(Error::UndefinedCorrelation(_)) => continue,
                    Err(e) => return Err(e),
                }
            }
        }
    }
    if correlations.is_empty() {
        return Err(Error::NoAgreementPairs);
    }
    Ok(correlations.iter().sum::<f64>() / correlations.len() as f64)
}
