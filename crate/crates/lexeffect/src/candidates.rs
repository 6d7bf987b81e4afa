//! Candidate substitution generation: the four pruning filters that turn
//! a paraphrase table and a labeled corpus into admissible
//! (control word, treatment word, sentence) tuples.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{BigramVocabulary, Corpus, PosMap, Sentence, Vocabulary};
use crate::error::{Error, Result};
use crate::features::TfidfModel;
use crate::linear::{fit_logistic_on_vocab, LogisticConfig};

/// A directional substitutable word pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstitutionPair {
    pub control_word: String,
    pub treatment_word: String,
    pub equivalence: f64,
    /// Shared modal POS tag of both words.
    pub pos: String,
}

/// One (pair, sentence) instance, with per-estimator effect estimates
/// filled in by the estimation stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LseTuple {
    pub pair: SubstitutionPair,
    pub sentence_id: String,
    /// Source domain, carried on RCT-labeled tuples that pool across
    /// corpora.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<crate::corpus::Domain>,
    #[serde(default)]
    pub estimates: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rct_effect: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl LseTuple {
    pub fn new(pair: SubstitutionPair, sentence_id: impl Into<String>) -> Self {
        LseTuple {
            pair,
            sentence_id: sentence_id.into(),
            domain: None,
            estimates: BTreeMap::new(),
            rct_effect: None,
            flags: Vec::new(),
        }
    }

    pub fn pair_key(&self) -> (String, String) {
        (
            self.pair.control_word.clone(),
            self.pair.treatment_word.clone(),
        )
    }
}

/// Directional paraphrase lookup loaded from a `w1<TAB>w2<TAB>equivalence`
/// table. Duplicate (w1, w2) rows keep the highest equivalence.
#[derive(Debug, Clone, Default)]
pub struct ParaphraseTable {
    rows: BTreeMap<(String, String), f64>,
}

impl ParaphraseTable {
    pub fn insert(&mut self, w1: impl Into<String>, w2: impl Into<String>, equivalence: f64) {
        let key = (w1.into(), w2.into());
        let entry = self.rows.entry(key).or_insert(equivalence);
        if equivalence > *entry {
            *entry = equivalence;
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows in (w1, w2) order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, f64)> {
        self.rows
            .iter()
            .map(|((w1, w2), eq)| (w1.as_str(), w2.as_str(), *eq))
    }
}

/// Table neighbors of `word` with equivalence at least `min_equivalence`,
/// in lexicographic order. A word absent from the table yields an empty
/// set.
pub fn paraphrase_candidates(
    word: &str,
    table: &ParaphraseTable,
    min_equivalence: f64,
) -> Vec<(String, f64)> {
    table
        .rows
        .range((word.to_string(), String::new())..)
        .take_while(|((w1, _), _)| w1 == word)
        .filter(|(_, &eq)| eq >= min_equivalence)
        .map(|((_, w2), &eq)| (w2.clone(), eq))
        .collect()
}

/// Fits the sentence classifier on tf-idf features and returns the words
/// whose coefficient magnitude strictly exceeds `threshold`, with their
/// signed coefficients.
pub fn representative_words(
    corpus: &Corpus,
    vocab: &Vocabulary,
    tfidf: &TfidfModel,
    logistic: &LogisticConfig,
    threshold: f64,
) -> Result<BTreeMap<String, f64>> {
    let rows: Vec<_> = corpus
        .sentences
        .iter()
        .map(|s| tfidf.transform(s, vocab))
        .collect();
    let labels: Vec<u8> = corpus.sentences.iter().map(|s| s.label).collect();
    let model = fit_logistic_on_vocab(&rows, vocab, &labels, logistic)?;
    let mut reps = BTreeMap::new();
    for (j, &w) in model.weights().iter().enumerate() {
        if w.abs() > threshold {
            reps.insert(vocab.word(j).to_string(), w);
        }
    }
    Ok(reps)
}

/// True iff both words are in the map and share the same modal tag.
pub fn pos_compatible(w1: &str, w2: &str, pos_map: &PosMap) -> bool {
    match (pos_map.tag(w1), pos_map.tag(w2)) {
        (Some(a), Some(b)) => a == b,
        _ => false,
    }
}

/// Checks whether swapping the first occurrence of the control word for
/// the treatment word keeps both adjacent bigrams attested. Boundary
/// positions check only the existing side; both existing sides must pass.
pub fn substitutable_in_sentence(
    sentence: &Sentence,
    pair: &SubstitutionPair,
    bigrams: &BigramVocabulary,
) -> Result<bool> {
    let k = sentence
        .tokens
        .iter()
        .position(|t| t == &pair.control_word)
        .ok_or_else(|| Error::ControlWordMissing {
            word: pair.control_word.clone(),
            sentence_id: sentence.id.clone(),
        })?;
    let w2 = pair.treatment_word.as_str();
    if k > 0 && !bigrams.contains(&sentence.tokens[k - 1], w2) {
        return Ok(false);
    }
    if k + 1 < sentence.tokens.len() && !bigrams.contains(w2, &sentence.tokens[k + 1]) {
        return Ok(false);
    }
    Ok(true)
}

/// Applies all four filters and emits one tuple per admissible
/// (pair, sentence), ordered by (w1, w2, sentence_id).
pub fn generate_tuples(
    corpus: &Corpus,
    reps: &BTreeMap<String, f64>,
    table: &ParaphraseTable,
    pos_map: &PosMap,
    bigrams: &BigramVocabulary,
    min_equivalence: f64,
) -> Result<Vec<LseTuple>> {
    let mut pairs: Vec<SubstitutionPair> = Vec::new();
    for (w1, w2, eq) in table.iter() {
        if w1 == w2 || eq < min_equivalence {
            continue;
        }
        if !reps.contains_key(w1) && !reps.contains_key(w2) {
            continue;
        }
        if !pos_compatible(w1, w2, pos_map) {
            continue;
        }
        pairs.push(SubstitutionPair {
            control_word: w1.to_string(),
            treatment_word: w2.to_string(),
            equivalence: eq,
            pos: pos_map.tag(w1).expect("checked by pos_compatible").to_string(),
        });
    }

    let mut sentence_order: Vec<usize> = (0..corpus.len()).collect();
    sentence_order.sort_by(|&a, &b| corpus.sentences[a].id.cmp(&corpus.sentences[b].id));

    let mut tuples = Vec::new();
    for pair in &pairs {
        for &idx in &sentence_order {
            let sentence = &corpus.sentences[idx];
            if !sentence.contains_token(&pair.control_word) {
                continue;
            }
            if substitutable_in_sentence(sentence, pair, bigrams)? {
                tuples.push(LseTuple::new(pair.clone(), sentence.id.clone()));
            }
        }
    }
    // Table iteration is already (w1, w2)-sorted and sentences id-sorted,
    // so this is a no-op unless ids interleave across pairs.
    tuples.sort_by(|a, b| {
        a.pair
            .control_word
            .cmp(&b.pair.control_word)
            .then_with(|| a.pair.treatment_word.cmp(&b.pair.treatment_word))
            .then_with(|| a.sentence_id.cmp(&b.sentence_id))
    });
    Ok(tuples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{
        build_bigram_vocabulary, build_vocabulary, most_frequent_pos, Domain,
    };
    use crate::features::fit_tfidf;

    fn pair(w1: &str, w2: &str) -> SubstitutionPair {
        SubstitutionPair {
            control_word: w1.into(),
            treatment_word: w2.into(),
            equivalence: 0.3,
            pos: "NN".into(),
        }
    }

    #[test]
    fn paraphrase_lookup_respects_threshold() {
        let mut table = ParaphraseTable::default();
        table.insert("shops", "boutiques", 0.30);
        table.insert("shops", "stores", 0.10);
        table.insert("famous", "renowned", 0.22);

        let hits = paraphrase_candidates("shops", &table, 0.15);
        assert_eq!(hits, vec![("boutiques".to_string(), 0.30)]);

        let all = paraphrase_candidates("shops", &table, 0.0);
        assert_eq!(all.len(), 2);

        assert!(paraphrase_candidates("missing", &table, 0.15).is_empty());
    }

    #[test]
    fn paraphrase_duplicate_rows_keep_max() {
        let mut table = ParaphraseTable::default();
        table.insert("a", "b", 0.2);
        table.insert("a", "b", 0.4);
        table.insert("a", "b", 0.1);
        assert_eq!(paraphrase_candidates("a", &table, 0.0), vec![("b".to_string(), 0.4)]);
    }

    #[test]
    fn pos_compatibility_rules() {
        let map = most_frequent_pos([
            ("shop", "NN", 5),
            ("boutique", "NN", 3),
            ("quickly", "RB", 4),
        ]);
        assert!(pos_compatible("shop", "boutique", &map));
        assert!(!pos_compatible("shop", "quickly", &map));
        assert!(!pos_compatible("shop", "unseen", &map));
    }

    #[test]
    fn substitutability_checks_both_sides() {
        let sentence = Sentence::new("s", "my ears pierced on saturday", 0, Domain::Other);
        let p = pair("pierced", "drilled");

        let mut bigrams = BigramVocabulary::default();
        bigrams.insert("ears", "drilled");
        assert!(!substitutable_in_sentence(&sentence, &p, &bigrams).unwrap());

        bigrams.insert("drilled", "on");
        assert!(substitutable_in_sentence(&sentence, &p, &bigrams).unwrap());
    }

    #[test]
    fn substitutability_boundary_checks_one_side() {
        let sentence = Sentence::new("s", "shops nearby", 0, Domain::Other);
        let p = pair("shops", "boutiques");
        let mut bigrams = BigramVocabulary::default();
        bigrams.insert("boutiques", "nearby");
        assert!(substitutable_in_sentence(&sentence, &p, &bigrams).unwrap());

        let empty = BigramVocabulary::default();
        assert!(!substitutable_in_sentence(&sentence, &p, &empty).unwrap());
    }

    #[test]
    fn substitutability_requires_control_word() {
        let sentence = Sentence::new("s", "nothing here", 0, Domain::Other);
        let p = pair("shops", "boutiques");
        assert!(matches!(
            substitutable_in_sentence(&sentence, &p, &BigramVocabulary::default()),
            Err(Error::ControlWordMissing { .. })
        ));
    }

    #[test]
    fn only_first_occurrence_is_checked() {
        let sentence = Sentence::new("s", "shops and shops galore", 0, Domain::Other);
        let p = pair("shops", "stores");
        let mut bigrams = BigramVocabulary::default();
        // Right side of the first occurrence only.
        bigrams.insert("stores", "and");
        assert!(substitutable_in_sentence(&sentence, &p, &bigrams).unwrap());
    }

    /// A corpus where only "boutique" separates the classes.
    fn separable_corpus() -> Corpus {
        let mut sentences = Vec::new();
        for i in 0..12 {
            let (text, label) = if i % 2 == 0 {
                ("a boutique nearby", 1)
            } else {
                ("a store nearby", 0)
            };
            sentences.push(Sentence::new(format!("s{i:02}"), text, label, Domain::Other));
        }
        Corpus::new(sentences, Domain::Other).unwrap()
    }

    #[test]
    fn representative_words_finds_the_discriminative_word() {
        let corpus = separable_corpus();
        let vocab = build_vocabulary(&corpus, 1, None);
        let tfidf = fit_tfidf(&corpus, &vocab);
        let cfg = LogisticConfig {
            l2_strength: 0.1,
            ..LogisticConfig::default()
        };
        let reps = representative_words(&corpus, &vocab, &tfidf, &cfg, 0.5).unwrap();
        assert!(reps.contains_key("boutique"));
        assert!(*reps.get("boutique").unwrap() > 0.0);
        assert!(reps.get("store").is_some_and(|c| *c < 0.0));
        assert!(!reps.contains_key("nearby"));

        let none = representative_words(&corpus, &vocab, &tfidf, &cfg, f64::INFINITY).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn representative_words_rejects_single_class() {
        let sentences = vec![
            Sentence::new("a", "x y", 1, Domain::Other),
            Sentence::new("b", "y z", 1, Domain::Other),
        ];
        let corpus = Corpus::new(sentences, Domain::Other).unwrap();
        let vocab = build_vocabulary(&corpus, 1, None);
        let tfidf = fit_tfidf(&corpus, &vocab);
        assert!(representative_words(&corpus, &vocab, &tfidf, &LogisticConfig::default(), 0.5)
            .is_err());
    }

    #[test]
    fn generate_tuples_hand_traced_fixture() {
        // Two sentences qualify for (store, boutique); the third lacks the
        // right-side bigram and the fourth does not contain the word.
        let sentences = vec![
            Sentence::new("s1", "nice store nearby", 1, Domain::Other),
            Sentence::new("s2", "the store nearby", 0, Domain::Other),
            Sentence::new("s3", "store inside", 0, Domain::Other),
            Sentence::new("s4", "nothing else", 1, Domain::Other),
        ];
        let corpus = Corpus::new(sentences, Domain::Other).unwrap();
        let mut table = ParaphraseTable::default();
        table.insert("store", "boutique", 0.3);
        let pos_map = most_frequent_pos([("store", "NN", 2), ("boutique", "NN", 2)]);
        let mut bigrams = BigramVocabulary::default();
        bigrams.insert("nice", "boutique");
        bigrams.insert("the", "boutique");
        bigrams.insert("boutique", "nearby");
        let reps: BTreeMap<String, f64> = [("boutique".to_string(), 0.9)].into();

        let tuples =
            generate_tuples(&corpus, &reps, &table, &pos_map, &bigrams, 0.15).unwrap();
        let ids: Vec<&str> = tuples.iter().map(|t| t.sentence_id.as_str()).collect();
        assert_eq!(ids, ["s1", "s2"]);
        assert_eq!(tuples[0].pair.control_word, "store");
        assert_eq!(tuples[0].pair.pos, "NN");
    }

    #[test]
    fn generate_tuples_empty_inputs() {
        let corpus = separable_corpus();
        let pos_map = most_frequent_pos([("store", "NN", 1), ("boutique", "NN", 1)]);
        let bigrams = build_bigram_vocabulary([&corpus]);
        let reps: BTreeMap<String, f64> = [("store".to_string(), 1.0)].into();

        let empty_table = ParaphraseTable::default();
        assert!(
            generate_tuples(&corpus, &reps, &empty_table, &pos_map, &bigrams, 0.15)
                .unwrap()
                .is_empty()
        );

        let mut table = ParaphraseTable::default();
        table.insert("store", "boutique", 0.3);
        let no_reps = BTreeMap::new();
        assert!(
            generate_tuples(&corpus, &no_reps, &table, &pos_map, &bigrams, 0.15)
                .unwrap()
                .is_empty()
        );
    }

    #[test]
    fn raising_thresholds_never_enlarges_output() {
        let corpus = separable_corpus();
        let pos_map = most_frequent_pos([("store", "NN", 1), ("boutique", "NN", 1)]);
        let bigrams = build_bigram_vocabulary([&corpus]);
        let reps: BTreeMap<String, f64> = [("store".to_string(), 1.0)].into();
        let mut table = ParaphraseTable::default();
        table.insert("store", "boutique", 0.3);

        let loose = generate_tuples(&corpus, &reps, &table, &pos_map, &bigrams, 0.1).unwrap();
        let tight = generate_tuples(&corpus, &reps, &table, &pos_map, &bigrams, 0.5).unwrap();
        assert!(tight.len() <= loose.len());
    }
}
