//! Feature representations over a [`Vocabulary`]: binary bag-of-words
//! bit vectors for the forests and L2-normalized tf-idf vectors for the
//! nearest-neighbor estimator.

use std::collections::HashMap;

use crate::corpus::{Corpus, Sentence, Vocabulary};
use crate::error::{Error, Result};

/// A packed 0/1 feature vector of fixed length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryVector {
    bits: Vec<u64>,
    len: usize,
}

impl BinaryVector {
    pub fn zeros(len: usize) -> Self {
        BinaryVector {
            bits: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, index: usize) -> bool {
        debug_assert!(index < self.len);
        self.bits[index / 64] >> (index % 64) & 1 == 1
    }

    pub fn set(&mut self, index: usize, value: bool) {
        debug_assert!(index < self.len);
        let mask = 1u64 << (index % 64);
        if value {
            self.bits[index / 64] |= mask;
        } else {
            self.bits[index / 64] &= !mask;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Indices of the set bits, ascending.
    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(|&i| self.get(i))
    }
}

/// Entry j is 1 iff vocabulary word j occurs in the sentence. Tokens
/// outside the vocabulary are ignored.
pub fn vectorize_binary(sentence: &Sentence, vocab: &Vocabulary) -> BinaryVector {
    let mut v = BinaryVector::zeros(vocab.len());
    for token in &sentence.tokens {
        if let Some(j) = vocab.index_of(token) {
            v.set(j, true);
        }
    }
    v
}

/// Row-major packed binary matrix.
#[derive(Debug, Clone)]
pub struct BinaryMatrix {
    rows: Vec<BinaryVector>,
    n_cols: usize,
}

impl BinaryMatrix {
    pub fn from_rows(rows: Vec<BinaryVector>, n_cols: usize) -> Result<Self> {
        for row in &rows {
            if row.len() != n_cols {
                return Err(Error::DimensionMismatch {
                    expected: n_cols,
                    got: row.len(),
                });
            }
        }
        Ok(BinaryMatrix { rows, n_cols })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.rows[row].get(col)
    }

    pub fn row(&self, row: usize) -> &BinaryVector {
        &self.rows[row]
    }
}

/// A sparse real vector with strictly ascending indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVec {
    entries: Vec<(u32, f64)>,
}

impl SparseVec {
    pub fn from_entries(mut entries: Vec<(u32, f64)>) -> Self {
        entries.sort_by_key(|(i, _)| *i);
        entries.retain(|(_, v)| *v != 0.0);
        SparseVec { entries }
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: u32) -> f64 {
        match self.entries.binary_search_by_key(&index, |(i, _)| *i) {
            Ok(pos) => self.entries[pos].1,
            Err(_) => 0.0,
        }
    }

    pub fn norm(&self) -> f64 {
        self.entries
            .iter()
            .map(|(_, v)| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn dot(&self, other: &SparseVec) -> f64 {
        let mut sum = 0.0;
        let (mut a, mut b) = (0, 0);
        while a < self.entries.len() && b < other.entries.len() {
            let (ia, va) = self.entries[a];
            let (ib, vb) = other.entries[b];
            match ia.cmp(&ib) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    sum += va * vb;
                    a += 1;
                    b += 1;
                }
            }
        }
        sum
    }

    /// Cosine similarity; 0.0 when either vector is all-zero.
    pub fn cosine(&self, other: &SparseVec) -> f64 {
        let na = self.norm();
        let nb = other.norm();
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        self.dot(other) / (na * nb)
    }

    /// Copy with the given indices removed.
    pub fn without(&self, drop: &[u32]) -> SparseVec {
        SparseVec {
            entries: self
                .entries
                .iter()
                .filter(|(i, _)| !drop.contains(i))
                .copied()
                .collect(),
        }
    }

    fn scale(&mut self, factor: f64) {
        for (_, v) in &mut self.entries {
            *v *= factor;
        }
    }
}

/// Smoothed-idf tf-idf weights over a vocabulary.
///
/// `idf[w] = ln((1 + n_documents) / (1 + doc_frequency[w])) + 1`, and
/// transformed rows are L2-normalized.
#[derive(Debug, Clone)]
pub struct TfidfModel {
    idf: Vec<f64>,
    feature_space_id: String,
}

impl TfidfModel {
    pub fn n_features(&self) -> usize {
        self.idf.len()
    }

    pub fn idf(&self, index: usize) -> f64 {
        self.idf[index]
    }

    pub fn feature_space_id(&self) -> &str {
        &self.feature_space_id
    }

    /// Tf-idf vector of a sentence: term count times idf, L2-normalized.
    /// All-zero rows stay all-zero.
    pub fn transform(&self, sentence: &Sentence, vocab: &Vocabulary) -> SparseVec {
        self.transform_counts(term_counts(sentence, vocab))
    }

    /// Same as [`TfidfModel::transform`] but with every occurrence of
    /// `exclude` removed from the counts before weighting, matching a
    /// bag-of-words representation of the sentence without that word.
    pub fn transform_excluding(
        &self,
        sentence: &Sentence,
        vocab: &Vocabulary,
        exclude: &str,
    ) -> SparseVec {
        let mut counts = term_counts(sentence, vocab);
        if let Some(j) = vocab.index_of(exclude) {
            counts.remove(&(j as u32));
        }
        self.transform_counts(counts)
    }

    fn transform_counts(&self, counts: HashMap<u32, u32>) -> SparseVec {
        let entries = counts
            .into_iter()
            .map(|(j, c)| (j, f64::from(c) * self.idf[j as usize]))
            .collect();
        let mut v = SparseVec::from_entries(entries);
        let norm = v.norm();
        if norm > 0.0 {
            v.scale(1.0 / norm);
        }
        v
    }
}

fn term_counts(sentence: &Sentence, vocab: &Vocabulary) -> HashMap<u32, u32> {
    let mut counts: HashMap<u32, u32> = HashMap::new();
    for token in &sentence.tokens {
        if let Some(j) = vocab.index_of(token) {
            *counts.entry(j as u32).or_insert(0) += 1;
        }
    }
    counts
}

/// Fits idf weights from the vocabulary's document frequencies. The
/// vocabulary must have been built from the same corpus.
pub fn fit_tfidf(corpus: &Corpus, vocab: &Vocabulary) -> TfidfModel {
    let n = corpus.len() as f64;
    let idf = (0..vocab.len())
        .map(|j| ((1.0 + n) / (1.0 + f64::from(vocab.doc_frequency(j)))).ln() + 1.0)
        .collect();
    TfidfModel {
        idf,
        feature_space_id: vocab.feature_space_id(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocabulary, Domain};

    fn toy_corpus() -> (Corpus, Vocabulary) {
        let sentences = vec![
            Sentence::new("s0", "cat dog cat", 0, Domain::Other),
            Sentence::new("s1", "cat bird", 1, Domain::Other),
            Sentence::new("s2", "dog bird fish", 1, Domain::Other),
        ];
        let corpus = Corpus::new(sentences, Domain::Other).unwrap();
        let vocab = build_vocabulary(&corpus, 1, None);
        (corpus, vocab)
    }

    #[test]
    fn binary_vector_round_trip() {
        let mut v = BinaryVector::zeros(130);
        v.set(0, true);
        v.set(64, true);
        v.set(129, true);
        assert!(v.get(0) && v.get(64) && v.get(129));
        assert!(!v.get(1));
        assert_eq!(v.count_ones(), 3);
        v.set(64, false);
        assert_eq!(v.ones().collect::<Vec<_>>(), vec![0, 129]);
    }

    #[test]
    fn vectorize_binary_hand_computed() {
        let (_, vocab) = toy_corpus();
        // vocab order: bird(2), cat(2), dog(2), fish(1) by df desc / lex.
        assert_eq!(vocab.words(), &["bird", "cat", "dog", "fish"]);
        let s = Sentence::new("q", "cat cat fish zebra", 0, Domain::Other);
        let v = vectorize_binary(&s, &vocab);
        let dense: Vec<u8> = (0..vocab.len()).map(|j| u8::from(v.get(j))).collect();
        assert_eq!(dense, [0, 1, 0, 1]);
    }

    #[test]
    fn vectorize_binary_no_in_vocab_tokens() {
        let (_, vocab) = toy_corpus();
        let s = Sentence::new("q", "zebra lion", 0, Domain::Other);
        assert_eq!(vectorize_binary(&s, &vocab).count_ones(), 0);
    }

    #[test]
    fn tfidf_idf_values_hand_computed() {
        let (corpus, vocab) = toy_corpus();
        let model = fit_tfidf(&corpus, &vocab);
        // n = 3; df(bird)=2 -> ln(4/3)+1; df(fish)=1 -> ln(4/2)+1.
        let expected_bird = (4.0f64 / 3.0).ln() + 1.0;
        let expected_fish = (4.0f64 / 2.0).ln() + 1.0;
        assert!((model.idf(vocab.index_of("bird").unwrap()) - expected_bird).abs() < 1e-15);
        assert!((model.idf(vocab.index_of("fish").unwrap()) - expected_fish).abs() < 1e-15);
    }

    #[test]
    fn tfidf_word_in_every_document_has_unit_idf() {
        let sentences = vec![
            Sentence::new("a", "the cat", 0, Domain::Other),
            Sentence::new("b", "the dog", 1, Domain::Other),
        ];
        let corpus = Corpus::new(sentences, Domain::Other).unwrap();
        let vocab = build_vocabulary(&corpus, 1, None);
        let model = fit_tfidf(&corpus, &vocab);
        let j = vocab.index_of("the").unwrap();
        assert!((model.idf(j) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tfidf_single_token_is_unit_one_hot() {
        let (corpus, vocab) = toy_corpus();
        let model = fit_tfidf(&corpus, &vocab);
        let s = Sentence::new("q", "fish", 0, Domain::Other);
        let v = model.transform(&s, &vocab);
        assert_eq!(v.nnz(), 1);
        let j = vocab.index_of("fish").unwrap() as u32;
        assert!((v.get(j) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tfidf_rows_normalized_and_zero_rows_stay_zero() {
        let (corpus, vocab) = toy_corpus();
        let model = fit_tfidf(&corpus, &vocab);
        for s in &corpus.sentences {
            let v = model.transform(s, &vocab);
            assert!((v.norm() - 1.0).abs() < 1e-9);
        }
        let empty = Sentence::new("q", "zebra", 0, Domain::Other);
        assert!(model.transform(&empty, &vocab).is_empty());
    }

    #[test]
    fn tfidf_hand_computed_row() {
        let (corpus, vocab) = toy_corpus();
        let model = fit_tfidf(&corpus, &vocab);
        // "cat dog cat": weight(cat) = 2*idf(cat), weight(dog) = idf(dog).
        let v = model.transform(&corpus.sentences[0], &vocab);
        let cat = vocab.index_of("cat").unwrap() as u32;
        let dog = vocab.index_of("dog").unwrap() as u32;
        let wc = 2.0 * ((4.0f64 / 3.0).ln() + 1.0);
        let wd = (4.0f64 / 3.0).ln() + 1.0;
        let norm = (wc * wc + wd * wd).sqrt();
        assert!((v.get(cat) - wc / norm).abs() < 1e-12);
        assert!((v.get(dog) - wd / norm).abs() < 1e-12);
    }

    #[test]
    fn transform_excluding_drops_the_word_before_normalizing() {
        let (corpus, vocab) = toy_corpus();
        let model = fit_tfidf(&corpus, &vocab);
        let v = model.transform_excluding(&corpus.sentences[0], &vocab, "cat");
        let cat = vocab.index_of("cat").unwrap() as u32;
        let dog = vocab.index_of("dog").unwrap() as u32;
        assert_eq!(v.get(cat), 0.0);
        assert!((v.get(dog) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sparse_dot_and_cosine() {
        let a = SparseVec::from_entries(vec![(0, 1.0), (2, 2.0)]);
        let b = SparseVec::from_entries(vec![(2, 3.0), (5, 1.0)]);
        assert!((a.dot(&b) - 6.0).abs() < 1e-15);
        let expected = 6.0 / (5.0f64.sqrt() * 10.0f64.sqrt());
        assert!((a.cosine(&b) - expected).abs() < 1e-15);
        assert_eq!(a.cosine(&SparseVec::default()), 0.0);
    }
}
