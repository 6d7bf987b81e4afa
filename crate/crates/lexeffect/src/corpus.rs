//! Labeled text corpora: tokenization, vocabularies, POS lexicons and
//! bigram tables.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Source domain of a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Yelp,
    Twitter,
    Airbnb,
    Synthetic,
    Other,
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Domain::Yelp => "yelp",
            Domain::Twitter => "twitter",
            Domain::Airbnb => "airbnb",
            Domain::Synthetic => "synthetic",
            Domain::Other => "other",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "yelp" => Ok(Domain::Yelp),
            "twitter" => Ok(Domain::Twitter),
            "airbnb" => Ok(Domain::Airbnb),
            "synthetic" => Ok(Domain::Synthetic),
            "other" => Ok(Domain::Other),
            other => Err(Error::Schema(format!("unknown domain {other:?}"))),
        }
    }
}

/// One labeled sentence. `tokens` is always `tokenize(text)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sentence {
    pub id: String,
    pub text: String,
    pub tokens: Vec<String>,
    /// Binary class: 0 = negative class, 1 = positive class.
    pub label: u8,
    pub domain: Domain,
}

impl Sentence {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: u8, domain: Domain) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        Sentence {
            id: id.into(),
            text,
            tokens,
            label,
            domain,
        }
    }

    pub fn contains_token(&self, word: &str) -> bool {
        self.tokens.iter().any(|t| t == word)
    }
}

/// An ordered collection of sentences sharing one domain.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
    pub domain: Domain,
}

impl Corpus {
    /// Builds a corpus, enforcing unique ids, binary labels and a single
    /// shared domain.
    pub fn new(sentences: Vec<Sentence>, domain: Domain) -> Result<Self> {
        let mut seen = HashSet::with_capacity(sentences.len());
        for s in &sentences {
            if s.label > 1 {
                return Err(Error::Schema(format!(
                    "sentence {:?} has non-binary label {}",
                    s.id, s.label
                )));
            }
            if s.domain != domain {
                return Err(Error::Schema(format!(
                    "sentence {:?} has domain {} in a {} corpus",
                    s.id, s.domain, domain
                )));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Schema(format!("duplicate sentence id {:?}", s.id)));
            }
        }
        Ok(Corpus { sentences, domain })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Sentence lookup by id.
    pub fn by_id(&self, id: &str) -> Option<&Sentence> {
        self.sentences.iter().find(|s| s.id == id)
    }
}

/// Lowercases, splits on whitespace and strips leading/trailing
/// punctuation from each chunk. Apostrophes inside a word survive
/// (`father's`), and `#hashtags` / `@mentions` keep their marker.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().filter_map(clean_token).collect()
}

fn clean_token(raw: &str) -> Option<String> {
    let lower = raw.to_lowercase();
    let (marker, body) = match lower.chars().next() {
        Some(c @ ('#' | '@')) => (Some(c), &lower[c.len_utf8()..]),
        _ => (None, lower.as_str()),
    };
    let body = body
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .trim_end_matches(|c: char| !c.is_alphanumeric());
    if body.is_empty() {
        return None;
    }
    match marker {
        Some(m) => Some(format!("{m}{body}")),
        None => Some(body.to_string()),
    }
}

/// Word-to-index mapping with document-frequency bookkeeping.
///
/// Indices are contiguous `0..len()`, ordered by descending document
/// frequency with lexicographic tie-break, so the order is reproducible
/// across runs.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
    doc_frequency: Vec<u32>,
    n_documents: usize,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, index: usize) -> &str {
        &self.words[index]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Document frequency of the word at `index`.
    pub fn doc_frequency(&self, index: usize) -> u32 {
        self.doc_frequency[index]
    }

    pub fn n_documents(&self) -> usize {
        self.n_documents
    }

    /// Stable identifier for this feature space, used to pair fitted
    /// models with the vocabulary that produced their features.
    pub fn feature_space_id(&self) -> String {
        let mut h = Fnv1a::new();
        for w in &self.words {
            h.write(w.as_bytes());
            h.write(&[0x1f]);
        }
        h.write(&(self.n_documents as u64).to_le_bytes());
        format!("vocab-{:016x}", h.finish())
    }
}

/// Builds the vocabulary of words with document frequency at least
/// `min_doc_count`, excluding any word in `stoplist`.
pub fn build_vocabulary(
    corpus: &Corpus,
    min_doc_count: u32,
    stoplist: Option<&HashSet<String>>,
) -> Vocabulary {
    let mut df: HashMap<&str, u32> = HashMap::new();
    for sentence in &corpus.sentences {
        let uniq: BTreeSet<&str> = sentence.tokens.iter().map(String::as_str).collect();
        for word in uniq {
            *df.entry(word).or_insert(0) += 1;
        }
    }
    let mut kept: Vec<(&str, u32)> = df
        .into_iter()
        .filter(|(w, c)| *c >= min_doc_count && !stoplist.is_some_and(|s| s.contains(*w)))
        .collect();
    // Descending document frequency, ties broken lexicographically.
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let words: Vec<String> = kept.iter().map(|(w, _)| (*w).to_string()).collect();
    let doc_frequency: Vec<u32> = kept.iter().map(|(_, c)| *c).collect();
    let index = words
        .iter()
        .enumerate()
        .map(|(i, w)| (w.clone(), i))
        .collect();
    Vocabulary {
        words,
        index,
        doc_frequency,
        n_documents: corpus.len(),
    }
}

/// Word to modal POS tag. Ties on count are broken by the
/// lexicographically smallest tag.
#[derive(Debug, Clone, Default)]
pub struct PosMap {
    tags: HashMap<String, String>,
}

impl PosMap {
    pub fn tag(&self, word: &str) -> Option<&str> {
        self.tags.get(word).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }
}

/// Reduces `(word, tag, count)` observations to each word's most frequent
/// tag. Multiple entries for the same `(word, tag)` accumulate.
pub fn most_frequent_pos<I, W, T>(observations: I) -> PosMap
where
    I: IntoIterator<Item = (W, T, u64)>,
    W: Into<String>,
    T: Into<String>,
{
    let mut counts: HashMap<String, HashMap<String, u64>> = HashMap::new();
    for (word, tag, count) in observations {
        *counts
            .entry(word.into())
            .or_default()
            .entry(tag.into())
            .or_insert(0) += count;
    }
    let tags = counts
        .into_iter()
        .map(|(word, by_tag)| {
            let best = by_tag
                .into_iter()
                .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
                .expect("at least one tag per word");
            (word, best.0)
        })
        .collect();
    PosMap { tags }
}

/// Convenience for per-token tag streams (count 1 each).
pub fn most_frequent_pos_from_pairs<I, W, T>(pairs: I) -> PosMap
where
    I: IntoIterator<Item = (W, T)>,
    W: Into<String>,
    T: Into<String>,
{
    most_frequent_pos(pairs.into_iter().map(|(w, t)| (w, t, 1)))
}

/// Exact membership table of adjacent token pairs.
#[derive(Debug, Clone, Default)]
pub struct BigramVocabulary {
    bigrams: HashSet<(String, String)>,
}

impl BigramVocabulary {
    pub fn contains(&self, left: &str, right: &str) -> bool {
        // Avoids allocating a key pair for the common miss path.
        self.bigrams
            .contains(&(left.to_string(), right.to_string()))
    }

    pub fn len(&self) -> usize {
        self.bigrams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bigrams.is_empty()
    }

    pub fn insert(&mut self, left: impl Into<String>, right: impl Into<String>) {
        self.bigrams.insert((left.into(), right.into()));
    }
}

/// Collects every adjacent token pair across all supplied corpora.
pub fn build_bigram_vocabulary<'a, I>(corpora: I) -> BigramVocabulary
where
    I: IntoIterator<Item = &'a Corpus>,
{
    let mut vocab = BigramVocabulary::default();
    for corpus in corpora {
        for sentence in &corpus.sentences {
            for pair in sentence.tokens.windows(2) {
                vocab.insert(pair[0].clone(), pair[1].clone());
            }
        }
    }
    vocab
}

/// FNV-1a, used wherever the crate needs a hash that is stable across
/// processes and releases (seed derivation, feature-space ids).
pub(crate) struct Fnv1a(u64);

impl Fnv1a {
    pub(crate) fn new() -> Self {
        Fnv1a(0xcbf2_9ce4_8422_2325)
    }

    pub(crate) fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x1_0000_01b3);
        }
    }

    pub(crate) fn finish(&self) -> u64 {
        self.0
    }
}
