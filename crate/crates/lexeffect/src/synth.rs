//! Synthetic corpus generator with planted substitution effects, used as
//! the verification oracle for the estimators: every (pair, sentence)
//! tuple has a known true effect.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Domain, Sentence};
use crate::error::{Error, Result};

/// A planted (control word, treatment word) pair with its true effect on
/// the positive-label probability.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantedPair {
    pub control_word: String,
    pub treatment_word: String,
    /// True effect delta in [-1, 1].
    pub effect: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Number of filler (context) words.
    pub vocabulary_size: usize,
    pub n_sentences: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub pairs: Vec<PlantedPair>,
    /// Positive-label probability without any treatment word.
    pub base_positive_rate: f64,
    /// Probability that a sentence hosts a word from a given pair; the
    /// hosted word is the control or treatment word with equal chance.
    pub pair_presence_probability: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
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
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocabulary_size == 0 {
            return Err(Error::InvalidSpec("vocabulary_size must be positive".into()));
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return Err(Error::InvalidSpec(format!(
                "bad token range {}..{}",
                self.min_tokens, self.max_tokens
            )));
        }
        if !(0.0..=1.0).contains(&self.base_positive_rate) {
            return Err(Error::InvalidSpec(format!(
                "base rate {} outside [0, 1]",
                self.base_positive_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.pair_presence_probability) {
            return Err(Error::InvalidSpec(format!(
                "presence probability {} outside [0, 1]",
                self.pair_presence_probability
            )));
        }
        let mut words = std::collections::BTreeSet::new();
        for pair in &self.pairs {
            let shifted = self.base_positive_rate + pair.effect;
            if !(0.0..=1.0).contains(&shifted) {
                return Err(Error::InvalidSpec(format!(
                    "base rate plus effect {shifted} outside [0, 1] for ({} -> {})",
                    pair.control_word, pair.treatment_word
                )));
            }
            if !(-1.0..=1.0).contains(&pair.effect) {
                return Err(Error::InvalidSpec(format!(
                    "effect {} outside [-1, 1]",
                    pair.effect
                )));
            }
            for w in [&pair.control_word, &pair.treatment_word] {
                if !words.insert(w.clone()) {
                    return Err(Error::InvalidSpec(format!("planted word {w:?} reused")));
                }
            }
        }
        Ok(())
    }

    fn filler_word(&self, index: usize) -> String {
        format!("ctx{index:04}")
    }
}

/// Known true effect for one (pair, control sentence) tuple.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub control_word: String,
    pub treatment_word: String,
    pub sentence_id: String,
    pub effect: f64,
}

/// A paraphrase-table row emitted alongside the corpus so the candidate
/// pipeline can run end to end on synthetic data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParaphraseRow {
    pub control_word: String,
    pub treatment_word: String,
    pub equivalence: f64,
}

/// Draws the corpus. Labels follow `base_positive_rate`, shifted by each
/// planted effect when the pair's treatment word is present, so the true
/// effect of every (pair, control sentence) tuple is the pair's delta.
pub fn generate_synthetic(
    spec: &SyntheticSpec,
) -> Result<(Corpus, Vec<ParaphraseRow>, Vec<GroundTruth>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut sentences = Vec::with_capacity(spec.n_sentences);
    let mut truths = Vec::new();

    for i in 0..spec.n_sentences {
        let id = format!("syn-{i:05}");
        let length = rng.gen_range(spec.min_tokens..=spec.max_tokens);
        let mut tokens: Vec<String> = (0..length)
            .map(|_| spec.filler_word(rng.gen_range(0..spec.vocabulary_size)))
            .collect();

        let mut effect_shift = 0.0;
        for pair in &spec.pairs {
            if rng.gen_range(0.0..1.0) >= spec.pair_presence_probability {
                continue;
            }
            let treated = rng.gen_range(0.0..1.0) < 0.5;
            let word = if treated {
                &pair.treatment_word
            } else {
                &pair.control_word
            };
            let at = rng.gen_range(0..=tokens.len());
            tokens.insert(at, word.clone());
            if treated {
                effect_shift += pair.effect;
            } else {
                truths.push(GroundTruth {
                    control_word: pair.control_word.clone(),
                    treatment_word: pair.treatment_word.clone(),
                    sentence_id: id.clone(),
                    effect: pair.effect,
                });
            }
        }

        let probability = (spec.base_positive_rate + effect_shift).clamp(0.0, 1.0);
        let label = u8::from(rng.gen_range(0.0..1.0) < probability);
        sentences.push(Sentence::new(id, tokens.join(" "), label, Domain::Synthetic));
    }

    let table = spec
        .pairs
        .iter()
        .map(|p| ParaphraseRow {
            control_word: p.control_word.clone(),
            treatment_word: p.treatment_word.clone(),
            equivalence: 0.5,
        })
        .collect();
    let corpus = Corpus::new(sentences, Domain::Synthetic)?;
    Ok((corpus, table, truths))
}
