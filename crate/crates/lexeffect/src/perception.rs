//! The causal perception classifier: three generic features per
//! (pair, sentence) tuple, RCT-derived binary labels and a logistic fit
//! that transfers across domains.

use serde::{Deserialize, Serialize};

use crate::corpus::{Sentence, Vocabulary};
use crate::error::{Error, Result};
use crate::features::{SparseVec, TfidfModel};
use crate::linear::{fit_logistic, LinearModel, LogisticConfig};

const MODEL_FORMAT_VERSION: u32 = 1;

/// The three generic tuple features.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PerceptionFeatures {
    /// Positive-class posterior of the sentence with the control word
    /// removed.
    pub context_probability: f64,
    pub control_word_coefficient: f64,
    pub treatment_word_coefficient: f64,
}

impl PerceptionFeatures {
    fn as_array(&self) -> [f64; 3] {
        [
            self.context_probability,
            self.control_word_coefficient,
            self.treatment_word_coefficient,
        ]
    }
}

/// Computes the features from the domain's fitted sentence classifier.
pub fn perception_features(
    sentence: &Sentence,
    control_word: &str,
    treatment_word: &str,
    classifier: &LinearModel,
    tfidf: &TfidfModel,
    vocab: &Vocabulary,
) -> Result<PerceptionFeatures> {
    let context = tfidf.transform_excluding(sentence, vocab, control_word);
    Ok(PerceptionFeatures {
        context_probability: classifier.predict_positive_probability(&context)?,
        control_word_coefficient: classifier.word_coefficient(vocab, control_word),
        treatment_word_coefficient: classifier.word_coefficient(vocab, treatment_word),
    })
}

/// Positive label iff the RCT effect exceeds 0.5 on the 1-5 rating scale.
pub fn binarize_rct_effect(tau: f64) -> u8 {
    u8::from(tau > 0.5)
}

/// One training example: features plus the RCT-measured effect.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledPerceptionExample {
    pub features: PerceptionFeatures,
    pub rct_effect: f64,
}

/// A fitted perception classifier with the training-set standardization
/// statistics baked in.
#[derive(Debug, Clone)]
pub struct PerceptionModel {
    linear: LinearModel,
    means: [f64; 3],
    stds: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct PerceptionModelFile {
    format_version: u32,
    means: [f64; 3],
    stds: [f64; 3],
    linear: serde_json::Value,
}

impl PerceptionModel {
    /// Coefficients on the standardized features, in feature order
    /// (context, control word, treatment word).
    pub fn coefficients(&self) -> [f64; 3] {
        [
            self.linear.weights()[0],
            self.linear.weights()[1],
            self.linear.weights()[2],
        ]
    }

    pub fn bias(&self) -> f64 {
        self.linear.bias()
    }

    pub fn means(&self) -> [f64; 3] {
        self.means
    }

    pub fn stds(&self) -> [f64; 3] {
        self.stds
    }

    pub fn standardize(&self, features: &PerceptionFeatures) -> SparseVec {
        let raw = features.as_array();
        SparseVec::from_entries(
            (0..3)
                .map(|j| (j as u32, (raw[j] - self.means[j]) / self.stds[j]))
                .collect(),
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&PerceptionModelFile {
            format_version: MODEL_FORMAT_VERSION,
            means: self.means,
            stds: self.stds,
            linear: serde_json::from_str(&self.linear.to_json())
                .expect("linear model serializes to json"),
        })
        .expect("model serialization cannot fail")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: PerceptionModelFile = serde_json::from_str(json)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::FormatVersion(file.format_version));
        }
        Ok(PerceptionModel {
            linear: LinearModel::from_json(&file.linear.to_string())?,
            means: file.means,
            stds: file.stds,
        })
    }
}

/// Fits the perception classifier on RCT-labeled tuples pooled across
/// source domains. Features are standardized to mean 0 and variance 1
/// on the training set; the statistics are stored with the model.
pub fn fit_perception_classifier(
    examples: &[LabeledPerceptionExample],
    config: &LogisticConfig,
) -> Result<PerceptionModel> {
    if examples.is_empty() {
        return Err(Error::DegenerateLabels("no training examples".into()));
    }
    let n = examples.len() as f64;
    let mut means = [0.0; 3];
    for ex in examples {
        let raw = ex.features.as_array();
        for j in 0..3 {
            means[j] += raw[j] / n;
        }
    }
    let mut stds = [0.0; 3];
    for ex in examples {
        let raw = ex.features.as_array();
        for j in 0..3 {
            stds[j] += (raw[j] - means[j]).powi(2) / n;
        }
    }
    for s in &mut stds {
        *s = s.sqrt();
        if *s == 0.0 {
            // Constant column: leave it centered but unscaled.
            *s = 1.0;
        }
    }

    let rows: Vec<SparseVec> = examples
        .iter()
        .map(|ex| {
            let raw = ex.features.as_array();
            SparseVec::from_entries(
                (0..3)
                    .map(|j| (j as u32, (raw[j] - means[j]) / stds[j]))
                    .collect(),
            )
        })
        .collect();
    let labels: Vec<u8> = examples
        .iter()
        .map(|ex| binarize_rct_effect(ex.rct_effect))
        .collect();
    let linear = fit_logistic(&rows, 3, &labels, config)?;
    Ok(PerceptionModel {
        linear,
        means,
        stds,
    })
}

/// Positive-class posterior for a tuple, used directly as its effect
/// confidence score.
pub fn perception_estimate(model: &PerceptionModel, features: &PerceptionFeatures) -> f64 {
    model
        .linear
        .predict_positive_probability(&model.standardize(features))
        .expect("model and standardized features share a dimension")
}

/// A fitted perception model paired with the target domain's sentence
/// classifier, ready to score that domain's tuples.
pub struct PerceptionScorer {
    pub model: PerceptionModel,
    pub classifier: LinearModel,
}

impl PerceptionScorer {
    pub fn score(
        &self,
        sentence: &Sentence,
        control_word: &str,
        treatment_word: &str,
        tfidf: &TfidfModel,
        vocab: &Vocabulary,
    ) -> Result<f64> {
        let features = perception_features(
            sentence,
            control_word,
            treatment_word,
            &self.classifier,
            tfidf,
            vocab,
        )?;
        Ok(perception_estimate(&self.model, &features))
    }
}
