//! L2-regularized logistic regression, fit by deterministic full-batch
//! gradient descent with backtracking line search. Used for
//! representative-word selection, sentence posteriors and the perception
//! classifier.

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::features::SparseVec;

const MODEL_FORMAT_VERSION: u32 = 1;

/// Fitting options. The penalty is `(l2_strength / 2) * ||weights||^2`
/// with the bias unpenalized; positive examples may be overweighted in
/// the data term via `positive_class_weight`.
#[derive(Debug, Clone)]
pub struct LogisticConfig {
    pub l2_strength: f64,
    pub positive_class_weight: f64,
    pub max_iterations: usize,
    /// Stop when the gradient infinity-norm drops below this.
    pub gradient_tolerance: f64,
    pub seed: u64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            l2_strength: 1.0,
            positive_class_weight: 1.0,
            max_iterations: 10_000,
            gradient_tolerance: 1e-6,
            seed: 0,
        }
    }
}

/// A fitted linear classifier over a fixed feature space.
#[derive(Debug, Clone)]
pub struct LinearModel {
    weights: Vec<f64>,
    bias: f64,
    feature_space_id: String,
}

#[derive(Serialize, Deserialize)]
struct LinearModelFile {
    format_version: u32,
    feature_space_id: String,
    weights: Vec<f64>,
    bias: f64,
}

impl LinearModel {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn n_features(&self) -> usize {
        self.weights.len()
    }

    pub fn feature_space_id(&self) -> &str {
        &self.feature_space_id
    }

    /// Raw decision score `weights . x + bias`.
    pub fn score(&self, x: &SparseVec) -> Result<f64> {
        let mut z = self.bias;
        for &(j, v) in x.entries() {
            let w = self
                .weights
                .get(j as usize)
                .ok_or(Error::DimensionMismatch {
                    expected: self.weights.len(),
                    got: j as usize + 1,
                })?;
            z += w * v;
        }
        Ok(z)
    }

    /// Positive-class posterior, kept strictly inside (0, 1).
    pub fn predict_positive_probability(&self, x: &SparseVec) -> Result<f64> {
        Ok(sigmoid(self.score(x)?).clamp(1e-15, 1.0 - 1e-15))
    }

    /// Weight at the word's vocabulary index; 0.0 for out-of-vocabulary
    /// words.
    pub fn word_coefficient(&self, vocab: &Vocabulary, word: &str) -> f64 {
        vocab
            .index_of(word)
            .and_then(|j| self.weights.get(j))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&LinearModelFile {
            format_version: MODEL_FORMAT_VERSION,
            feature_space_id: self.feature_space_id.clone(),
            weights: self.weights.clone(),
            bias: self.bias,
        })
        .expect("model serialization cannot fail")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: LinearModelFile = serde_json::from_str(json)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::FormatVersion(file.format_version));
        }
        Ok(LinearModel {
            weights: file.weights,
            bias: file.bias,
            feature_space_id: file.feature_space_id,
        })
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn example_weights(y: &[u8], positive_class_weight: f64) -> Vec<f64> {
    y.iter()
        .map(|&yi| if yi == 1 { positive_class_weight } else { 1.0 })
        .collect()
}

/// Weighted mean logistic loss plus the L2 penalty on the weights.
pub fn regularized_loss(
    rows: &[SparseVec],
    y: &[u8],
    weights: &[f64],
    bias: f64,
    config: &LogisticConfig,
) -> f64 {
    let ew = example_weights(y, config.positive_class_weight);
    let total: f64 = ew.iter().sum();
    let mut data = 0.0;
    for ((x, &yi), &wi) in rows.iter().zip(y).zip(&ew) {
        let mut z = bias;
        for &(j, v) in x.entries() {
            z += weights[j as usize] * v;
        }
        data += wi * (softplus(z) - f64::from(yi) * z);
    }
    let penalty: f64 = weights.iter().map(|w| w * w).sum::<f64>() * config.l2_strength / 2.0;
    data / total + penalty
}

/// Analytic gradient of [`regularized_loss`]: `(weight gradient, bias
/// gradient)`.
pub fn loss_gradient(
    rows: &[SparseVec],
    y: &[u8],
    weights: &[f64],
    bias: f64,
    config: &LogisticConfig,
) -> (Vec<f64>, f64) {
    let ew = example_weights(y, config.positive_class_weight);
    let total: f64 = ew.iter().sum();
    let mut gw = vec![0.0; weights.len()];
    let mut gb = 0.0;
    for ((x, &yi), &wi) in rows.iter().zip(y).zip(&ew) {
        let mut z = bias;
        for &(j, v) in x.entries() {
            z += weights[j as usize] * v;
        }
        let residual = wi * (sigmoid(z) - f64::from(yi));
        gb += residual;
        for &(j, v) in x.entries() {
            gw[j as usize] += residual * v;
        }
    }
    for (g, w) in gw.iter_mut().zip(weights) {
        *g = *g / total + config.l2_strength * w;
    }
    (gw, gb / total)
}

/// Fits the classifier. Starts from zero weights and takes steepest
/// descent steps sized by Armijo backtracking, so the training loss is
/// non-increasing and the result is reproducible.
pub fn fit_logistic(
    rows: &[SparseVec],
    n_features: usize,
    y: &[u8],
    config: &LogisticConfig,
) -> Result<LinearModel> {
    if rows.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: rows.len(),
            got: y.len(),
        });
    }
    if config.l2_strength <= 0.0 {
        return Err(Error::Schema("l2_strength must be positive".into()));
    }
    let positives = y.iter().filter(|&&v| v == 1).count();
    if positives == 0 || positives == y.len() {
        return Err(Error::DegenerateLabels(format!(
            "{positives} positive of {} examples",
            y.len()
        )));
    }
    for (row_idx, x) in rows.iter().enumerate() {
        for &(j, v) in x.entries() {
            if !v.is_finite() {
                return Err(Error::NonFiniteFeature { row: row_idx });
            }
            if j as usize >= n_features {
                return Err(Error::DimensionMismatch {
                    expected: n_features,
                    got: j as usize + 1,
                });
            }
        }
    }

    let mut weights = vec![0.0; n_features];
    let mut bias = 0.0;
    let mut loss = regularized_loss(rows, y, &weights, bias, config);
    let mut step = 1.0f64;
    const ARMIJO: f64 = 1e-4;

    for _ in 0..config.max_iterations {
        let (gw, gb) = loss_gradient(rows, y, &weights, bias, config);
        let grad_inf = gw
            .iter()
            .chain(std::iter::once(&gb))
            .fold(0.0f64, |m, g| m.max(g.abs()));
        if grad_inf < config.gradient_tolerance {
            break;
        }
        let grad_sq: f64 = gw.iter().map(|g| g * g).sum::<f64>() + gb * gb;

        // Backtracking line search along the negative gradient.
        step = (step * 2.0).min(1.0e4);
        let mut accepted = false;
        for _ in 0..80 {
            let trial_w: Vec<f64> = weights.iter().zip(&gw).map(|(w, g)| w - step * g).collect();
            let trial_b = bias - step * gb;
            let trial_loss = regularized_loss(rows, y, &trial_w, trial_b, config);
            if trial_loss <= loss - ARMIJO * step * grad_sq {
                weights = trial_w;
                bias = trial_b;
                loss = trial_loss;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // Step size underflowed; the iterate is numerically optimal.
            break;
        }
    }

    Ok(LinearModel {
        weights,
        bias,
        feature_space_id: format!("dim-{n_features}"),
    })
}

/// Fits against a vocabulary-backed feature space, stamping the model
/// with the vocabulary's feature-space id.
pub fn fit_logistic_on_vocab(
    rows: &[SparseVec],
    vocab: &Vocabulary,
    y: &[u8],
    config: &LogisticConfig,
) -> Result<LinearModel> {
    let mut model = fit_logistic(rows, vocab.len(), y, config)?;
    model.feature_space_id = vocab.feature_space_id();
    Ok(model)
}
