//! Pipeline configuration: one TOML file with every path, threshold and
//! seed explicit.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use lexeffect::estimators::{EstimateConfig, EstimatorKind};
use lexeffect::forest::{ForestConfig, MaxFeatures};
use lexeffect::linear::LogisticConfig;
use lexeffect::rct::DummySentence;
use lexeffect::synth::{PlantedPair, SyntheticSpec};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub corpora: Vec<CorpusEntry>,
    pub corpus: CorpusSettings,
    pub candidates: CandidateSettings,
    pub linear: LinearSettings,
    pub estimate: EstimateSettings,
    pub forest: ForestSettings,
    pub rct: RctSettings,
    pub synth: SynthSettings,
    pub perception: PerceptionSettings,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            output_dir: PathBuf::from("out"),
            corpora: Vec::new(),
            corpus: CorpusSettings::default(),
            candidates: CandidateSettings::default(),
            linear: LinearSettings::default(),
            estimate: EstimateSettings::default(),
            forest: ForestSettings::default(),
            rct: RctSettings::default(),
            synth: SynthSettings::default(),
            perception: PerceptionSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusEntry {
    pub domain: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSettings {
    pub min_doc_count: u32,
    pub stoplist: Option<PathBuf>,
    pub tag_lexicon: Option<PathBuf>,
}

impl Default for CorpusSettings {
    fn default() -> Self {
        CorpusSettings {
            min_doc_count: 8,
            stoplist: None,
            tag_lexicon: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CandidateSettings {
    pub paraphrase_table: Option<PathBuf>,
    pub coefficient_threshold: f64,
    pub min_equivalence: f64,
}

impl Default for CandidateSettings {
    fn default() -> Self {
        CandidateSettings {
            paraphrase_table: None,
            coefficient_threshold: 0.5,
            min_equivalence: 0.15,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearSettings {
    pub l2_strength: f64,
    pub positive_class_weight: f64,
}

impl Default for LinearSettings {
    fn default() -> Self {
        LinearSettings {
            l2_strength: 1.0,
            positive_class_weight: 1.0,
        }
    }
}

impl LinearSettings {
    pub fn to_logistic(&self, seed: u64) -> LogisticConfig {
        LogisticConfig {
            l2_strength: self.l2_strength,
            positive_class_weight: self.positive_class_weight,
            seed,
            ..LogisticConfig::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateSettings {
    pub estimators: Vec<String>,
    pub knn_k: usize,
}

impl Default for EstimateSettings {
    fn default() -> Self {
        EstimateSettings {
            estimators: vec![
                "knn".into(),
                "vt_rf".into(),
                "cf_rf".into(),
                "csf".into(),
            ],
            knn_k: 30,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestSettings {
    pub n_trees: usize,
    pub max_features: String,
    pub min_samples_leaf: usize,
    pub bootstrap: bool,
}

impl Default for ForestSettings {
    fn default() -> Self {
        ForestSettings {
            n_trees: 200,
            max_features: "log2".into(),
            min_samples_leaf: 10,
            bootstrap: true,
        }
    }
}

impl ForestSettings {
    pub fn to_forest_config(&self, seed: u64) -> Result<ForestConfig> {
        let max_features = match self.max_features.as_str() {
            "log2" => MaxFeatures::Log2,
            "sqrt" => MaxFeatures::Sqrt,
            "all" => MaxFeatures::All,
            other => bail!("unknown max_features rule {other:?} (expected log2, sqrt or all)"),
        };
        Ok(ForestConfig {
            n_trees: self.n_trees,
            max_features,
            min_samples_leaf: self.min_samples_leaf,
            bootstrap: self.bootstrap,
            seed,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DummyEntry {
    pub text: String,
    /// "high" (rate 4-5) or "low" (rate 1-2).
    pub expected: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RctSettings {
    pub top_pairs: usize,
    pub per_pair: usize,
    pub batch_size: usize,
    pub dummies: Vec<DummyEntry>,
}

impl Default for RctSettings {
    fn default() -> Self {
        RctSettings {
            top_pairs: 10,
            per_pair: 3,
            batch_size: 10,
            dummies: Vec::new(),
        }
    }
}

impl RctSettings {
    pub fn dummy_sentences(&self) -> Result<Vec<DummySentence>> {
        self.dummies
            .iter()
            .map(|d| {
                let expected = match d.expected.as_str() {
                    "high" => lexeffect::rct::DummyExpectation::High,
                    "low" => lexeffect::rct::DummyExpectation::Low,
                    other => bail!("dummy expectation {other:?} must be \"high\" or \"low\""),
                };
                Ok(DummySentence {
                    text: d.text.clone(),
                    expected,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairEntry {
    pub control_word: String,
    pub treatment_word: String,
    pub effect: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSettings {
    pub vocabulary_size: usize,
    pub n_sentences: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub base_positive_rate: f64,
    pub pair_presence_probability: f64,
    pub pairs: Vec<PairEntry>,
}

impl Default for SynthSettings {
    fn default() -> Self {
        SynthSettings {
            vocabulary_size: 60,
            n_sentences: 2000,
            min_tokens: 5,
            max_tokens: 12,
            base_positive_rate: 0.35,
            pair_presence_probability: 0.6,
            pairs: vec![PairEntry {
                control_word: "plainword".into(),
                treatment_word: "fancyword".into(),
                effect: 0.3,
            }],
        }
    }
}

impl SynthSettings {
    pub fn to_spec(&self, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            vocabulary_size: self.vocabulary_size,
            n_sentences: self.n_sentences,
            min_tokens: self.min_tokens,
            max_tokens: self.max_tokens,
            pairs: self
                .pairs
                .iter()
                .map(|p| PlantedPair {
                    control_word: p.control_word.clone(),
                    treatment_word: p.treatment_word.clone(),
                    effect: p.effect,
                })
                .collect(),
            base_positive_rate: self.base_positive_rate,
            pair_presence_probability: self.pair_presence_probability,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerceptionTrainEntry {
    pub domain: String,
    /// Labeled tuples (JSON lines with rct_effect set).
    pub tuples: PathBuf,
    pub corpus: PathBuf,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerceptionSettings {
    pub train: Vec<PerceptionTrainEntry>,
}

impl Config {
    /// Loads the config and resolves every relative path against the
    /// config file's directory. `LEXEFFECT_OUT` overrides the output
    /// directory.
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut config: Config = toml::from_str(&text)
            .with_context(|| format!("cannot parse config {}", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.output_dir);
        if let Ok(out) = std::env::var("LEXEFFECT_OUT") {
            config.output_dir = PathBuf::from(out);
        }
        for entry in &mut config.corpora {
            resolve(&mut entry.path);
        }
        if let Some(p) = &mut config.corpus.stoplist {
            resolve(p);
        }
        if let Some(p) = &mut config.corpus.tag_lexicon {
            resolve(p);
        }
        if let Some(p) = &mut config.candidates.paraphrase_table {
            resolve(p);
        }
        for entry in &mut config.perception.train {
            resolve(&mut entry.tuples);
            resolve(&mut entry.corpus);
        }
        Ok(config)
    }

    /// Sha-256 of the resolved config's canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in digest {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }

    pub fn corpus_entry(&self, domain: Option<&str>) -> Result<&CorpusEntry> {
        match domain {
            Some(name) => self
                .corpora
                .iter()
                .find(|e| e.domain == name)
                .with_context(|| format!("no [[corpora]] entry for domain {name:?}")),
            None => match self.corpora.as_slice() {
                [only] => Ok(only),
                [] => bail!("config declares no [[corpora]] entries"),
                _ => bail!("several corpora configured; pass --domain"),
            },
        }
    }

    pub fn estimator_kinds(&self, flag: Option<&[String]>) -> Result<BTreeSet<EstimatorKind>> {
        let names = flag.unwrap_or(&self.estimate.estimators);
        let mut kinds = BTreeSet::new();
        for name in names {
            let kind = EstimatorKind::from_name(name)
                .with_context(|| format!("--estimators: unknown estimator {name:?}"))?;
            kinds.insert(kind);
        }
        if kinds.is_empty() {
            bail!("--estimators: no estimators selected");
        }
        Ok(kinds)
    }

    pub fn estimate_config(&self, kinds: BTreeSet<EstimatorKind>) -> Result<EstimateConfig> {
        Ok(EstimateConfig {
            estimators: kinds,
            knn_k: self.estimate.knn_k,
            forest: self.forest.to_forest_config(self.seed)?,
            seed: self.seed,
        })
    }
}
