//! From-scratch random forest over binary bag-of-words features, with
//! per-tree inbag bookkeeping for out-of-bag posterior estimation.
//!
//! Feature values are 0/1, so split thresholds are fixed at 0.5 and only
//! the feature choice is searched. Rows are addressed by position; per-tree
//! randomness comes from one ChaCha stream per tree so fitting is
//! reproducible at any thread count.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::features::{BinaryMatrix, BinaryVector};

const MODEL_FORMAT_VERSION: u32 = 1;

/// Per-node candidate feature count rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    Log2,
    Sqrt,
    All,
}

impl MaxFeatures {
    pub fn count(self, n_features: usize) -> usize {
        match self {
            MaxFeatures::Log2 => ((n_features as f64).log2().ceil() as usize).max(1),
            MaxFeatures::Sqrt => ((n_features as f64).sqrt().floor() as usize).max(1),
            MaxFeatures::All => n_features.max(1),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_features: MaxFeatures,
    pub min_samples_leaf: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 200,
            max_features: MaxFeatures::Log2,
            min_samples_leaf: 10,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees < 1 {
            return Err(Error::Schema("n_trees must be at least 1".into()));
        }
        if self.min_samples_leaf < 1 {
            return Err(Error::Schema("min_samples_leaf must be at least 1".into()));
        }
        Ok(())
    }

    pub(crate) fn tree_rng(&self, tree_index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(tree_index as u64);
        rng
    }
}

/// A decision tree node. Rows with feature value 0 go left, 1 goes right.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Node {
    Split { feature: u32, left: u32, right: u32 },
    Leaf { value: f64, n: u32 },
}

/// A fitted decision tree stored as a node arena; node 0 is the root.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Routes `x` to its leaf and returns the leaf value.
    pub fn leaf_value(&self, x: &BinaryVector) -> f64 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value, .. } => return *value,
                Node::Split {
                    feature,
                    left,
                    right,
                } => {
                    at = if x.get(*feature as usize) {
                        *right as usize
                    } else {
                        *left as usize
                    };
                }
            }
        }
    }
}

/// A fitted random forest with recorded inbag multiplicities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForestModel {
    format_version: u32,
    config: ForestConfig,
    trees: Vec<Tree>,
    /// Per tree, per training row: how many times the row was drawn into
    /// the bootstrap sample.
    inbag: Vec<Vec<u32>>,
    training_size: usize,
    n_features: usize,
}

impl ForestModel {
    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn training_size(&self) -> usize {
        self.training_size
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Bootstrap multiplicity of `row` in `tree`'s sample.
    pub fn inbag_count(&self, tree: usize, row: usize) -> u32 {
        self.inbag[tree][row]
    }

    fn check_dim(&self, x: &BinaryVector) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Leaf value of every tree for `x`.
    pub fn per_tree_probabilities(&self, x: &BinaryVector) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(self.trees.iter().map(|t| t.leaf_value(x)).collect())
    }

    /// Mean over all trees of the leaf positive fraction reached by `x`.
    pub fn forest_probability(&self, x: &BinaryVector) -> Result<f64> {
        let per_tree = self.per_tree_probabilities(x)?;
        Ok(per_tree.iter().sum::<f64>() / per_tree.len() as f64)
    }

    /// Mean leaf fraction over only the trees whose bootstrap sample
    /// excluded `training_index`.
    pub fn oob_probability(&self, x: &BinaryVector, training_index: usize) -> Result<f64> {
        self.check_dim(x)?;
        if training_index >= self.training_size {
            return Err(Error::DimensionMismatch {
                expected: self.training_size,
                got: training_index + 1,
            });
        }
        let mut sum = 0.0;
        let mut count = 0usize;
        for (tree, inbag) in self.trees.iter().zip(&self.inbag) {
            if inbag[training_index] == 0 {
                sum += tree.leaf_value(x);
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::NoOobTrees(training_index));
        }
        Ok(sum / count as f64)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serialization cannot fail")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let model: ForestModel = serde_json::from_str(json)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::FormatVersion(model.format_version));
        }
        Ok(model)
    }
}

/// Fits `config.n_trees` Gini-split trees, each on a bootstrap sample
/// drawn from its own RNG stream.
pub fn fit_random_forest(x: &BinaryMatrix, y: &[u8], config: &ForestConfig) -> Result<ForestModel> {
    config.validate()?;
    let n = x.n_rows();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y.len(),
        });
    }
    let positives = y.iter().filter(|&&v| v == 1).count();
    if positives == 0 || positives == n {
        return Err(Error::DegenerateLabels(format!(
            "{positives} positive of {n} rows"
        )));
    }

    let fitted = exec::map_indices(config.n_trees, |t| {
        let mut rng = config.tree_rng(t);
        let mut inbag = vec![0u32; n];
        let rows: Vec<u32> = if config.bootstrap {
            (0..n).map(|_| rng.gen_range(0..n) as u32).collect()
        } else {
            (0..n as u32).collect()
        };
        for &r in &rows {
            inbag[r as usize] += 1;
        }
        let tree = TreeBuilder {
            x,
            y,
            min_samples_leaf: config.min_samples_leaf,
            n_candidates: config.max_features.count(x.n_cols()),
            rng,
            scratch: (0..x.n_cols() as u32).collect(),
            nodes: Vec::new(),
        }
        .build(rows);
        (tree, inbag)
    });

    let mut trees = Vec::with_capacity(config.n_trees);
    let mut inbag = Vec::with_capacity(config.n_trees);
    for (tree, bag) in fitted {
        trees.push(tree);
        inbag.push(bag);
    }
    Ok(ForestModel {
        format_version: MODEL_FORMAT_VERSION,
        config: config.clone(),
        trees,
        inbag,
        training_size: n,
        n_features: x.n_cols(),
    })
}

struct TreeBuilder<'a> {
    x: &'a BinaryMatrix,
    y: &'a [u8],
    min_samples_leaf: usize,
    n_candidates: usize,
    rng: ChaCha8Rng,
    scratch: Vec<u32>,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn build(mut self, rows: Vec<u32>) -> Tree {
        self.grow(rows);
        Tree { nodes: self.nodes }
    }

    /// Samples candidate features without replacement, returned ascending
    /// so equal-score splits resolve to the lowest feature index.
    fn sample_candidates(&mut self) -> Vec<u32> {
        let total = self.scratch.len();
        let k = self.n_candidates.min(total);
        for i in 0..k {
            let j = self.rng.gen_range(i..total);
            self.scratch.swap(i, j);
        }
        let mut picked = self.scratch[..k].to_vec();
        picked.sort_unstable();
        picked
    }

    fn grow(&mut self, rows: Vec<u32>) -> u32 {
        let n = rows.len();
        let positives: usize = rows.iter().map(|&r| usize::from(self.y[r as usize])).sum();

        let make_leaf = |nodes: &mut Vec<Node>| {
            let id = nodes.len() as u32;
            nodes.push(Node::Leaf {
                value: positives as f64 / n as f64,
                n: n as u32,
            });
            id
        };

        if positives == 0 || positives == n || n < 2 * self.min_samples_leaf {
            return make_leaf(&mut self.nodes);
        }

        let candidates = self.sample_candidates();
        let parent_gini = gini(positives, n);
        let mut best: Option<(f64, u32)> = None;
        for &feature in &candidates {
            let mut n_on = 0usize;
            let mut pos_on = 0usize;
            for &r in &rows {
                if self.x.get(r as usize, feature as usize) {
                    n_on += 1;
                    pos_on += usize::from(self.y[r as usize]);
                }
            }
            let n_off = n - n_on;
            if n_on < self.min_samples_leaf || n_off < self.min_samples_leaf {
                continue;
            }
            let pos_off = positives - pos_on;
            let weighted = (n_off as f64 * gini(pos_off, n_off)
                + n_on as f64 * gini(pos_on, n_on))
                / n as f64;
            let decrease = parent_gini - weighted;
            if decrease > 0.0 && best.is_none_or(|(d, _)| decrease > d) {
                best = Some((decrease, feature));
            }
        }

        let Some((_, feature)) = best else {
            return make_leaf(&mut self.nodes);
        };

        let (off_rows, on_rows): (Vec<u32>, Vec<u32>) = rows
            .into_iter()
            .partition(|&r| !self.x.get(r as usize, feature as usize));
        let id = self.nodes.len() as u32;
        self.nodes.push(Node::Split {
            feature,
            left: 0,
            right: 0,
        });
        let left = self.grow(off_rows);
        let right = self.grow(on_rows);
        if let Node::Split {
            left: l, right: r, ..
        } = &mut self.nodes[id as usize]
        {
            *l = left;
            *r = right;
        }
        id
    }
}

fn gini(positives: usize, n: usize) -> f64 {
    let p = positives as f64 / n as f64;
    1.0 - p * p - (1.0 - p) * (1.0 - p)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// n rows over `n_cols` features, where label equals feature 0 and the
    /// other features alternate uninformatively.
    fn single_signal_matrix(n: usize, n_cols: usize) -> (BinaryMatrix, Vec<u8>) {
        let mut rows = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let mut v = BinaryVector::zeros(n_cols);
            let label = u8::from(i % 2 == 0);
            v.set(0, label == 1);
            for c in 1..n_cols {
                v.set(c, (i / (c + 1)) % 2 == 0);
            }
            rows.push(v);
            y.push(label);
        }
        (BinaryMatrix::from_rows(rows, n_cols).unwrap(), y)
    }

    fn small_config(n_trees: usize) -> ForestConfig {
        ForestConfig {
            n_trees,
            max_features: MaxFeatures::All,
            min_samples_leaf: 5,
            bootstrap: true,
            seed: 7,
        }
    }

    #[test]
    fn rejects_single_class() {
        let (x, _) = single_signal_matrix(20, 3);
        let y = vec![1u8; 20];
        assert!(matches!(
            fit_random_forest(&x, &y, &small_config(3)),
            Err(Error::DegenerateLabels(_))
        ));
    }

    #[test]
    fn label_determined_by_one_feature_splits_root_on_it() {
        let (x, y) = single_signal_matrix(100, 6);
        let model = fit_random_forest(&x, &y, &small_config(10)).unwrap();
        for tree in model.trees() {
            match tree.root() {
                Node::Split { feature, .. } => assert_eq!(*feature, 0),
                Node::Leaf { .. } => panic!("root should split"),
            }
        }
    }

    #[test]
    fn degenerate_config_yields_single_mean_leaf() {
        let (x, y) = single_signal_matrix(20, 3);
        let config = ForestConfig {
            n_trees: 1,
            max_features: MaxFeatures::All,
            min_samples_leaf: 20,
            bootstrap: false,
            seed: 0,
        };
        let model = fit_random_forest(&x, &y, &config).unwrap();
        assert_eq!(model.trees().len(), 1);
        match model.trees()[0].root() {
            Node::Leaf { value, n } => {
                assert_eq!(*n, 20);
                assert!((value - 0.5).abs() < 1e-15);
            }
            Node::Split { .. } => panic!("expected a single leaf"),
        }
        // Bootstrap disabled puts every row in every bag: OOB undefined.
        assert!(matches!(
            model.oob_probability(x.row(0), 0),
            Err(Error::NoOobTrees(0))
        ));
    }

    #[test]
    fn fixed_seed_reproduces_forest() {
        let (x, y) = single_signal_matrix(60, 5);
        let a = fit_random_forest(&x, &y, &small_config(8)).unwrap();
        let b = fit_random_forest(&x, &y, &small_config(8)).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn forest_probability_is_mean_of_trees() {
        let (x, y) = single_signal_matrix(80, 5);
        let model = fit_random_forest(&x, &y, &small_config(15)).unwrap();
        let q = x.row(3);
        let per_tree = model.per_tree_probabilities(q).unwrap();
        let mean = per_tree.iter().sum::<f64>() / per_tree.len() as f64;
        assert!((model.forest_probability(q).unwrap() - mean).abs() < 1e-15);
    }

    #[test]
    fn oob_uses_only_excluding_trees() {
        let (x, y) = single_signal_matrix(40, 5);
        let model = fit_random_forest(&x, &y, &small_config(25)).unwrap();
        let idx = 11;
        let q = x.row(idx);
        let mut sum = 0.0;
        let mut count = 0;
        for (t, tree) in model.trees().iter().enumerate() {
            if model.inbag_count(t, idx) == 0 {
                sum += tree.leaf_value(q);
                count += 1;
            }
        }
        assert!(count > 0, "fixture should leave some trees OOB");
        let expected = sum / count as f64;
        assert!((model.oob_probability(q, idx).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn single_tree_containing_row_errors_for_it() {
        let (x, y) = single_signal_matrix(10, 3);
        let mut config = small_config(1);
        config.seed = 1;
        let model = fit_random_forest(&x, &y, &config).unwrap();
        let inbag_row = (0..10)
            .find(|&r| model.inbag_count(0, r) > 0)
            .expect("bootstrap of 10 draws hits some row");
        assert!(matches!(
            model.oob_probability(x.row(inbag_row), inbag_row),
            Err(Error::NoOobTrees(_))
        ));
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn leaf_fractions_match_inbag_rows_exactly() {
        let (x, y) = single_signal_matrix(50, 5);
        let model = fit_random_forest(&x, &y, &small_config(6)).unwrap();
        for (t, tree) in model.trees().iter().enumerate() {
            // Re-route every inbag row (with multiplicity) and recount.
            let mut leaf_counts: std::collections::HashMap<usize, (u32, u32)> =
                std::collections::HashMap::new();
            for row in 0..50 {
                let mult = model.inbag_count(t, row);
                if mult == 0 {
                    continue;
                }
                let mut at = 0usize;
                loop {
                    match &tree.nodes()[at] {
                        Node::Leaf { .. } => break,
                        Node::Split {
                            feature,
                            left,
                            right,
                        } => {
                            at = if x.get(row, *feature as usize) {
                                *right as usize
                            } else {
                                *left as usize
                            };
                        }
                    }
                }
                let entry = leaf_counts.entry(at).or_insert((0, 0));
                entry.0 += mult;
                entry.1 += mult * u32::from(y[row]);
            }
            for (node_id, (n, pos)) in leaf_counts {
                match &tree.nodes()[node_id] {
                    Node::Leaf { value, n: leaf_n } => {
                        assert_eq!(*leaf_n, n);
                        assert_eq!(*value, f64::from(pos) / f64::from(n));
                    }
                    Node::Split { .. } => panic!("routed to a split"),
                }
            }
        }
    }

    #[test]
    fn min_samples_leaf_respected() {
        let (x, y) = single_signal_matrix(64, 6);
        let config = ForestConfig {
            min_samples_leaf: 12,
            ..small_config(10)
        };
        let model = fit_random_forest(&x, &y, &config).unwrap();
        for tree in model.trees() {
            for node in tree.nodes() {
                if let Node::Leaf { n, .. } = node {
                    assert!(*n >= 12);
                }
            }
        }
    }

    #[test]
    fn max_features_counts() {
        assert_eq!(MaxFeatures::Log2.count(62), 6);
        assert_eq!(MaxFeatures::Log2.count(1), 1);
        assert_eq!(MaxFeatures::Sqrt.count(63), 7);
        assert_eq!(MaxFeatures::All.count(9), 9);
    }

    #[test]
    fn model_json_round_trip() {
        let (x, y) = single_signal_matrix(30, 4);
        let model = fit_random_forest(&x, &y, &small_config(3)).unwrap();
        let restored = ForestModel::from_json(&model.to_json()).unwrap();
        assert_eq!(restored.to_json(), model.to_json());
    }
}
