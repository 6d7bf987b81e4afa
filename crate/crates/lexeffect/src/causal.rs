//! Causal forest: trees whose splits maximize the heterogeneity of
//! within-leaf treatment-effect estimates, fitted on half-sample
//! subsamples so estimates can exclude the query row's trees.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::features::{BinaryMatrix, BinaryVector};
use crate::forest::ForestConfig;

const MODEL_FORMAT_VERSION: u32 = 1;

/// Arm sums and counts inside one leaf.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CausalLeaf {
    pub treated_sum: f64,
    pub treated_n: u32,
    pub control_sum: f64,
    pub control_n: u32,
}

impl CausalLeaf {
    /// Treated mean minus control mean; `None` when either arm is empty.
    pub fn effect(&self) -> Option<f64> {
        if self.treated_n == 0 || self.control_n == 0 {
            return None;
        }
        Some(
            self.treated_sum / f64::from(self.treated_n)
                - self.control_sum / f64::from(self.control_n),
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum CausalNode {
    Split { feature: u32, left: u32, right: u32 },
    Leaf(CausalLeaf),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CausalTree {
    nodes: Vec<CausalNode>,
}

impl CausalTree {
    pub fn nodes(&self) -> &[CausalNode] {
        &self.nodes
    }

    pub fn root(&self) -> &CausalNode {
        &self.nodes[0]
    }

    pub fn leaf_for(&self, x: &BinaryVector) -> &CausalLeaf {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                CausalNode::Leaf(leaf) => return leaf,
                CausalNode::Split {
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

/// A fitted causal forest with per-tree subsample index sets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CausalForestModel {
    format_version: u32,
    config: ForestConfig,
    trees: Vec<CausalTree>,
    /// Per tree: the sorted training-row indices in its half-sample.
    subsamples: Vec<Vec<u32>>,
    training_size: usize,
    n_features: usize,
}

impl CausalForestModel {
    pub fn trees(&self) -> &[CausalTree] {
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

    pub fn subsample(&self, tree: usize) -> &[u32] {
        &self.subsamples[tree]
    }

    pub fn subsample_contains(&self, tree: usize, row: usize) -> bool {
        self.subsamples[tree].binary_search(&(row as u32)).is_ok()
    }

    /// Per-tree effect estimates for `x`. A tree yields `None` when its
    /// leaf lacks an arm or when its subsample contains `exclude_index`.
    pub fn per_tree_estimates(
        &self,
        x: &BinaryVector,
        exclude_index: Option<usize>,
    ) -> Result<Vec<Option<f64>>> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        Ok((0..self.trees.len())
            .map(|t| {
                if let Some(row) = exclude_index {
                    if self.subsample_contains(t, row) {
                        return None;
                    }
                }
                self.trees[t].leaf_for(x).effect()
            })
            .collect())
    }

    /// Mean effect over the valid trees.
    pub fn causal_estimate(&self, x: &BinaryVector, exclude_index: Option<usize>) -> Result<f64> {
        let per_tree = self.per_tree_estimates(x, exclude_index)?;
        let mut sum = 0.0;
        let mut count = 0usize;
        for estimate in per_tree.into_iter().flatten() {
            sum += estimate;
            count += 1;
        }
        if count == 0 {
            return Err(Error::NoValidTrees);
        }
        Ok(sum / count as f64)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serialization cannot fail")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let model: CausalForestModel = serde_json::from_str(json)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::FormatVersion(model.format_version));
        }
        Ok(model)
    }
}

/// Fits the causal forest. Each tree grows on a half-sample drawn without
/// replacement; a split is valid only when both children hold at least
/// `min_samples_leaf` rows and at least one row from each arm, and the
/// chosen split maximizes `sum over children of n_child * effect_child^2`.
pub fn fit_causal_forest(
    x: &BinaryMatrix,
    treatment: &[u8],
    outcomes: &[f64],
    config: &ForestConfig,
) -> Result<CausalForestModel> {
    config.validate()?;
    let n = x.n_rows();
    if treatment.len() != n || outcomes.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: treatment.len().min(outcomes.len()),
        });
    }
    let treated = treatment.iter().filter(|&&t| t == 1).count();
    if treated == 0 {
        return Err(Error::EmptyGroup("treatment"));
    }
    if treated == n {
        return Err(Error::EmptyGroup("control"));
    }

    let half = (n / 2).max(1);
    let fitted = exec::map_indices(config.n_trees, |t| {
        let mut rng = config.tree_rng(t);
        let mut scratch: Vec<u32> = (0..n as u32).collect();
        for i in 0..half {
            let j = rng.gen_range(i..n);
            scratch.swap(i, j);
        }
        let mut subsample = scratch[..half].to_vec();
        subsample.sort_unstable();
        let tree = CausalTreeBuilder {
            x,
            treatment,
            outcomes,
            min_samples_leaf: config.min_samples_leaf,
            n_candidates: config.max_features.count(x.n_cols()),
            rng,
            scratch: (0..x.n_cols() as u32).collect(),
            nodes: Vec::new(),
        }
        .build(subsample.clone());
        (tree, subsample)
    });

    let mut trees = Vec::with_capacity(config.n_trees);
    let mut subsamples = Vec::with_capacity(config.n_trees);
    for (tree, subsample) in fitted {
        trees.push(tree);
        subsamples.push(subsample);
    }
    Ok(CausalForestModel {
        format_version: MODEL_FORMAT_VERSION,
        config: config.clone(),
        trees,
        subsamples,
        training_size: n,
        n_features: x.n_cols(),
    })
}

struct CausalTreeBuilder<'a> {
    x: &'a BinaryMatrix,
    treatment: &'a [u8],
    outcomes: &'a [f64],
    min_samples_leaf: usize,
    n_candidates: usize,
    rng: rand_chacha::ChaCha8Rng,
    scratch: Vec<u32>,
    nodes: Vec<CausalNode>,
}

#[derive(Default, Clone, Copy)]
struct ArmStats {
    treated_sum: f64,
    treated_n: u32,
    control_sum: f64,
    control_n: u32,
}

impl ArmStats {
    fn add(&mut self, treated: bool, y: f64) {
        if treated {
            self.treated_sum += y;
            self.treated_n += 1;
        } else {
            self.control_sum += y;
            self.control_n += 1;
        }
    }

    fn n(&self) -> u32 {
        self.treated_n + self.control_n
    }

    fn effect(&self) -> f64 {
        self.treated_sum / f64::from(self.treated_n)
            - self.control_sum / f64::from(self.control_n)
    }

    fn leaf(&self) -> CausalLeaf {
        CausalLeaf {
            treated_sum: self.treated_sum,
            treated_n: self.treated_n,
            control_sum: self.control_sum,
            control_n: self.control_n,
        }
    }
}

impl CausalTreeBuilder<'_> {
    fn build(mut self, rows: Vec<u32>) -> CausalTree {
        self.grow(rows);
        CausalTree { nodes: self.nodes }
    }

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

    fn stats(&self, rows: &[u32]) -> ArmStats {
        let mut s = ArmStats::default();
        for &r in rows {
            let r = r as usize;
            s.add(self.treatment[r] == 1, self.outcomes[r]);
        }
        s
    }

    fn grow(&mut self, rows: Vec<u32>) -> u32 {
        let node_stats = self.stats(&rows);
        let candidates = self.sample_candidates();

        // A valid child needs min_samples_leaf rows and one row per arm;
        // among valid splits take the largest n_child-weighted squared
        // effect sum, ties to the lowest feature index.
        let mut best: Option<(f64, u32)> = None;
        for &feature in &candidates {
            let mut on = ArmStats::default();
            for &r in &rows {
                let r = r as usize;
                if self.x.get(r, feature as usize) {
                    on.add(self.treatment[r] == 1, self.outcomes[r]);
                }
            }
            let off = ArmStats {
                treated_sum: node_stats.treated_sum - on.treated_sum,
                treated_n: node_stats.treated_n - on.treated_n,
                control_sum: node_stats.control_sum - on.control_sum,
                control_n: node_stats.control_n - on.control_n,
            };
            let valid = |s: &ArmStats| {
                s.n() as usize >= self.min_samples_leaf && s.treated_n >= 1 && s.control_n >= 1
            };
            if !valid(&on) || !valid(&off) {
                continue;
            }
            let score = f64::from(off.n()) * off.effect().powi(2)
                + f64::from(on.n()) * on.effect().powi(2);
            if best.is_none_or(|(s, _)| score > s) {
                best = Some((score, feature));
            }
        }

        let Some((_, feature)) = best else {
            let id = self.nodes.len() as u32;
            self.nodes.push(CausalNode::Leaf(node_stats.leaf()));
            return id;
        };

        let (off_rows, on_rows): (Vec<u32>, Vec<u32>) = rows
            .into_iter()
            .partition(|&r| !self.x.get(r as usize, feature as usize));
        let id = self.nodes.len() as u32;
        self.nodes.push(CausalNode::Split {
            feature,
            left: 0,
            right: 0,
        });
        let left = self.grow(off_rows);
        let right = self.grow(on_rows);
        if let CausalNode::Split {
            left: l, right: r, ..
        } = &mut self.nodes[id as usize]
        {
            *l = left;
            *r = right;
        }
        id
    }
}
