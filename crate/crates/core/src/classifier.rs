//! Random-forest binary classifier: bootstrap-bagged CART trees with Gini
//! splits and per-node feature subsampling.
//!
//! Training is fully deterministic. Tree `i` draws from a splitmix64 stream
//! seeded with `seed ^ i`, candidate features are scanned in ascending index
//! order and thresholds in ascending value order, and only a strictly better
//! gain replaces the incumbent split. Equal gains therefore resolve to the
//! lowest feature index and then the lowest threshold.

use std::fs;
use std::path::Path;

use chrono::{DateTime, TimeZone, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureVector, FEATURE_COUNT, FEATURE_NAMES};
use crate::model::iso_seconds;

pub const MODEL_FORMAT_VERSION: &str = "1";

#[derive(Debug, Error, PartialEq)]
pub enum ClassifierError {
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("training data contains a single class")]
    SingleClassData,
    #[error("sample {0} has a non-finite feature value")]
    InvalidSample(usize),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("expected {expected} features, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("unsupported model version {0:?}")]
    BadVersion(String),
    #[error("model feature_names do not match the canonical order")]
    FeatureOrderMismatch,
    #[error("malformed model: {0}")]
    Malformed(String),
    #[error("i/o error: {0}")]
    Io(String),
}

/// One tree node in flattened form; child indices point forward in the
/// tree's node array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum Node {
    Split {
        #[serde(rename = "f")]
        feature: usize,
        #[serde(rename = "t")]
        threshold: f64,
        #[serde(rename = "l")]
        left: usize,
        #[serde(rename = "r")]
        right: usize,
    },
    Leaf {
        /// `[negatives, positives]`
        counts: [u64; 2],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(neg: u64, pos: u64) -> Self {
        Self {
            nodes: vec![Node::Leaf { counts: [neg, pos] }],
        }
    }

    /// Leaf reached by `x`; left iff `x[feature] <= threshold`.
    pub fn leaf_counts(&self, x: &[f64]) -> [u64; 2] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { counts } => return *counts,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let [neg, pos] = self.leaf_counts(x);
        pos as f64 / (neg + pos) as f64
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestModel {
    pub version: String,
    pub feature_names: Vec<String>,
    pub n_trees: usize,
    pub seed: u64,
    #[serde(with = "iso_seconds")]
    pub trained_at: DateTime<Utc>,
    pub trees: Vec<Tree>,
}

impl ForestModel {
    /// Wraps hand-built trees with canonical metadata.
    pub fn from_trees(trees: Vec<Tree>, seed: u64, trained_at: DateTime<Utc>) -> Self {
        Self {
            version: MODEL_FORMAT_VERSION.to_owned(),
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            n_trees: trees.len(),
            seed,
            trained_at,
            trees,
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, ClassifierError> {
        if x.len() != self.feature_names.len() {
            return Err(ClassifierError::DimensionMismatch {
                expected: self.feature_names.len(),
                found: x.len(),
            });
        }
        let total: f64 = self.trees.iter().map(|t| t.predict_proba(x)).sum();
        Ok(total / self.trees.len() as f64)
    }

    pub fn predict_features(&self, x: &FeatureVector) -> Result<f64, ClassifierError> {
        self.predict_proba(&x.to_array())
    }

    pub fn to_json(&self) -> Result<String, ClassifierError> {
        serde_json::to_string(self).map_err(|e| ClassifierError::Malformed(e.to_string()))
    }

    /// Decodes and validates a model document.
    pub fn from_json(bytes: &[u8]) -> Result<Self, ClassifierError> {
        #[derive(Deserialize)]
        struct Probe {
            version: String,
        }
        let probe: Probe =
            serde_json::from_slice(bytes).map_err(|e| ClassifierError::Malformed(e.to_string()))?;
        if probe.version != MODEL_FORMAT_VERSION {
            return Err(ClassifierError::BadVersion(probe.version));
        }
        let model: ForestModel =
            serde_json::from_slice(bytes).map_err(|e| ClassifierError::Malformed(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<(), ClassifierError> {
        if self.feature_names.len() != FEATURE_COUNT
            || self.feature_names.iter().zip(FEATURE_NAMES).any(|(a, b)| a != b)
        {
            return Err(ClassifierError::FeatureOrderMismatch);
        }
        if self.trees.is_empty() || self.trees.len() != self.n_trees {
            return Err(ClassifierError::Malformed(format!(
                "n_trees {} but {} trees present",
                self.n_trees,
                self.trees.len()
            )));
        }
        for (ti, tree) in self.trees.iter().enumerate() {
            if tree.nodes.is_empty() {
                return Err(ClassifierError::Malformed(format!("tree {ti} is empty")));
            }
            let n = tree.nodes.len();
            for (i, node) in tree.nodes.iter().enumerate() {
                let ok = match node {
                    Node::Split { feature, threshold, left, right } => {
                        *feature < FEATURE_COUNT
                            && !threshold.is_nan()
                            && *left > i
                            && *right > i
                            && *left < n
                            && *right < n
                    }
                    Node::Leaf { counts } => counts[0].checked_add(counts[1]).is_some_and(|s| s >= 1),
                };
                if !ok {
                    return Err(ClassifierError::Malformed(format!("tree {ti} node {i} is invalid")));
                }
            }
        }
        Ok(())
    }
}

pub fn predict_proba(model: &ForestModel, x: &FeatureVector) -> Result<f64, ClassifierError> {
    model.predict_features(x)
}

pub fn save_model(model: &ForestModel, path: &Path) -> Result<(), ClassifierError> {
    let mut json = model.to_json()?;
    json.push('\n');
    fs::write(path, json).map_err(|e| ClassifierError::Io(format!("{}: {e}", path.display())))
}

pub fn load_model(path: &Path) -> Result<ForestModel, ClassifierError> {
    let bytes = fs::read(path).map_err(|e| ClassifierError::Io(format!("{}: {e}", path.display())))?;
    ForestModel::from_json(&bytes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub features_per_split: usize,
    pub seed: u64,
    /// Stamped into the model as-is so identical inputs give identical files.
    pub trained_at: DateTime<Utc>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 16,
            min_samples_split: 2,
            features_per_split: (FEATURE_COUNT as f64).sqrt().ceil() as usize,
            seed: 42,
            trained_at: Utc.timestamp_opt(0, 0).unwrap(),
        }
    }
}

/// splitmix64 generator.
#[derive(Debug, Clone)]
pub struct SplitMix64(u64);

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform index in `0..n` (`n > 0`).
    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }
}

pub fn gini(counts: [u64; 2]) -> f64 {
    let n = (counts[0] + counts[1]) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let p0 = counts[0] as f64 / n;
    let p1 = counts[1] as f64 / n;
    1.0 - p0 * p0 - p1 * p1
}

/// Training entry point over `(features, label)` pairs.
pub fn train(samples: &[(FeatureVector, bool)], config: &TrainConfig) -> Result<ForestModel, ClassifierError> {
    let rows: Vec<[f64; FEATURE_COUNT]> = samples.iter().map(|(x, _)| x.to_array()).collect();
    let labels: Vec<bool> = samples.iter().map(|(_, y)| *y).collect();
    train_matrix(&rows, &labels, config)
}

pub fn train_matrix(
    rows: &[[f64; FEATURE_COUNT]],
    labels: &[bool],
    config: &TrainConfig,
) -> Result<ForestModel, ClassifierError> {
    if rows.is_empty() {
        return Err(ClassifierError::EmptyTrainingSet);
    }
    if rows.len() != labels.len() {
        return Err(ClassifierError::InvalidConfig("rows and labels differ in length".into()));
    }
    if config.n_trees == 0 || config.max_depth == 0 || config.min_samples_split == 0 {
        return Err(ClassifierError::InvalidConfig("n_trees, max_depth and min_samples_split must be positive".into()));
    }
    if config.features_per_split == 0 || config.features_per_split > FEATURE_COUNT {
        return Err(ClassifierError::InvalidConfig(format!(
            "features_per_split must be in 1..={FEATURE_COUNT}"
        )));
    }
    if let Some(i) = rows.iter().position(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(ClassifierError::InvalidSample(i));
    }
    let positives = labels.iter().filter(|&&y| y).count();
    if rows.len() < 2 || positives == 0 || positives == labels.len() {
        return Err(ClassifierError::SingleClassData);
    }

    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|i| {
            let mut rng = SplitMix64::new(config.seed ^ i as u64);
            let n = rows.len();
            let bootstrap: Vec<usize> = (0..n).map(|_| rng.below(n)).collect();
            let mut builder = TreeBuilder { rows, labels, config, rng, nodes: Vec::new() };
            builder.grow(bootstrap, 0);
            Tree { nodes: builder.nodes }
        })
        .collect();

    Ok(ForestModel::from_trees(trees, config.seed, config.trained_at))
}

struct TreeBuilder<'a> {
    rows: &'a [[f64; FEATURE_COUNT]],
    labels: &'a [bool],
    config: &'a TrainConfig,
    rng: SplitMix64,
    nodes: Vec<Node>,
}

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

const MIN_GAIN: f64 = 1e-12;

impl TreeBuilder<'_> {
    fn counts(&self, idx: &[usize]) -> [u64; 2] {
        let pos = idx.iter().filter(|&&i| self.labels[i]).count() as u64;
        [idx.len() as u64 - pos, pos]
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let counts = self.counts(&idx);
        let me = self.nodes.len();
        self.nodes.push(Node::Leaf { counts });
        let pure = counts[0] == 0 || counts[1] == 0;
        if pure || depth >= self.config.max_depth || idx.len() < self.config.min_samples_split {
            return me;
        }
        let features = self.draw_features();
        let Some(split) = self.best_split(&idx, counts, &features) else {
            return me;
        };
        let (left, right): (Vec<usize>, Vec<usize>) =
            idx.into_iter().partition(|&i| self.rows[i][split.feature] <= split.threshold);
        let l = self.grow(left, depth + 1);
        let r = self.grow(right, depth + 1);
        self.nodes[me] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: l,
            right: r,
        };
        me
    }

    /// Partial Fisher-Yates draw, returned in ascending order.
    fn draw_features(&mut self) -> Vec<usize> {
        let mut pool: Vec<usize> = (0..FEATURE_COUNT).collect();
        let k = self.config.features_per_split;
        for i in 0..k {
            let j = i + self.rng.below(FEATURE_COUNT - i);
            pool.swap(i, j);
        }
        let mut chosen = pool[..k].to_vec();
        chosen.sort_unstable();
        chosen
    }

    fn best_split(&self, idx: &[usize], counts: [u64; 2], features: &[usize]) -> Option<Split> {
        let n = idx.len() as f64;
        let parent = gini(counts);
        let mut best: Option<Split> = None;
        let mut column: Vec<(f64, bool)> = Vec::with_capacity(idx.len());
        for &f in features {
            column.clear();
            column.extend(idx.iter().map(|&i| (self.rows[i][f], self.labels[i])));
            column.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = [0u64; 2];
            for w in 0..column.len() - 1 {
                left[column[w].1 as usize] += 1;
                let (lo, hi) = (column[w].0, column[w + 1].0);
                if lo == hi {
                    continue;
                }
                let right = [counts[0] - left[0], counts[1] - left[1]];
                let nl = (left[0] + left[1]) as f64;
                let nr = (right[0] + right[1]) as f64;
                let gain = parent - (nl * gini(left) + nr * gini(right)) / n;
                if gain > MIN_GAIN && best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(Split { feature: f, threshold: midpoint(lo, hi), gain });
                }
            }
        }
        best
    }
}

/// Threshold strictly below `hi` and at least `lo`.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo / 2.0 + hi / 2.0;
    if mid >= hi || mid < lo {
        lo
    } else {
        mid
    }
}
