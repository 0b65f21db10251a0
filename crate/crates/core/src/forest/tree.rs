use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::FeatureConfig;
use crate::container::{self, BodyReader, BodyWriter, FormatError};
use crate::nn::ClassDistribution;
use crate::seed;

pub const FOREST_MAGIC: &[u8; 4] = b"RFST";
pub const FOREST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ForestError {
    #[error("no training samples")]
    Empty,
    #[error("sample {index} has {found} features, expected {expected}")]
    Ragged {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("sample {index} has label {label}, but only {n_classes} classes are configured")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        n_classes: usize,
    },
    #[error("sample {index} has a non-finite feature")]
    NonFinite { index: usize },
    #[error("invalid forest configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub n_classes: usize,
    /// Candidate features per split; `None` means floor(sqrt(n_features)).
    pub max_features: Option<usize>,
    pub features: FeatureConfig,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            n_classes: 4,
            max_features: None,
            features: FeatureConfig::default(),
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    fn candidates(&self, n_features: usize) -> usize {
        self.max_features
            .unwrap_or_else(|| (n_features as f64).sqrt().floor() as usize)
            .clamp(1, n_features)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    /// Samples with `x[feature] <= threshold` go left.
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub split: Option<Split>,
    /// Bootstrap class counts that reached this node.
    pub counts: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn leaf_counts(&self, x: &[f64]) -> &[u32] {
        let mut node = &self.nodes[0];
        while let Some(s) = node.split {
            node = &self.nodes[if x[s.feature] <= s.threshold { s.left } else { s.right }];
        }
        &node.counts
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax_low(self.leaf_counts(x))
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i].split {
                Some(s) => 1 + go(nodes, s.left).max(go(nodes, s.right)),
                None => 0,
            }
        }
        go(&self.nodes, 0)
    }
}

fn argmax_low(counts: &[u32]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<DecisionTree>,
    pub n_features: usize,
    pub n_classes: usize,
    pub features: FeatureConfig,
    pub seed: u64,
}

/// `n` draws with replacement from `0..n`.
pub fn bootstrap_sample<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

fn tree_rng(seed: u64, tree: usize) -> rand_chacha::ChaCha8Rng {
    seed::rng(seed, &[seed::label("forest_tree"), tree as u64])
}

struct Grower<'a, X: AsRef<[f64]>> {
    x: &'a [X],
    y: &'a [usize],
    n_classes: usize,
    candidates: usize,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl<X: AsRef<[f64]>> Grower<'_, X> {
    fn value(&self, i: usize, f: usize) -> f64 {
        self.x[i].as_ref()[f]
    }

    fn counts(&self, idx: &[usize]) -> Vec<u32> {
        let mut c = vec![0u32; self.n_classes];
        idx.iter().for_each(|&i| c[self.y[i]] += 1);
        c
    }

    /// Best threshold on one feature, scored by `sum(l^2)/n_l + sum(r^2)/n_r`
    /// (larger is lower weighted Gini). `None` if the feature is constant.
    fn scan(&self, idx: &mut [usize], f: usize, total: &[u32]) -> Option<BestSplit> {
        idx.sort_by(|&a, &b| self.value(a, f).total_cmp(&self.value(b, f)));
        let (lo, hi) = (self.value(idx[0], f), self.value(idx[idx.len() - 1], f));
        if lo >= hi {
            return None;
        }
        let n = idx.len();
        let mut left = vec![0u32; self.n_classes];
        let total_sq: f64 = total.iter().map(|&c| (c as f64) * (c as f64)).sum();
        let (mut left_sq, mut right_sq) = (0.0, total_sq);
        let mut best: Option<BestSplit> = None;
        for pos in 0..n - 1 {
            let c = self.y[idx[pos]];
            let (l, r) = (left[c] as f64, (total[c] - left[c]) as f64);
            left_sq += 2.0 * l + 1.0;
            right_sq -= 2.0 * r - 1.0;
            left[c] += 1;
            let (a, b) = (self.value(idx[pos], f), self.value(idx[pos + 1], f));
            if a >= b {
                continue;
            }
            let n_left = (pos + 1) as f64;
            let score = left_sq / n_left + right_sq / (n as f64 - n_left);
            if best.as_ref().is_none_or(|s| score > s.score) {
                let mid = a + (b - a) / 2.0;
                let threshold = if mid >= b { a } else { mid };
                best = Some(BestSplit {
                    feature: f,
                    threshold,
                    score,
                });
            }
        }
        best
    }

    fn grow(&self, sample: Vec<usize>, rng: &mut impl Rng) -> DecisionTree {
        let n_features = self.x[0].as_ref().len();
        let mut nodes: Vec<Node> = Vec::new();
        let mut order: Vec<usize> = (0..n_features).collect();
        let mut pending = vec![(0usize, sample)];
        nodes.push(Node {
            split: None,
            counts: Vec::new(),
        });
        while let Some((id, mut idx)) = pending.pop() {
            let counts = self.counts(&idx);
            let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
            nodes[id].counts = counts.clone();
            if pure {
                continue;
            }
            // Constant features do not count towards the candidate budget.
            order.shuffle(rng);
            let mut visited = 0;
            let mut best: Option<BestSplit> = None;
            for &f in &order {
                if visited == self.candidates {
                    break;
                }
                if let Some(s) = self.scan(&mut idx, f, &counts) {
                    visited += 1;
                    if best.as_ref().is_none_or(|b| s.score > b.score) {
                        best = Some(s);
                    }
                }
            }
            let Some(best) = best else { continue };
            let (left, right): (Vec<usize>, Vec<usize>) = idx
                .iter()
                .partition(|&&i| self.value(i, best.feature) <= best.threshold);
            let (l_id, r_id) = (nodes.len(), nodes.len() + 1);
            for _ in 0..2 {
                nodes.push(Node {
                    split: None,
                    counts: Vec::new(),
                });
            }
            nodes[id].split = Some(Split {
                feature: best.feature,
                threshold: best.threshold,
                left: l_id,
                right: r_id,
            });
            pending.push((r_id, right));
            pending.push((l_id, left));
        }
        DecisionTree { nodes }
    }
}

/// Bagged Gini trees grown to purity. Each tree draws its bootstrap sample
/// and feature subsets from its own seed-derived stream.
pub fn fit_forest<X: AsRef<[f64]>>(x: &[X], y: &[usize], config: &ForestConfig) -> Result<ForestModel, ForestError> {
    if x.is_empty() {
        return Err(ForestError::Empty);
    }
    if x.len() != y.len() {
        return Err(ForestError::InvalidConfig(format!(
            "{} samples but {} labels",
            x.len(),
            y.len()
        )));
    }
    if config.n_trees == 0 || config.n_classes == 0 {
        return Err(ForestError::InvalidConfig(
            "n_trees and n_classes must be at least 1".into(),
        ));
    }
    let n_features = x[0].as_ref().len();
    if n_features == 0 {
        return Err(ForestError::InvalidConfig("samples have no features".into()));
    }
    for (index, (row, &label)) in x.iter().zip(y).enumerate() {
        let row = row.as_ref();
        if row.len() != n_features {
            return Err(ForestError::Ragged {
                index,
                expected: n_features,
                found: row.len(),
            });
        }
        if label >= config.n_classes {
            return Err(ForestError::LabelOutOfRange {
                index,
                label,
                n_classes: config.n_classes,
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(ForestError::NonFinite { index });
        }
    }
    let grower = Grower {
        x,
        y,
        n_classes: config.n_classes,
        candidates: config.candidates(n_features),
    };
    let trees = (0..config.n_trees)
        .map(|t| {
            let mut rng = tree_rng(config.seed, t);
            let sample = bootstrap_sample(x.len(), &mut rng);
            grower.grow(sample, &mut rng)
        })
        .collect();
    Ok(ForestModel {
        trees,
        n_features,
        n_classes: config.n_classes,
        features: config.features,
        seed: config.seed,
    })
}

impl ForestModel {
    /// Per-class count of trees voting for it.
    pub fn votes(&self, x: &[f64]) -> Vec<u32> {
        let mut votes = vec![0u32; self.n_classes];
        self.trees.iter().for_each(|t| votes[t.predict(x)] += 1);
        votes
    }

    /// Majority vote; ties go to the lowest class index.
    pub fn predict(&self, x: &[f64]) -> usize {
        argmax_low(&self.votes(x))
    }

    /// Vote fractions as a distribution; `predicted` is the majority vote.
    pub fn classify(&self, x: &[f64]) -> ClassDistribution {
        let votes = self.votes(x);
        let total = self.trees.len() as f64;
        ClassDistribution {
            probabilities: votes.iter().map(|&v| v as f64 / total).collect(),
            predicted: argmax_low(&votes),
        }
    }

    /// Internal plus leaf nodes over all trees.
    pub fn count_nodes(&self) -> usize {
        self.trees.iter().map(|t| t.nodes.len()).sum()
    }

    /// True when every tree is a single leaf, e.g. after fitting on one class.
    pub fn is_degenerate(&self) -> bool {
        self.trees.iter().all(|t| t.nodes.len() == 1)
    }

    /// Indices of the training samples not drawn into tree `tree`'s bootstrap.
    pub fn out_of_bag(&self, tree: usize, n_samples: usize) -> Vec<usize> {
        let mut rng = tree_rng(self.seed, tree);
        let mut seen = vec![false; n_samples];
        bootstrap_sample(n_samples, &mut rng)
            .into_iter()
            .for_each(|i| seen[i] = true);
        (0..n_samples).filter(|&i| !seen[i]).collect()
    }

    /// Body: feature config (2 f64), seed u64, n_features, n_classes, n_trees
    /// (u32), then per tree a node count and per node `feature u32
    /// (u32::MAX for leaves), threshold f64, left u32, right u32, counts`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = BodyWriter::new();
        w.f64(self.features.velocity_resolution);
        w.f64(self.features.stationary_threshold);
        w.u64(self.seed);
        w.u32(self.n_features as u32);
        w.u32(self.n_classes as u32);
        w.u32(self.trees.len() as u32);
        for tree in &self.trees {
            w.u32(tree.nodes.len() as u32);
            for node in &tree.nodes {
                match node.split {
                    Some(s) => {
                        w.u32(s.feature as u32);
                        w.f64(s.threshold);
                        w.u32(s.left as u32);
                        w.u32(s.right as u32);
                    }
                    None => {
                        w.u32(u32::MAX);
                        w.f64(0.0);
                        w.u32(0);
                        w.u32(0);
                    }
                }
                node.counts.iter().for_each(|&c| w.u32(c));
            }
        }
        container::encode(FOREST_MAGIC, FOREST_VERSION, &w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = BodyReader::new(container::decode(bytes, FOREST_MAGIC, FOREST_VERSION)?);
        let features = FeatureConfig {
            velocity_resolution: r.f64()?,
            stationary_threshold: r.f64()?,
        };
        let seed = r.u64()?;
        let n_features = r.u32()? as usize;
        let n_classes = r.u32()? as usize;
        let n_trees = r.u32()? as usize;
        if n_features == 0 || n_classes == 0 || n_trees == 0 {
            return Err(FormatError::Malformed("empty forest header".into()));
        }
        let mut trees = Vec::with_capacity(n_trees.min(1 << 16));
        for t in 0..n_trees {
            let n_nodes = r.u32()? as usize;
            if n_nodes == 0 {
                return Err(FormatError::Malformed(format!("tree {t} has no nodes")));
            }
            let mut nodes = Vec::with_capacity(n_nodes.min(1 << 20));
            for i in 0..n_nodes {
                let feature = r.u32()?;
                let threshold = r.f64()?;
                let (left, right) = (r.u32()? as usize, r.u32()? as usize);
                let counts = (0..n_classes).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
                let split = if feature == u32::MAX {
                    None
                } else {
                    // Children always follow their parent, which also rules out cycles.
                    if feature as usize >= n_features || left <= i || right <= i || left >= n_nodes || right >= n_nodes
                    {
                        return Err(FormatError::Malformed(format!(
                            "tree {t} node {i} has an invalid split"
                        )));
                    }
                    Some(Split {
                        feature: feature as usize,
                        threshold,
                        left,
                        right,
                    })
                };
                nodes.push(Node { split, counts });
            }
            trees.push(DecisionTree { nodes });
        }
        r.finish()?;
        Ok(Self {
            trees,
            n_features,
            n_classes,
            features,
            seed,
        })
    }
}
