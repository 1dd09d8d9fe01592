//! CART decision-tree classifier over `(M, N, K)`.
//!
//! Splits are axis-aligned (`feature <= threshold` goes left), chosen
//! greedily by weighted Gini impurity. Split scores are compared in exact
//! integer arithmetic so ties resolve the same way on every platform:
//! lowest feature index first (M < N < K), then lowest threshold.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::ClassIndex;
use crate::error::{Error, Result};
use crate::kernels::ProblemShape;

pub const TREE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Feature {
    M,
    N,
    K,
}

impl Feature {
    pub const ALL: [Feature; 3] = [Feature::M, Feature::N, Feature::K];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::M => "M",
            Feature::N => "N",
            Feature::K => "K",
        }
    }
}

pub type Features = [f64; 3];

pub fn features_of(shape: &ProblemShape) -> Features {
    [shape.m as f64, shape.n as f64, shape.k as f64]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub features: Features,
    pub class: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaxHeight {
    Bounded(u32),
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MinLeaf {
    Count(usize),
    /// Fraction of the training set size, in `(0, 0.5]`.
    Fraction(f64),
}

impl MinLeaf {
    /// `Count` as given, `Fraction` as `ceil(fraction * n_train)`, never below 1.
    pub fn effective(self, n_train: usize) -> usize {
        match self {
            MinLeaf::Count(c) => c.max(1),
            MinLeaf::Fraction(f) => {
                // 0.07 * 100 is 7.000000000000001 in binary; snap near-integers first.
                let x = f * n_train as f64;
                let r = x.round();
                let x = if (x - r).abs() < 1e-9 { r } else { x.ceil() };
                (x as usize).max(1)
            }
        }
    }
}

impl fmt::Display for MaxHeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaxHeight::Bounded(h) => write!(f, "{h}"),
            MaxHeight::Unbounded => f.write_str("Max"),
        }
    }
}

impl fmt::Display for MinLeaf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MinLeaf::Count(c) => write!(f, "{c}"),
            MinLeaf::Fraction(x) => write!(f, "{x}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub max_height: MaxHeight,
    pub min_samples_leaf: MinLeaf,
}

impl TrainConfig {
    pub fn new(max_height: MaxHeight, min_samples_leaf: MinLeaf) -> Result<Self> {
        if max_height == MaxHeight::Bounded(0) {
            return Err(Error::Argument("max height must be positive".into()));
        }
        match min_samples_leaf {
            MinLeaf::Count(0) => Err(Error::Argument("min samples per leaf must be >= 1".into())),
            MinLeaf::Fraction(f) if !(f > 0.0 && f <= 0.5) => Err(Error::Argument(format!(
                "fractional min samples per leaf must be in (0, 0.5], got {f}"
            ))),
            _ => Ok(Self {
                max_height,
                min_samples_leaf,
            }),
        }
    }

    /// Grid cell name such as `h8-L1` or `hMax-L0.5`.
    pub fn name(&self) -> String {
        format!("h{}-L{}", self.max_height, self.min_samples_leaf)
    }
}

pub fn default_heights() -> Vec<MaxHeight> {
    vec![
        MaxHeight::Bounded(1),
        MaxHeight::Bounded(2),
        MaxHeight::Bounded(4),
        MaxHeight::Bounded(8),
        MaxHeight::Unbounded,
    ]
}

pub fn default_min_leaves() -> Vec<MinLeaf> {
    vec![
        MinLeaf::Count(1),
        MinLeaf::Count(2),
        MinLeaf::Count(4),
        MinLeaf::Fraction(0.1),
        MinLeaf::Fraction(0.2),
        MinLeaf::Fraction(0.3),
        MinLeaf::Fraction(0.4),
        MinLeaf::Fraction(0.5),
    ]
}

/// Gini impurity `1 - sum_k p_k^2`.
pub fn gini(labels: &[u32]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Argument("gini of an empty label set".into()));
    }
    let counts = class_counts(labels.iter().copied());
    let n = labels.len() as f64;
    Ok(1.0 - counts.iter().map(|&(_, c)| (c as f64 / n).powi(2)).sum::<f64>())
}

/// `(class, count)` sorted by class id.
fn class_counts(labels: impl Iterator<Item = u32>) -> Vec<(u32, u64)> {
    let mut sorted: Vec<u32> = labels.collect();
    sorted.sort_unstable();
    let mut out: Vec<(u32, u64)> = Vec::new();
    for c in sorted {
        match out.last_mut() {
            Some((last, n)) if *last == c => *n += 1,
            _ => out.push((c, 1)),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: Feature,
    pub threshold: f64,
    /// `(nL * gini(L) + nR * gini(R)) / n`
    pub weighted_impurity: f64,
}

/// A split's purity score `sL/nL + sR/nR` kept as exact integers, where
/// `s` is the sum of squared class counts. Larger is purer.
#[derive(Clone, Copy)]
struct Score {
    sum_sq_left: u64,
    n_left: u64,
    sum_sq_right: u64,
    n_right: u64,
}

impl Score {
    fn numerator(&self) -> u128 {
        self.sum_sq_left as u128 * self.n_right as u128 + self.sum_sq_right as u128 * self.n_left as u128
    }

    fn denominator(&self) -> u128 {
        self.n_left as u128 * self.n_right as u128
    }

    fn cmp(&self, other: &Score) -> Ordering {
        (self.numerator() * other.denominator()).cmp(&(other.numerator() * self.denominator()))
    }

    /// Weighted child impurity strictly below the parent's `1 - s/n`.
    fn improves_on(&self, parent_sum_sq: u64, n: u64) -> bool {
        self.numerator() * n as u128 > parent_sum_sq as u128 * self.denominator()
    }

    fn weighted_impurity(&self) -> f64 {
        let n = (self.n_left + self.n_right) as f64;
        let s = self.sum_sq_left as f64 / self.n_left as f64
            + self.sum_sq_right as f64 / self.n_right as f64;
        (1.0 - s / n).max(0.0)
    }
}

/// Best axis-aligned split leaving at least `min_leaf` samples per side,
/// or `None` when no feasible split lowers the impurity.
pub fn best_split(samples: &[Sample], min_leaf: usize) -> Option<SplitChoice> {
    let min_leaf = min_leaf.max(1);
    let n = samples.len();
    if n < 2 * min_leaf {
        return None;
    }
    // Dense per-node class ids.
    let counts = class_counts(samples.iter().map(|s| s.class));
    if counts.len() < 2 {
        return None;
    }
    let dense = |c: u32| counts.binary_search_by_key(&c, |&(id, _)| id).unwrap();
    let parent_sum_sq: u64 = counts.iter().map(|&(_, c)| c * c).sum();

    let mut best: Option<(Score, Feature, f64)> = None;
    let mut order: Vec<usize> = (0..n).collect();
    for feature in Feature::ALL {
        let f = feature.index();
        order.sort_by(|&a, &b| samples[a].features[f].total_cmp(&samples[b].features[f]));
        let mut left = vec![0u64; counts.len()];
        let mut right: Vec<u64> = counts.iter().map(|&(_, c)| c).collect();
        let (mut sum_sq_left, mut sum_sq_right) = (0u64, parent_sum_sq);
        for i in 1..n {
            let c = dense(samples[order[i - 1]].class);
            sum_sq_left += 2 * left[c] + 1;
            sum_sq_right -= 2 * right[c] - 1;
            left[c] += 1;
            right[c] -= 1;

            let lo = samples[order[i - 1]].features[f];
            let hi = samples[order[i]].features[f];
            if lo == hi || i < min_leaf || n - i < min_leaf {
                continue;
            }
            let score = Score {
                sum_sq_left,
                n_left: i as u64,
                sum_sq_right,
                n_right: (n - i) as u64,
            };
            if best.as_ref().is_none_or(|(b, _, _)| score.cmp(b) == Ordering::Greater) {
                best = Some((score, feature, lo + (hi - lo) / 2.0));
            }
        }
    }
    best.filter(|(s, _, _)| s.improves_on(parent_sum_sq, n as u64))
        .map(|(score, feature, threshold)| SplitChoice {
            feature,
            threshold,
            weighted_impurity: score.weighted_impurity(),
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    Split {
        feature: Feature,
        threshold: f64,
        left: usize,
        right: usize,
        #[serde(default)]
        samples: usize,
    },
    Leaf {
        class_id: u32,
        #[serde(default)]
        samples: usize,
    },
}

/// Binary tree stored as an arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

#[derive(Serialize, Deserialize)]
struct TreeFile {
    format_version: u32,
    nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn leaf(class_id: u32) -> Self {
        Self {
            nodes: vec![Node::Leaf {
                class_id,
                samples: 0,
            }],
        }
    }

    /// Validates that `nodes` form a single tree rooted at index 0.
    pub fn from_nodes(nodes: Vec<Node>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Validation("tree has no nodes".into()));
        }
        let mut referenced = vec![false; nodes.len()];
        referenced[0] = true;
        for (i, node) in nodes.iter().enumerate() {
            if let Node::Split {
                threshold,
                left,
                right,
                ..
            } = node
            {
                if !threshold.is_finite() {
                    return Err(Error::Validation(format!("node {i} has a non-finite threshold")));
                }
                for &child in [left, right] {
                    if child >= nodes.len() || child == 0 || referenced[child] {
                        return Err(Error::Validation(format!(
                            "node {i} has an invalid or shared child {child}"
                        )));
                    }
                    referenced[child] = true;
                }
            }
        }
        if let Some(orphan) = referenced.iter().position(|r| !r) {
            return Err(Error::Validation(format!("node {orphan} is unreachable")));
        }
        let tree = Self { nodes };
        // Every node referenced once from a rooted walk rules out cycles.
        if tree.walk().count() != tree.nodes.len() {
            return Err(Error::Validation("tree contains a cycle".into()));
        }
        Ok(tree)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn node(&self, idx: usize) -> &Node {
        &self.nodes[idx]
    }

    /// Pre-order `(node index, depth)` traversal.
    pub fn walk(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let mut stack = vec![(0usize, 0usize)];
        let mut visited = 0usize;
        std::iter::from_fn(move || {
            let (idx, depth) = stack.pop()?;
            visited += 1;
            if visited > self.nodes.len() {
                return None;
            }
            if let Node::Split { left, right, .. } = self.nodes[idx] {
                stack.push((right, depth + 1));
                stack.push((left, depth + 1));
            }
            Some((idx, depth))
        })
    }

    pub fn predict(&self, features: &Features) -> u32 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    idx = if features[feature.index()] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
                Node::Leaf { class_id, .. } => return *class_id,
            }
        }
    }

    pub fn predict_shape(&self, shape: &ProblemShape) -> u32 {
        self.predict(&features_of(shape))
    }

    /// Edges on the longest root-to-leaf path.
    pub fn height(&self) -> usize {
        self.walk().map(|(_, d)| d).max().unwrap_or(0)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn split_count(&self) -> usize {
        self.nodes.len() - self.leaf_count()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&TreeFile {
            format_version: TREE_FORMAT_VERSION,
            nodes: self.nodes.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TreeFile = serde_json::from_str(text)?;
        if file.format_version != TREE_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported tree format version {}",
                file.format_version
            )));
        }
        Self::from_nodes(file.nodes)
    }
}

/// Majority class, ties to the smallest id.
fn majority(samples: &[Sample], idx: &[usize]) -> u32 {
    let counts = class_counts(idx.iter().map(|&i| samples[i].class));
    let mut best = counts[0];
    for &(c, n) in &counts[1..] {
        if n > best.1 {
            best = (c, n);
        }
    }
    best.0
}

/// Grows a tree greedily until leaves are pure, the height limit is hit, or
/// no feasible split lowers impurity.
pub fn train(samples: &[Sample], config: &TrainConfig) -> Result<DecisionTree> {
    if samples.is_empty() {
        return Err(Error::Argument("cannot train on an empty set".into()));
    }
    let min_leaf = config.min_samples_leaf.effective(samples.len());
    let height_cap = match config.max_height {
        MaxHeight::Bounded(h) => h as usize,
        MaxHeight::Unbounded => usize::MAX,
    };

    let mut nodes: Vec<Option<Node>> = vec![None];
    // (slot, sample indices, depth)
    let mut work = vec![(0usize, (0..samples.len()).collect::<Vec<_>>(), 0usize)];
    let mut scratch = Vec::new();
    while let Some((slot, idx, depth)) = work.pop() {
        let pure = idx.iter().all(|&i| samples[i].class == samples[idx[0]].class);
        let split = if pure || depth >= height_cap {
            None
        } else {
            scratch.clear();
            scratch.extend(idx.iter().map(|&i| samples[i]));
            best_split(&scratch, min_leaf)
        };
        nodes[slot] = Some(match split {
            None => Node::Leaf {
                class_id: majority(samples, &idx),
                samples: idx.len(),
            },
            Some(choice) => {
                let f = choice.feature.index();
                let (l, r): (Vec<usize>, Vec<usize>) = idx
                    .iter()
                    .partition(|&&i| samples[i].features[f] <= choice.threshold);
                let (left, right) = (nodes.len(), nodes.len() + 1);
                nodes.push(None);
                nodes.push(None);
                work.push((right, r, depth + 1));
                work.push((left, l, depth + 1));
                Node::Split {
                    feature: choice.feature,
                    threshold: choice.threshold,
                    left,
                    right,
                    samples: idx.len(),
                }
            }
        });
    }
    Ok(DecisionTree {
        nodes: nodes.into_iter().map(Option::unwrap).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeStats {
    pub height: usize,
    pub total_leaves: usize,
    /// Indexed by `KernelFamily::index`.
    pub leaves_per_family: [usize; 2],
    pub unique_configs_per_family: [usize; 2],
}

pub fn stats(tree: &DecisionTree, classes: &ClassIndex) -> Result<TreeStats> {
    let mut leaves_per_family = [0; 2];
    let mut seen = std::collections::HashSet::new();
    let mut unique_configs_per_family = [0; 2];
    for node in tree.nodes() {
        if let Node::Leaf { class_id, .. } = node {
            let config = classes.resolve(*class_id)?;
            let fam = config.family.index();
            leaves_per_family[fam] += 1;
            if seen.insert(*class_id) {
                unique_configs_per_family[fam] += 1;
            }
        }
    }
    Ok(TreeStats {
        height: tree.height(),
        total_leaves: tree.leaf_count(),
        leaves_per_family,
        unique_configs_per_family,
    })
}

#[derive(Debug, Clone)]
pub struct NamedTree {
    pub name: String,
    pub config: TrainConfig,
    pub tree: DecisionTree,
}

/// One tree per `(H, L)` pair, in `heights`-major order.
pub fn grid_train(samples: &[Sample], heights: &[MaxHeight], min_leaves: &[MinLeaf]) -> Result<Vec<NamedTree>> {
    if heights.is_empty() || min_leaves.is_empty() {
        return Err(Error::Argument("hyperparameter sets must be non-empty".into()));
    }
    let mut out = Vec::with_capacity(heights.len() * min_leaves.len());
    for &h in heights {
        for &l in min_leaves {
            let config = TrainConfig::new(h, l)?;
            let tree = train(samples, &config)?;
            out.push(NamedTree {
                name: config.name(),
                config,
                tree,
            });
        }
    }
    Ok(out)
}
