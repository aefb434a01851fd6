//! Random-forest classifier over the four gesture classes.
//!
//! Trees are grown on bootstrap resamples with Gini impurity. Each tree's
//! randomness comes from its own ChaCha8 stream, derived from the forest
//! seed and the tree index with SplitMix64, so a model depends only on
//! (data, config) and never on the thread count.
//!
//! Split scores are compared exactly in integer arithmetic. Equal scores
//! prefer the lower feature index, then the smaller threshold; samples with
//! `x[feature] <= threshold` go left.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gesture::GestureClass;
use crate::seed;

pub const MODEL_MAGIC: &str = "kinegest-forest";
pub const MODEL_VERSION: u32 = 1;
const CLASSES: usize = GestureClass::COUNT;
const TREE_STREAM: u64 = 0x5452_4545;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("no training samples")]
    EmptyInput,
    #[error("{what} has length {found}, expected {expected}")]
    LengthMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("non-finite feature value in sample {sample}, feature {feature}")]
    NonFinite { sample: usize, feature: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("malformed model at line {line}, column {column}: {message}")]
    Malformed {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("not a forest model (magic {0:?})")]
    BadMagic(String),
    #[error("model format version {found} is not supported (this build reads version {expected})")]
    UnsupportedVersion { found: u64, expected: u32 },
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

/// Candidate features examined at each split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    /// `floor(sqrt(m))` where `m` counts the features that vary in the
    /// training set.
    Sqrt,
    All,
    Fixed(usize),
}

impl MaxFeatures {
    fn resolve(self, m: usize) -> usize {
        let k = match self {
            MaxFeatures::Sqrt => (m as f64).sqrt().floor() as usize,
            MaxFeatures::All => m,
            MaxFeatures::Fixed(k) => k,
        };
        k.clamp(1, m.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub n_trees: usize,
    pub max_features: MaxFeatures,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    /// `None` grows until the leaves are pure.
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_trees: 100,
            max_features: MaxFeatures::Sqrt,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_depth: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ForestError> {
        let bad = |m: String| Err(ForestError::InvalidConfig(m));
        if self.n_trees == 0 {
            return bad("n_trees must be at least 1".into());
        }
        if self.min_samples_split < 2 {
            return bad(format!("min_samples_split = {} (minimum 2)", self.min_samples_split));
        }
        if self.min_samples_leaf == 0 {
            return bad("min_samples_leaf must be at least 1".into());
        }
        if self.max_features == MaxFeatures::Fixed(0) {
            return bad("max_features must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        counts: [u32; CLASSES],
    },
}

/// Nodes in preorder; node 0 is the root and children always follow their
/// parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_counts(&self, x: &[f64]) -> &[u32; CLASSES] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { counts } => return counts,
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> GestureClass {
        GestureClass::from_index(argmax(self.leaf_counts(x))).expect("class index in range")
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }
}

/// First index of the largest count.
fn argmax(counts: &[u32; CLASSES]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: GestureClass,
    /// Trees voting for each class, in LS, LW, HS, GL order.
    pub votes: [u32; CLASSES],
}

impl Prediction {
    pub fn vote_share(&self) -> f64 {
        let total: u32 = self.votes.iter().sum();
        self.votes[self.label.index()] as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomForestModel {
    pub magic: String,
    pub version: u32,
    pub feature_count: usize,
    pub classes: Vec<GestureClass>,
    pub config: TrainConfig,
    pub trees: Vec<Tree>,
}

impl RandomForestModel {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction, ForestError> {
        if x.len() != self.feature_count {
            return Err(ForestError::LengthMismatch {
                what: "input".into(),
                expected: self.feature_count,
                found: x.len(),
            });
        }
        let mut votes = [0u32; CLASSES];
        for tree in &self.trees {
            votes[tree.predict(x).index()] += 1;
        }
        Ok(Prediction {
            label: GestureClass::from_index(argmax(&votes)).expect("class index in range"),
            votes,
        })
    }

    /// Single-line JSON; identical models give identical bytes.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ForestError> {
        let located = |e: serde_json::Error| ForestError::Malformed {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        };
        // Check the header on an untyped parse first so a newer format is
        // reported as a version problem rather than a field error.
        let value: serde_json::Value = serde_json::from_str(text).map_err(located)?;
        let magic = value.get("magic").and_then(|m| m.as_str()).unwrap_or_default();
        if magic != MODEL_MAGIC {
            return Err(ForestError::BadMagic(magic.to_string()));
        }
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == MODEL_VERSION as u64 => {}
            Some(v) => {
                return Err(ForestError::UnsupportedVersion {
                    found: v,
                    expected: MODEL_VERSION,
                })
            }
            None => return Err(ForestError::InvalidModel("missing version".into())),
        }
        let model: RandomForestModel = serde_json::from_str(text).map_err(located)?;
        model.check()?;
        Ok(model)
    }

    fn check(&self) -> Result<(), ForestError> {
        let bad = |m: String| Err(ForestError::InvalidModel(m));
        if self.classes != GestureClass::ALL {
            return bad(format!("class list {:?}", self.classes));
        }
        if self.feature_count == 0 {
            return bad("feature_count is 0".into());
        }
        if self.trees.is_empty() {
            return bad("no trees".into());
        }
        if self.trees.len() != self.config.n_trees {
            return bad(format!("{} trees but config says {}", self.trees.len(), self.config.n_trees));
        }
        for (t, tree) in self.trees.iter().enumerate() {
            if tree.nodes.is_empty() {
                return bad(format!("tree {t} has no nodes"));
            }
            let n = tree.nodes.len();
            for (i, node) in tree.nodes.iter().enumerate() {
                match node {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        if *feature >= self.feature_count {
                            return bad(format!("tree {t} node {i}: feature {feature} out of range"));
                        }
                        if !threshold.is_finite() {
                            return bad(format!("tree {t} node {i}: non-finite threshold"));
                        }
                        for child in [left, right] {
                            if *child <= i || *child >= n {
                                return bad(format!("tree {t} node {i}: child index {child} out of range"));
                            }
                        }
                    }
                    Node::Leaf { counts } => {
                        if counts.iter().all(|&c| c == 0) {
                            return bad(format!("tree {t} node {i}: empty leaf"));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Fits a forest. `x` rows must share one length.
pub fn train_forest<R: AsRef<[f64]> + Sync>(
    x: &[R],
    y: &[GestureClass],
    config: &TrainConfig,
) -> Result<RandomForestModel, ForestError> {
    config.validate()?;
    if x.is_empty() {
        return Err(ForestError::EmptyInput);
    }
    if x.len() != y.len() {
        return Err(ForestError::LengthMismatch {
            what: "label list".into(),
            expected: x.len(),
            found: y.len(),
        });
    }
    let m = x[0].as_ref().len();
    if m == 0 {
        return Err(ForestError::InvalidConfig("feature vectors are empty".into()));
    }
    for (i, row) in x.iter().enumerate() {
        let row = row.as_ref();
        if row.len() != m {
            return Err(ForestError::LengthMismatch {
                what: format!("sample {i}"),
                expected: m,
                found: row.len(),
            });
        }
        if let Some(f) = row.iter().position(|v| !v.is_finite()) {
            return Err(ForestError::NonFinite { sample: i, feature: f });
        }
    }

    let columns: Vec<Vec<f64>> = (0..m).map(|f| x.iter().map(|r| r.as_ref()[f]).collect()).collect();
    let varying: Vec<usize> = (0..m)
        .filter(|&f| columns[f].iter().any(|&v| v != columns[f][0]))
        .collect();
    let labels: Vec<u8> = y.iter().map(|g| g.index() as u8).collect();
    let data = TrainData {
        columns: &columns,
        labels: &labels,
        varying: &varying,
        k: config.max_features.resolve(varying.len()),
        config,
    };
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| data.grow(seed::derive(config.seed, &[TREE_STREAM, t as u64])))
        .collect();
    Ok(RandomForestModel {
        magic: MODEL_MAGIC.to_string(),
        version: MODEL_VERSION,
        feature_count: m,
        classes: GestureClass::ALL.to_vec(),
        config: *config,
        trees,
    })
}

/// Sample indices, depth, and the parent slot and side to patch.
type BuildTask = (Vec<usize>, usize, Option<(usize, bool)>);

struct TrainData<'a> {
    columns: &'a [Vec<f64>],
    labels: &'a [u8],
    varying: &'a [usize],
    k: usize,
    config: &'a TrainConfig,
}

/// `sum_c n_c^2 / n` for the two children, as a fraction.
#[derive(Clone, Copy)]
struct Score {
    num: u128,
    den: u128,
}

impl Score {
    fn children(left: &[u64; CLASSES], nl: u64, right: &[u64; CLASSES], nr: u64) -> Self {
        let sq = |c: &[u64; CLASSES]| c.iter().map(|&v| (v * v) as u128).sum::<u128>();
        Score {
            num: sq(left) * nr as u128 + sq(right) * nl as u128,
            den: nl as u128 * nr as u128,
        }
    }

    fn beats(&self, other: &Score) -> bool {
        self.num * other.den > other.num * self.den
    }
}

struct Best {
    feature: usize,
    threshold: f64,
    score: Score,
}

impl TrainData<'_> {
    fn grow(&self, tree_seed: u64) -> Tree {
        let mut rng = seed::rng(tree_seed);
        let n = self.labels.len();
        let sample: Vec<usize> = if self.config.bootstrap {
            (0..n).map(|_| seed::uniform_index(&mut rng, n)).collect()
        } else {
            (0..n).collect()
        };

        let mut nodes: Vec<Node> = Vec::new();
        let mut pool = self.varying.to_vec();
        // The left task is popped first and its subtree finishes before the
        // right one starts, so nodes come out in preorder.
        let mut stack: Vec<BuildTask> = vec![(sample, 0, None)];
        while let Some((idx, depth, parent)) = stack.pop() {
            let slot = nodes.len();
            if let Some((p, is_left)) = parent {
                if let Node::Split { left, right, .. } = &mut nodes[p] {
                    *(if is_left { left } else { right }) = slot;
                }
            }
            let counts = self.counts(&idx);
            let split = if self.splittable(&counts, idx.len(), depth) {
                self.best_split(&idx, &counts, &mut pool, &mut rng)
            } else {
                None
            };
            match split {
                Some(best) => {
                    let (left, right): (Vec<usize>, Vec<usize>) = idx
                        .iter()
                        .partition(|&&i| self.columns[best.feature][i] <= best.threshold);
                    nodes.push(Node::Split {
                        feature: best.feature,
                        threshold: best.threshold,
                        left: 0,
                        right: 0,
                    });
                    stack.push((right, depth + 1, Some((slot, false))));
                    stack.push((left, depth + 1, Some((slot, true))));
                }
                None => nodes.push(Node::Leaf {
                    counts: counts.map(|c| c as u32),
                }),
            }
        }
        Tree { nodes }
    }

    fn counts(&self, idx: &[usize]) -> [u64; CLASSES] {
        let mut c = [0u64; CLASSES];
        for &i in idx {
            c[self.labels[i] as usize] += 1;
        }
        c
    }

    fn splittable(&self, counts: &[u64; CLASSES], n: usize, depth: usize) -> bool {
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        !pure
            && n >= self.config.min_samples_split
            && n >= 2 * self.config.min_samples_leaf
            && self.config.max_depth.is_none_or(|d| depth < d)
    }

    fn best_split(
        &self,
        idx: &[usize],
        counts: &[u64; CLASSES],
        pool: &mut [usize],
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Option<Best> {
        let n = idx.len() as u64;
        let parent = Score {
            num: counts.iter().map(|&c| (c * c) as u128).sum(),
            den: n as u128,
        };
        let leaf = self.config.min_samples_leaf as u64;
        let mut best: Option<Best> = None;
        let mut order: Vec<(f64, u8)> = Vec::with_capacity(idx.len());
        // Partial Fisher-Yates over the pool of varying features.
        for j in 0..self.k {
            let r = j + seed::uniform_index(rng, pool.len() - j);
            pool.swap(j, r);
            let f = pool[j];
            let col = &self.columns[f];
            order.clear();
            order.extend(idx.iter().map(|&i| (col[i], self.labels[i])));
            order.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = [0u64; CLASSES];
            for s in 0..order.len() - 1 {
                left[order[s].1 as usize] += 1;
                let (lo, hi) = (order[s].0, order[s + 1].0);
                if lo == hi {
                    continue;
                }
                let nl = s as u64 + 1;
                let nr = n - nl;
                if nl < leaf || nr < leaf {
                    continue;
                }
                let mut right = *counts;
                for c in 0..CLASSES {
                    right[c] -= left[c];
                }
                let score = Score::children(&left, nl, &right, nr);
                if !score.beats(&parent) {
                    continue;
                }
                let mut threshold = lo + (hi - lo) / 2.0;
                if threshold >= hi {
                    threshold = lo;
                }
                let better = match &best {
                    None => true,
                    Some(b) => {
                        score.beats(&b.score)
                            || (!b.score.beats(&score)
                                && (f < b.feature || (f == b.feature && threshold < b.threshold)))
                    }
                };
                if better {
                    best = Some(Best {
                        feature: f,
                        threshold,
                        score,
                    });
                }
            }
        }
        best
    }
}

/// Gini impurity `1 - sum p_c^2` of a class-count vector.
pub fn gini(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let sq: u64 = counts.iter().map(|c| c * c).sum();
    1.0 - sq as f64 / (n * n) as f64
}
