//! Random forest of Gini-split decision trees with bagging and
//! class-probability output.
//!
//! Trees grow best-first: every splittable node is scored by its best
//! achievable weighted Gini decrease, and the node with the largest
//! decrease splits next (ties to the earlier-created node), so a leaf
//! budget (`max_leaf_nodes`) is honored faithfully. Impure nodes are
//! split even when the best decrease is zero, which lets a single
//! unconstrained tree memorize consistent data (XOR needs this: both
//! root splits have zero decrease).
//!
//! Each node considers only a uniform random subset of features, sized
//! `ceil(sqrt(d))` for `auto`/`sqrt` or `ceil(log2(d))` for `log2`,
//! with no fallback: a node whose subset admits no valid split becomes
//! a leaf. Subsets are drawn when the node is created, so the random
//! stream is independent of the order in which the growth queue is
//! drained; each tree draws from its own stream derived from
//! `(seed, tree index)`, giving a model whose first k trees equal the
//! k-tree model for any larger `n_estimators`.

use crate::data::Dataset;
use crate::rng;
use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("dataset has no feature columns")]
    ZeroFeatures,
    #[error("training data must be fully labeled")]
    UnlabeledPresent,
    #[error("feature count mismatch: model trained on {expected}, input has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid forest parameters: {0}")]
    InvalidParams(&'static str),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("not a forest model file (format tag {found:?})")]
    BadFormat { found: String },
    #[error("unsupported model version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
}

pub type Result<T> = std::result::Result<T, ForestError>;

/// Feature-subset sizing rule. `Auto` is an alias for `Sqrt`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    Auto,
    Sqrt,
    Log2,
}

impl MaxFeatures {
    /// Features examined per node for a d-column dataset, at least 1.
    pub fn subset_size(&self, d: usize) -> usize {
        let s = match self {
            MaxFeatures::Auto | MaxFeatures::Sqrt => (d as f64).sqrt().ceil() as usize,
            MaxFeatures::Log2 => (d as f64).log2().ceil() as usize,
        };
        s.clamp(1, d)
    }
}

/// The seven tunable hyperparameters plus the fitting seed. Tuned
/// ranges: n_estimators 50..=200, min_samples_leaf 1..=25,
/// min_samples_split 2..=25, max_leaf_nodes 2..=100, max_depth 1..=25.
/// `None` structural limits mean unbounded (the untuned default).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_estimators: usize,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
    pub max_leaf_nodes: Option<usize>,
    pub max_depth: Option<usize>,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    pub seed: u64,
}

impl ForestParams {
    /// The untuned classifier used by the non-tuned treatments:
    /// 100 bagged trees, sqrt feature subsets, no structural limits.
    pub fn untuned(seed: u64) -> Self {
        ForestParams {
            n_estimators: 100,
            min_samples_leaf: 1,
            min_samples_split: 2,
            max_leaf_nodes: None,
            max_depth: None,
            max_features: MaxFeatures::Auto,
            bootstrap: true,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_estimators == 0 {
            return Err(ForestError::InvalidParams("n_estimators must be at least 1"));
        }
        if self.min_samples_leaf == 0 {
            return Err(ForestError::InvalidParams("min_samples_leaf must be at least 1"));
        }
        if self.min_samples_split < 2 {
            return Err(ForestError::InvalidParams("min_samples_split must be at least 2"));
        }
        if self.max_leaf_nodes.is_some_and(|v| v < 2) {
            return Err(ForestError::InvalidParams("max_leaf_nodes must be at least 2"));
        }
        if self.max_depth == Some(0) {
            return Err(ForestError::InvalidParams("max_depth must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Internal { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { counts: [u32; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<Node>,
}

/// Structural summary of one fitted tree, for inspection and
/// constraint auditing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeStats {
    /// Longest root-to-leaf path, in edges. A lone root leaf has depth 0.
    pub depth: usize,
    pub leaves: usize,
    /// Training rows (bootstrap multiplicity included) in the smallest leaf.
    pub smallest_leaf: u32,
    /// Training rows reaching the smallest split node; `None` for a
    /// single-leaf tree.
    pub smallest_split: Option<u32>,
}

impl Tree {
    /// Class frequencies of the leaf a row routes to.
    fn leaf_probs(&self, row: &[f64]) -> [f64; 2] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Internal { feature, threshold, left, right } => {
                    at = if row[*feature] <= *threshold { *left } else { *right };
                }
                Node::Leaf { counts } => {
                    let total = f64::from(counts[0] + counts[1]);
                    return [f64::from(counts[0]) / total, f64::from(counts[1]) / total];
                }
            }
        }
    }

    fn stats(&self) -> TreeStats {
        let mut stats =
            TreeStats { depth: 0, leaves: 0, smallest_leaf: u32::MAX, smallest_split: None };
        self.visit(0, 0, &mut stats);
        stats
    }

    /// Post-order walk; returns the subtree's training-row count.
    fn visit(&self, at: usize, depth: usize, stats: &mut TreeStats) -> u32 {
        match &self.nodes[at] {
            Node::Leaf { counts } => {
                let size = counts[0] + counts[1];
                stats.depth = stats.depth.max(depth);
                stats.leaves += 1;
                stats.smallest_leaf = stats.smallest_leaf.min(size);
                size
            }
            Node::Internal { left, right, .. } => {
                let size =
                    self.visit(*left, depth + 1, stats) + self.visit(*right, depth + 1, stats);
                stats.smallest_split = Some(stats.smallest_split.map_or(size, |s| s.min(size)));
                size
            }
        }
    }
}

const MODEL_FORMAT: &str = "dapper-forest";
const MODEL_VERSION: u32 = 1;

/// A fitted forest: flattened trees, the parameters that built it, and
/// the training feature count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    trees: Vec<Tree>,
    params: ForestParams,
    n_features: usize,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    model: ForestModel,
}

impl ForestModel {
    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Per-tree structural summaries, in fitting order.
    pub fn tree_stats(&self) -> Vec<TreeStats> {
        self.trees.iter().map(Tree::stats).collect()
    }

    /// Mean leaf class frequencies over all trees; each row sums to 1.
    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.n_features {
            return Err(ForestError::DimensionMismatch {
                expected: self.n_features,
                got: x.ncols(),
            });
        }
        let m = x.nrows();
        let mut out = Array2::zeros((m, 2));
        let scale = 1.0 / self.trees.len() as f64;
        let mut buffer = vec![0.0; x.ncols()];
        for (i, row) in x.rows().into_iter().enumerate() {
            for (b, &v) in buffer.iter_mut().zip(row.iter()) {
                *b = v;
            }
            let mut acc = [0.0, 0.0];
            for tree in &self.trees {
                let p = tree.leaf_probs(&buffer);
                acc[0] += p[0];
                acc[1] += p[1];
            }
            out[(i, 0)] = acc[0] * scale;
            out[(i, 1)] = acc[1] * scale;
        }
        Ok(out)
    }

    /// Argmax of [`ForestModel::predict_proba`]; ties go to class 0.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<i8>> {
        let probs = self.predict_proba(x)?;
        Ok(probs.rows().into_iter().map(|r| i8::from(r[1] > r[0])).collect())
    }

    /// Writes the model as versioned JSON.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            model: self.clone(),
        };
        let mut writer = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
        serde_json::to_writer(&mut writer, &file)?;
        use std::io::Write;
        writer.flush()?;
        Ok(())
    }

    /// Reads a model written by [`ForestModel::save`], checking the
    /// format tag and version.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let reader = std::io::BufReader::new(std::fs::File::open(path.as_ref())?);
        let file: ModelFile = serde_json::from_reader(reader)?;
        if file.format != MODEL_FORMAT {
            return Err(ForestError::BadFormat { found: file.format });
        }
        if file.version != MODEL_VERSION {
            return Err(ForestError::UnsupportedVersion {
                found: file.version,
                supported: MODEL_VERSION,
            });
        }
        Ok(file.model)
    }
}

/// Free-function aliases for the model methods.
pub fn predict_proba(model: &ForestModel, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    model.predict_proba(x)
}

pub fn predict(model: &ForestModel, x: ArrayView2<'_, f64>) -> Result<Vec<i8>> {
    model.predict(x)
}

/// Fits `n_estimators` trees, each on a bootstrap resample of size n
/// when `bootstrap` is set (the full set otherwise). Deterministic for
/// a given seed; tree t draws from a stream derived from `(seed, t)`.
pub fn fit_forest(ds: &Dataset, p: &ForestParams) -> Result<ForestModel> {
    p.validate()?;
    if ds.n_rows() == 0 {
        return Err(ForestError::EmptyDataset);
    }
    if ds.n_features() == 0 {
        return Err(ForestError::ZeroFeatures);
    }
    if !ds.is_fully_labeled() {
        return Err(ForestError::UnlabeledPresent);
    }
    let n = ds.n_rows();
    let subset_size = p.max_features.subset_size(ds.n_features());
    let trees = (0..p.n_estimators)
        .map(|t| {
            let mut rng = rng::stream_indexed(p.seed, "tree", t as u64);
            let sample: Vec<u32> = if p.bootstrap {
                (0..n).map(|_| rng.random_range(0..n) as u32).collect()
            } else {
                (0..n as u32).collect()
            };
            build_tree(ds, sample, p, subset_size, &mut rng)
        })
        .collect();
    Ok(ForestModel { trees, params: *p, n_features: ds.n_features() })
}

#[derive(Debug)]
struct Candidate {
    node_id: usize,
    delta: f64,
    feature: usize,
    threshold: f64,
    rows: Vec<u32>,
    depth: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.delta == other.delta && self.node_id == other.node_id
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    // Max-heap: larger decrease first, then the earlier-created node.
    fn cmp(&self, other: &Self) -> Ordering {
        self.delta.partial_cmp(&other.delta).unwrap().then_with(|| other.node_id.cmp(&self.node_id))
    }
}

fn gini(counts: [u32; 2]) -> f64 {
    let total = f64::from(counts[0] + counts[1]);
    let p0 = f64::from(counts[0]) / total;
    let p1 = f64::from(counts[1]) / total;
    1.0 - p0 * p0 - p1 * p1
}

fn count_labels(ds: &Dataset, rows: &[u32]) -> [u32; 2] {
    let mut counts = [0u32; 2];
    for &r in rows {
        counts[ds.labels()[r as usize] as usize] += 1;
    }
    counts
}

/// Partial Fisher-Yates draw of `size` distinct feature indices,
/// returned ascending. Hand-rolled so the stream layout never depends
/// on rand's internal sampling strategy.
fn draw_features(rng: &mut impl Rng, d: usize, size: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..d).collect();
    for i in 0..size {
        let j = rng.random_range(i..d);
        idx.swap(i, j);
    }
    idx.truncate(size);
    idx.sort_unstable();
    idx
}

struct BestSplit {
    delta: f64,
    feature: usize,
    threshold: f64,
}

/// Best split over the feature subset by weighted Gini decrease
/// `n*g - nL*gL - nR*gR`; ties resolve to the lower feature index,
/// then the lower threshold (guaranteed by strict-improvement scans in
/// ascending order). Returns None when no split leaves both children
/// with at least `min_samples_leaf` rows.
fn best_split(
    ds: &Dataset,
    rows: &[u32],
    counts: [u32; 2],
    features: &[usize],
    min_samples_leaf: usize,
) -> Option<BestSplit> {
    let n = rows.len();
    let parent_score = n as f64 * gini(counts);
    let min_leaf = min_samples_leaf as u32;
    let mut best: Option<BestSplit> = None;
    let mut sorted: Vec<(f64, u8)> = Vec::with_capacity(n);
    for &feature in features {
        sorted.clear();
        for &r in rows {
            sorted.push((ds.features()[(r as usize, feature)], ds.labels()[r as usize] as u8));
        }
        sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

        let mut left = [0u32; 2];
        for i in 0..(n - 1) {
            left[sorted[i].1 as usize] += 1;
            let (a, b) = (sorted[i].0, sorted[i + 1].0);
            if a == b {
                continue;
            }
            let n_left = (i + 1) as u32;
            let n_right = (n as u32) - n_left;
            if n_left < min_leaf || n_right < min_leaf {
                continue;
            }
            let right = [counts[0] - left[0], counts[1] - left[1]];
            let delta =
                parent_score - f64::from(n_left) * gini(left) - f64::from(n_right) * gini(right);
            if best.as_ref().is_none_or(|b| delta > b.delta) {
                // Midpoint, nudged back onto the left value if rounding
                // lands on the right one, so `x <= threshold` routes
                // exactly the prefix left.
                let mut threshold = 0.5 * (a + b);
                if threshold >= b {
                    threshold = a;
                }
                best = Some(BestSplit { delta, feature, threshold });
            }
        }
    }
    best
}

fn build_tree(
    ds: &Dataset,
    root_rows: Vec<u32>,
    p: &ForestParams,
    subset_size: usize,
    rng: &mut impl Rng,
) -> Tree {
    let max_depth = p.max_depth.unwrap_or(usize::MAX);
    let max_leaves = p.max_leaf_nodes.unwrap_or(usize::MAX);
    let mut nodes: Vec<Node> = Vec::new();
    let mut queue: BinaryHeap<Candidate> = BinaryHeap::new();

    let create_node = |rows: Vec<u32>,
                       depth: usize,
                       nodes: &mut Vec<Node>,
                       queue: &mut BinaryHeap<Candidate>,
                       rng: &mut dyn rand::RngCore| {
        let counts = count_labels(ds, &rows);
        let node_id = nodes.len();
        nodes.push(Node::Leaf { counts });
        let impure = counts[0] > 0 && counts[1] > 0;
        if impure && rows.len() >= p.min_samples_split && depth < max_depth {
            let features = draw_features(&mut &mut *rng, ds.n_features(), subset_size);
            if let Some(split) = best_split(ds, &rows, counts, &features, p.min_samples_leaf) {
                queue.push(Candidate {
                    node_id,
                    delta: split.delta,
                    feature: split.feature,
                    threshold: split.threshold,
                    rows,
                    depth,
                });
            }
        }
        node_id
    };

    create_node(root_rows, 0, &mut nodes, &mut queue, rng);
    let mut leaves = 1;
    while leaves < max_leaves {
        let Some(cand) = queue.pop() else { break };
        let (mut left_rows, mut right_rows) = (Vec::new(), Vec::new());
        for &r in &cand.rows {
            if ds.features()[(r as usize, cand.feature)] <= cand.threshold {
                left_rows.push(r);
            } else {
                right_rows.push(r);
            }
        }
        let left = create_node(left_rows, cand.depth + 1, &mut nodes, &mut queue, rng);
        let right = create_node(right_rows, cand.depth + 1, &mut nodes, &mut queue, rng);
        nodes[cand.node_id] =
            Node::Internal { feature: cand.feature, threshold: cand.threshold, left, right };
        leaves += 1;
    }
    Tree { nodes }
}
