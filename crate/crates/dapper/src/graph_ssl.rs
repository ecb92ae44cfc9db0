//! Similarity-graph construction and the two transductive
//! pseudo-labeling algorithms: label propagation and label spreading.
//!
//! Both learners build a graph over all training rows (labeled and
//! unlabeled), then iterate a diffusion operator until the score matrix
//! stabilizes:
//!
//! * **Label propagation** uses the row-stochastic transition matrix
//!   `T_ij = W_ij / sum_k W_ik` and hard-clamps labeled rows back to
//!   their one-hot truth after every sweep. It converges to the
//!   harmonic function `F_U = (I - T_UU)^-1 T_UL Y_L`.
//! * **Label spreading** uses the symmetrically normalized operator
//!   `S = D^-1/2 W D^-1/2` on the symmetrized graph and soft-clamps via
//!   `F <- alpha S F + (1 - alpha) Y`, converging to
//!   `F* = (1 - alpha)(I - alpha S)^-1 Y`.
//!
//! Scores in the returned [`LabelDistribution`] are the raw converged
//! values (so they can be checked against the closed forms);
//! [`LabelDistribution::probabilities`] row-normalizes them. Rows the
//! diffusion never reaches keep exactly-zero scores and fall back to
//! the majority class of the labeled subset.

use crate::data::{Dataset, UNLABELED};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GraphSslError {
    #[error("gamma must be a finite positive number")]
    InvalidGamma,
    #[error("n_neighbors must be at least 1")]
    InvalidNeighbors,
    #[error("need at least 2 rows to build a graph")]
    TooFewRows,
    #[error("max_iter must be at least 1")]
    InvalidMaxIter,
    #[error("tolerance must be a finite positive number")]
    InvalidTolerance,
    #[error("alpha must lie strictly between 0 and 1")]
    InvalidAlpha,
    #[error("affinity matrix must be square and nonnegative")]
    MalformedAffinity,
    #[error("node {node} is isolated (zero affinity row sum)")]
    IsolatedNode { node: usize },
    #[error("labeled rows cover only one class")]
    SingleClassLabels,
    #[error("nothing to do: no unlabeled rows")]
    NoUnlabeledRows,
}

pub type Result<T> = std::result::Result<T, GraphSslError>;

/// Graph kernel choice. Exactly the parameters of the active kernel
/// exist. Optimizer-tuned ranges: gamma in [10, 30], n_neighbors in
/// [5, 15].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kernel", rename_all = "snake_case")]
pub enum KernelParams {
    /// Dense Gaussian affinity `W_ij = exp(-gamma * |x_i - x_j|^2)`.
    Rbf { gamma: f64 },
    /// Binary directed affinity: 1 for the `n_neighbors`
    /// Euclidean-nearest rows (self excluded), 0 elsewhere.
    Knn { n_neighbors: usize },
}

/// Parameters shared by both pseudo-labelers. `alpha` is the clamping
/// factor and only affects label spreading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SSLParams {
    pub kernel: KernelParams,
    pub max_iter: usize,
    pub alpha: f64,
    pub tolerance: f64,
}

impl SSLParams {
    /// Untuned label-propagation defaults: rbf, gamma 20, up to 1000
    /// sweeps.
    pub fn propagation_default() -> Self {
        SSLParams {
            kernel: KernelParams::Rbf { gamma: 20.0 },
            max_iter: 1000,
            alpha: 0.2,
            tolerance: 1e-3,
        }
    }

    /// Untuned label-spreading defaults: rbf, gamma 20, alpha 0.2, up
    /// to 30 sweeps.
    pub fn spreading_default() -> Self {
        SSLParams {
            kernel: KernelParams::Rbf { gamma: 20.0 },
            max_iter: 30,
            alpha: 0.2,
            tolerance: 1e-3,
        }
    }

    fn validate(&self, spreading: bool) -> Result<()> {
        match self.kernel {
            KernelParams::Rbf { gamma } => {
                if !(gamma.is_finite() && gamma > 0.0) {
                    return Err(GraphSslError::InvalidGamma);
                }
            }
            KernelParams::Knn { n_neighbors } => {
                if n_neighbors == 0 {
                    return Err(GraphSslError::InvalidNeighbors);
                }
            }
        }
        if self.max_iter == 0 {
            return Err(GraphSslError::InvalidMaxIter);
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(GraphSslError::InvalidTolerance);
        }
        if spreading && !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(GraphSslError::InvalidAlpha);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Weights {
    /// Symmetric nonnegative matrix with positive diagonal (rbf, or
    /// custom via [`AffinityGraph::from_dense`]).
    Dense(Array2<f64>),
    /// Directed binary rows: `rows[i]` lists the neighbor indices of
    /// node i, ascending.
    Neighbors(Vec<Vec<usize>>),
}

/// Pairwise similarity graph over the rows of a feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph {
    weights: Weights,
    kernel: Option<KernelParams>,
}

impl AffinityGraph {
    /// Wraps an explicit weight matrix (must be square, finite and
    /// nonnegative). Kernel provenance is recorded as absent.
    pub fn from_dense(w: Array2<f64>) -> Result<Self> {
        if w.nrows() != w.ncols() || w.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(GraphSslError::MalformedAffinity);
        }
        Ok(AffinityGraph { weights: Weights::Dense(w), kernel: None })
    }

    pub fn n(&self) -> usize {
        match &self.weights {
            Weights::Dense(w) => w.nrows(),
            Weights::Neighbors(rows) => rows.len(),
        }
    }

    /// Kernel that produced this graph, if any.
    pub fn kernel(&self) -> Option<&KernelParams> {
        self.kernel.as_ref()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        match &self.weights {
            Weights::Dense(w) => w[(i, j)],
            Weights::Neighbors(rows) => f64::from(rows[i].binary_search(&j).is_ok()),
        }
    }

    fn row_sums(&self) -> Vec<f64> {
        match &self.weights {
            Weights::Dense(w) => w.rows().into_iter().map(|r| r.sum()).collect(),
            Weights::Neighbors(rows) => rows.iter().map(|r| r.len() as f64).collect(),
        }
    }
}

/// Squared Euclidean distances between all row pairs.
pub fn pairwise_squared_distances(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let d2: f64 =
                x.row(i).iter().zip(x.row(j).iter()).map(|(&a, &b)| (a - b) * (a - b)).sum();
            out[(i, j)] = d2;
            out[(j, i)] = d2;
        }
    }
    out
}

/// Dense Gaussian affinity `W_ij = exp(-gamma * |x_i - x_j|^2)`:
/// symmetric, unit diagonal, strictly decreasing in squared distance.
pub fn rbf_affinity(x: ArrayView2<'_, f64>, gamma: f64) -> Result<AffinityGraph> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(GraphSslError::InvalidGamma);
    }
    rbf_affinity_from_squared_distances(&pairwise_squared_distances(x), gamma)
}

/// Same as [`rbf_affinity`] but reuses a precomputed squared-distance
/// matrix (they are kernel-independent and worth caching across tuning
/// trials).
pub fn rbf_affinity_from_squared_distances(
    sq_dists: &Array2<f64>,
    gamma: f64,
) -> Result<AffinityGraph> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(GraphSslError::InvalidGamma);
    }
    if sq_dists.nrows() != sq_dists.ncols() {
        return Err(GraphSslError::MalformedAffinity);
    }
    let w = sq_dists.mapv(|d2| (-gamma * d2).exp());
    Ok(AffinityGraph { weights: Weights::Dense(w), kernel: Some(KernelParams::Rbf { gamma }) })
}

/// Binary directed k-nearest-neighbor affinity. Each row marks its
/// `min(n_neighbors, n-1)` Euclidean-nearest rows (self excluded);
/// distance ties go to the lower index.
pub fn knn_affinity(x: ArrayView2<'_, f64>, n_neighbors: usize) -> Result<AffinityGraph> {
    if x.nrows() < 2 {
        return Err(GraphSslError::TooFewRows);
    }
    knn_affinity_from_squared_distances(&pairwise_squared_distances(x), n_neighbors)
}

/// Same as [`knn_affinity`] but reuses a precomputed squared-distance
/// matrix.
pub fn knn_affinity_from_squared_distances(
    sq_dists: &Array2<f64>,
    n_neighbors: usize,
) -> Result<AffinityGraph> {
    if n_neighbors == 0 {
        return Err(GraphSslError::InvalidNeighbors);
    }
    let n = sq_dists.nrows();
    if n < 2 || sq_dists.ncols() != n {
        return Err(GraphSslError::TooFewRows);
    }
    let k = n_neighbors.min(n - 1);
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let mut candidates: Vec<(f64, usize)> =
            (0..n).filter(|&j| j != i).map(|j| (sq_dists[(i, j)], j)).collect();
        candidates.select_nth_unstable_by(k - 1, |a, b| {
            a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1))
        });
        let mut neighbors: Vec<usize> = candidates[..k].iter().map(|&(_, j)| j).collect();
        neighbors.sort_unstable();
        rows.push(neighbors);
    }
    Ok(AffinityGraph {
        weights: Weights::Neighbors(rows),
        kernel: Some(KernelParams::Knn { n_neighbors }),
    })
}

/// Row-stochastic transition matrix `T_ij = W_ij / sum_k W_ik`.
pub fn transition_matrix(g: &AffinityGraph) -> Result<Array2<f64>> {
    let n = g.n();
    let sums = g.row_sums();
    if let Some(node) = sums.iter().position(|&s| s <= 0.0) {
        return Err(GraphSslError::IsolatedNode { node });
    }
    let mut t = Array2::zeros((n, n));
    match &g.weights {
        Weights::Dense(w) => {
            for i in 0..n {
                for j in 0..n {
                    t[(i, j)] = w[(i, j)] / sums[i];
                }
            }
        }
        Weights::Neighbors(rows) => {
            for (i, neighbors) in rows.iter().enumerate() {
                for &j in neighbors {
                    t[(i, j)] = 1.0 / sums[i];
                }
            }
        }
    }
    Ok(t)
}

/// Raw converged scores plus the labels assigned from them.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistribution {
    /// n x 2 matrix of class scores as left by the final sweep.
    pub scores: Array2<f64>,
    /// Per-row output labels (original for labeled rows, argmax or
    /// majority fallback for the rest).
    pub labels: Vec<i8>,
    pub converged: bool,
    pub iterations_used: usize,
    /// Majority class of the labeled subset, assigned to rows the
    /// diffusion never reached.
    pub fallback_label: i8,
}

impl LabelDistribution {
    /// Row-normalized scores; each row sums to 1. Zero-score rows
    /// become one-hot at the fallback label.
    pub fn probabilities(&self) -> Array2<f64> {
        let mut p = self.scores.clone();
        for mut row in p.rows_mut() {
            let sum = row[0] + row[1];
            if sum > 0.0 {
                row[0] /= sum;
                row[1] /= sum;
            } else {
                row[0] = f64::from(self.fallback_label == 0);
                row[1] = f64::from(self.fallback_label == 1);
            }
        }
        p
    }

    /// Debug export: `row,score_0,score_1,label` lines.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> std::result::Result<(), csv::Error> {
        let mut writer = csv::Writer::from_path(path.as_ref())?;
        writer.write_record(["row", "score_0", "score_1", "label"])?;
        for (i, row) in self.scores.rows().into_iter().enumerate() {
            writer.write_record([
                i.to_string(),
                row[0].to_string(),
                row[1].to_string(),
                self.labels[i].to_string(),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Diffusion operator in whichever representation is cheap to apply.
enum Operator {
    Dense(Array2<f64>),
    Sparse(Vec<Vec<(usize, f64)>>),
}

impl Operator {
    fn apply(&self, f: &Array2<f64>, out: &mut Array2<f64>) {
        match self {
            // Explicit loop instead of a gemm call: both score columns
            // must see identical operation order, so bitwise-symmetric
            // inputs (exact argmax ties) stay symmetric.
            Operator::Dense(m) => {
                let n = m.nrows();
                for i in 0..n {
                    let row = m.row(i);
                    let mut acc = [0.0, 0.0];
                    for (j, &w) in row.iter().enumerate() {
                        acc[0] += w * f[(j, 0)];
                        acc[1] += w * f[(j, 1)];
                    }
                    out[(i, 0)] = acc[0];
                    out[(i, 1)] = acc[1];
                }
            }
            Operator::Sparse(rows) => {
                out.fill(0.0);
                for (i, row) in rows.iter().enumerate() {
                    let mut acc = [0.0, 0.0];
                    for &(j, w) in row {
                        acc[0] += w * f[(j, 0)];
                        acc[1] += w * f[(j, 1)];
                    }
                    out[(i, 0)] = acc[0];
                    out[(i, 1)] = acc[1];
                }
            }
        }
    }
}

/// Row-stochastic operator without materializing a dense matrix for
/// sparse graphs.
fn propagation_operator(g: &AffinityGraph) -> Result<Operator> {
    let sums = g.row_sums();
    if let Some(node) = sums.iter().position(|&s| s <= 0.0) {
        return Err(GraphSslError::IsolatedNode { node });
    }
    Ok(match &g.weights {
        Weights::Dense(w) => {
            let mut t = w.clone();
            for (i, mut row) in t.rows_mut().into_iter().enumerate() {
                row.mapv_inplace(|v| v / sums[i]);
            }
            Operator::Dense(t)
        }
        Weights::Neighbors(rows) => Operator::Sparse(
            rows.iter()
                .map(|neighbors| {
                    let w = 1.0 / neighbors.len() as f64;
                    neighbors.iter().map(|&j| (j, w)).collect()
                })
                .collect(),
        ),
    })
}

/// Symmetrically normalized operator `D^-1/2 max(W, W^T) D^-1/2`.
fn spreading_operator(g: &AffinityGraph) -> Result<Operator> {
    match &g.weights {
        Weights::Dense(w) => {
            let n = w.nrows();
            let mut sym = w.clone();
            for i in 0..n {
                for j in 0..n {
                    sym[(i, j)] = w[(i, j)].max(w[(j, i)]);
                }
            }
            let degrees: Vec<f64> = sym.rows().into_iter().map(|r| r.sum()).collect();
            if let Some(node) = degrees.iter().position(|&d| d <= 0.0) {
                return Err(GraphSslError::IsolatedNode { node });
            }
            let inv_sqrt: Vec<f64> = degrees.iter().map(|&d| 1.0 / d.sqrt()).collect();
            for i in 0..n {
                for j in 0..n {
                    sym[(i, j)] *= inv_sqrt[i] * inv_sqrt[j];
                }
            }
            Ok(Operator::Dense(sym))
        }
        Weights::Neighbors(rows) => {
            let n = rows.len();
            let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
            for (i, neighbors) in rows.iter().enumerate() {
                for &j in neighbors {
                    adjacency[i].push(j);
                    if rows[j].binary_search(&i).is_err() {
                        adjacency[j].push(i);
                    }
                }
            }
            for row in &mut adjacency {
                row.sort_unstable();
            }
            let degrees: Vec<f64> = adjacency.iter().map(|r| r.len() as f64).collect();
            if let Some(node) = degrees.iter().position(|&d| d <= 0.0) {
                return Err(GraphSslError::IsolatedNode { node });
            }
            Ok(Operator::Sparse(
                adjacency
                    .iter()
                    .enumerate()
                    .map(|(i, neighbors)| {
                        neighbors
                            .iter()
                            .map(|&j| (j, 1.0 / (degrees[i] * degrees[j]).sqrt()))
                            .collect()
                    })
                    .collect(),
            ))
        }
    }
}

/// Builds the graph a kernel choice describes.
pub fn build_graph(x: ArrayView2<'_, f64>, kernel: &KernelParams) -> Result<AffinityGraph> {
    match *kernel {
        KernelParams::Rbf { gamma } => rbf_affinity(x, gamma),
        KernelParams::Knn { n_neighbors } => knn_affinity(x, n_neighbors),
    }
}

/// Same as [`build_graph`] from a cached squared-distance matrix.
pub fn build_graph_from_squared_distances(
    sq_dists: &Array2<f64>,
    kernel: &KernelParams,
) -> Result<AffinityGraph> {
    match *kernel {
        KernelParams::Rbf { gamma } => rbf_affinity_from_squared_distances(sq_dists, gamma),
        KernelParams::Knn { n_neighbors } => {
            knn_affinity_from_squared_distances(sq_dists, n_neighbors)
        }
    }
}

struct Prepared {
    labeled: Vec<usize>,
    one_hot: Array2<f64>,
    fallback_label: i8,
}

fn prepare(ds: &Dataset) -> Result<Prepared> {
    let labeled = ds.labeled_indices();
    if labeled.len() == ds.n_rows() {
        return Err(GraphSslError::NoUnlabeledRows);
    }
    let counts = ds.class_counts();
    if counts[0] == 0 || counts[1] == 0 {
        return Err(GraphSslError::SingleClassLabels);
    }
    let n = ds.n_rows();
    let mut one_hot = Array2::zeros((n, 2));
    for &i in &labeled {
        one_hot[(i, ds.labels()[i] as usize)] = 1.0;
    }
    let fallback_label = i8::from(counts[1] > counts[0]);
    Ok(Prepared { labeled, one_hot, fallback_label })
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(&x, &y)| (x - y).abs()).fold(0.0, f64::max)
}

fn finalize(
    ds: &Dataset,
    scores: Array2<f64>,
    converged: bool,
    iterations_used: usize,
    prep: &Prepared,
) -> (Dataset, LabelDistribution) {
    let n = ds.n_rows();
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let original = ds.labels()[i];
        if original != UNLABELED {
            labels.push(original);
        } else if scores[(i, 0)] == 0.0 && scores[(i, 1)] == 0.0 {
            labels.push(prep.fallback_label);
        } else {
            labels.push(i8::from(scores[(i, 1)] > scores[(i, 0)]));
        }
    }
    let out = ds.with_labels(labels.clone()).expect("valid labels");
    let dist = LabelDistribution {
        scores,
        labels,
        converged,
        iterations_used,
        fallback_label: prep.fallback_label,
    };
    (out, dist)
}

/// Label propagation with hard clamping. Unlabeled rows start at zero;
/// every sweep applies the transition operator, then resets labeled
/// rows to their one-hot truth. Output labels keep the originals on
/// labeled rows and take the per-row argmax elsewhere (ties to class
/// 0, untouched rows to the labeled majority).
pub fn label_propagation(ds: &Dataset, p: &SSLParams) -> Result<(Dataset, LabelDistribution)> {
    p.validate(false)?;
    let prep = prepare(ds)?;
    let graph = build_graph(ds.features().view(), &p.kernel)?;
    propagate_on(ds, p, &graph, prep, false)
}

/// Label spreading with soft clamping on the symmetrized graph:
/// `F <- alpha S F + (1 - alpha) Y`. Labeled rows keep their original
/// labels in the output dataset; clamping only shifts scores.
pub fn label_spreading(ds: &Dataset, p: &SSLParams) -> Result<(Dataset, LabelDistribution)> {
    p.validate(true)?;
    let prep = prepare(ds)?;
    let graph = build_graph(ds.features().view(), &p.kernel)?;
    propagate_on(ds, p, &graph, prep, true)
}

/// Runs either learner on a pre-built graph (lets callers reuse one
/// graph or distance cache across tuning trials).
pub fn pseudo_label_on_graph(
    ds: &Dataset,
    p: &SSLParams,
    graph: &AffinityGraph,
    spreading: bool,
) -> Result<(Dataset, LabelDistribution)> {
    p.validate(spreading)?;
    let prep = prepare(ds)?;
    propagate_on(ds, p, graph, prep, spreading)
}

fn propagate_on(
    ds: &Dataset,
    p: &SSLParams,
    graph: &AffinityGraph,
    prep: Prepared,
    spreading: bool,
) -> Result<(Dataset, LabelDistribution)> {
    if graph.n() != ds.n_rows() {
        return Err(GraphSslError::MalformedAffinity);
    }
    let op = if spreading { spreading_operator(graph)? } else { propagation_operator(graph)? };

    let mut f = prep.one_hot.clone();
    let mut next = Array2::zeros(f.raw_dim());
    let mut converged = false;
    let mut iterations_used = 0;
    for it in 1..=p.max_iter {
        op.apply(&f, &mut next);
        if spreading {
            next *= p.alpha;
            next.scaled_add(1.0 - p.alpha, &prep.one_hot);
        } else {
            for &i in &prep.labeled {
                next[(i, 0)] = prep.one_hot[(i, 0)];
                next[(i, 1)] = prep.one_hot[(i, 1)];
            }
        }
        let delta = max_abs_diff(&f, &next);
        std::mem::swap(&mut f, &mut next);
        iterations_used = it;
        if delta < p.tolerance {
            converged = true;
            break;
        }
    }
    Ok(finalize(ds, f, converged, iterations_used, &prep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    /// Gaussian elimination with partial pivoting; the independent
    /// solver behind the closed-form oracle checks.
    fn solve(mut a: Array2<f64>, mut b: Array2<f64>) -> Array2<f64> {
        let n = a.nrows();
        let m = b.ncols();
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| a[(i, col)].abs().partial_cmp(&a[(j, col)].abs()).unwrap())
                .unwrap();
            if pivot != col {
                for c in 0..n {
                    let tmp = a[(col, c)];
                    a[(col, c)] = a[(pivot, c)];
                    a[(pivot, c)] = tmp;
                }
                for c in 0..m {
                    let tmp = b[(col, c)];
                    b[(col, c)] = b[(pivot, c)];
                    b[(pivot, c)] = tmp;
                }
            }
            let p = a[(col, col)];
            assert!(p.abs() > 1e-300, "singular system in oracle");
            for r in (col + 1)..n {
                let factor = a[(r, col)] / p;
                for c in col..n {
                    a[(r, c)] -= factor * a[(col, c)];
                }
                for c in 0..m {
                    b[(r, c)] -= factor * b[(col, c)];
                }
            }
        }
        let mut x = Array2::zeros((n, m));
        for r in (0..n).rev() {
            for c in 0..m {
                let mut acc = b[(r, c)];
                for k in (r + 1)..n {
                    acc -= a[(r, k)] * x[(k, c)];
                }
                x[(r, c)] = acc / a[(r, r)];
            }
        }
        x
    }

    /// Closed-form harmonic solution F_U = (I - T_UU)^-1 T_UL Y_L.
    fn harmonic_oracle(ds: &Dataset, t: &Array2<f64>) -> Array2<f64> {
        let labeled = ds.labeled_indices();
        let unlabeled = ds.unlabeled_indices();
        let (nu, nl) = (unlabeled.len(), labeled.len());
        let mut a = Array2::zeros((nu, nu));
        for (ri, &i) in unlabeled.iter().enumerate() {
            for (ci, &j) in unlabeled.iter().enumerate() {
                a[(ri, ci)] = f64::from(ri == ci) - t[(i, j)];
            }
        }
        let mut y = Array2::zeros((nl, 2));
        for (ri, &i) in labeled.iter().enumerate() {
            y[(ri, ds.labels()[i] as usize)] = 1.0;
        }
        let mut rhs = Array2::zeros((nu, 2));
        for (ri, &i) in unlabeled.iter().enumerate() {
            for (ci, &j) in labeled.iter().enumerate() {
                rhs[(ri, 0)] += t[(i, j)] * y[(ci, 0)];
                rhs[(ri, 1)] += t[(i, j)] * y[(ci, 1)];
            }
        }
        solve(a, rhs)
    }

    /// Closed-form spreading fixed point F* = (1-alpha)(I - alpha S)^-1 Y.
    fn spreading_oracle(ds: &Dataset, p: &SSLParams) -> Array2<f64> {
        let graph = build_graph(ds.features().view(), &p.kernel).unwrap();
        let s = match spreading_operator(&graph).unwrap() {
            Operator::Dense(m) => m,
            Operator::Sparse(rows) => {
                let n = rows.len();
                let mut m = Array2::zeros((n, n));
                for (i, row) in rows.iter().enumerate() {
                    for &(j, w) in row {
                        m[(i, j)] = w;
                    }
                }
                m
            }
        };
        let n = ds.n_rows();
        let mut a = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = f64::from(i == j) - p.alpha * s[(i, j)];
            }
        }
        let mut y = Array2::zeros((n, 2));
        for &i in &ds.labeled_indices() {
            y[(i, ds.labels()[i] as usize)] = 1.0;
        }
        solve(a, y * (1.0 - p.alpha))
    }

    fn line_dataset(xs: &[f64], labels: Vec<i8>) -> Dataset {
        let features =
            Array2::from_shape_fn((xs.len(), 2), |(i, j)| if j == 0 { xs[i] } else { 0.0 });
        Dataset::new(features, labels).unwrap()
    }

    fn tight(p: SSLParams) -> SSLParams {
        SSLParams { max_iter: 100_000, tolerance: 1e-12, ..p }
    }

    #[test]
    fn rbf_weights_match_closed_form() {
        let x = array![[0.0, 0.0], [0.1f64.sqrt(), 0.0], [0.0, 0.0]];
        let g = rbf_affinity(x.view(), 20.0).unwrap();
        assert_eq!(g.weight(0, 2), 1.0);
        assert_eq!(g.weight(0, 0), 1.0);
        assert!((g.weight(0, 1) - (-2.0f64).exp()).abs() < 1e-12);
        assert_eq!(g.weight(0, 1), g.weight(1, 0));

        let sharper = rbf_affinity(x.view(), 30.0).unwrap();
        assert!(sharper.weight(0, 1) < g.weight(0, 1));
        assert_eq!(sharper.weight(0, 2), 1.0);
    }

    #[test]
    fn knn_picks_nearest_with_low_index_ties() {
        let x = array![[0.0], [1.0], [2.5]];
        let g = knn_affinity(x.view(), 1).unwrap();
        assert_eq!(g.weight(1, 0), 1.0);
        assert_eq!(g.weight(1, 2), 0.0);
        assert_eq!(g.weight(1, 1), 0.0);

        // Middle point equidistant from both ends: lower index wins.
        let x = array![[0.0], [1.0], [2.0]];
        let g = knn_affinity(x.view(), 1).unwrap();
        assert_eq!(g.weight(1, 0), 1.0);
        assert_eq!(g.weight(1, 2), 0.0);

        // Saturation: k >= n-1 marks every off-diagonal pair.
        let g = knn_affinity(x.view(), 10).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(g.weight(i, j), f64::from(i != j));
            }
        }
    }

    #[test]
    fn transition_rows_are_stochastic() {
        let four_duplicates = Array2::zeros((4, 2));
        let g = rbf_affinity(four_duplicates.view(), 5.0).unwrap();
        let t = transition_matrix(&g).unwrap();
        assert!(t.iter().all(|&v| (v - 0.25).abs() < 1e-15));

        let g =
            AffinityGraph::from_dense(array![[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0],])
                .unwrap();
        let t = transition_matrix(&g).unwrap();
        assert_eq!(t.row(0).to_vec(), vec![0.5, 0.25, 0.25]);

        let isolated = AffinityGraph::from_dense(array![[1.0, 0.0], [0.0, 0.0]]).unwrap();
        assert_eq!(transition_matrix(&isolated), Err(GraphSslError::IsolatedNode { node: 1 }));
    }

    #[test]
    fn propagation_splits_a_symmetric_line_evenly() {
        let ds = line_dataset(&[0.0, 0.15, 0.3], vec![0, UNLABELED, 1]);
        let (out, dist) = label_propagation(&ds, &tight(SSLParams::propagation_default())).unwrap();
        assert!((dist.scores[(1, 0)] - 0.5).abs() < 1e-6);
        assert!((dist.scores[(1, 1)] - 0.5).abs() < 1e-6);
        assert_eq!(out.labels(), &[0, 0, 1], "argmax tie resolves to class 0");
        assert!(dist.converged);
    }

    #[test]
    fn propagation_matches_harmonic_solution_on_a_chain() {
        let ds =
            line_dataset(&[0.0, 0.15, 0.3, 0.45, 0.6], vec![0, UNLABELED, UNLABELED, UNLABELED, 1]);
        let p = tight(SSLParams::propagation_default());
        let (_, dist) = label_propagation(&ds, &p).unwrap();
        let graph = build_graph(ds.features().view(), &p.kernel).unwrap();
        let t = transition_matrix(&graph).unwrap();
        let oracle = harmonic_oracle(&ds, &t);
        for (ri, &i) in ds.unlabeled_indices().iter().enumerate() {
            for c in 0..2 {
                assert!(
                    (dist.scores[(i, c)] - oracle[(ri, c)]).abs() < 1e-3,
                    "row {i} class {c}: iterative {} vs closed form {}",
                    dist.scores[(i, c)],
                    oracle[(ri, c)]
                );
            }
        }
    }

    #[test]
    fn propagation_labels_duplicates_of_a_labeled_point() {
        let features = array![[0.0, 0.0], [1.0, 0.0], [0.0, 0.0], [0.0, 0.0],];
        let ds = Dataset::new(features, vec![0, 1, UNLABELED, UNLABELED]).unwrap();
        let (out, _) = label_propagation(&ds, &tight(SSLParams::propagation_default())).unwrap();
        assert_eq!(out.labels(), &[0, 1, 0, 0]);
    }

    #[test]
    fn spreading_matches_fixed_point_on_a_chain() {
        let ds =
            line_dataset(&[0.0, 0.15, 0.3, 0.45, 0.6], vec![0, UNLABELED, UNLABELED, UNLABELED, 1]);
        let p = tight(SSLParams::spreading_default());
        let (_, dist) = label_spreading(&ds, &p).unwrap();
        let oracle = spreading_oracle(&ds, &p);
        for i in 0..ds.n_rows() {
            for c in 0..2 {
                assert!((dist.scores[(i, c)] - oracle[(i, c)]).abs() < 1e-3, "row {i} class {c}");
            }
        }
    }

    #[test]
    fn spreading_balances_a_symmetric_line() {
        let ds = line_dataset(&[0.0, 0.15, 0.3], vec![0, UNLABELED, 1]);
        let (out, dist) = label_spreading(&ds, &tight(SSLParams::spreading_default())).unwrap();
        assert!((dist.scores[(1, 0)] - dist.scores[(1, 1)]).abs() < 1e-9);
        assert_eq!(out.labels()[1], 0);
    }

    #[test]
    fn spreading_with_tiny_alpha_is_dominated_by_truth() {
        let ds = line_dataset(&[0.0, 0.15, 0.3, 0.45], vec![0, 1, UNLABELED, UNLABELED]);
        let p = SSLParams { alpha: 0.01, ..tight(SSLParams::spreading_default()) };
        let (out, dist) = label_spreading(&ds, &p).unwrap();
        assert_eq!(&out.labels()[..2], &[0, 1]);
        assert!(dist.scores[(0, 0)] > 0.9);
        assert!(dist.scores[(1, 1)] > 0.9);
    }

    #[test]
    fn unreached_rows_fall_back_to_labeled_majority() {
        // Distances so large that every off-diagonal rbf weight
        // underflows to exactly zero: the graph is the identity and
        // no score ever moves.
        let features =
            array![[0.0, 0.0], [1000.0, 0.0], [0.0, 1000.0], [1000.0, 1000.0], [500.0, 500.0],];
        let ds = Dataset::new(features, vec![0, 0, 1, UNLABELED, UNLABELED]).unwrap();
        for spreading in [false, true] {
            let p = if spreading {
                SSLParams::spreading_default()
            } else {
                SSLParams::propagation_default()
            };
            let (out, dist) = if spreading {
                label_spreading(&ds, &p).unwrap()
            } else {
                label_propagation(&ds, &p).unwrap()
            };
            assert_eq!(out.labels(), &[0, 0, 1, 0, 0], "spreading={spreading}");
            assert_eq!(dist.fallback_label, 0);
            assert!(dist.converged);
            assert_eq!(dist.iterations_used, 1);
            let probs = dist.probabilities();
            for i in 0..ds.n_rows() {
                assert!((probs[(i, 0)] + probs[(i, 1)] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pseudo_labeling_never_raises_minority_share_under_collapse() {
        use crate::data::{LabelRate, SynthSpec};
        let spec =
            SynthSpec { rows: 400, features: 6, minority_frac: 0.1, separation: 4.0, seed: 3 };
        let base = Dataset::synthetic(&spec).unwrap();
        let scaled = Dataset::new(base.features() * 50.0, base.labels().to_vec()).unwrap();
        let masked = scaled.mask_labels(&LabelRate { rate: 0.2, seed: 3 }).unwrap();
        let labeled_fraction = {
            let (labeled, _) = masked.partition_labeled();
            labeled.minority_fraction().unwrap()
        };
        for spreading in [false, true] {
            let p = if spreading {
                SSLParams::spreading_default()
            } else {
                SSLParams::propagation_default()
            };
            let (out, _) = if spreading {
                label_spreading(&masked, &p).unwrap()
            } else {
                label_propagation(&masked, &p).unwrap()
            };
            assert!(out.is_fully_labeled());
            assert!(out.minority_fraction().unwrap() <= labeled_fraction, "spreading={spreading}");
        }
    }

    #[test]
    fn learners_reject_degenerate_inputs() {
        let p = SSLParams::propagation_default();
        let ds = line_dataset(&[0.0, 0.15, 0.3], vec![0, 0, 1]);
        assert_eq!(label_propagation(&ds, &p), Err(GraphSslError::NoUnlabeledRows));
        let ds = line_dataset(&[0.0, 0.15, 0.3], vec![0, 0, UNLABELED]);
        assert_eq!(label_propagation(&ds, &p), Err(GraphSslError::SingleClassLabels));

        let ds = line_dataset(&[0.0, 0.15, 0.3], vec![0, UNLABELED, 1]);
        let bad_gamma = SSLParams { kernel: KernelParams::Rbf { gamma: 0.0 }, ..p };
        assert_eq!(label_propagation(&ds, &bad_gamma), Err(GraphSslError::InvalidGamma));
        let bad_alpha = SSLParams { alpha: 1.0, ..SSLParams::spreading_default() };
        assert_eq!(label_spreading(&ds, &bad_alpha), Err(GraphSslError::InvalidAlpha));
        let bad_iter = SSLParams { max_iter: 0, ..p };
        assert_eq!(label_propagation(&ds, &bad_iter), Err(GraphSslError::InvalidMaxIter));
    }

    #[test]
    fn sparse_knn_propagation_matches_dense_reference() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let features = Array2::from_shape_fn((24, 3), |_| rng.random_range(-1.0..1.0));
        let mut labels = vec![UNLABELED; 24];
        labels[0] = 0;
        labels[1] = 1;
        labels[2] = 0;
        let ds = Dataset::new(features, labels).unwrap();
        let p = SSLParams {
            kernel: KernelParams::Knn { n_neighbors: 4 },
            ..tight(SSLParams::propagation_default())
        };
        let (_, dist) = label_propagation(&ds, &p).unwrap();

        // Dense re-implementation of the same sweep.
        let graph = build_graph(ds.features().view(), &p.kernel).unwrap();
        let t = transition_matrix(&graph).unwrap();
        let mut f = Array2::zeros((24, 2));
        for &i in &ds.labeled_indices() {
            f[(i, ds.labels()[i] as usize)] = 1.0;
        }
        let reference = loop {
            let mut next = t.dot(&f);
            for &i in &ds.labeled_indices() {
                next[(i, 0)] = f64::from(ds.labels()[i] == 0);
                next[(i, 1)] = f64::from(ds.labels()[i] == 1);
            }
            let delta = max_abs_diff(&f, &next);
            f = next;
            if delta < 1e-12 {
                break f;
            }
        };
        assert!(max_abs_diff(&dist.scores, &reference) < 1e-9);
    }

    #[derive(Debug, Clone)]
    struct RandomInstance {
        ds: Dataset,
        seed: u64,
    }

    fn clustered_instance() -> impl Strategy<Value = RandomInstance> {
        (4usize..14, 4usize..14, 0u64..10_000).prop_map(|(n0, n1, seed)| {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = n0 + n1;
            let mut features = Array2::zeros((n, 2));
            let mut labels = vec![UNLABELED; n];
            for i in 0..n {
                let cluster = usize::from(i >= n0);
                features[(i, 0)] = cluster as f64 * 2.0 + rng.random_range(-0.08..0.08);
                features[(i, 1)] = rng.random_range(-0.08..0.08);
            }
            // One labeled seed per cluster, plus one extra when available.
            labels[0] = 0;
            labels[n0] = 1;
            if n0 > 1 {
                labels[1] = 0;
            }
            if n1 > 1 {
                labels[n0 + 1] = 1;
            }
            RandomInstance { ds: Dataset::new(features, labels).unwrap(), seed }
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn transition_row_sums_are_one(inst in clustered_instance(), knn in prop::bool::ANY) {
            let kernel = if knn {
                KernelParams::Knn { n_neighbors: 3 }
            } else {
                KernelParams::Rbf { gamma: 15.0 }
            };
            let g = build_graph(inst.ds.features().view(), &kernel).unwrap();
            let t = transition_matrix(&g).unwrap();
            for row in t.rows() {
                prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn iterative_learners_match_closed_forms(inst in clustered_instance()) {
            let p = tight(SSLParams {
                kernel: KernelParams::Rbf { gamma: 15.0 },
                ..SSLParams::propagation_default()
            });
            let (out, dist) = label_propagation(&inst.ds, &p).unwrap();
            prop_assert!(out.is_fully_labeled());
            prop_assert!(dist.scores.iter().all(|v| v.is_finite()));
            let graph = build_graph(inst.ds.features().view(), &p.kernel).unwrap();
            let t = transition_matrix(&graph).unwrap();
            let oracle = harmonic_oracle(&inst.ds, &t);
            for (ri, &i) in inst.ds.unlabeled_indices().iter().enumerate() {
                for c in 0..2 {
                    prop_assert!((dist.scores[(i, c)] - oracle[(ri, c)]).abs() < 1e-3);
                }
            }

            let ps = tight(SSLParams {
                kernel: KernelParams::Rbf { gamma: 15.0 },
                alpha: 0.6,
                ..SSLParams::spreading_default()
            });
            let (_, dist) = label_spreading(&inst.ds, &ps).unwrap();
            let oracle = spreading_oracle(&inst.ds, &ps);
            for i in 0..inst.ds.n_rows() {
                for c in 0..2 {
                    prop_assert!((dist.scores[(i, c)] - oracle[(i, c)]).abs() < 1e-3);
                }
            }
        }

        #[test]
        fn learners_are_row_permutation_equivariant(inst in clustered_instance(), spreading in prop::bool::ANY) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let ds = &inst.ds;
            let mut order: Vec<usize> = (0..ds.n_rows()).collect();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(inst.seed ^ 0xabcd);
            order.shuffle(&mut rng);
            let permuted = ds.subset(&order).unwrap();

            let p = SSLParams {
                kernel: KernelParams::Rbf { gamma: 15.0 },
                ..if spreading { tight(SSLParams::spreading_default()) } else { tight(SSLParams::propagation_default()) }
            };
            let run = |d: &Dataset| {
                if spreading { label_spreading(d, &p) } else { label_propagation(d, &p) }
            };
            let (out_base, _) = run(ds).unwrap();
            let (out_perm, _) = run(&permuted).unwrap();
            for (new_pos, &old_pos) in order.iter().enumerate() {
                prop_assert_eq!(out_perm.labels()[new_pos], out_base.labels()[old_pos]);
            }
        }

        #[test]
        fn labeled_rows_always_keep_their_labels(inst in clustered_instance(), spreading in prop::bool::ANY) {
            let p = if spreading { SSLParams::spreading_default() } else { SSLParams::propagation_default() };
            let run = |d: &Dataset| {
                if spreading { label_spreading(d, &p) } else { label_propagation(d, &p) }
            };
            let (out, dist) = run(&inst.ds).unwrap();
            prop_assert!(out.is_fully_labeled());
            for &i in &inst.ds.labeled_indices() {
                prop_assert_eq!(out.labels()[i], inst.ds.labels()[i]);
            }
            let probs = dist.probabilities();
            for i in 0..out.n_rows() {
                prop_assert!((probs[(i, 0)] + probs[(i, 1)] - 1.0).abs() < 1e-12);
            }
        }
    }
}
