//! Dapper trains binary security classifiers from mostly-unlabeled data.
//!
//! The pipeline has three stages, tuned jointly by a sequential
//! model-based optimizer:
//!
//! 1. **Pseudo-labeling** ([`graph_ssl`]): a similarity graph over the
//!    training rows (rbf or k-nearest-neighbor affinity) propagates the
//!    few known labels to the unlabeled rows, by label propagation
//!    (hard clamping, row-stochastic transition matrix) or label
//!    spreading (soft clamping, symmetrically normalized operator).
//! 2. **Adaptive rebalancing** ([`smote`]): when the pseudo-labeled
//!    training set is still imbalanced below a threshold, synthetic
//!    minority rows are interpolated between Minkowski-distance
//!    neighbors.
//! 3. **Classification** ([`forest`]): a random forest of Gini-split
//!    decision trees with class-probability output.
//!
//! The [`optimizer`] module drives the search over the joint
//! hyperparameter space with a tree-structured Parzen estimator; the
//! [`pipeline`] module wires the stages into the experiment treatments
//! (default, optimized-SSL-only, full Dapper) and the label-rate
//! sensitivity grid; [`metrics`] scores everything on the 0-100 scale
//! (recall, false positive rate, g-measure, precision, f-measure,
//! AUC-ROC); [`report`] renders result tables.
//!
//! Every operation is deterministic given its seed: experiment cells
//! re-run with the same configuration produce identical results.
//!
//! ```
//! use dapper::data::{Dataset, SplitSpec, SynthSpec};
//! use dapper::pipeline::{ExperimentConfig, Learner, Treatment};
//!
//! let spec = SynthSpec { rows: 400, features: 4, minority_frac: 0.25, separation: 6.0, seed: 9 };
//! let cfg = ExperimentConfig {
//!     split: SplitSpec::default(),
//!     label_rate: 0.5,
//!     learner: Learner::Spreading,
//!     treatment: Treatment::Dapper,
//!     imbalance_threshold: 0.30,
//!     n_trials: 5,
//!     seed: 9,
//! };
//! let outcome = dapper::pipeline::run_treatment(&Dataset::synthetic(&spec)?, &cfg)?;
//! assert!(outcome.row.metrics.g_measure.unwrap() > 50.0);
//! # Ok::<(), dapper::pipeline::PipelineError>(())
//! ```

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod data;
pub mod forest;
pub mod graph_ssl;
pub mod metrics;
pub mod optimizer;
pub mod pipeline;
pub mod report;
pub mod smote;

mod rng;

#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }

    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(datasets, "../../../book/src/datasets.md");
    chapter!(graph_ssl, "../../../book/src/graph-ssl.md");
    chapter!(smote, "../../../book/src/smote.md");
    chapter!(random_forest, "../../../book/src/random-forest.md");
    chapter!(metrics, "../../../book/src/metrics.md");
    chapter!(optimizer, "../../../book/src/optimizer.md");
    chapter!(pipeline, "../../../book/src/pipeline.md");
}
