//! Dataset ingestion, synthetic generation, stratified splitting, and
//! the label masking that simulates a semi-supervised setting.
//!
//! A [`Dataset`] is an n x d matrix of finite features plus one label
//! per row: `1` (positive / minority in the shipped experiments), `0`
//! (negative), or [`UNLABELED`] (`-1`). Splitting and masking are
//! stratified by largest-remainder allocation, so class ratios survive
//! within +-1 row per part, and every operation is deterministic for a
//! given seed.

use crate::rng;
use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Label value marking a row whose class is unknown.
pub const UNLABELED: i8 = -1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("label column {0:?} not found in header")]
    MissingLabelColumn(String),
    #[error("row {row}, column {column:?}: {value:?} is not a finite number")]
    BadFeature { row: usize, column: String, value: String },
    #[error("no data rows")]
    EmptyFile,
    #[error("labels length {labels} does not match row count {rows}")]
    LabelCount { labels: usize, rows: usize },
    #[error("label {value} at row {row}: labels must be 0, 1, or -1")]
    BadLabel { row: usize, value: i8 },
    #[error("non-finite feature at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("operation requires a fully labeled dataset")]
    UnlabeledPresent,
    #[error("no labeled rows")]
    NoLabeledRows,
    #[error("class {class} has {count} rows, need at least {needed}")]
    ClassTooSmall { class: i8, count: usize, needed: usize },
    #[error("split fractions must each lie in (0,1) and sum to 1")]
    BadSplitSpec,
    #[error("label rate must lie strictly between 0 and 1")]
    BadLabelRate,
    #[error("invalid synthetic spec: {0}")]
    BadSynthSpec(String),
    #[error("row index {index} out of range for {rows} rows")]
    RowOutOfRange { index: usize, rows: usize },
    #[error("feature dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Train/validation/test fractions for [`Dataset::stratified_split`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train_frac: 0.64, val_frac: 0.16, test_frac: 0.20, seed: 0 }
    }
}

impl SplitSpec {
    pub fn with_seed(seed: u64) -> Self {
        SplitSpec { seed, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        let fracs = [self.train_frac, self.val_frac, self.test_frac];
        let sum: f64 = fracs.iter().sum();
        if fracs.iter().any(|f| !(f > &0.0 && f < &1.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(DataError::BadSplitSpec);
        }
        Ok(())
    }
}

/// Fraction of training rows that keep their labels under
/// [`Dataset::mask_labels`]; the rest become [`UNLABELED`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelRate {
    pub rate: f64,
    pub seed: u64,
}

/// Parameters for [`Dataset::synthetic`]: two unit-variance Gaussian
/// clusters whose means sit `separation` apart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub rows: usize,
    pub features: usize,
    pub minority_frac: f64,
    pub separation: f64,
    pub seed: u64,
}

/// An immutable feature matrix with one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<i8>,
    class_names: Option<[String; 2]>,
}

impl Dataset {
    /// Builds a dataset, validating finiteness and the label domain.
    pub fn new(features: Array2<f64>, labels: Vec<i8>) -> Result<Self> {
        if labels.len() != features.nrows() {
            return Err(DataError::LabelCount { labels: labels.len(), rows: features.nrows() });
        }
        for ((row, col), &v) in features.indexed_iter() {
            if !v.is_finite() {
                return Err(DataError::NonFinite { row, col });
            }
        }
        for (row, &l) in labels.iter().enumerate() {
            if l != 0 && l != 1 && l != UNLABELED {
                return Err(DataError::BadLabel { row, value: l });
            }
        }
        Ok(Dataset { features, labels, class_names: None })
    }

    /// Attaches display names for classes 0 and 1 (used by reports).
    pub fn with_class_names(
        mut self,
        negative: impl Into<String>,
        positive: impl Into<String>,
    ) -> Self {
        self.class_names = Some([negative.into(), positive.into()]);
        self
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    pub fn class_names(&self) -> Option<&[String; 2]> {
        self.class_names.as_ref()
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.labels.iter().all(|&l| l != UNLABELED)
    }

    /// Row counts of classes 0 and 1 among labeled rows.
    pub fn class_counts(&self) -> [usize; 2] {
        let mut counts = [0, 0];
        for &l in &self.labels {
            if l == 0 {
                counts[0] += 1;
            } else if l == 1 {
                counts[1] += 1;
            }
        }
        counts
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] != UNLABELED).collect()
    }

    pub fn unlabeled_indices(&self) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == UNLABELED).collect()
    }

    /// Share of the smaller class among labeled rows:
    /// `min(count0, count1) / (count0 + count1)`.
    pub fn minority_fraction(&self) -> Result<f64> {
        let [c0, c1] = self.class_counts();
        if c0 + c1 == 0 {
            return Err(DataError::NoLabeledRows);
        }
        Ok(c0.min(c1) as f64 / (c0 + c1) as f64)
    }

    /// New dataset holding the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Result<Dataset> {
        for &i in rows {
            if i >= self.n_rows() {
                return Err(DataError::RowOutOfRange { index: i, rows: self.n_rows() });
            }
        }
        Ok(Dataset {
            features: self.features.select(Axis(0), rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
        })
    }

    /// Concatenates rows of `self` and `other` (same feature width).
    pub fn vstack(&self, other: &Dataset) -> Result<Dataset> {
        if self.n_features() != other.n_features() {
            return Err(DataError::DimensionMismatch {
                left: self.n_features(),
                right: other.n_features(),
            });
        }
        let features =
            ndarray::concatenate(Axis(0), &[self.features.view(), other.features.view()])
                .expect("widths checked");
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Ok(Dataset { features, labels, class_names: self.class_names.clone() })
    }

    /// Same rows with replacement labels (length and domain checked).
    pub fn with_labels(&self, labels: Vec<i8>) -> Result<Dataset> {
        let mut ds = Dataset::new(self.features.clone(), labels)?;
        ds.class_names = self.class_names.clone();
        Ok(ds)
    }

    /// Splits into (labeled rows, unlabeled rows), preserving row order
    /// within each side.
    pub fn partition_labeled(&self) -> (Dataset, Dataset) {
        let labeled = self.subset(&self.labeled_indices()).expect("indices in range");
        let unlabeled = self.subset(&self.unlabeled_indices()).expect("indices in range");
        (labeled, unlabeled)
    }

    /// Reads a CSV file with a header row. Every column except
    /// `label_column` must be numeric; a row's label becomes 1 when its
    /// label cell equals `positive_label` and 0 otherwise. Row numbers
    /// in errors are 1-based data rows (header excluded).
    pub fn load_csv(
        path: impl AsRef<Path>,
        label_column: &str,
        positive_label: &str,
    ) -> Result<Dataset> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path.as_ref())?;
        let headers = reader.headers()?.clone();
        let label_pos = headers
            .iter()
            .position(|h| h == label_column)
            .ok_or_else(|| DataError::MissingLabelColumn(label_column.to_string()))?;
        let feature_cols: Vec<usize> = (0..headers.len()).filter(|&i| i != label_pos).collect();

        let mut rows: Vec<f64> = Vec::new();
        let mut labels: Vec<i8> = Vec::new();
        let mut other_token: Option<String> = None;
        let mut uniform_other = true;
        for (row_idx, record) in reader.records().enumerate() {
            let record = record?;
            for &col in &feature_cols {
                let cell = &record[col];
                let v: f64 = cell.trim().parse().unwrap_or(f64::NAN);
                if !v.is_finite() {
                    return Err(DataError::BadFeature {
                        row: row_idx + 1,
                        column: headers[col].to_string(),
                        value: cell.to_string(),
                    });
                }
                rows.push(v);
            }
            let token = &record[label_pos];
            if token == positive_label {
                labels.push(1);
            } else {
                labels.push(0);
                match &other_token {
                    None => other_token = Some(token.to_string()),
                    Some(prev) if prev != token => uniform_other = false,
                    _ => {}
                }
            }
        }
        if labels.is_empty() {
            return Err(DataError::EmptyFile);
        }
        let d = feature_cols.len();
        let features = Array2::from_shape_vec((labels.len(), d), rows).expect("shape consistent");
        let mut ds = Dataset::new(features, labels)?;
        if let Some(neg) = other_token.filter(|_| uniform_other) {
            ds = ds.with_class_names(neg, positive_label);
        }
        Ok(ds)
    }

    /// Writes the dataset as CSV with headers `f0..f{d-1},label` and
    /// integer labels (including -1 for unlabeled rows).
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut writer = csv::Writer::from_path(path.as_ref())?;
        let mut header: Vec<String> = (0..self.n_features()).map(|i| format!("f{i}")).collect();
        header.push("label".to_string());
        writer.write_record(&header)?;
        for (i, row) in self.features.outer_iter().enumerate() {
            let mut record: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            record.push(self.labels[i].to_string());
            writer.write_record(&record)?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Stratified three-way split. Sizes come from the fractions by
    /// sequential rounding (test first, then validation from the rest),
    /// and per-class counts inside each part by largest-remainder
    /// allocation, so the partition is exact and class ratios deviate
    /// by at most one row per part.
    pub fn stratified_split(&self, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
        spec.validate()?;
        if !self.is_fully_labeled() {
            return Err(DataError::UnlabeledPresent);
        }
        let counts = self.class_counts();
        for (class, &count) in counts.iter().enumerate() {
            if count < 3 {
                return Err(DataError::ClassTooSmall { class: class as i8, count, needed: 3 });
            }
        }
        let n = self.n_rows();
        let n_test = ceil_eps(spec.test_frac * n as f64);
        let kept = n - n_test;
        let keep_alloc = largest_remainder(counts, kept);
        let test_alloc = [counts[0] - keep_alloc[0], counts[1] - keep_alloc[1]];

        let val_share = spec.val_frac / (spec.train_frac + spec.val_frac);
        let n_val = ceil_eps(val_share * kept as f64);
        let train_alloc = largest_remainder(keep_alloc, kept - n_val);
        let val_alloc = [keep_alloc[0] - train_alloc[0], keep_alloc[1] - train_alloc[1]];

        let mut rng = rng::stream(spec.seed, "stratified-split");
        let mut train_idx = Vec::new();
        let mut val_idx = Vec::new();
        let mut test_idx = Vec::new();
        for class in 0..2 {
            let mut idx: Vec<usize> = (0..n).filter(|&i| self.labels[i] == class as i8).collect();
            idx.shuffle(&mut rng);
            let (tr, va) = (train_alloc[class], val_alloc[class]);
            train_idx.extend_from_slice(&idx[..tr]);
            val_idx.extend_from_slice(&idx[tr..tr + va]);
            test_idx.extend_from_slice(&idx[tr + va..]);
            debug_assert_eq!(idx.len() - tr - va, test_alloc[class]);
        }
        for part in [&mut train_idx, &mut val_idx, &mut test_idx] {
            part.sort_unstable();
        }
        Ok((self.subset(&train_idx)?, self.subset(&val_idx)?, self.subset(&test_idx)?))
    }

    /// Keeps labels on exactly `round(rate * n)` rows (stratified per
    /// class, at least one labeled row per class forced) and sets every
    /// other label to [`UNLABELED`]. Features are untouched. When
    /// `round(rate * n) < 2` the per-class floor wins and 2 rows stay
    /// labeled.
    pub fn mask_labels(&self, lr: &LabelRate) -> Result<Dataset> {
        if !(lr.rate > 0.0 && lr.rate < 1.0) {
            return Err(DataError::BadLabelRate);
        }
        if !self.is_fully_labeled() {
            return Err(DataError::UnlabeledPresent);
        }
        let counts = self.class_counts();
        for (class, &count) in counts.iter().enumerate() {
            if count == 0 {
                return Err(DataError::ClassTooSmall { class: class as i8, count, needed: 1 });
            }
        }
        let n = self.n_rows();
        let n_keep = (lr.rate * n as f64).round() as usize;
        let mut alloc = largest_remainder(counts, n_keep);
        for class in 0..2 {
            let other = 1 - class;
            if alloc[class] == 0 {
                alloc[class] = 1;
                if alloc[0] + alloc[1] > n_keep && alloc[other] > 1 {
                    alloc[other] -= 1;
                }
            }
        }

        let mut rng = rng::stream(lr.seed, "label-mask");
        let mut labels = vec![UNLABELED; n];
        for class in 0..2 {
            let mut idx: Vec<usize> = (0..n).filter(|&i| self.labels[i] == class as i8).collect();
            idx.shuffle(&mut rng);
            for &i in &idx[..alloc[class]] {
                labels[i] = self.labels[i];
            }
        }
        let mut masked = self.clone();
        masked.labels = labels;
        Ok(masked)
    }

    /// Generates two unit-variance Gaussian clusters whose means are
    /// `separation` apart (the offset lives in the first two feature
    /// dimensions). Class 1 is the minority with exactly
    /// `round(minority_frac * rows)` rows; row order is a seeded
    /// permutation, so classes are interleaved.
    pub fn synthetic(spec: &SynthSpec) -> Result<Dataset> {
        if spec.rows == 0 || spec.features < 2 {
            return Err(DataError::BadSynthSpec(
                "need at least 1 row and 2 feature dimensions".to_string(),
            ));
        }
        if !(spec.minority_frac > 0.0 && spec.minority_frac < 0.5) {
            return Err(DataError::BadSynthSpec(
                "minority_frac must lie strictly between 0 and 0.5".to_string(),
            ));
        }
        if !(spec.separation >= 0.0 && spec.separation.is_finite()) {
            return Err(DataError::BadSynthSpec("separation must be finite and >= 0".to_string()));
        }
        let n_minority = (spec.minority_frac * spec.rows as f64).round() as usize;
        if n_minority == 0 {
            return Err(DataError::BadSynthSpec(
                "minority_frac rounds to zero minority rows".to_string(),
            ));
        }

        let mut rng = rng::stream(spec.seed, "synthetic");
        let shift = spec.separation / std::f64::consts::SQRT_2;
        let n = spec.rows;
        let d = spec.features;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);

        let mut features = Array2::zeros((n, d));
        let mut labels = vec![0i8; n];
        for (source_pos, &target) in order.iter().enumerate() {
            let minority = source_pos < n_minority;
            labels[target] = i8::from(minority);
            for col in 0..d {
                let noise: f64 = rng.sample(StandardNormal);
                let mean = if minority && col < 2 { shift } else { 0.0 };
                features[(target, col)] = mean + noise;
            }
        }
        Dataset::new(features, labels)
    }
}

fn ceil_eps(x: f64) -> usize {
    (x - 1e-9).ceil().max(0.0) as usize
}

/// Largest-remainder allocation of `total` slots across two classes,
/// proportional to `counts`. Remainder ties go to the lower class index.
fn largest_remainder(counts: [usize; 2], total: usize) -> [usize; 2] {
    let n = (counts[0] + counts[1]) as f64;
    let quotas = [total as f64 * counts[0] as f64 / n, total as f64 * counts[1] as f64 / n];
    let mut alloc = [quotas[0].floor() as usize, quotas[1].floor() as usize];
    let fracs = [quotas[0] - alloc[0] as f64, quotas[1] - alloc[1] as f64];
    let order = if fracs[0] >= fracs[1] { [0, 1] } else { [1, 0] };
    let mut remaining = total - alloc[0] - alloc[1];
    for &i in &order {
        if remaining == 0 {
            break;
        }
        alloc[i] += 1;
        remaining -= 1;
    }
    alloc
}
