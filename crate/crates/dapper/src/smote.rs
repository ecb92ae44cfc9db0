//! Minority oversampling by synthetic interpolation (SMOTE) with a
//! tunable neighbor count `k`, synthetic sample budget `m`, and
//! Minkowski distance power `r`.
//!
//! Each synthetic row is drawn by picking a minority row x uniformly,
//! picking one of its k nearest minority neighbors x_nn uniformly
//! (Minkowski-r distance), and emitting `x + lambda * (x_nn - x)` with
//! lambda uniform on [0, 1]. By default the budget is capped at the
//! point of exact class balance; the literal uncapped reading is
//! available through [`SmoteParams::cap_at_balance`].

use crate::data::Dataset;
use crate::rng;
use ndarray::{Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SmoteError {
    #[error("vector dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("Minkowski power must be at least 1")]
    ZeroPower,
    #[error("{name} = {value} outside [{min}, {max}]")]
    ParamOutOfRange { name: &'static str, value: u32, min: u32, max: u32 },
    #[error("oversampling requires both classes in the input")]
    SingleClass,
    #[error("oversampling requires a fully labeled dataset")]
    UnlabeledPresent,
}

/// Oversampling parameters. Tunable ranges: k in 1..=20, m in 50..=500,
/// r in 1..=6.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoteParams {
    /// Number of nearest minority neighbors considered per row.
    pub k: u32,
    /// Synthetic sample budget.
    pub m: u32,
    /// Minkowski distance power.
    pub r: u32,
    pub seed: u64,
    /// When true (the default), the budget is reduced so the minority
    /// class never outgrows the majority.
    pub cap_at_balance: bool,
}

impl SmoteParams {
    pub fn new(k: u32, m: u32, r: u32, seed: u64) -> Self {
        SmoteParams { k, m, r, seed, cap_at_balance: true }
    }

    fn validate(&self) -> Result<(), SmoteError> {
        for (name, value, min, max) in
            [("k", self.k, 1, 20), ("m", self.m, 50, 500), ("r", self.r, 1, 6)]
        {
            if value < min || value > max {
                return Err(SmoteError::ParamOutOfRange { name, value, min, max });
            }
        }
        Ok(())
    }
}

/// Minkowski distance `(sum |a_i - b_i|^r)^(1/r)`.
pub fn minkowski_distance(
    a: ArrayView1<'_, f64>,
    b: ArrayView1<'_, f64>,
    r: u32,
) -> Result<f64, SmoteError> {
    if a.len() != b.len() {
        return Err(SmoteError::DimensionMismatch { left: a.len(), right: b.len() });
    }
    if r == 0 {
        return Err(SmoteError::ZeroPower);
    }
    let sum: f64 = a.iter().zip(b.iter()).map(|(&x, &y)| (x - y).abs().powi(r as i32)).sum();
    Ok(sum.powf(1.0 / f64::from(r)))
}

/// Appends synthetic minority rows to a fully labeled dataset.
///
/// The input rows are retained unchanged, in order, as a prefix of the
/// output; synthetic rows follow, carrying the minority label. The
/// effective budget is `min(m, majority - minority)` under the balance
/// cap, or `m` verbatim without it. When the minority class has fewer
/// than k+1 rows, k shrinks to `minority - 1`; a singleton minority is
/// its own neighbor and gets duplicated.
pub fn smote(ds: &Dataset, p: &SmoteParams) -> Result<Dataset, SmoteError> {
    p.validate()?;
    if !ds.is_fully_labeled() {
        return Err(SmoteError::UnlabeledPresent);
    }
    let counts = ds.class_counts();
    if counts[0] == 0 || counts[1] == 0 {
        return Err(SmoteError::SingleClass);
    }
    let minority_label: i8 = if counts[1] <= counts[0] { 1 } else { 0 };
    let n_minority = counts[minority_label as usize];
    let n_majority = counts[1 - minority_label as usize];

    let budget =
        if p.cap_at_balance { (p.m as usize).min(n_majority - n_minority) } else { p.m as usize };
    if budget == 0 {
        return Ok(ds.clone());
    }

    let minority_rows: Vec<usize> =
        (0..ds.n_rows()).filter(|&i| ds.labels()[i] == minority_label).collect();
    let neighbors = nearest_minority_neighbors(ds, &minority_rows, p.k as usize, p.r)?;

    let mut rng = rng::stream(p.seed, "smote");
    let d = ds.n_features();
    let mut synth = Array2::zeros((budget, d));
    for out in 0..budget {
        let pick = rng.random_range(0..minority_rows.len());
        let x = ds.row(minority_rows[pick]);
        let nn_list = &neighbors[pick];
        let x_nn = ds.row(nn_list[rng.random_range(0..nn_list.len())]);
        let lambda: f64 = rng.random_range(0.0..=1.0);
        for col in 0..d {
            synth[(out, col)] = x[col] + lambda * (x_nn[col] - x[col]);
        }
    }
    let synth_ds = Dataset::new(synth, vec![minority_label; budget])
        .expect("interpolants of finite rows are finite");
    Ok(ds.vstack(&synth_ds).expect("same feature width"))
}

/// For each minority row, its k nearest minority rows (self excluded)
/// by Minkowski-r distance, distance ties broken toward the lower row
/// index. A singleton minority lists itself.
fn nearest_minority_neighbors(
    ds: &Dataset,
    minority_rows: &[usize],
    k: usize,
    r: u32,
) -> Result<Vec<Vec<usize>>, SmoteError> {
    let k_eff = k.min(minority_rows.len() - 1);
    let mut out = Vec::with_capacity(minority_rows.len());
    for &i in minority_rows {
        if k_eff == 0 {
            out.push(vec![i]);
            continue;
        }
        let mut dists: Vec<(f64, usize)> = Vec::with_capacity(minority_rows.len() - 1);
        for &j in minority_rows {
            if j == i {
                continue;
            }
            dists.push((minkowski_distance(ds.row(i), ds.row(j), r)?, j));
        }
        dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        out.push(dists[..k_eff].iter().map(|&(_, j)| j).collect());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn imbalanced(n_majority: usize, n_minority: usize, seed: u64) -> Dataset {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = n_majority + n_minority;
        let features = Array2::from_shape_fn((n, 3), |_| rng.random_range(-2.0..2.0));
        let labels = (0..n).map(|i| i8::from(i >= n_majority)).collect();
        Dataset::new(features, labels).unwrap()
    }

    #[test]
    fn minkowski_reference_values() {
        let a = array![0.0, 0.0];
        let b = array![3.0, 4.0];
        assert_eq!(minkowski_distance(a.view(), b.view(), 2).unwrap(), 5.0);
        assert_eq!(minkowski_distance(a.view(), a.view(), 3).unwrap(), 0.0);
        let c = array![1.0, 1.0];
        assert_eq!(minkowski_distance(a.view(), c.view(), 1).unwrap(), 2.0);
        assert_eq!(
            minkowski_distance(a.view(), array![1.0].view(), 2),
            Err(SmoteError::DimensionMismatch { left: 2, right: 1 })
        );
        assert_eq!(minkowski_distance(a.view(), b.view(), 0), Err(SmoteError::ZeroPower));
    }

    #[test]
    fn balanced_input_passes_through() {
        let ds = imbalanced(5, 5, 1);
        let out = smote(&ds, &SmoteParams::new(3, 100, 2, 9)).unwrap();
        assert_eq!(out, ds);
    }

    #[test]
    fn budget_caps_at_exact_balance() {
        let ds = imbalanced(100, 10, 2);
        let out = smote(&ds, &SmoteParams::new(5, 500, 2, 9)).unwrap();
        assert_eq!(out.class_counts(), [100, 100]);
        assert_eq!(out.n_rows(), 200);
    }

    #[test]
    fn uncapped_budget_is_literal() {
        let ds = imbalanced(100, 10, 2);
        let mut p = SmoteParams::new(5, 500, 2, 9);
        p.cap_at_balance = false;
        let out = smote(&ds, &p).unwrap();
        assert_eq!(out.class_counts(), [100, 510]);
    }

    #[test]
    fn two_point_minority_interpolates_on_the_segment() {
        let features =
            array![[5.0, 9.0], [6.0, 8.0], [5.5, 9.5], [4.0, 7.0], [0.0, 0.0], [1.0, 1.0],];
        let ds = Dataset::new(features, vec![0, 0, 0, 0, 1, 1]).unwrap();
        let out = smote(&ds, &SmoteParams::new(1, 50, 2, 4)).unwrap();
        assert_eq!(out.class_counts(), [4, 4]);
        for i in ds.n_rows()..out.n_rows() {
            let row = out.row(i);
            assert!((row[0] - row[1]).abs() < 1e-12, "off the x=y segment: {row}");
            assert!((0.0..=1.0).contains(&row[0]));
        }
    }

    #[test]
    fn singleton_minority_duplicates_itself() {
        let features = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0], [7.0, -1.0]];
        let ds = Dataset::new(features, vec![0, 0, 0, 1]).unwrap();
        let out = smote(&ds, &SmoteParams::new(5, 50, 2, 11)).unwrap();
        assert_eq!(out.class_counts(), [3, 3]);
        for i in 4..out.n_rows() {
            assert_eq!(out.row(i).to_vec(), vec![7.0, -1.0]);
        }
    }

    #[test]
    fn rejects_invalid_input() {
        let ds = imbalanced(4, 0, 3);
        assert_eq!(smote(&ds, &SmoteParams::new(1, 50, 2, 0)), Err(SmoteError::SingleClass));
        let ds = imbalanced(6, 3, 3);
        assert_eq!(
            smote(&ds, &SmoteParams::new(0, 50, 2, 0)),
            Err(SmoteError::ParamOutOfRange { name: "k", value: 0, min: 1, max: 20 })
        );
        assert_eq!(
            smote(&ds, &SmoteParams::new(1, 501, 2, 0)),
            Err(SmoteError::ParamOutOfRange { name: "m", value: 501, min: 50, max: 500 })
        );
        assert_eq!(
            smote(&ds, &SmoteParams::new(1, 50, 7, 0)),
            Err(SmoteError::ParamOutOfRange { name: "r", value: 7, min: 1, max: 6 })
        );
        let masked = ds
            .with_labels({
                let mut l = ds.labels().to_vec();
                l[0] = crate::data::UNLABELED;
                l
            })
            .unwrap();
        assert_eq!(
            smote(&masked, &SmoteParams::new(1, 50, 2, 0)),
            Err(SmoteError::UnlabeledPresent)
        );
    }

    #[test]
    fn deterministic_per_seed() {
        let ds = imbalanced(40, 8, 7);
        let a = smote(&ds, &SmoteParams::new(3, 50, 2, 21)).unwrap();
        let b = smote(&ds, &SmoteParams::new(3, 50, 2, 21)).unwrap();
        assert_eq!(a, b);
        let c = smote(&ds, &SmoteParams::new(3, 50, 2, 22)).unwrap();
        assert_ne!(a, c);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn output_extends_input_with_minority_interpolants(
            n_majority in 6usize..40,
            n_minority in 2usize..15,
            k in 1u32..=20,
            m in 50u32..=500,
            r in 1u32..=6,
            seed in 0u64..500,
        ) {
            prop_assume!(n_minority < n_majority);
            let ds = imbalanced(n_majority, n_minority, seed);
            let out = smote(&ds, &SmoteParams { k, m, r, seed, cap_at_balance: true }).unwrap();

            // Input preserved as a prefix.
            prop_assert_eq!(out.subset(&(0..ds.n_rows()).collect::<Vec<_>>()).unwrap(), ds.clone());

            let expected = (m as usize).min(n_majority - n_minority);
            prop_assert_eq!(out.n_rows(), ds.n_rows() + expected);
            prop_assert!(
                out.minority_fraction().unwrap() >= ds.minority_fraction().unwrap()
            );

            // Every synthetic row: minority label, and componentwise
            // between some pair of original minority rows.
            let minority: Vec<usize> =
                (0..ds.n_rows()).filter(|&i| ds.labels()[i] == 1).collect();
            for s in ds.n_rows()..out.n_rows() {
                prop_assert_eq!(out.labels()[s], 1);
                let row = out.row(s);
                let found = minority.iter().any(|&a| {
                    minority.iter().any(|&b| {
                        row.iter().enumerate().all(|(c, &v)| {
                            let (lo, hi) = if ds.row(a)[c] <= ds.row(b)[c] {
                                (ds.row(a)[c], ds.row(b)[c])
                            } else {
                                (ds.row(b)[c], ds.row(a)[c])
                            };
                            v >= lo - 1e-9 && v <= hi + 1e-9
                        })
                    })
                });
                prop_assert!(found, "synthetic row outside all minority segments");
            }
        }
    }
}
