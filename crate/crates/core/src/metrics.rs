//! Continual-learning metrics, run-level confidence intervals and the
//! task-recency-bias diagnostics.
//!
//! Task indices in this module are 0-based; `upto` arguments count tasks, so
//! `average_accuracy(m, 3)` reads row 2 (the third task).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{classify_difficulty, softmax, DifficultyInterval};
use crate::model::Network;
use crate::stream::Sample;

/// Lower-triangular grid `a[i][j]`: accuracy on task `j`'s test set after
/// training through task `i` (`j ≤ i`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    num_tasks: usize,
    rows: Vec<Vec<Option<f64>>>,
}

impl AccuracyMatrix {
    pub fn new(num_tasks: usize) -> Self {
        Self {
            num_tasks,
            rows: (0..num_tasks).map(|i| vec![None; i + 1]).collect(),
        }
    }

    /// Builds a matrix from fully populated rows (row `i` has `i + 1` entries).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let mut m = Self::new(rows.len());
        for (i, row) in rows.iter().enumerate() {
            if row.len() != i + 1 {
                return Err(Error::input(format!(
                    "row {i} has {} entries, expected {}",
                    row.len(),
                    i + 1
                )));
            }
            for (j, &a) in row.iter().enumerate() {
                m.set(i, j, a)?;
            }
        }
        Ok(m)
    }

    pub fn num_tasks(&self) -> usize {
        self.num_tasks
    }

    pub fn set(&mut self, i: usize, j: usize, accuracy: f64) -> Result<()> {
        if i >= self.num_tasks || j > i {
            return Err(Error::input(format!("entry ({i}, {j}) outside the lower triangle")));
        }
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(Error::input(format!("accuracy {accuracy} outside [0, 1]")));
        }
        self.rows[i][j] = Some(accuracy);
        Ok(())
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.rows.get(i).and_then(|r| r.get(j)).copied().flatten()
    }

    fn require(&self, i: usize, j: usize) -> Result<f64> {
        self.get(i, j)
            .ok_or_else(|| Error::input(format!("accuracy entry ({i}, {j}) is missing")))
    }

    pub fn row(&self, i: usize) -> Option<&[Option<f64>]> {
        self.rows.get(i).map(Vec::as_slice)
    }

    pub fn diagonal(&self) -> Vec<Option<f64>> {
        (0..self.num_tasks).map(|i| self.get(i, i)).collect()
    }
}

fn check_upto(matrix: &AccuracyMatrix, upto: usize) -> Result<()> {
    if upto == 0 || upto > matrix.num_tasks() {
        return Err(Error::input(format!(
            "task count {upto} outside 1..={}",
            matrix.num_tasks()
        )));
    }
    Ok(())
}

/// Mean accuracy over the first `upto` tasks after training task `upto`.
pub fn average_accuracy(matrix: &AccuracyMatrix, upto: usize) -> Result<f64> {
    check_upto(matrix, upto)?;
    let last = upto - 1;
    let sum = (0..upto)
        .map(|j| matrix.require(last, j))
        .sum::<Result<f64>>()?;
    Ok(sum / upto as f64)
}

/// Mean over earlier tasks of the drop from their best past accuracy.
pub fn average_forgetting(matrix: &AccuracyMatrix, upto: usize) -> Result<f64> {
    check_upto(matrix, upto)?;
    if upto < 2 {
        return Err(Error::UndefinedMetric(
            "forgetting needs at least two tasks".into(),
        ));
    }
    let last = upto - 1;
    let mut total = 0.0;
    for j in 0..last {
        let best = (j..last)
            .map(|l| matrix.require(l, j))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        total += best - matrix.require(last, j)?;
    }
    Ok(total / last as f64)
}

/// Mean of `a*_j − a_{j,j}` against a reference model's accuracies.
/// The number of tasks is `reference.len()`.
pub fn average_intransigence(matrix: &AccuracyMatrix, reference: &[f64]) -> Result<f64> {
    if reference.is_empty() || reference.len() > matrix.num_tasks() {
        return Err(Error::input(format!(
            "reference has {} entries for a {}-task matrix",
            reference.len(),
            matrix.num_tasks()
        )));
    }
    let sum = reference
        .iter()
        .enumerate()
        .map(|(j, r)| Ok(r - matrix.require(j, j)?))
        .sum::<Result<f64>>()?;
    Ok(sum / reference.len() as f64)
}

/// Two-sided 97.5% Student-t quantiles for 1..=30 degrees of freedom.
const T_975: [f64; 30] = [
    12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179, 2.160,
    2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064, 2.060, 2.056,
    2.052, 2.048, 2.045, 2.042,
];
const Z_975: f64 = 1.959964;

pub fn t_quantile_975(dof: usize) -> Result<f64> {
    match dof {
        0 => Err(Error::UndefinedMetric("t quantile needs dof >= 1".into())),
        1..=30 => Ok(T_975[dof - 1]),
        _ => Ok(Z_975),
    }
}

/// `(mean, t_{0.975, n−1} · s / √n)` with the sample standard deviation `s`.
pub fn confidence_interval(values: &[f64]) -> Result<(f64, f64)> {
    let n = values.len();
    if n < 2 {
        return Err(Error::UndefinedMetric(
            "a confidence interval needs at least two runs".into(),
        ));
    }
    // Welford: constant inputs give exactly zero spread
    let (mut mean, mut m2) = (0.0, 0.0);
    for (i, &v) in values.iter().enumerate() {
        let delta = v - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (v - mean);
    }
    let var = m2 / (n - 1) as f64;
    let half = t_quantile_975(n - 1)? * var.sqrt() / (n as f64).sqrt();
    Ok((mean, half))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    /// 0-based task after which the snapshot was taken.
    pub task: usize,
    pub mean_weight_old: f64,
    pub mean_weight_new: f64,
    pub mean_logit_old: f64,
    pub mean_logit_new: f64,
    /// HSI/ASI/ESI counts over the new-class samples scanned.
    pub interval_counts: BTreeMap<DifficultyInterval, usize>,
}

impl DiagnosticsRecord {
    pub fn count(&self, interval: DifficultyInterval) -> usize {
        self.interval_counts.get(&interval).copied().unwrap_or(0)
    }

    /// `mean_weight_new − mean_weight_old`.
    pub fn weight_gap(&self) -> f64 {
        self.mean_weight_new - self.mean_weight_old
    }
}

/// Mean of the head row of each class (bias included as one more entry),
/// averaged over the group.
fn mean_class_weight(model: &Network, classes: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for &k in classes {
        let (row, bias) = model.class_weights(k)?;
        total += (row.iter().sum::<f64>() + bias) / (row.len() + 1) as f64;
    }
    Ok(total / classes.len() as f64)
}

/// Snapshot of the head weights and logits of old vs new classes, plus the
/// difficulty histogram of new-class samples. Logit means pool every sample
/// in `samples` and every class logit in the group, target or not.
pub fn bias_diagnostics(
    model: &Network,
    samples: &[Sample],
    old_classes: &[usize],
    new_classes: &[usize],
    task: usize,
) -> Result<DiagnosticsRecord> {
    if old_classes.is_empty() || new_classes.is_empty() {
        return Err(Error::input("diagnostic class groups must be non-empty"));
    }
    if old_classes.iter().any(|c| new_classes.contains(c)) {
        return Err(Error::input("old and new class groups overlap"));
    }
    if samples.is_empty() {
        return Err(Error::input("no samples to scan"));
    }
    let mut logit_old = 0.0;
    let mut logit_new = 0.0;
    let mut counts = BTreeMap::from([
        (DifficultyInterval::Hard, 0),
        (DifficultyInterval::Ambiguous, 0),
        (DifficultyInterval::Easy, 0),
    ]);
    for s in samples {
        let z = model.logits(&s.features)?;
        logit_old += old_classes.iter().map(|&k| z[k]).sum::<f64>();
        logit_new += new_classes.iter().map(|&k| z[k]).sum::<f64>();
        if new_classes.contains(&s.label) {
            let p = softmax(&z)?[s.label];
            *counts.entry(classify_difficulty(p)?).or_insert(0) += 1;
        }
    }
    let n = samples.len() as f64;
    Ok(DiagnosticsRecord {
        task,
        mean_weight_old: mean_class_weight(model, old_classes)?,
        mean_weight_new: mean_class_weight(model, new_classes)?,
        mean_logit_old: logit_old / (n * old_classes.len() as f64),
        mean_logit_new: logit_new / (n * new_classes.len() as f64),
        interval_counts: counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Layer;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> AccuracyMatrix {
        AccuracyMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn accuracy_examples() {
        let a = m(&[&[0.9], &[0.5, 0.7]]);
        assert!((average_accuracy(&a, 2).unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(average_accuracy(&a, 1).unwrap(), 0.9);
        let ones = m(&[&[1.0], &[1.0, 1.0], &[1.0, 1.0, 1.0]]);
        assert_eq!(average_accuracy(&ones, 3).unwrap(), 1.0);
        let mut partial = AccuracyMatrix::new(2);
        partial.set(1, 0, 0.5).unwrap();
        assert!(average_accuracy(&partial, 2).is_err());
    }

    #[test]
    fn forgetting_examples() {
        let a = m(&[&[0.9], &[0.5, 0.7]]);
        assert!((average_forgetting(&a, 2).unwrap() - 0.4).abs() < 1e-15);
        let improving = m(&[&[0.5], &[0.8, 0.7]]);
        assert!(average_forgetting(&improving, 2).unwrap() < 0.0);
        let three = m(&[&[0.9], &[0.7, 0.8], &[0.6, 0.5, 0.9]]);
        assert!((average_forgetting(&three, 3).unwrap() - 0.3).abs() < 1e-12);
        assert!(matches!(
            average_forgetting(&three, 1),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn intransigence_examples() {
        let a = m(&[&[0.9], &[0.1, 0.7]]);
        assert_eq!(average_intransigence(&a, &[0.9, 0.7]).unwrap(), 0.0);
        assert!(average_intransigence(&a, &[0.8, 0.8]).unwrap().abs() < 1e-15);
        let b = m(&[&[0.7], &[0.0, 0.6], &[0.0, 0.0, 0.7]]);
        let v = average_intransigence(&b, &[0.8, 0.6, 0.9]).unwrap();
        assert!((v - 0.1).abs() < 1e-12);
        assert!(average_intransigence(&b, &[0.1, 0.2, 0.3, 0.4]).is_err());
    }

    #[test]
    fn matrix_rejects_upper_triangle_and_range() {
        let mut a = AccuracyMatrix::new(3);
        assert!(a.set(0, 1, 0.5).is_err());
        assert!(a.set(1, 0, 1.5).is_err());
        assert!(a.set(3, 0, 0.5).is_err());
    }

    #[test]
    fn confidence_interval_examples() {
        let (mean, half) = confidence_interval(&[0.4, 0.4, 0.4]).unwrap();
        assert!((mean - 0.4).abs() < 1e-15);
        assert_eq!(half, 0.0);

        let (mean, half) = confidence_interval(&[0.0, 1.0]).unwrap();
        assert_eq!(mean, 0.5);
        // s = sqrt(0.5), half = 12.706 * s / sqrt(2) = 6.353
        assert!((half - 6.353).abs() < 1e-12);

        assert!(matches!(
            confidence_interval(&[1.0]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn confidence_interval_shrinks_like_root_n() {
        // same sample s.d. for n = 40 and n = 160, both beyond the table
        let make = |n: usize| -> Vec<f64> { (0..n).map(|i| (i % 2) as f64).collect() };
        let s = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
        };
        let (a, b) = (make(40), make(160));
        let (_, ha) = confidence_interval(&a).unwrap();
        let (_, hb) = confidence_interval(&b).unwrap();
        let ratio = (ha / s(&a)) / (hb / s(&b));
        assert!((ratio - 2.0).abs() < 1e-12);
    }

    #[test]
    fn diagnostics_on_zero_network() {
        let net = Network::from_layers(vec![Layer::zeros(3, 4)]).unwrap();
        let samples: Vec<Sample> = (0..6)
            .map(|i| Sample::new(i, vec![1.0, 2.0, 3.0], (i % 4) as usize))
            .collect();
        let d = bias_diagnostics(&net, &samples, &[0, 1], &[2, 3], 1).unwrap();
        assert_eq!(d.mean_weight_old, 0.0);
        assert_eq!(d.mean_weight_new, 0.0);
        assert_eq!(d.mean_logit_old, 0.0);
        assert_eq!(d.mean_logit_new, 0.0);
        let new_count = samples.iter().filter(|s| s.label >= 2).count();
        assert_eq!(d.count(DifficultyInterval::Hard), new_count);
        assert_eq!(d.interval_counts.values().sum::<usize>(), new_count);
    }

    #[test]
    fn diagnostics_hand_computed() {
        // class 0: row [1, 2], bias 3 -> mean 2
        // class 1: row [-1, 0], bias 4 -> mean 1
        let head = Layer {
            inputs: 2,
            outputs: 2,
            weights: vec![1.0, 2.0, -1.0, 0.0],
            bias: vec![3.0, 4.0],
        };
        let net = Network::from_layers(vec![head]).unwrap();
        let samples = vec![
            Sample::new(0, vec![1.0, 0.0], 1), // z = [4, 3]
            Sample::new(1, vec![0.0, 1.0], 0), // z = [5, 4]
        ];
        let d = bias_diagnostics(&net, &samples, &[0], &[1], 1).unwrap();
        assert_eq!(d.mean_weight_old, 2.0);
        assert_eq!(d.mean_weight_new, 1.0);
        assert_eq!(d.mean_logit_old, 4.5);
        assert_eq!(d.mean_logit_new, 3.5);
        // the only new-class sample has p_t = 1 / (1 + e) ≈ 0.269 -> HSI
        assert_eq!(d.count(DifficultyInterval::Hard), 1);
        assert_eq!(d.interval_counts.values().sum::<usize>(), 1);
        assert_eq!(d.weight_gap(), -1.0);
    }

    #[test]
    fn diagnostics_reject_empty_groups() {
        let net = Network::from_layers(vec![Layer::zeros(2, 2)]).unwrap();
        let s = vec![Sample::new(0, vec![0.0, 0.0], 0)];
        assert!(bias_diagnostics(&net, &s, &[], &[1], 0).is_err());
        assert!(bias_diagnostics(&net, &s, &[0], &[], 0).is_err());
        assert!(bias_diagnostics(&net, &s, &[0], &[0], 0).is_err());
    }

    fn random_matrix() -> impl Strategy<Value = AccuracyMatrix> {
        (1usize..8).prop_flat_map(|t| {
            proptest::collection::vec(0.0f64..=1.0, t * (t + 1) / 2).prop_map(move |flat| {
                let mut it = flat.into_iter();
                let rows: Vec<Vec<f64>> =
                    (0..t).map(|i| (0..=i).map(|_| it.next().unwrap()).collect()).collect();
                AccuracyMatrix::from_rows(&rows).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn metric_ranges(a in random_matrix(), r in proptest::collection::vec(0.0f64..=1.0, 8)) {
            let t = a.num_tasks();
            let acc = average_accuracy(&a, t).unwrap();
            prop_assert!((0.0..=1.0).contains(&acc));
            if t >= 2 {
                let f = average_forgetting(&a, t).unwrap();
                prop_assert!((-1.0..=1.0).contains(&f));
            }
            let i = average_intransigence(&a, &r[..t]).unwrap();
            prop_assert!((-1.0..=1.0).contains(&i));
        }

        #[test]
        fn never_degrading_matrix_has_no_forgetting(a in random_matrix()) {
            let t = a.num_tasks();
            prop_assume!(t >= 2);
            // make every column non-decreasing down the rows
            let rows: Vec<Vec<f64>> = (0..t)
                .map(|i| (0..=i).map(|j| (j..=i).map(|l| a.get(l, j).unwrap()).fold(0.0, f64::max)).collect())
                .collect();
            let mono = AccuracyMatrix::from_rows(&rows).unwrap();
            prop_assert!(average_forgetting(&mono, t).unwrap() <= 0.0);
        }
    }
}
