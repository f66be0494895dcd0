//! Continual-learning metrics over an accuracy matrix.

use serde::{Deserialize, Serialize};

use crate::continual::{ExperimentRecord, ProtocolConfig};
use crate::dataset::TaskDataset;
use crate::error::{Error, Result};
use crate::network::{accuracy, init_model, ActiveRowMask, Architecture};
use crate::optim::train_epochs;
use crate::seed;

/// `R[i][j]`: accuracy of snapshot `i` on the test split of task `j`.
/// Entries above the diagonal may be absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    entries: Vec<Vec<Option<f64>>>,
}

impl AccuracyMatrix {
    pub fn new(tasks: usize) -> Self {
        Self {
            entries: vec![vec![None; tasks]; tasks],
        }
    }

    /// Builds a matrix from full or lower-triangular rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let mut r = Self::new(rows.len());
        for (i, row) in rows.iter().enumerate() {
            if row.len() > rows.len() {
                return Err(Error::Shape(format!(
                    "row {i} has {} entries for {} tasks",
                    row.len(),
                    rows.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                r.set(i, j, v)?;
            }
        }
        Ok(r)
    }

    pub fn tasks(&self) -> usize {
        self.entries.len()
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) -> Result<()> {
        let t = self.tasks();
        if i >= t || j >= t {
            return Err(Error::Index {
                index: i.max(j),
                len: t,
            });
        }
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::InvalidInput(format!(
                "accuracy {value} at ({i}, {j}) is outside [0, 1]"
            )));
        }
        self.entries[i][j] = Some(value);
        Ok(())
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.entries.get(i)?.get(j).copied().flatten()
    }

    fn require(&self, i: usize, j: usize) -> Result<f64> {
        self.get(i, j)
            .ok_or_else(|| Error::InvalidInput(format!("accuracy entry ({i}, {j}) is missing")))
    }

    fn nonempty(&self) -> Result<usize> {
        match self.tasks() {
            0 => Err(Error::InvalidInput("accuracy matrix has no tasks".into())),
            t => Ok(t),
        }
    }
}

/// Mean accuracy of the final model over all tasks.
pub fn average_accuracy(r: &AccuracyMatrix) -> Result<f64> {
    let t = r.nonempty()?;
    let mut sum = 0.0;
    for j in 0..t {
        sum += r.require(t - 1, j)?;
    }
    Ok(sum / t as f64)
}

/// Per task, accuracy right after training on it minus the final model's
/// accuracy on it. The last element is always exactly zero.
pub fn forgetting_curve(r: &AccuracyMatrix) -> Result<Vec<f64>> {
    let t = r.nonempty()?;
    let mut curve = Vec::with_capacity(t);
    for j in 0..t - 1 {
        curve.push(r.require(j, j)? - r.require(t - 1, j)?);
    }
    r.require(t - 1, t - 1)?;
    curve.push(0.0);
    Ok(curve)
}

/// Mean forgetting over the first `T − 1` tasks; zero for a single task.
/// Negative values (backward transfer) are kept.
pub fn average_forgetting(r: &AccuracyMatrix) -> Result<f64> {
    let curve = forgetting_curve(r)?;
    let n = curve.len() - 1;
    if n == 0 {
        return Ok(0.0);
    }
    Ok(curve[..n].iter().sum::<f64>() / n as f64)
}

pub fn learning_accuracy(r: &AccuracyMatrix) -> Result<f64> {
    let t = r.nonempty()?;
    let mut sum = 0.0;
    for i in 0..t {
        sum += r.require(i, i)?;
    }
    Ok(sum / t as f64)
}

/// Fills `R[i][j]` for `j ≤ i` by evaluating each snapshot under task `j`'s
/// mask on `test_tasks[j]`.
pub fn accuracy_matrix(record: &ExperimentRecord, test_tasks: &[TaskDataset]) -> Result<AccuracyMatrix> {
    let t = record.num_tasks();
    if test_tasks.len() != t {
        return Err(Error::InvalidInput(format!(
            "{} test tasks for a record of {t} tasks",
            test_tasks.len()
        )));
    }
    let mut r = AccuracyMatrix::new(t);
    for i in 0..t {
        for j in 0..=i {
            let model = record.model_for_task(i, j)?;
            r.set(i, j, accuracy(&model, &record.masks[j], &test_tasks[j])?)?;
        }
    }
    Ok(r)
}

/// Trains one fresh full-mask model on all training tasks at once and
/// returns its mean test accuracy across tasks.
pub fn joint_accuracy(
    train_tasks: &[TaskDataset],
    test_tasks: &[TaskDataset],
    cfg: &ProtocolConfig,
) -> Result<f64> {
    cfg.validate()?;
    if test_tasks.is_empty() {
        return Err(Error::InvalidInput("no test tasks".into()));
    }
    let joint = TaskDataset::concat(train_tasks)?;
    let arch = Architecture {
        input_dim: joint.dim(),
        width: cfg.width,
        depth: cfg.depth,
        classes: joint.classes,
    };
    let mask = ActiveRowMask::full(cfg.width, cfg.depth);
    let model = init_model(arch, cfg.init_seed())?;
    let mut train = cfg.train_config(0);
    train.seed = seed::derive(cfg.seed, &[seed::TAG_JOINT]);
    let trained = train_epochs(&model, &mask, &joint, &train)?.model;
    let mut sum = 0.0;
    for task in test_tasks {
        sum += accuracy(&trained, &mask, task)?;
    }
    Ok(sum / test_tasks.len() as f64)
}

/// Spearman rank correlation with average ranks for ties. Returns `None`
/// when either sample is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    pearson(&ranks(x), &ranks(y))
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continual::run_sequence;
    use crate::dataset::{synthetic_tasks, SyntheticSpec};
    use crate::optim::OptimizerKind;

    fn lower(rows: &[&[f64]]) -> AccuracyMatrix {
        AccuracyMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn two_task_metrics() {
        let r = lower(&[&[0.9], &[0.6, 0.8]]);
        assert!((average_accuracy(&r).unwrap() - 0.7).abs() < 1e-15);
        assert!((average_forgetting(&r).unwrap() - 0.3).abs() < 1e-15);
        assert!((learning_accuracy(&r).unwrap() - 0.85).abs() < 1e-15);
        let curve = forgetting_curve(&r).unwrap();
        assert_eq!(curve.len(), 2);
        assert_eq!(curve[1], 0.0);
    }

    #[test]
    fn single_task_conventions() {
        let r = lower(&[&[0.42]]);
        assert_eq!(average_accuracy(&r).unwrap(), 0.42);
        assert_eq!(learning_accuracy(&r).unwrap(), 0.42);
        assert_eq!(average_forgetting(&r).unwrap(), 0.0);
        assert_eq!(forgetting_curve(&r).unwrap(), vec![0.0]);
    }

    #[test]
    fn negative_forgetting_not_clamped() {
        let r = lower(&[&[0.5], &[0.7, 0.9]]);
        assert!((average_forgetting(&r).unwrap() + 0.2).abs() < 1e-15);
    }

    #[test]
    fn missing_final_row_entry_is_an_error() {
        let mut r = AccuracyMatrix::new(2);
        r.set(0, 0, 0.9).unwrap();
        r.set(1, 1, 0.9).unwrap();
        assert!(average_accuracy(&r).is_err());
        assert!(average_forgetting(&r).is_err());
        assert!(learning_accuracy(&r).is_ok());
    }

    #[test]
    fn out_of_range_accuracy_rejected() {
        let mut r = AccuracyMatrix::new(1);
        assert!(r.set(0, 0, 1.2).is_err());
        assert!(r.set(0, 0, f64::NAN).is_err());
        assert!(r.set(1, 0, 0.5).is_err());
    }

    #[test]
    fn spearman_known_values() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[1.0, 4.0, 9.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0], &[5.0, 5.0]), None);
        assert_eq!(ranks(&[2.0, 1.0, 2.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn matrix_from_run_and_joint_replay() {
        let tasks = synthetic_tasks(SyntheticSpec { tasks: 3, n: 60, d: 6, classes: 3 }, 11).unwrap();
        let cfg = ProtocolConfig {
            epochs: 2,
            ..ProtocolConfig::new(16, 1, 0.5, OptimizerKind::Sgd, 3)
        };
        let record = run_sequence(&tasks, &cfg).unwrap();
        let r = accuracy_matrix(&record, &tasks).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(r.get(i, j).is_some(), j <= i);
            }
        }
        let curve = forgetting_curve(&r).unwrap();
        let af = average_forgetting(&r).unwrap();
        assert_eq!(af, curve[..2].iter().sum::<f64>() / 2.0);

        let ja = joint_accuracy(&tasks, &tasks, &cfg).unwrap();
        assert_eq!(ja, joint_accuracy(&tasks, &tasks, &cfg).unwrap());
        assert!((0.0..=1.0).contains(&ja));
    }
}
