use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::Task;

/// Mean absolute error.
pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::shape(format!(
            "mae over {} predictions and {} targets",
            pred.len(),
            target.len()
        )));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(logits: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(Error::shape(format!(
            "accuracy over {} rows and {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let correct = logits.iter().zip(labels).filter(|(row, &l)| argmax(row) == l).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// MAE of always predicting the mean of `train_targets`.
pub fn baseline_mae(train_targets: &[f64], test_targets: &[f64]) -> Result<f64> {
    if train_targets.is_empty() {
        return Err(Error::data("baseline needs at least one training target"));
    }
    let mean = train_targets.iter().sum::<f64>() / train_targets.len() as f64;
    mae(&vec![mean; test_targets.len()], test_targets)
}

/// Affine map between target units and the units the network regresses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScaler {
    pub mean: f64,
    pub std: f64,
}

impl TargetScaler {
    pub const IDENTITY: TargetScaler = TargetScaler { mean: 0.0, std: 1.0 };

    /// Population mean and std; a zero spread falls back to unit scale.
    pub fn fit(targets: &[f64]) -> Self {
        if targets.is_empty() {
            return Self::IDENTITY;
        }
        let n = targets.len() as f64;
        let mean = targets.iter().sum::<f64>() / n;
        let std = (targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n).sqrt();
        Self {
            mean,
            std: if std > 0.0 { std } else { 1.0 },
        }
    }

    pub fn encode(&self, target: f64) -> f64 {
        (target - self.mean) / self.std
    }

    pub fn decode(&self, output: f64) -> f64 {
        self.mean + self.std * output
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    pub train_loss: f64,
    pub metric: String,
    pub val_metric: f64,
    pub best_metric: f64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub rf: usize,
    pub n: usize,
    pub metric_name: String,
    pub metric: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mae_hand_value() {
        assert_eq!(mae(&[25.0, 78.0], &[20.0, 80.0]).unwrap(), 3.5);
        assert!(mae(&[], &[]).is_err());
    }

    #[test]
    fn accuracy_examples() {
        let logits = vec![vec![2.0, -1.0], vec![0.0, 3.0], vec![1.0, 1.0]];
        assert_eq!(accuracy(&logits, &[0, 1, 0]).unwrap(), 1.0);
        assert!((accuracy(&logits, &[1, 1, 1]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn baseline_is_mean_absolute_deviation() {
        let t = [1.0, 2.0, 6.0];
        assert!((baseline_mae(&t, &t).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn scaler_round_trip() {
        let s = TargetScaler::fit(&[20.0, 40.0, 60.0]);
        assert_eq!(s.mean, 40.0);
        assert!((s.decode(s.encode(55.0)) - 55.0).abs() < 1e-12);
        assert_eq!(TargetScaler::fit(&[3.0, 3.0]).std, 1.0);
    }
}
