//! When to end a training stage, and which checkpoint to keep.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metric a stage is judged by on held-out data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Accuracy,
    WeightedF1,
    TokenF1,
    /// Accuracy on masked positions.
    MaskedAccuracy,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::WeightedF1 => "weighted-f1",
            Metric::TokenF1 => "token-f1",
            Metric::MaskedAccuracy => "masked-accuracy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StoppingRule {
    /// Train to the epoch budget, then keep the parameters with the best dev
    /// score.
    DevMetricBest,
    TrainAccuracyRange { lo: f64, hi: f64 },
    TrainLossBelow { threshold: f64 },
    FixedEpochs { epochs: usize },
}

impl StoppingRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StoppingRule::TrainAccuracyRange { lo, hi } if !(0.0 <= lo && lo < hi && hi <= 1.0) => {
                Err(Error::InvalidArgument(format!("accuracy range [{lo}, {hi}] must satisfy 0 <= lo < hi <= 1")))
            }
            StoppingRule::TrainLossBelow { threshold } if !(threshold > 0.0) => {
                Err(Error::InvalidArgument(format!("loss threshold {threshold} must be positive")))
            }
            StoppingRule::FixedEpochs { epochs: 0 } => Err(Error::InvalidArgument("fixed epoch count must be at least 1".into())),
            _ => Ok(()),
        }
    }
}

/// Training state at a check point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub train_acc: Option<f64>,
    pub train_loss: Option<f64>,
    pub dev_metric: Option<f64>,
    /// Epochs completed, fractional within an epoch.
    pub epoch: Option<f64>,
}

pub fn should_stop(rule: &StoppingRule, snapshot: &Snapshot) -> Result<bool> {
    Ok(match *rule {
        StoppingRule::DevMetricBest => false,
        StoppingRule::TrainAccuracyRange { lo, hi } => {
            let acc = snapshot.train_acc.ok_or(Error::MissingSnapshotField("train_acc"))?;
            (lo..=hi).contains(&acc)
        }
        StoppingRule::TrainLossBelow { threshold } => {
            snapshot.train_loss.ok_or(Error::MissingSnapshotField("train_loss"))? <= threshold
        }
        StoppingRule::FixedEpochs { epochs } => {
            snapshot.epoch.ok_or(Error::MissingSnapshotField("epoch"))? >= epochs as f64
        }
    })
}

/// Index of the highest score; the earliest wins a tie, so the choice does
/// not depend on the order evaluations arrive in when they are keyed by
/// position.
pub fn select_best(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Running best over a stream of `(position, score)` evaluations.
#[derive(Debug, Clone, Default)]
pub struct BestTracker<T> {
    best: Option<(f64, u64, T)>,
}

impl<T> BestTracker<T> {
    pub fn new() -> Self {
        Self { best: None }
    }

    /// Offers a candidate; returns whether it became the best. Higher scores
    /// win, and equal scores go to the smaller position.
    pub fn offer(&mut self, score: f64, position: u64, make: impl FnOnce() -> T) -> bool {
        let better = match &self.best {
            None => true,
            Some((s, p, _)) => score > *s || (score == *s && position < *p),
        };
        if better {
            self.best = Some((score, position, make()));
        }
        better
    }

    pub fn score(&self) -> Option<f64> {
        self.best.as_ref().map(|(s, _, _)| *s)
    }

    pub fn into_inner(self) -> Option<T> {
        self.best.map(|(_, _, t)| t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snap(acc: f64, loss: f64, epoch: f64) -> Snapshot {
        Snapshot {
            train_acc: Some(acc),
            train_loss: Some(loss),
            dev_metric: None,
            epoch: Some(epoch),
        }
    }

    #[test]
    fn accuracy_range_is_inclusive() {
        let rule = StoppingRule::TrainAccuracyRange { lo: 0.70, hi: 0.80 };
        assert!(should_stop(&rule, &snap(0.75, 1.0, 1.0)).unwrap());
        assert!(should_stop(&rule, &snap(0.70, 1.0, 1.0)).unwrap());
        assert!(should_stop(&rule, &snap(0.80, 1.0, 1.0)).unwrap());
        assert!(!should_stop(&rule, &snap(0.69, 1.0, 1.0)).unwrap());
        assert!(!should_stop(&rule, &snap(0.81, 1.0, 1.0)).unwrap());
    }

    #[test]
    fn loss_threshold() {
        let rule = StoppingRule::TrainLossBelow { threshold: 0.1 };
        assert!(should_stop(&rule, &snap(0.0, 0.09, 1.0)).unwrap());
        assert!(should_stop(&rule, &snap(0.0, 0.1, 1.0)).unwrap());
        assert!(!should_stop(&rule, &snap(0.0, 0.11, 1.0)).unwrap());
    }

    #[test]
    fn fixed_epochs_and_dev_best() {
        let rule = StoppingRule::FixedEpochs { epochs: 3 };
        assert!(!should_stop(&rule, &snap(0.0, 0.0, 2.9)).unwrap());
        assert!(should_stop(&rule, &snap(0.0, 0.0, 3.0)).unwrap());
        assert!(!should_stop(&StoppingRule::DevMetricBest, &Snapshot::default()).unwrap());
    }

    #[test]
    fn missing_fields_are_errors() {
        let rule = StoppingRule::TrainLossBelow { threshold: 0.1 };
        assert!(matches!(should_stop(&rule, &Snapshot::default()), Err(Error::MissingSnapshotField("train_loss"))));
        let rule = StoppingRule::TrainAccuracyRange { lo: 0.1, hi: 0.2 };
        assert!(matches!(should_stop(&rule, &Snapshot::default()), Err(Error::MissingSnapshotField("train_acc"))));
    }

    #[test]
    fn invalid_rules() {
        assert!(StoppingRule::TrainAccuracyRange { lo: 0.8, hi: 0.7 }.validate().is_err());
        assert!(StoppingRule::TrainAccuracyRange { lo: 0.0, hi: 1.0 }.validate().is_ok());
        assert!(StoppingRule::TrainLossBelow { threshold: 0.0 }.validate().is_err());
        assert!(StoppingRule::FixedEpochs { epochs: 0 }.validate().is_err());
    }

    #[test]
    fn best_is_earliest_maximum() {
        assert_eq!(select_best(&[0.5, 0.9, 0.9, 0.1]), Some(1));
        assert_eq!(select_best(&[]), None);
        let mut t = BestTracker::new();
        // arrival order reversed: position decides ties
        t.offer(0.9, 2, || "late");
        t.offer(0.9, 1, || "early");
        t.offer(0.5, 0, || "worse");
        assert_eq!(t.score(), Some(0.9));
        assert_eq!(t.into_inner(), Some("early"));
    }
}
