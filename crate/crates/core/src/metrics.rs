//! Evaluation metrics: accuracy, token-overlap F1 for extractive QA and
//! support-weighted F1 for classification.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct F1Scores {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

fn check_lengths(left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::LengthMismatch { left, right });
    }
    if left == 0 {
        return Err(Error::EmptyEvaluation);
    }
    Ok(())
}

pub fn evaluate_accuracy<T: PartialEq>(predictions: &[T], gold: &[T]) -> Result<f64> {
    check_lengths(predictions.len(), gold.len())?;
    let correct = predictions.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(correct as f64 / gold.len() as f64)
}

fn harmonic(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Bag-of-words overlap between a predicted and a gold answer, over
/// whitespace tokens.
pub fn evaluate_token_f1(predicted: &str, gold: &str) -> F1Scores {
    let pred: Vec<&str> = predicted.split_whitespace().collect();
    let gold: Vec<&str> = gold.split_whitespace().collect();
    if pred.is_empty() || gold.is_empty() {
        return F1Scores::default();
    }
    let mut gold_counts: HashMap<&str, usize> = HashMap::new();
    for t in &gold {
        *gold_counts.entry(t).or_default() += 1;
    }
    let mut common = 0;
    for t in &pred {
        if let Some(c) = gold_counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return F1Scores::default();
    }
    let precision = common as f64 / pred.len() as f64;
    let recall = common as f64 / gold.len() as f64;
    F1Scores {
        f1: harmonic(precision, recall),
        precision,
        recall,
    }
}

/// Dataset-level QA score: the mean of per-example token F1.
pub fn mean_token_f1<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<f64> {
    let scores: Vec<f64> = pairs
        .into_iter()
        .map(|(p, g)| evaluate_token_f1(p, g).f1)
        .collect();
    if scores.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Per-class precision, recall and F1 averaged with weights proportional to
/// each class's gold support.
pub fn evaluate_weighted_f1<T: PartialEq>(predictions: &[T], gold: &[T], label_set: &[T]) -> Result<F1Scores> {
    check_lengths(predictions.len(), gold.len())?;
    let n = gold.len() as f64;
    let mut out = F1Scores::default();
    for class in label_set {
        let support = gold.iter().filter(|g| *g == class).count();
        if support == 0 {
            continue;
        }
        let predicted = predictions.iter().filter(|p| *p == class).count();
        let tp = predictions
            .iter()
            .zip(gold)
            .filter(|(p, g)| *p == class && *g == class)
            .count();
        let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
        let recall = tp as f64 / support as f64;
        let weight = support as f64 / n;
        out.precision += weight * precision;
        out.recall += weight * recall;
        out.f1 += weight * harmonic(precision, recall);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy() {
        assert_eq!(evaluate_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(evaluate_accuracy(&["a", "b", "a"], &["a", "a", "a"]).unwrap(), 2.0 / 3.0);
        assert!(matches!(evaluate_accuracy::<u8>(&[], &[]), Err(Error::EmptyEvaluation)));
        assert!(matches!(evaluate_accuracy(&[1], &[1, 2]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn token_f1_examples() {
        assert_eq!(evaluate_token_f1("Joe Belfear", "Joe Belfear").f1, 1.0);
        let s = evaluate_token_f1("the desk", "desk");
        assert_eq!(s.precision, 0.5);
        assert_eq!(s.recall, 1.0);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(evaluate_token_f1("", "desk"), F1Scores::default());
        assert_eq!(evaluate_token_f1("desk", ""), F1Scores::default());
        assert_eq!(evaluate_token_f1("chair", "desk").f1, 0.0);
        // repeated tokens count as a multiset
        let s = evaluate_token_f1("desk desk", "desk");
        assert_eq!((s.precision, s.recall), (0.5, 1.0));
    }

    #[test]
    fn mean_f1_over_examples() {
        let m = mean_token_f1([("a", "a"), ("b", "c")]).unwrap();
        assert_eq!(m, 0.5);
        assert!(mean_token_f1(std::iter::empty()).is_err());
    }

    #[test]
    fn weighted_f1_examples() {
        let perfect = evaluate_weighted_f1(&["p", "n"], &["p", "n"], &["p", "n", "o"]).unwrap();
        assert_eq!(perfect, F1Scores { f1: 1.0, precision: 1.0, recall: 1.0 });

        let s = evaluate_weighted_f1(&["p", "n", "n"], &["p", "p", "n"], &["p", "n"]).unwrap();
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.precision - (2.0 / 3.0 + 1.0 / 6.0)).abs() < 1e-15);
        assert!((s.recall - (1.0 / 3.0 + 1.0 / 3.0)).abs() < 1e-15);

        // single-class gold: the class's own scores
        let s = evaluate_weighted_f1(&["p", "n", "p"], &["p", "p", "p"], &["p", "n"]).unwrap();
        assert_eq!(s.precision, 1.0);
        assert!((s.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.f1 - 0.8).abs() < 1e-15);

        assert!(evaluate_weighted_f1(&["p"], &["p", "n"], &["p", "n"]).is_err());
    }
}
