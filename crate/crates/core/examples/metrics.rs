//! Token-overlap F1 for extractive QA, and accuracy and support-weighted F1
//! for classification.
//!
//! cargo run --example metrics

use codeswitch::metrics::{evaluate_accuracy, evaluate_token_f1, evaluate_weighted_f1, mean_token_f1};

fn main() -> codeswitch::error::Result<()> {
    for (pred, gold) in [("the desk", "desk"), ("desk", "desk"), ("files ko", "desk pe"), ("desk desk", "desk")] {
        let s = evaluate_token_f1(pred, gold);
        println!("{pred:>10} vs {gold:<8} precision {:.3} recall {:.3} F1 {:.3}", s.precision, s.recall, s.f1);
    }
    println!("mean token F1: {:.3}", mean_token_f1([("the desk", "desk"), ("pe", "desk pe")])?);

    let labels = ["positive", "negative", "neutral"];
    let gold = ["positive", "positive", "negative", "neutral", "neutral", "neutral"];
    let pred = ["positive", "negative", "negative", "neutral", "positive", "neutral"];
    let w = evaluate_weighted_f1(&pred, &gold, &labels)?;
    println!("accuracy {:.3}, weighted F1 {:.3}", evaluate_accuracy(&pred, &gold)?, w.f1);
    Ok(())
}
