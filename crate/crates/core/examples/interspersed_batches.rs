//! Bilingual batch plans: English and X-language examples interspersed in
//! every batch, against the sequential baseline.
//!
//! cargo run --example interspersed_batches -- [batch-size]

use codeswitch::mixer::{BatchPlan, Source};

fn main() -> codeswitch::error::Result<()> {
    let b = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let plan = BatchPlan::interspersed(Source::new("en", 20), Source::new("hi", 13), b, 1)?;
    println!("interspersed, B = {b}");
    for (i, batch) in plan.batches.iter().enumerate() {
        println!("  batch {i:>2}: {} en + {} hi", batch.count(0), batch.count(1));
    }

    let seq = BatchPlan::sequential(Source::new("en", 20), Source::new("hi", 13), b, 1)?;
    let order: Vec<&str> = seq.batches.iter().map(|bt| seq.sources[bt.slots[0].source].as_str()).collect();
    println!("sequential batch sources: {}", order.join(" "));

    for record in plan.batch_records().iter().take(2) {
        println!("{record}");
    }
    Ok(())
}
