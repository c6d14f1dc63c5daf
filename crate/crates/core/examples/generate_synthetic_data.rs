//! Writes the synthetic code-switched sentiment benchmark and a small QA set.
//!
//! cargo run --example generate_synthetic_data -- <output-dir> [seed]

use std::path::PathBuf;

use codeswitch::synth::{write_qa_sample, BenchmarkSizes, SentimentBenchmark};

fn main() -> codeswitch::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "synthetic".into()));
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);

    let bench = SentimentBenchmark::generate(BenchmarkSizes::default(), seed);
    bench.write(&dir)?;
    write_qa_sample(&dir.join("qa.jsonl"), 60, seed)?;

    println!("en keywords: +{:?} -{:?} ={:?}", bench.en.positive, bench.en.negative, bench.en.neutral);
    println!("hi keywords: +{:?} -{:?} ={:?}", bench.hi.positive, bench.hi.negative, bench.hi.neutral);
    println!("wrote {} corpus sentences and {} target examples to {}", bench.corpus.len(), bench.target_train.len(), dir.display());
    Ok(())
}
