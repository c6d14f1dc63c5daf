//! Examples-proportional mixing with a size cap, and the batch-level task
//! assignments it produces.
//!
//! cargo run --example mixing_rates

use codeswitch::mixer::{mixing_rates, sample_batch_assignments, temperature_mixing_rates, MixtureSpec};

fn main() -> codeswitch::error::Result<()> {
    let spec = MixtureSpec::from_sizes([("en-hi-sa", 250_000), ("en-hi-mlm", 82_000)], 100_000)?;
    println!("capped rates: {:?}", mixing_rates(&spec));
    for t in [1.0, 2.0, 8.0] {
        println!("temperature {t}: {:?}", temperature_mixing_rates(&spec, t)?);
    }

    let draws = sample_batch_assignments(&spec, 100_000, 42);
    let first = draws.iter().filter(|&&t| t == 0).count();
    println!("100000 batches: {first} from {}, {} from {}", spec.tasks[0].task_id, draws.len() - first, spec.tasks[1].task_id);
    println!("first twenty: {:?}", &draws[..20]);
    Ok(())
}
