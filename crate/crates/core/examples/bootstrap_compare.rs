//! Paired bootstrap between two runs' per-query F1 scores.
//!
//! ```bash
//! cargo run -p clarify-core --example bootstrap_compare
//! ```

use clarify_core::metrics::{bootstrap_compare, QueryScore, DEFAULT_RESAMPLES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scores(values: impl IntoIterator<Item = f64>) -> Vec<QueryScore> {
    values
        .into_iter()
        .enumerate()
        .map(|(i, f1)| QueryScore {
            query_id: format!("q{i:04}"),
            f1,
        })
        .collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let base: Vec<f64> = (0..500).map(|_| rng.random_range(0.0..=1.0)).collect();

    let a = scores(base.iter().copied());
    let noisy = scores(base.iter().map(|x| (x + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0)));
    let better = scores(base.iter().map(|x| (x + rng.random_range(0.0..0.08)).min(1.0)));

    for (name, b) in [("same", &a), ("noise only", &noisy), ("small gain", &better)] {
        let r = bootstrap_compare(&a, b, DEFAULT_RESAMPLES, 0)?;
        println!("{name:<11} mean diff {:+.4}  p = {:.4}", r.mean_diff, r.p_value);
    }
    Ok(())
}
