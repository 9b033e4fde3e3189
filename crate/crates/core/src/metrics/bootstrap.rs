//! Paired bootstrap significance test over per-query scores.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{MetricError, QueryScore};

pub const DEFAULT_RESAMPLES: u32 = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub n_queries: usize,
    pub n_resamples: u32,
    /// Mean of `b - a` over queries.
    pub mean_diff: f64,
    pub p_one_sided: f64,
    /// `min(1, 2 * p_one_sided)`.
    pub p_value: f64,
}

/// Resample `r` draws `n` indices from its own ChaCha stream, so results do
/// not depend on how resamples are spread over threads.
fn resample_mean(diffs: &[f64], seed: u64, r: u32) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(r));
    let n = diffs.len();
    (0..n).map(|_| diffs[rng.random_range(0..n)]).sum::<f64>() / n as f64
}

/// Paired differences `b - a`, in `a`'s order.
pub fn paired_diffs(a: &[QueryScore], b: &[QueryScore]) -> Result<Vec<f64>, MetricError> {
    let b_by_id: HashMap<&str, f64> = b.iter().map(|s| (s.query_id.as_str(), s.f1)).collect();
    if b_by_id.len() != b.len() || a.len() != b.len() {
        return Err(MetricError::IdMismatch("score lists differ in length or repeat ids".into()));
    }
    a.iter()
        .map(|s| {
            b_by_id
                .get(s.query_id.as_str())
                .map(|fb| fb - s.f1)
                .ok_or_else(|| MetricError::IdMismatch(format!("query {} missing from second run", s.query_id)))
        })
        .collect()
}

/// Is `b` better (or worse) than `a` beyond resampling noise?
pub fn bootstrap_compare(a: &[QueryScore], b: &[QueryScore], n_resamples: u32, seed: u64) -> Result<BootstrapResult, MetricError> {
    let diffs = paired_diffs(a, b)?;
    if diffs.is_empty() {
        return Err(MetricError::Empty);
    }
    let scale = a.iter().chain(b).map(|s| s.f1.abs()).fold(1.0, f64::max);
    let zero_band = 1e-12 * scale;
    let mean_diff = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let improving = mean_diff >= -zero_band;
    let against = (0..n_resamples)
        .into_par_iter()
        .filter(|&r| {
            let m = resample_mean(&diffs, seed, r);
            if improving {
                m <= zero_band
            } else {
                m >= -zero_band
            }
        })
        .count();
    let p_one_sided = (1.0 + against as f64) / (f64::from(n_resamples) + 1.0);
    Ok(BootstrapResult {
        n_queries: diffs.len(),
        n_resamples,
        mean_diff,
        p_one_sided,
        p_value: (2.0 * p_one_sided).min(1.0),
    })
}
