//! Timing of trajectory generation.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Dictionary;
use crate::trajgen::{generate_with, GenerationOptions, GenerationRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub instance: String,
    pub n_primitives: usize,
    pub n_steps: usize,
    pub warmup: usize,
    /// Wall time of every timed call, milliseconds.
    pub samples_ms: Vec<f64>,
    pub median_ms: f64,
    pub max_ms: f64,
    /// Calls that ended in an infeasibility report (still timed).
    pub infeasible: usize,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times `generate` on every request after `warmup` untimed calls.
pub fn bench_generate(
    d: &Dictionary,
    requests: &[GenerationRequest],
    warmup: usize,
    opts: &GenerationOptions,
) -> Result<BenchReport> {
    if requests.is_empty() {
        return Err(Error::InvalidInput("no requests to benchmark".into()));
    }
    for r in requests.iter().cycle().take(warmup) {
        let _ = generate_with(d, r, opts);
    }
    let mut samples = Vec::with_capacity(requests.len());
    let mut infeasible = 0;
    for r in requests {
        let start = Instant::now();
        match generate_with(d, r, opts) {
            Ok(_) => {}
            Err(Error::Infeasible { .. }) => infeasible += 1,
            Err(e) => return Err(e),
        }
        samples.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(BenchReport {
        instance: d.provenance.object.clone(),
        n_primitives: d.n_primitives(),
        n_steps: d.n_steps(),
        warmup,
        median_ms: median(&samples),
        max_ms: samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        samples_ms: samples,
        infeasible,
    })
}
