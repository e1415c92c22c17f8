//! Shared fixtures for the benchmarks.

use dexprim_core::nmf::{nmf_factorize, NmfConfig};
use dexprim_core::pipeline::{standard_requests, GenerateSection, RequestSection, SynthSection};
use dexprim_core::preprocess::{preprocess, DemoMatrix, PreprocessConfig};
use dexprim_core::synth::synthesize;
use dexprim_core::trajgen::GenerationRequest;
use dexprim_core::verify::ObjectModel;
use dexprim_core::Dictionary;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `V = W H` with `rank` planted non-negative factors.
pub fn planted(rows: usize, cols: usize, rank: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = DMatrix::from_fn(rows, rank, |_, _| rng.random::<f64>());
    let h = DMatrix::from_fn(rank, cols, |_, _| rng.random::<f64>());
    w * h
}

/// Synthetic demonstrations of `minutes` length, one trial per minute.
pub fn demos(object: ObjectModel, minutes: usize, seed: u64) -> DemoMatrix {
    let s = SynthSection {
        trials: minutes,
        trial_minutes: 1.0,
        seed,
        ..Default::default()
    };
    let recordings: Vec<_> = s.scripts(object).iter().map(|sc| synthesize(sc).expect("valid script")).collect();
    preprocess(&recordings, &PreprocessConfig::default()).expect("clean synthetic data")
}

/// Dictionary trained on synthetic demonstrations; `l` must stay below the
/// number of columns (60 per minute).
pub fn trained_dictionary(object: ObjectModel, minutes: usize, l: usize, iters: usize) -> Dictionary {
    let v = demos(object, minutes, 0);
    let cfg = NmfConfig {
        n_primitives: l,
        max_iters: iters,
        ..Default::default()
    };
    nmf_factorize(&v, &cfg, object.name()).expect("training succeeds").dictionary
}

pub fn requests(object: &ObjectModel) -> Vec<GenerationRequest> {
    standard_requests(object, &RequestSection::default(), &GenerateSection::default())
        .into_iter()
        .map(|r| r.request)
        .collect()
}
