//! Fixed inputs shared by the benchmarks.

use skflow_core::{CadlagPath, LevySpec};

pub fn linear_driver(seed: u64) -> CadlagPath {
    LevySpec::fixed_jumps(0.5, 1.0, 0.1)
        .sample_path(1.0, seed)
        .expect("valid driver")
        .path
}

pub fn unit() -> CadlagPath {
    CadlagPath::constant(1.0, &[1.0]).expect("constant path")
}

/// A step path with `k` evenly spread jumps alternating in sign.
pub fn staircase(k: usize, shift: f64) -> CadlagPath {
    let steps: Vec<(f64, f64)> = (0..k)
        .map(|i| {
            (
                (i as f64 + 0.5 + shift) / (k as f64 + 1.0),
                if i % 2 == 0 { 1.0 } else { -0.5 },
            )
        })
        .collect();
    CadlagPath::scalar_step(1.0, 0.0, &steps).expect("valid step path")
}
