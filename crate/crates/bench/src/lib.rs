//! Shared inputs for the criterion benchmarks under `benches/`.

use hmexp_core::data::{HmMatrix, NUM_BINS, NUM_HMS};

/// Deterministic pseudo-signal in `[0, 2)`; benchmarks only need stable,
/// non-degenerate values.
pub fn pattern(n: usize, salt: usize) -> Vec<f64> {
    (0..n).map(|i| ((i * 7919 + salt * 104_729) % 1000) as f64 / 500.0).collect()
}

pub fn matrices(n: usize) -> Vec<HmMatrix> {
    (0..n)
        .map(|k| HmMatrix::from_vec(pattern(NUM_HMS * NUM_BINS, k)).expect("valid matrix"))
        .collect()
}
