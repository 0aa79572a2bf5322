//! Built-in Gaussian-mixture benchmarks.

use std::f64::consts::TAU;

use minority_core::score_model::GmmSpec;

/// Component weights of `gmm8-ring`, listed counter-clockwise from angle 0.
/// The rarest component sits next to the most common one.
pub const RING_WEIGHTS: [f64; 8] = [0.30, 0.20, 0.15, 0.12, 0.09, 0.07, 0.05, 0.02];
pub const RING_RADIUS: f64 = 4.0;
pub const RING_VARIANCE: f64 = 0.05;

pub const IMBALANCED_WEIGHTS: [f64; 2] = [0.95, 0.05];
pub const IMBALANCED_OFFSET: f64 = 2.0;
pub const IMBALANCED_VARIANCE: f64 = 0.25;

pub const NAMES: [&str; 2] = ["gmm8-ring", "gmm2-imbalanced"];

/// Eight equal-variance components on a circle with unequal weights.
pub fn gmm8_ring() -> GmmSpec {
    let means = (0..8)
        .map(|k| {
            let a = k as f64 * TAU / 8.0;
            vec![RING_RADIUS * a.cos(), RING_RADIUS * a.sin()]
        })
        .collect();
    GmmSpec::new(RING_WEIGHTS.to_vec(), means, vec![RING_VARIANCE; 8]).expect("valid built-in benchmark")
}

/// Two components at `(±2, 0)` with weights 0.95 and 0.05.
pub fn gmm2_imbalanced() -> GmmSpec {
    GmmSpec::new(
        IMBALANCED_WEIGHTS.to_vec(),
        vec![vec![-IMBALANCED_OFFSET, 0.0], vec![IMBALANCED_OFFSET, 0.0]],
        vec![IMBALANCED_VARIANCE; 2],
    )
    .expect("valid built-in benchmark")
}

pub fn by_name(name: &str) -> Option<GmmSpec> {
    match name {
        "gmm8-ring" => Some(gmm8_ring()),
        "gmm2-imbalanced" => Some(gmm2_imbalanced()),
        _ => None,
    }
}
