//! Per-chain random streams.
//!
//! Every chain owns two ChaCha streams derived from `(seed, chain index)`: one
//! for the reverse-process noise and one for the noise used inside the
//! guidance metric. Streams are addressed by number, so the draws a chain sees
//! do not depend on which other chains ran or in which order.

use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

pub type ChainRng = ChaCha12Rng;

/// What a stream is used for; selects a disjoint ChaCha stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamPurpose {
    /// Initial latent and the `z` draws of ancestral steps.
    Process = 0,
    /// Perturbation noise of the inference-time metric.
    Guidance = 1,
    /// Per-chain evaluation draws.
    Aux = 2,
    /// Model initialisation, datasets and training; the index names the use.
    Data = 3,
}

/// Deterministic stream for `(seed, index, purpose)`.
pub fn stream(seed: u64, index: u64, purpose: StreamPurpose) -> ChainRng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_mul(4).wrapping_add(purpose as u64));
    rng
}

/// A vector of i.i.d. standard normal draws.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}
