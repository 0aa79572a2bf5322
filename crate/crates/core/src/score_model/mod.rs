//! Score and noise-predictor models.
//!
//! A model predicts the noise `eps(x, t)` that was added to produce `x` at
//! timestep `t`; the score follows as `score = -eps / sqrt(1 - ᾱ_t)`. Guidance
//! also needs the pullback of the predictor's input Jacobian, which every
//! model provides through [`ScoreModel::eps_vjp`].

use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use crate::error::{check_dim, Result};
use crate::schedule::NoiseSchedule;

mod gmm;
mod mlp;

pub use gmm::{gmm_score, GmmModel, GmmSpec};
pub use mlp::{train_dsm, MlpEpsModel, TrainOptions, DEFAULT_EMBED_DIM, DEFAULT_HIDDEN};

/// A noise predictor usable by the sampler and the minority metrics.
///
/// Implementations may assume `1 <= t <= sched.steps()` and that vector
/// lengths equal [`ScoreModel::dim`]; the public operations in this crate
/// validate both before calling in. Models are shared read-only between
/// chains, hence the `Sync` bound.
pub trait ScoreModel: Sync {
    fn dim(&self) -> usize;

    /// Predicted noise `eps(x, t)`.
    fn eps(&self, x: &[f64], t: usize, sched: &NoiseSchedule) -> Vec<f64>;

    /// `cotangentᵀ · ∂eps(x, t)/∂x`.
    fn eps_vjp(&self, x: &[f64], t: usize, sched: &NoiseSchedule, cotangent: &[f64]) -> Vec<f64>;

    /// `-eps(x, t) / sqrt(1 - ᾱ_t)`.
    fn score(&self, x: &[f64], t: usize, sched: &NoiseSchedule) -> Vec<f64> {
        let sigma = libm::sqrt(1.0 - sched.alpha_bar(t));
        self.eps(x, t, sched).into_iter().map(|e| -(e / sigma)).collect()
    }
}

impl<M: ScoreModel + ?Sized> ScoreModel for &M {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eps(&self, x: &[f64], t: usize, sched: &NoiseSchedule) -> Vec<f64> {
        (**self).eps(x, t, sched)
    }
    fn eps_vjp(&self, x: &[f64], t: usize, sched: &NoiseSchedule, cotangent: &[f64]) -> Vec<f64> {
        (**self).eps_vjp(x, t, sched, cotangent)
    }
    fn score(&self, x: &[f64], t: usize, sched: &NoiseSchedule) -> Vec<f64> {
        (**self).score(x, t, sched)
    }
}

pub(crate) fn check_input<M: ScoreModel + ?Sized>(model: &M, x: &[f64], t: usize, sched: &NoiseSchedule) -> Result<()> {
    sched.check(t)?;
    check_dim(model.dim(), x.len())
}

/// Checked score evaluation.
pub fn score<M: ScoreModel + ?Sized>(model: &M, x: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
    check_input(model, x, t, sched)?;
    Ok(model.score(x, t, sched))
}

/// Checked pullback of the noise predictor's input Jacobian.
pub fn input_vjp<M: ScoreModel + ?Sized>(model: &M, x: &[f64], t: usize, cotangent: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    check_input(model, x, t, sched)?;
    check_dim(model.dim(), cotangent.len())?;
    Ok(model.eps_vjp(x, t, sched, cotangent))
}

/// Wraps a model and counts forward (`eps`/`score`) and backward (`eps_vjp`)
/// calls. Counters are atomic so the wrapper can be shared across chains.
#[derive(Debug)]
pub struct CountingModel<M> {
    inner: M,
    forward: AtomicU64,
    backward: AtomicU64,
}

impl<M> CountingModel<M> {
    pub fn new(inner: M) -> Self {
        CountingModel { inner, forward: AtomicU64::new(0), backward: AtomicU64::new(0) }
    }

    pub fn forward_calls(&self) -> u64 {
        self.forward.load(Ordering::Relaxed)
    }

    pub fn backward_calls(&self) -> u64 {
        self.backward.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.forward.store(0, Ordering::Relaxed);
        self.backward.store(0, Ordering::Relaxed);
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }
}

impl<M: ScoreModel> ScoreModel for CountingModel<M> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eps(&self, x: &[f64], t: usize, sched: &NoiseSchedule) -> Vec<f64> {
        self.forward.fetch_add(1, Ordering::Relaxed);
        self.inner.eps(x, t, sched)
    }

    fn eps_vjp(&self, x: &[f64], t: usize, sched: &NoiseSchedule, cotangent: &[f64]) -> Vec<f64> {
        self.backward.fetch_add(1, Ordering::Relaxed);
        self.inner.eps_vjp(x, t, sched, cotangent)
    }

    fn score(&self, x: &[f64], t: usize, sched: &NoiseSchedule) -> Vec<f64> {
        self.forward.fetch_add(1, Ordering::Relaxed);
        self.inner.score(x, t, sched)
    }
}
