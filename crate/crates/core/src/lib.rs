//! Self-guided minority sampling for diffusion models.
//!
//! The crate is `no_std` (it needs `alloc`) and holds only the numerical
//! pieces: noise schedules, score models (an exact Gaussian-mixture model and
//! a small MLP trained by denoising score matching), the Tweedie-based
//! minority metrics, the guided ancestral sampler and the evaluation metrics.
//! File formats, configuration and the command line live in the
//! `minority-harness` crate.
//!
//! ```
//! use minority_core::{schedule::{NoiseSchedule, ScheduleKind}, score_model::{GmmModel, GmmSpec}};
//! use minority_core::sampler::{guided_sample, GuidanceConfig};
//!
//! let sched = NoiseSchedule::build(ScheduleKind::Linear { beta_start: 1e-4, beta_end: 0.02 }, 100).unwrap();
//! let model = GmmModel::new(GmmSpec::standard_normal(2));
//! let cfg = GuidanceConfig::default();
//! let out = guided_sample(&model, &sched, &cfg, 4, 7, false).unwrap();
//! assert_eq!(out.samples.len(), 4);
//! ```

#![no_std]
#![deny(rust_2018_idioms)]

extern crate alloc;

#[cfg(test)]
extern crate std;

mod error;
pub mod eval;
pub mod fingerprint;
pub mod minority;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod score_model;
pub(crate) mod vecops;

pub use error::{Error, Result};
