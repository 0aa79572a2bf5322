//! Numeric check that the time-weighted squared-error minority score equals
//! the summed denoising loss.
//!
//! For one noise draw `ε` and `x_t = sqrt(ᾱ_t)·x0 + sqrt(1-ᾱ_t)·ε`, Tweedie's
//! formula gives `x0 - x̂0(x_t) = sqrt((1-ᾱ_t)/ᾱ_t)·(ε - eps_θ(x_t, t))`, so
//! `ᾱ_t/(1-ᾱ_t)·||x0 - x̂0||² = ||ε - eps_θ||²` holds draw by draw, not only in
//! expectation. Summing over every timestep gives the weighted minority
//! score on one side and the denoising loss on the other.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::minority::{alpha_checked, tweedie, tweedie_unchecked};
use crate::rng::standard_normal;
use crate::schedule::{perturb, NoiseSchedule};
use crate::score_model::{check_input, ScoreModel};
use crate::vecops::sq_dist;

/// Whether the two sides reuse the same noise draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoisePairing {
    /// Both sides see the same `ε`; the gap is zero up to rounding.
    Shared,
    /// Each side draws its own `ε`; the gap is Monte-Carlo noise.
    Independent,
}

/// Weighted minority score and denoising loss at one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityTerm {
    pub t: usize,
    /// `ᾱ_t / (1 - ᾱ_t)`.
    pub weight: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    /// Sample variances of the per-draw values of each side.
    pub lhs_var: f64,
    pub rhs_var: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityReport {
    pub terms: Vec<IdentityTerm>,
    pub lhs_total: f64,
    pub rhs_total: f64,
    pub gap_total: f64,
    /// Standard error of `gap_total` under independent pairing (with shared
    /// noise the gap is deterministic and this is the pointwise spread).
    pub gap_se: f64,
    /// Largest `|lhs - rhs| / |rhs|` over individual shared draws; zero
    /// under independent pairing.
    pub max_pointwise_rel_gap: f64,
    pub mc_samples: usize,
    pub pairing: NoisePairing,
}

/// One draw of both sides: `(ᾱ/(1-ᾱ)·||x0 - x̂0(x_t)||², ||ε - eps_θ(x_t, t)||²)`.
pub fn identity_pointwise<M: ScoreModel + ?Sized>(
    x0: &[f64],
    t: usize,
    eps: &[f64],
    model: &M,
    sched: &NoiseSchedule,
) -> Result<(f64, f64)> {
    let x_t = perturb(x0, t, eps, sched)?;
    let x0_hat = tweedie(&x_t, t, model, sched)?;
    let a = sched.alpha_bar(t);
    let lhs = a / (1.0 - a) * sq_dist(x0, &x0_hat);
    let rhs = sq_dist(eps, &model.eps(&x_t, t, sched));
    Ok((lhs, rhs))
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var)
}

/// Checks the identity for clean sample `x0` over the full timestep grid with
/// `m` draws per timestep.
pub fn verify_identity<M: ScoreModel + ?Sized, R: Rng + ?Sized>(
    x0: &[f64],
    model: &M,
    sched: &NoiseSchedule,
    m: usize,
    pairing: NoisePairing,
    rng: &mut R,
) -> Result<IdentityReport> {
    if m == 0 {
        return Err(Error::Config("Monte-Carlo sample count must be at least 1".into()));
    }
    check_input(model, x0, 1, sched)?;
    let dim = x0.len();
    let mut terms = Vec::with_capacity(sched.steps());
    let mut max_rel: f64 = 0.0;
    for t in 1..=sched.steps() {
        let a = alpha_checked(t, sched)?;
        let weight = a / (1.0 - a);
        let mut lhs_draws = Vec::with_capacity(m);
        let mut rhs_draws = Vec::with_capacity(m);
        for _ in 0..m {
            let eps = standard_normal(rng, dim);
            let x_t = perturb(x0, t, &eps, sched)?;
            lhs_draws.push(weight * sq_dist(x0, &tweedie_unchecked(&x_t, t, a, model, sched)));
            let (eps_r, x_r) = match pairing {
                NoisePairing::Shared => (eps, x_t),
                NoisePairing::Independent => {
                    let e = standard_normal(rng, dim);
                    let x = perturb(x0, t, &e, sched)?;
                    (e, x)
                }
            };
            let rhs = sq_dist(&eps_r, &model.eps(&x_r, t, sched));
            if pairing == NoisePairing::Shared {
                let l = lhs_draws[lhs_draws.len() - 1];
                let rel = if rhs > 0.0 { (l - rhs).abs() / rhs } else { (l - rhs).abs() };
                max_rel = max_rel.max(rel);
            }
            rhs_draws.push(rhs);
        }
        let (lhs, lhs_var) = mean_var(&lhs_draws);
        let (rhs, rhs_var) = mean_var(&rhs_draws);
        terms.push(IdentityTerm { t, weight, lhs, rhs, gap: lhs - rhs, lhs_var, rhs_var });
    }
    let lhs_total = terms.iter().map(|p| p.lhs).sum::<f64>();
    let rhs_total = terms.iter().map(|p| p.rhs).sum::<f64>();
    let gap_var: f64 = match pairing {
        NoisePairing::Independent => terms.iter().map(|p| (p.lhs_var + p.rhs_var) / m as f64).sum(),
        NoisePairing::Shared => 0.0,
    };
    Ok(IdentityReport {
        terms,
        lhs_total,
        rhs_total,
        gap_total: lhs_total - rhs_total,
        gap_se: libm::sqrt(gap_var),
        max_pointwise_rel_gap: max_rel,
        mc_samples: m,
        pairing,
    })
}

/// The same check applied to the Tweedie surrogate `x̂0(x_t)` of a noisy
/// latent, which makes the timestep-weighted inference-time metric equal to
/// the denoising loss of the surrogate.
#[allow(clippy::too_many_arguments)]
pub fn verify_identity_surrogate<M: ScoreModel + ?Sized, R: Rng + ?Sized>(
    x_t: &[f64],
    t: usize,
    model: &M,
    sched: &NoiseSchedule,
    m: usize,
    pairing: NoisePairing,
    rng: &mut R,
) -> Result<IdentityReport> {
    let x0_hat = tweedie(x_t, t, model, sched)?;
    verify_identity(&x0_hat, model, sched, m, pairing, rng)
}
