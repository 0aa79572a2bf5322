//! Diffusion noise schedules and the one-shot forward perturbation.
//!
//! Timesteps are 1-indexed: `t = 1` is the least noisy step and `t = T` the
//! most. `alpha_bar(t)` is the cumulative product `∏_{u ≤ t} (1 - beta_u)`.

use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;

use crate::error::{check_dim, Error, Result};
use crate::fingerprint::Fnv64;

/// Largest beta the cosine schedule may produce.
pub const COSINE_MAX_BETA: f64 = 0.999;

/// Default offset of the cosine schedule.
pub const COSINE_DEFAULT_OFFSET: f64 = 0.008;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleKind {
    /// Betas evenly spaced from `beta_start` to `beta_end`.
    Linear { beta_start: f64, beta_end: f64 },
    /// `alpha_bar(t) = f(t) / f(0)` with `f(t) = cos²(((t/T + offset) / (1 + offset)) · π/2)`.
    Cosine { offset: f64 },
}

impl ScheduleKind {
    pub fn linear_default() -> Self {
        ScheduleKind::Linear { beta_start: 1e-4, beta_end: 0.02 }
    }

    pub fn cosine_default() -> Self {
        ScheduleKind::Cosine { offset: COSINE_DEFAULT_OFFSET }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScheduleKind::Linear { .. } => "linear",
            ScheduleKind::Cosine { .. } => "cosine",
        }
    }
}

/// Beta and alpha-bar tables for every timestep. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    betas: Vec<f64>,
    alpha_cum: Vec<f64>,
    /// Timestep of the base schedule each entry corresponds to (identity
    /// unless the schedule was respaced).
    base_timestep: Vec<usize>,
    base_steps: usize,
    base_fingerprint: u64,
}

impl NoiseSchedule {
    /// Builds a schedule with `steps` timesteps.
    pub fn build(kind: ScheduleKind, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("schedule needs at least one timestep".into()));
        }
        let betas: Vec<f64> = match kind {
            ScheduleKind::Linear { beta_start, beta_end } => {
                if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
                    return Err(Error::Config(alloc::format!(
                        "linear schedule needs 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
                    )));
                }
                if steps == 1 {
                    alloc::vec![beta_start]
                } else {
                    let span = (steps - 1) as f64;
                    (0..steps).map(|i| beta_start + (beta_end - beta_start) * (i as f64) / span).collect()
                }
            }
            ScheduleKind::Cosine { offset } => {
                if !(offset.is_finite() && offset >= 0.0) {
                    return Err(Error::Config(alloc::format!("cosine offset must be finite and non-negative, got {offset}")));
                }
                let f = |t: usize| {
                    let c = libm::cos(((t as f64 / steps as f64 + offset) / (1.0 + offset)) * FRAC_PI_2);
                    c * c
                };
                let f0 = f(0);
                (1..=steps).map(|t| (1.0 - (f(t) / f0) / (f(t - 1) / f0)).min(COSINE_MAX_BETA)).collect()
            }
        };
        let alpha_cum = cumulative(&betas);
        let mut sched =
            NoiseSchedule { kind, betas, alpha_cum, base_timestep: (1..=steps).collect(), base_steps: steps, base_fingerprint: 0 };
        sched.base_fingerprint = sched.fingerprint();
        Ok(sched)
    }

    /// Keeps `steps` timesteps of this schedule at a uniform stride, ending at
    /// the last one. Betas are recomputed so the retained alpha-bars are
    /// unchanged.
    pub fn respace(&self, steps: usize) -> Result<Self> {
        let len = self.steps();
        if steps == 0 || steps > len {
            return Err(Error::Config(alloc::format!("cannot respace {len} timesteps to {steps}")));
        }
        let kept: Vec<usize> = (1..=steps).map(|i| (i * len).div_ceil(steps)).collect();
        let alpha_cum: Vec<f64> = kept.iter().map(|&t| self.alpha_cum[t - 1]).collect();
        let mut prev = 1.0;
        let betas = alpha_cum
            .iter()
            .map(|&a| {
                let b = 1.0 - a / prev;
                prev = a;
                b
            })
            .collect();
        Ok(NoiseSchedule {
            kind: self.kind,
            betas,
            alpha_cum,
            base_timestep: kept.iter().map(|&t| self.base_timestep[t - 1]).collect(),
            base_steps: self.base_steps,
            base_fingerprint: self.base_fingerprint,
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Number of timesteps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            Err(Error::TimestepOutOfRange { t, steps: self.steps() })
        } else {
            Ok(())
        }
    }

    /// `beta_t`. Panics if `t` is out of range.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// `alpha_bar_t`. Panics if `t` is out of range.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_cum[t - 1]
    }

    /// Fixed reverse-process variance, equal to `beta_t`.
    pub fn reverse_var(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_cum(&self) -> &[f64] {
        &self.alpha_cum
    }

    /// Position of `t` in the base (un-respaced) schedule, in `(0, 1]`.
    pub fn time_feature(&self, t: usize) -> f64 {
        self.base_timestep[t - 1] as f64 / self.base_steps as f64
    }

    pub fn base_timestep(&self, t: usize) -> usize {
        self.base_timestep[t - 1]
    }

    pub fn base_steps(&self) -> usize {
        self.base_steps
    }

    /// Nearest valid timestep to `fraction · T`.
    pub fn timestep_at_fraction(&self, fraction: f64) -> usize {
        let t = libm::round(fraction * self.steps() as f64);
        (t.max(1.0) as usize).min(self.steps())
    }

    /// Hash of the tables of this schedule.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv64::new();
        h.write(self.kind.name().as_bytes()).write_u64(self.base_steps as u64);
        for (b, t) in self.betas.iter().zip(&self.base_timestep) {
            h.write_f64(*b).write_u64(*t as u64);
        }
        h.finish()
    }

    /// Fingerprint of the schedule this one was respaced from (its own
    /// fingerprint when it was never respaced). Models trained on the base
    /// schedule stay valid on any respacing of it.
    pub fn base_fingerprint(&self) -> u64 {
        self.base_fingerprint
    }
}

fn cumulative(betas: &[f64]) -> Vec<f64> {
    let mut acc = 1.0;
    betas
        .iter()
        .map(|b| {
            acc *= 1.0 - b;
            acc
        })
        .collect()
}

/// One-shot forward perturbation `sqrt(ᾱ_t)·x0 + sqrt(1-ᾱ_t)·eps`.
pub fn perturb(x0: &[f64], t: usize, eps: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    sched.check(t)?;
    check_dim(x0.len(), eps.len())?;
    let a = sched.alpha_bar(t);
    Ok(crate::vecops::lin_comb(libm::sqrt(a), x0, libm::sqrt(1.0 - a), eps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn linear(start: f64, end: f64, steps: usize) -> NoiseSchedule {
        NoiseSchedule::build(ScheduleKind::Linear { beta_start: start, beta_end: end }, steps).unwrap()
    }

    #[test]
    fn linear_two_steps() {
        let s = linear(0.1, 0.2, 2);
        assert_eq!(s.betas(), &[0.1, 0.2]);
        assert!((s.alpha_bar(1) - 0.9).abs() < 1e-15);
        assert!((s.alpha_bar(2) - 0.72).abs() < 1e-15);
    }

    #[test]
    fn linear_single_step() {
        let s = linear(0.5, 0.5, 1);
        assert_eq!(s.alpha_cum(), &[0.5]);
        assert_eq!(s.reverse_var(1), 0.5);
    }

    #[test]
    fn cosine_thousand_steps() {
        let s = NoiseSchedule::build(ScheduleKind::cosine_default(), 1000).unwrap();
        assert!(s.alpha_cum().windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha_bar(1000) < 1e-3);
        assert!(s.betas().iter().all(|&b| b > 0.0 && b <= COSINE_MAX_BETA));
        assert_eq!(s.alpha_bar(1), 1.0 - s.beta(1));
    }

    #[test]
    fn cosine_matches_closed_form() {
        // Unclipped entries reproduce f(t)/f(0) up to rounding of the product.
        let s = NoiseSchedule::build(ScheduleKind::cosine_default(), 100).unwrap();
        let f = |t: f64| {
            let c = libm::cos(((t / 100.0 + 0.008) / 1.008) * FRAC_PI_2);
            c * c
        };
        for t in [1usize, 10, 50, 90] {
            let want = f(t as f64) / f(0.0);
            assert!((s.alpha_bar(t) - want).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn linear_thousand_steps_reaches_noise() {
        let s = linear(1e-4, 0.02, 1000);
        assert!(s.alpha_bar(1000) < 1e-3);
        assert!(s.alpha_cum().windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn invalid_configs() {
        assert!(matches!(NoiseSchedule::build(ScheduleKind::linear_default(), 0), Err(Error::Config(_))));
        for (a, b) in [(0.0, 0.1), (0.2, 0.1), (0.1, 1.0), (-0.1, 0.1)] {
            assert!(NoiseSchedule::build(ScheduleKind::Linear { beta_start: a, beta_end: b }, 10).is_err());
        }
        assert!(NoiseSchedule::build(ScheduleKind::Cosine { offset: f64::NAN }, 10).is_err());
    }

    #[test]
    fn build_is_deterministic() {
        let a = NoiseSchedule::build(ScheduleKind::cosine_default(), 333).unwrap();
        let b = NoiseSchedule::build(ScheduleKind::cosine_default(), 333).unwrap();
        assert!(a.betas().iter().zip(b.betas()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn respace_uniform_stride() {
        let base = NoiseSchedule::build(ScheduleKind::cosine_default(), 1000).unwrap();
        let r = base.respace(250).unwrap();
        assert_eq!(r.steps(), 250);
        assert_eq!(r.base_timestep(1), 4);
        assert_eq!(r.base_timestep(250), 1000);
        assert_eq!(r.alpha_bar(1), base.alpha_bar(4));
        assert_eq!(r.alpha_bar(250), base.alpha_bar(1000));
        assert!(r.betas().iter().all(|&b| b > 0.0 && b < 1.0));
        assert_eq!(r.base_fingerprint(), base.fingerprint());
        assert_ne!(r.fingerprint(), base.fingerprint());
        assert_eq!(r.time_feature(250), 1.0);
        assert!(base.respace(1001).is_err());
        assert!(base.respace(0).is_err());
        // Odd ratios still end on the last step and never repeat one.
        let odd = base.respace(300).unwrap();
        assert_eq!(odd.base_timestep(300), 1000);
        assert!((2..=300).all(|t| odd.base_timestep(t) > odd.base_timestep(t - 1)));
    }

    #[test]
    fn fraction_rounding() {
        let s = linear(1e-4, 0.02, 250);
        assert_eq!(s.timestep_at_fraction(0.8), 200);
        assert_eq!(s.timestep_at_fraction(0.5), 125);
        assert_eq!(s.timestep_at_fraction(1e-6), 1);
        assert_eq!(s.timestep_at_fraction(1.5), 250);
    }

    #[test]
    fn perturb_cases() {
        let s = linear(1e-4, 0.02, 100);
        let x0 = vec![1.0, -2.0];
        let out = perturb(&x0, 30, &[0.0, 0.0], &s).unwrap();
        let a = libm::sqrt(s.alpha_bar(30));
        assert_eq!(out, vec![a * 1.0, a * -2.0]);

        let eps = vec![0.3, 0.7];
        let out = perturb(&[0.0, 0.0], 30, &eps, &s).unwrap();
        let b = libm::sqrt(1.0 - s.alpha_bar(30));
        assert_eq!(out, vec![b * 0.3, b * 0.7]);

        assert!(matches!(perturb(&x0, 0, &eps, &s), Err(Error::TimestepOutOfRange { .. })));
        assert!(matches!(perturb(&x0, 101, &eps, &s), Err(Error::TimestepOutOfRange { .. })));
        assert!(matches!(perturb(&x0, 1, &[0.0], &s), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn perturb_quarter_alpha() {
        // A one-step schedule with beta = 0.75 has alpha_bar = 0.25.
        let s = linear(0.75, 0.75, 1);
        let out = perturb(&[1.0, 0.0], 1, &[0.0, 1.0], &s).unwrap();
        assert!((out[0] - 0.5).abs() < 1e-15);
        assert!((out[1] - 0.866_025_403_784_438_6).abs() < 1e-15);
    }
}
