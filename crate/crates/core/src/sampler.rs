//! Ancestral sampling with self-guidance toward low-density regions.
//!
//! Each reverse step moves `x_t` to `μ_θ(x_t, t) + sqrt(β_t)·z`. On steps with
//! `t mod n == 0` the guided sampler also adds `w_t · g(x_t)`, where `g` is the
//! gradient of the inference-time minority metric at the pre-step state
//! (optionally with one branch stopped and rescaled to unit l∞ norm).

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::minority::{alpha_checked, draw_noise, tweedie_unchecked, tweedie_vjp, DistanceSpec};
use crate::rng::{standard_normal, stream, ChainRng, StreamPurpose};
use crate::schedule::NoiseSchedule;
use crate::score_model::{check_input, ScoreModel};
use crate::vecops::{norm_l2, norm_linf};

/// How the guidance weight `w_t` varies over timesteps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightSchedule {
    /// `w_t = w`.
    Fixed,
    /// `w_t = w · 1{t ≥ t_mid}`.
    SwitchOff { t_mid: usize },
    /// `w_t = w · β_t` (the fixed reverse-process variance).
    Variance,
}

/// Which branch of the metric is treated as a constant when differentiating.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopGradient {
    /// Differentiate through both the surrogate `x̂0` and its reconstruction.
    None,
    /// Treat the first argument `x̂0` of the distance as constant.
    SgFirst,
    /// Treat the reconstruction `x̂̂0` as constant.
    SgSecond,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuidanceMethod {
    /// Gradient of the inference-time minority metric.
    Minority,
    /// Descent on the perturbed log-density, `-score(x_t, t)`.
    NaiveDensity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceConfig {
    pub w: f64,
    pub schedule: WeightSchedule,
    /// Guidance is applied on steps with `t mod n == 0`.
    pub n: usize,
    /// Perturbation timestep of the metric as a fraction of `T`.
    pub s_fraction: f64,
    pub sg_mode: StopGradient,
    pub distance: DistanceSpec,
    pub normalize_linf: bool,
    /// Noise draws per metric evaluation.
    pub mc_samples: usize,
    pub method: GuidanceMethod,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            w: 0.2,
            schedule: WeightSchedule::Variance,
            n: 5,
            s_fraction: 0.8,
            sg_mode: StopGradient::SgSecond,
            distance: DistanceSpec::SquaredError,
            normalize_linf: true,
            mc_samples: 1,
            method: GuidanceMethod::Minority,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self, sched: &NoiseSchedule, dim: usize) -> Result<()> {
        if !(self.w.is_finite() && self.w >= 0.0) {
            return Err(Error::Config(alloc::format!("guidance scale must be finite and >= 0, got {}", self.w)));
        }
        if self.n == 0 {
            return Err(Error::Config("intermittent rate n must be at least 1".into()));
        }
        if !(self.s_fraction > 0.0 && self.s_fraction < 1.0) {
            return Err(Error::Config(alloc::format!("s fraction must lie in (0, 1), got {}", self.s_fraction)));
        }
        if self.mc_samples == 0 {
            return Err(Error::Config("Monte-Carlo sample count must be at least 1".into()));
        }
        if let WeightSchedule::SwitchOff { t_mid } = self.schedule {
            if t_mid == 0 || t_mid > sched.steps() {
                return Err(Error::Config(alloc::format!("t_mid {t_mid} outside 1..={}", sched.steps())));
            }
        }
        self.distance.validate(dim)
    }

    /// Perturbation timestep `s` of the metric.
    pub fn perturbation_timestep(&self, sched: &NoiseSchedule) -> usize {
        sched.timestep_at_fraction(self.s_fraction)
    }

    /// Number of guided steps in a run over `steps` timesteps.
    pub fn guided_steps(&self, steps: usize) -> usize {
        steps / self.n
    }

    /// Model `(forward, backward)` calls one chain makes over `steps` timesteps.
    pub fn expected_calls(&self, steps: usize) -> (u64, u64) {
        let guided = self.guided_steps(steps) as u64;
        let m = self.mc_samples as u64;
        match self.method {
            GuidanceMethod::NaiveDensity => (steps as u64 + guided, 0),
            GuidanceMethod::Minority => {
                let backward = match self.sg_mode {
                    StopGradient::SgSecond => 1,
                    StopGradient::None | StopGradient::SgFirst => m + 1,
                };
                (steps as u64 + guided * (1 + m), guided * backward)
            }
        }
    }
}

/// Guidance weight `w_t`.
pub fn weight(t: usize, cfg: &GuidanceConfig, sched: &NoiseSchedule) -> f64 {
    match cfg.schedule {
        WeightSchedule::Fixed => cfg.w,
        WeightSchedule::SwitchOff { t_mid } => {
            if t >= t_mid {
                cfg.w
            } else {
                0.0
            }
        }
        WeightSchedule::Variance => cfg.w * sched.reverse_var(t),
    }
}

/// A guidance vector and diagnostics of the raw gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceEval {
    /// The guidance, l∞-normalised when the config asks for it.
    pub direction: Vec<f64>,
    pub raw_l2: f64,
    pub raw_linf: f64,
    /// Inference-time metric at `x_t` (NaN for the naive method).
    pub metric: f64,
}

fn finish(raw: Vec<f64>, normalize: bool, metric: f64) -> GuidanceEval {
    let raw_l2 = norm_l2(&raw);
    let raw_linf = norm_linf(&raw);
    let direction = if normalize && raw_linf > 0.0 { raw.iter().map(|g| g / raw_linf).collect() } else { raw };
    GuidanceEval { direction, raw_l2, raw_linf, metric }
}

/// Guidance at `x_t` with the metric's noise pinned to `noise` (one vector
/// per Monte-Carlo draw; ignored by the naive method).
pub fn guidance_with_noise<M: ScoreModel + ?Sized>(
    x_t: &[f64],
    t: usize,
    cfg: &GuidanceConfig,
    model: &M,
    sched: &NoiseSchedule,
    noise: &[Vec<f64>],
) -> Result<GuidanceEval> {
    check_input(model, x_t, t, sched)?;
    if cfg.method == GuidanceMethod::NaiveDensity {
        let raw = model.score(x_t, t, sched).into_iter().map(|s| -s).collect();
        return Ok(finish(raw, cfg.normalize_linf, f64::NAN));
    }
    if noise.is_empty() {
        return Err(Error::Config("guidance needs at least one noise draw".into()));
    }
    for eps in noise {
        check_dim(x_t.len(), eps.len())?;
    }
    let s = cfg.perturbation_timestep(sched);
    let a_t = alpha_checked(t, sched)?;
    let a_s = alpha_checked(s, sched)?;
    let (root_s, sigma_s) = (libm::sqrt(a_s), libm::sqrt(1.0 - a_s));

    let x0_hat = tweedie_unchecked(x_t, t, a_t, model, sched);
    let mut pullback = alloc::vec![0.0; x_t.len()];
    let mut metric = 0.0;
    for eps in noise {
        let x_s: Vec<f64> = x0_hat.iter().zip(eps).map(|(x, e)| root_s * x + sigma_s * e).collect();
        let recon = tweedie_unchecked(&x_s, s, a_s, model, sched);
        metric += cfg.distance.eval(&x0_hat, &recon);
        let (grad_first, grad_second) = cfg.distance.grads(&x0_hat, &recon);
        if cfg.sg_mode != StopGradient::SgFirst {
            for (p, g) in pullback.iter_mut().zip(&grad_first) {
                *p += g;
            }
        }
        if cfg.sg_mode != StopGradient::SgSecond {
            let through = tweedie_vjp(&x_s, s, a_s, model, sched, &grad_second);
            for (p, g) in pullback.iter_mut().zip(&through) {
                *p += root_s * g;
            }
        }
    }
    let m = noise.len() as f64;
    pullback.iter_mut().for_each(|p| *p /= m);
    let raw = tweedie_vjp(x_t, t, a_t, model, sched, &pullback);
    Ok(finish(raw, cfg.normalize_linf, metric / m))
}

/// Guidance vector at `x_t`, drawing `cfg.mc_samples` noise vectors from `rng`.
pub fn guidance<M: ScoreModel + ?Sized, R: Rng + ?Sized>(
    x_t: &[f64],
    t: usize,
    cfg: &GuidanceConfig,
    model: &M,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let noise = match cfg.method {
        GuidanceMethod::Minority => draw_noise(rng, cfg.mc_samples, x_t.len()),
        GuidanceMethod::NaiveDensity => Vec::new(),
    };
    guidance_with_noise(x_t, t, cfg, model, sched, &noise).map(|g| g.direction)
}

/// `-score(x_t, t)`, optionally l∞-normalised.
pub fn naive_density_guidance<M: ScoreModel + ?Sized>(
    x_t: &[f64],
    t: usize,
    model: &M,
    sched: &NoiseSchedule,
    normalize_linf: bool,
) -> Result<Vec<f64>> {
    check_input(model, x_t, t, sched)?;
    let raw = model.score(x_t, t, sched).into_iter().map(|s| -s).collect();
    Ok(finish(raw, normalize_linf, f64::NAN).direction)
}

/// Per-step diagnostics of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Timestep the step started from.
    pub t: usize,
    pub weight: f64,
    pub guided: bool,
    pub guidance_l2: f64,
    pub guidance_linf: f64,
    pub metric: Option<f64>,
}

/// Current latent of one sampling chain with its random streams.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub x: Vec<f64>,
    pub t: usize,
    process: ChainRng,
    guidance: ChainRng,
    pub trace: Option<Vec<StepRecord>>,
}

impl ChainState {
    /// Chain `chain` of a run seeded with `seed`, starting from
    /// `x_T ~ N(0, I)` drawn from its process stream.
    pub fn new(dim: usize, sched: &NoiseSchedule, seed: u64, chain: u64, trace: bool) -> Self {
        let mut process = stream(seed, chain, StreamPurpose::Process);
        let x = standard_normal(&mut process, dim);
        ChainState { x, t: sched.steps(), process, guidance: stream(seed, chain, StreamPurpose::Guidance), trace: trace.then(Vec::new) }
    }

    /// A chain at an arbitrary state.
    pub fn from_parts(x: Vec<f64>, t: usize, process: ChainRng, guidance: ChainRng) -> Self {
        ChainState { x, t, process, guidance, trace: None }
    }

    fn record(&mut self, rec: StepRecord) {
        if let Some(trace) = self.trace.as_mut() {
            trace.push(rec);
        }
    }
}

fn reverse_mean<M: ScoreModel + ?Sized>(x: &[f64], t: usize, model: &M, sched: &NoiseSchedule) -> Vec<f64> {
    let beta = sched.beta(t);
    let root = libm::sqrt(1.0 - beta);
    let score = model.score(x, t, sched);
    x.iter().zip(&score).map(|(xi, si)| (xi + beta * si) / root).collect()
}

fn transition<M: ScoreModel + ?Sized>(state: &mut ChainState, model: &M, sched: &NoiseSchedule) -> Result<Vec<f64>> {
    let t = state.t;
    if t == 0 {
        return Err(Error::TimestepOutOfRange { t, steps: sched.steps() });
    }
    check_input(model, &state.x, t, sched)?;
    let mut next = reverse_mean(&state.x, t, model, sched);
    if t > 1 {
        let sd = libm::sqrt(sched.reverse_var(t));
        let z = standard_normal(&mut state.process, next.len());
        for (n, zi) in next.iter_mut().zip(&z) {
            *n += sd * zi;
        }
    }
    Ok(next)
}

/// One unguided reverse step `x_{t-1} = μ_θ(x_t, t) + sqrt(β_t)·z` (`z = 0` at `t = 1`).
pub fn ancestral_step<M: ScoreModel + ?Sized>(state: &mut ChainState, model: &M, sched: &NoiseSchedule) -> Result<()> {
    let next = transition(state, model, sched)?;
    let t = state.t;
    state.x = next;
    state.t -= 1;
    state.record(StepRecord { t, weight: 0.0, guided: false, guidance_l2: 0.0, guidance_linf: 0.0, metric: None });
    Ok(())
}

/// One reverse step with guidance on steps where `t mod n == 0`, evaluated at
/// the pre-step state.
pub fn guided_step<M: ScoreModel + ?Sized>(state: &mut ChainState, model: &M, sched: &NoiseSchedule, cfg: &GuidanceConfig) -> Result<()> {
    let t = state.t;
    let mut next = transition(state, model, sched)?;
    let w_t = weight(t, cfg, sched);
    let mut rec = StepRecord { t, weight: w_t, guided: false, guidance_l2: 0.0, guidance_linf: 0.0, metric: None };
    if t.is_multiple_of(cfg.n) {
        let noise = match cfg.method {
            GuidanceMethod::Minority => draw_noise(&mut state.guidance, cfg.mc_samples, state.x.len()),
            GuidanceMethod::NaiveDensity => Vec::new(),
        };
        let g = guidance_with_noise(&state.x, t, cfg, model, sched, &noise)?;
        if w_t != 0.0 {
            for (n, gi) in next.iter_mut().zip(&g.direction) {
                *n += w_t * gi;
            }
        }
        rec.guided = true;
        rec.guidance_l2 = g.raw_l2;
        rec.guidance_linf = g.raw_linf;
        rec.metric = (!g.metric.is_nan()).then_some(g.metric);
    }
    state.x = next;
    state.t -= 1;
    state.record(rec);
    Ok(())
}

/// Final sample of one chain and its optional trace.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainResult {
    pub x0: Vec<f64>,
    pub trace: Option<Vec<StepRecord>>,
}

/// Runs chain `chain` of a guided run from `T` down to 0.
pub fn sample_chain<M: ScoreModel + ?Sized>(
    model: &M,
    sched: &NoiseSchedule,
    cfg: &GuidanceConfig,
    seed: u64,
    chain: u64,
    trace: bool,
) -> Result<ChainResult> {
    cfg.validate(sched, model.dim())?;
    let mut state = ChainState::new(model.dim(), sched, seed, chain, trace);
    while state.t > 0 {
        guided_step(&mut state, model, sched, cfg)?;
    }
    Ok(ChainResult { x0: state.x, trace: state.trace })
}

/// Runs chain `chain` without guidance.
pub fn ancestral_chain<M: ScoreModel + ?Sized>(model: &M, sched: &NoiseSchedule, seed: u64, chain: u64) -> Result<Vec<f64>> {
    let mut state = ChainState::new(model.dim(), sched, seed, chain, false);
    while state.t > 0 {
        ancestral_step(&mut state, model, sched)?;
    }
    Ok(state.x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    pub samples: Vec<Vec<f64>>,
    /// One trace per chain when tracing was requested.
    pub traces: Option<Vec<Vec<StepRecord>>>,
}

/// Runs `chains` guided chains sequentially. Chain `i` only depends on
/// `(seed, i)`, so any parallel schedule over [`sample_chain`] gives the same
/// samples.
pub fn guided_sample<M: ScoreModel + ?Sized>(
    model: &M,
    sched: &NoiseSchedule,
    cfg: &GuidanceConfig,
    chains: usize,
    seed: u64,
    trace: bool,
) -> Result<SampleOutput> {
    if chains == 0 {
        return Err(Error::Config("need at least one chain".into()));
    }
    let mut samples = Vec::with_capacity(chains);
    let mut traces = trace.then(|| Vec::with_capacity(chains));
    for chain in 0..chains as u64 {
        let res = sample_chain(model, sched, cfg, seed, chain, trace)?;
        samples.push(res.x0);
        if let (Some(all), Some(tr)) = (traces.as_mut(), res.trace) {
            all.push(tr);
        }
    }
    Ok(SampleOutput { samples, traces })
}

/// Runs `chains` unguided chains.
pub fn ancestral_sample<M: ScoreModel + ?Sized>(model: &M, sched: &NoiseSchedule, chains: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    (0..chains as u64).map(|c| ancestral_chain(model, sched, seed, c)).collect()
}
