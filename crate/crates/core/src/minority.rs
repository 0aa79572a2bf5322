//! Tweedie denoising and the two minority metrics.
//!
//! The clean-sample minority score of `x0` at timestep `t` is the expected
//! discrepancy between `x0` and the Tweedie denoising of a noised copy of
//! it. The inference-time metric applies the same construction to the
//! Tweedie surrogate `x̂0(x_t)` of a noisy latent: perturb it to level `s`,
//! denoise again and compare.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::rng::standard_normal;
use crate::schedule::{perturb, NoiseSchedule};
use crate::score_model::{check_input, ScoreModel};
use crate::vecops::sq_dist;

/// Smallest `ᾱ_t` Tweedie's formula will divide by.
pub const MIN_ALPHA_BAR: f64 = 1e-12;

/// A fixed, differentiable map applied before the squared error.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap {
    /// `x ↦ A x` with `A` stored row-major, `out_dim` rows.
    Linear { out_dim: usize, matrix: Vec<f64> },
    /// `x ↦ tanh(x / scale)`, elementwise.
    Tanh { scale: f64 },
}

impl FeatureMap {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            FeatureMap::Linear { out_dim, matrix } => {
                if *out_dim == 0 || matrix.len() != out_dim * dim {
                    return Err(Error::Config(alloc::format!("linear feature map needs {out_dim}x{dim} entries, got {}", matrix.len())));
                }
                if matrix.iter().any(|m| !m.is_finite()) {
                    return Err(Error::Config("linear feature map has non-finite entries".into()));
                }
            }
            FeatureMap::Tanh { scale } => {
                if !(scale.is_finite() && *scale > 0.0) {
                    return Err(Error::Config("tanh feature scale must be positive".into()));
                }
            }
        }
        Ok(())
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            FeatureMap::Linear { out_dim, matrix } => {
                let n = x.len();
                (0..*out_dim).map(|r| matrix[r * n..(r + 1) * n].iter().zip(x).map(|(a, b)| a * b).sum()).collect()
            }
            FeatureMap::Tanh { scale } => x.iter().map(|v| libm::tanh(v / scale)).collect(),
        }
    }

    /// `cᵀ · ∂φ(x)/∂x`.
    pub fn vjp(&self, x: &[f64], c: &[f64]) -> Vec<f64> {
        match self {
            FeatureMap::Linear { matrix, .. } => {
                let n = x.len();
                (0..n).map(|i| c.iter().enumerate().map(|(r, cr)| cr * matrix[r * n + i]).sum()).collect()
            }
            FeatureMap::Tanh { scale } => x
                .iter()
                .zip(c)
                .map(|(v, ci)| {
                    let th = libm::tanh(v / scale);
                    ci * (1.0 - th * th) / scale
                })
                .collect(),
        }
    }
}

/// Discrepancy `d(a, b)` between two data vectors.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum DistanceSpec {
    /// `||a - b||²`.
    #[default]
    SquaredError,
    /// `||φ(a) - φ(b)||²` for a fixed feature map `φ`.
    Feature(FeatureMap),
}

impl DistanceSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            DistanceSpec::SquaredError => Ok(()),
            DistanceSpec::Feature(map) => map.validate(dim),
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            DistanceSpec::SquaredError => sq_dist(a, b),
            DistanceSpec::Feature(map) => sq_dist(&map.apply(a), &map.apply(b)),
        }
    }

    /// Gradients of `d(a, b)` with respect to `a` and to `b`.
    pub fn grads(&self, a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
        match self {
            DistanceSpec::SquaredError => {
                let ga: Vec<f64> = a.iter().zip(b).map(|(x, y)| 2.0 * (x - y)).collect();
                let gb = ga.iter().map(|g| -g).collect();
                (ga, gb)
            }
            DistanceSpec::Feature(map) => {
                let fa = map.apply(a);
                let fb = map.apply(b);
                let r: Vec<f64> = fa.iter().zip(&fb).map(|(x, y)| 2.0 * (x - y)).collect();
                let neg: Vec<f64> = r.iter().map(|v| -v).collect();
                (map.vjp(a, &r), map.vjp(b, &neg))
            }
        }
    }
}

/// Monte-Carlo estimate of a minority metric.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricEval {
    /// Mean of `draws`.
    pub value: f64,
    /// Perturbation timestep (`t` for the minority score, `s` for the
    /// inference-time metric).
    pub timestep: usize,
    pub mc_samples: usize,
    pub draws: Vec<f64>,
}

impl MetricEval {
    fn from_draws(timestep: usize, draws: Vec<f64>) -> Self {
        let value = draws.iter().sum::<f64>() / draws.len() as f64;
        MetricEval { value, timestep, mc_samples: draws.len(), draws }
    }

    /// Standard error of `value` (zero for a single draw).
    pub fn std_error(&self) -> f64 {
        let n = self.draws.len();
        if n < 2 {
            return 0.0;
        }
        let var = self.draws.iter().map(|d| (d - self.value) * (d - self.value)).sum::<f64>() / (n - 1) as f64;
        libm::sqrt(var / n as f64)
    }
}

pub(crate) fn alpha_checked(t: usize, sched: &NoiseSchedule) -> Result<f64> {
    let a = sched.alpha_bar(t);
    if a < MIN_ALPHA_BAR {
        Err(Error::Degenerate { alpha_bar: a })
    } else {
        Ok(a)
    }
}

/// Tweedie posterior mean `(x_t + (1 - ᾱ_t)·score(x_t, t)) / sqrt(ᾱ_t)`.
pub fn tweedie<M: ScoreModel + ?Sized>(x_t: &[f64], t: usize, model: &M, sched: &NoiseSchedule) -> Result<Vec<f64>> {
    check_input(model, x_t, t, sched)?;
    let a = alpha_checked(t, sched)?;
    Ok(tweedie_unchecked(x_t, t, a, model, sched))
}

pub(crate) fn tweedie_unchecked<M: ScoreModel + ?Sized>(
    x_t: &[f64],
    t: usize,
    alpha_bar: f64,
    model: &M,
    sched: &NoiseSchedule,
) -> Vec<f64> {
    let score = model.score(x_t, t, sched);
    let root = libm::sqrt(alpha_bar);
    x_t.iter().zip(&score).map(|(x, s)| (x + (1.0 - alpha_bar) * s) / root).collect()
}

/// `cᵀ · ∂x̂0(x_t)/∂x_t = (c - sqrt(1 - ᾱ_t)·cᵀ ∂eps/∂x) / sqrt(ᾱ_t)`.
pub(crate) fn tweedie_vjp<M: ScoreModel + ?Sized>(
    x_t: &[f64],
    t: usize,
    alpha_bar: f64,
    model: &M,
    sched: &NoiseSchedule,
    c: &[f64],
) -> Vec<f64> {
    let sigma = libm::sqrt(1.0 - alpha_bar);
    let root = libm::sqrt(alpha_bar);
    let pulled = model.eps_vjp(x_t, t, sched, c);
    c.iter().zip(&pulled).map(|(ci, pi)| (ci - sigma * pi) / root).collect()
}

/// Draws `m` noise vectors of dimension `dim`.
pub fn draw_noise<R: Rng + ?Sized>(rng: &mut R, m: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..m).map(|_| standard_normal(rng, dim)).collect()
}

/// Minority score of a clean sample, estimated with `m` draws from `rng`.
#[allow(clippy::too_many_arguments)]
pub fn minority_score<M: ScoreModel + ?Sized, R: Rng + ?Sized>(
    x0: &[f64],
    t: usize,
    model: &M,
    sched: &NoiseSchedule,
    d: &DistanceSpec,
    m: usize,
    rng: &mut R,
) -> Result<MetricEval> {
    if m == 0 {
        return Err(Error::Config("Monte-Carlo sample count must be at least 1".into()));
    }
    let noise = draw_noise(rng, m, x0.len());
    minority_score_with_noise(x0, t, model, sched, d, &noise)
}

/// Minority score using the given noise draws, one metric draw per vector.
pub fn minority_score_with_noise<M: ScoreModel + ?Sized>(
    x0: &[f64],
    t: usize,
    model: &M,
    sched: &NoiseSchedule,
    d: &DistanceSpec,
    noise: &[Vec<f64>],
) -> Result<MetricEval> {
    check_input(model, x0, t, sched)?;
    d.validate(x0.len())?;
    if noise.is_empty() {
        return Err(Error::Config("Monte-Carlo sample count must be at least 1".into()));
    }
    let a = alpha_checked(t, sched)?;
    let draws = noise
        .iter()
        .map(|eps| {
            let x_t = perturb(x0, t, eps, sched)?;
            Ok(d.eval(x0, &tweedie_unchecked(&x_t, t, a, model, sched)))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(MetricEval::from_draws(t, draws))
}

/// Inference-time minority metric of a noisy latent `x_t`, perturbing its
/// Tweedie surrogate at timestep `s` with `m` draws from `rng`.
#[allow(clippy::too_many_arguments)]
pub fn inference_metric<M: ScoreModel + ?Sized, R: Rng + ?Sized>(
    x_t: &[f64],
    t: usize,
    s: usize,
    model: &M,
    sched: &NoiseSchedule,
    d: &DistanceSpec,
    m: usize,
    rng: &mut R,
) -> Result<MetricEval> {
    if m == 0 {
        return Err(Error::Config("Monte-Carlo sample count must be at least 1".into()));
    }
    check_dim(model.dim(), x_t.len())?;
    let noise = draw_noise(rng, m, x_t.len());
    inference_metric_with_noise(x_t, t, s, model, sched, d, &noise)
}

/// Inference-time metric with pinned noise draws; equals
/// `minority_score_with_noise(tweedie(x_t, t), s, ..)` exactly.
pub fn inference_metric_with_noise<M: ScoreModel + ?Sized>(
    x_t: &[f64],
    t: usize,
    s: usize,
    model: &M,
    sched: &NoiseSchedule,
    d: &DistanceSpec,
    noise: &[Vec<f64>],
) -> Result<MetricEval> {
    let x0_hat = tweedie(x_t, t, model, sched)?;
    minority_score_with_noise(&x0_hat, s, model, sched, d, noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamPurpose};
    use crate::schedule::ScheduleKind;
    use crate::score_model::{GmmModel, GmmSpec};
    use alloc::vec;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::build(ScheduleKind::linear_default(), 100).unwrap()
    }

    /// One-step schedule with the requested alpha-bar.
    fn single(alpha_bar: f64) -> NoiseSchedule {
        NoiseSchedule::build(ScheduleKind::Linear { beta_start: 1.0 - alpha_bar, beta_end: 1.0 - alpha_bar }, 1).unwrap()
    }

    fn unit(dim: usize) -> GmmModel {
        GmmModel::new(GmmSpec::standard_normal(dim))
    }

    /// Tweedie always lands on a fixed atom: score(x) = (sqrt(ᾱ)·atom - x) / (1 - ᾱ).
    struct AtomModel {
        atom: Vec<f64>,
    }

    impl ScoreModel for AtomModel {
        fn dim(&self) -> usize {
            self.atom.len()
        }
        fn eps(&self, x: &[f64], t: usize, sched: &NoiseSchedule) -> Vec<f64> {
            let a = sched.alpha_bar(t);
            let sigma = libm::sqrt(1.0 - a);
            x.iter().zip(&self.atom).map(|(xi, ai)| (xi - libm::sqrt(a) * ai) / sigma).collect()
        }
        fn eps_vjp(&self, _x: &[f64], t: usize, sched: &NoiseSchedule, c: &[f64]) -> Vec<f64> {
            let sigma = libm::sqrt(1.0 - sched.alpha_bar(t));
            c.iter().map(|ci| ci / sigma).collect()
        }
    }

    #[test]
    fn tweedie_unit_gaussian() {
        let s = sched();
        let x = [1.5, -0.25];
        for t in [1, 30, 100] {
            let got = tweedie(&x, t, &unit(2), &s).unwrap();
            let a = libm::sqrt(s.alpha_bar(t));
            for (g, xi) in got.iter().zip(&x) {
                assert!((g - a * xi).abs() < 1e-12);
            }
        }
    }

    struct ZeroScore;
    impl ScoreModel for ZeroScore {
        fn dim(&self) -> usize {
            2
        }
        fn eps(&self, _x: &[f64], _t: usize, _s: &NoiseSchedule) -> Vec<f64> {
            vec![0.0, 0.0]
        }
        fn eps_vjp(&self, _x: &[f64], _t: usize, _s: &NoiseSchedule, _c: &[f64]) -> Vec<f64> {
            vec![0.0, 0.0]
        }
    }

    #[test]
    fn tweedie_zero_score_rescales() {
        let s = sched();
        let got = tweedie(&[2.0, -4.0], 50, &ZeroScore, &s).unwrap();
        let a = libm::sqrt(s.alpha_bar(50));
        assert_eq!(got, vec![2.0 / a, -4.0 / a]);
    }

    #[test]
    fn tweedie_near_noiseless_is_identity() {
        let s = NoiseSchedule::build(ScheduleKind::Linear { beta_start: 1e-15, beta_end: 1e-15 }, 1).unwrap();
        let got = tweedie(&[0.7, -0.1], 1, &unit(2), &s).unwrap();
        assert!((got[0] - 0.7).abs() < 1e-12 && (got[1] + 0.1).abs() < 1e-12);
    }

    #[test]
    fn tweedie_rejects_degenerate_alpha() {
        let s = NoiseSchedule::build(ScheduleKind::Linear { beta_start: 0.999, beta_end: 0.999 }, 5).unwrap();
        assert!(matches!(tweedie(&[0.0], 5, &unit(1), &s), Err(Error::Degenerate { .. })));
        assert!(matches!(tweedie(&[0.0], 6, &unit(1), &s), Err(Error::TimestepOutOfRange { .. })));
    }

    #[test]
    fn minority_score_closed_form_at_origin() {
        // E = (1-ᾱ)²·||x0||² + ᾱ(1-ᾱ)·D = 0.25 at x0 = 0, ᾱ = 0.5, D = 1.
        let s = single(0.5);
        let mut rng = stream(11, 0, StreamPurpose::Aux);
        let ev = minority_score(&[0.0], 1, &unit(1), &s, &DistanceSpec::SquaredError, 20_000, &mut rng).unwrap();
        assert_eq!(ev.mc_samples, 20_000);
        assert!((ev.value - 0.25).abs() < 3.0 * ev.std_error(), "{} ± {}", ev.value, ev.std_error());
        assert!(ev.draws.iter().all(|d| *d >= 0.0));
    }

    #[test]
    fn minority_score_zero_for_atom() {
        let atom = vec![0.3, -1.1];
        let model = AtomModel { atom: atom.clone() };
        let mut rng = stream(1, 0, StreamPurpose::Aux);
        let ev = minority_score(&atom, 40, &model, &sched(), &DistanceSpec::SquaredError, 8, &mut rng).unwrap();
        assert!(ev.value < 1e-20);
    }

    #[test]
    fn minority_score_orders_by_norm() {
        let s = sched();
        let model = unit(2);
        // Closed form (1-ᾱ)²·||x0||² + ᾱ(1-ᾱ)·D is increasing in ||x0|| at every t.
        for t in 1..=100 {
            let a = s.alpha_bar(t);
            assert!((1.0 - a) * (1.0 - a) * 9.0 + a * (1.0 - a) * 2.0 > a * (1.0 - a) * 2.0);
        }
        // Monte Carlo with 256 common draws orders the two points once the
        // gap is resolvable.
        for t in [25, 50, 75, 100] {
            let noise = draw_noise(&mut stream(2, t as u64, StreamPurpose::Aux), 256, 2);
            let near = minority_score_with_noise(&[0.0, 0.0], t, &model, &s, &DistanceSpec::SquaredError, &noise).unwrap();
            let far = minority_score_with_noise(&[3.0, 0.0], t, &model, &s, &DistanceSpec::SquaredError, &noise).unwrap();
            assert!(far.value > near.value, "t={t}");
        }
    }

    #[test]
    fn inference_metric_equals_minority_score_of_surrogate() {
        let spec = GmmSpec::new(vec![0.7, 0.3], vec![vec![1.0, 1.0], vec![-1.0, 0.0]], vec![0.1, 0.2]).unwrap();
        let model = GmmModel::new(spec);
        let s = sched();
        let x_t = [0.4, -0.3];
        let noise = draw_noise(&mut stream(4, 0, StreamPurpose::Aux), 3, 2);
        let lhs = inference_metric_with_noise(&x_t, 60, 80, &model, &s, &DistanceSpec::SquaredError, &noise).unwrap();
        let surrogate = tweedie(&x_t, 60, &model, &s).unwrap();
        let rhs = minority_score_with_noise(&surrogate, 80, &model, &s, &DistanceSpec::SquaredError, &noise).unwrap();
        assert_eq!(lhs, rhs);

        // Same rng state gives the same draws through the sampling entry points.
        let a = inference_metric(&x_t, 60, 80, &model, &s, &DistanceSpec::SquaredError, 2, &mut stream(9, 1, StreamPurpose::Aux)).unwrap();
        let b = minority_score(&surrogate, 80, &model, &s, &DistanceSpec::SquaredError, 2, &mut stream(9, 1, StreamPurpose::Aux)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn inference_metric_closed_form_at_origin() {
        // x_t = 0 ⇒ x̂0 = 0, expectation ᾱ_s(1 - ᾱ_s)·D.
        let s = sched();
        let model = unit(2);
        let mut rng = stream(12, 0, StreamPurpose::Aux);
        let ev = inference_metric(&[0.0, 0.0], 30, 60, &model, &s, &DistanceSpec::SquaredError, 10_000, &mut rng).unwrap();
        let a = s.alpha_bar(60);
        let want = a * (1.0 - a) * 2.0;
        assert!((ev.value - want).abs() < 3.0 * ev.std_error(), "{} vs {want}", ev.value);
        assert_eq!(ev.timestep, 60);
    }

    #[test]
    fn pinned_noise_is_bit_identical() {
        let s = sched();
        let noise = vec![vec![0.1, 0.9]];
        let a = inference_metric_with_noise(&[1.0, 2.0], 10, 80, &unit(2), &s, &DistanceSpec::SquaredError, &noise).unwrap();
        let b = inference_metric_with_noise(&[1.0, 2.0], 10, 80, &unit(2), &s, &DistanceSpec::SquaredError, &noise).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
    }

    #[test]
    fn zero_mc_count_rejected() {
        let s = sched();
        let mut rng = stream(1, 0, StreamPurpose::Aux);
        assert!(minority_score(&[0.0], 1, &unit(1), &s, &DistanceSpec::SquaredError, 0, &mut rng).is_err());
        assert!(inference_metric(&[0.0], 1, 2, &unit(1), &s, &DistanceSpec::SquaredError, 0, &mut rng).is_err());
    }

    #[test]
    fn distance_properties() {
        let tanh = DistanceSpec::Feature(FeatureMap::Tanh { scale: 2.0 });
        let lin = DistanceSpec::Feature(FeatureMap::Linear { out_dim: 1, matrix: vec![1.0, -2.0] });
        let a = [0.3, -1.2];
        let b = [1.1, 0.4];
        for d in [DistanceSpec::SquaredError, tanh, lin] {
            assert_eq!(d.eval(&a, &a), 0.0);
            assert_eq!(d.eval(&a, &b), d.eval(&b, &a));
            assert!(d.eval(&a, &b) >= 0.0);
            let (ga, gb) = d.grads(&a, &b);
            let h = 1e-6;
            for i in 0..2 {
                let mut ap = a;
                let mut am = a;
                ap[i] += h;
                am[i] -= h;
                let fd = (d.eval(&ap, &b) - d.eval(&am, &b)) / (2.0 * h);
                assert!((ga[i] - fd).abs() < 1e-7);
                let mut bp = b;
                let mut bm = b;
                bp[i] += h;
                bm[i] -= h;
                let fd = (d.eval(&a, &bp) - d.eval(&a, &bm)) / (2.0 * h);
                assert!((gb[i] - fd).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn feature_map_validation() {
        assert!(FeatureMap::Linear { out_dim: 2, matrix: vec![1.0; 3] }.validate(2).is_err());
        assert!(FeatureMap::Tanh { scale: 0.0 }.validate(2).is_err());
        assert!(FeatureMap::Linear { out_dim: 1, matrix: vec![1.0; 2] }.validate(2).is_ok());
    }
}
