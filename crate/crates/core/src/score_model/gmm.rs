use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::rng::standard_normal;
use crate::schedule::NoiseSchedule;
use crate::score_model::ScoreModel;
use crate::vecops::{dot, sq_dist};

/// Isotropic Gaussian mixture `Σ_k w_k N(μ_k, σ_k² I)`.
///
/// Perturbing a sample with the forward kernel at noise level `ᾱ` yields
/// another isotropic mixture with means `sqrt(ᾱ)·μ_k` and variances
/// `ᾱ·σ_k² + 1 - ᾱ`, so densities, scores and Hessians are exact at every
/// timestep. Methods taking `alpha_bar` use `1.0` for the clean density.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmSpec {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<f64>,
}

impl GmmSpec {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        if means.len() != k || variances.len() != k {
            return Err(Error::Config(alloc::format!("mixture has {k} weights, {} means and {} variances", means.len(), variances.len())));
        }
        let dim = means[0].len();
        if dim == 0 || means.iter().any(|m| m.len() != dim) {
            return Err(Error::Config("mixture means must share a non-zero dimension".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Config("mixture weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(alloc::format!("mixture weights sum to {total}, not 1")));
        }
        if variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("mixture variances must be positive".into()));
        }
        if means.iter().flatten().any(|m| !m.is_finite()) {
            return Err(Error::Config("mixture means must be finite".into()));
        }
        Ok(GmmSpec { weights, means, variances })
    }

    /// `N(0, I)` in `dim` dimensions.
    pub fn standard_normal(dim: usize) -> Self {
        GmmSpec { weights: alloc::vec![1.0], means: alloc::vec![alloc::vec![0.0; dim]], variances: alloc::vec![1.0] }
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// Log of each weighted component density at `x` and their log-sum-exp.
    fn log_terms(&self, x: &[f64], alpha_bar: f64) -> (Vec<f64>, f64) {
        let root = libm::sqrt(alpha_bar);
        let half_dim = 0.5 * self.dim() as f64;
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((w, mu), s2)| {
                let var = alpha_bar * s2 + (1.0 - alpha_bar);
                let d2: f64 = x.iter().zip(mu).map(|(xi, mi)| (xi - root * mi) * (xi - root * mi)).sum();
                libm::log(*w) - half_dim * libm::log(2.0 * PI * var) - d2 / (2.0 * var)
            })
            .collect();
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + libm::log(terms.iter().map(|l| libm::exp(l - max)).sum::<f64>());
        (terms, lse)
    }

    /// Log density at noise level `alpha_bar` (log-sum-exp stabilised).
    pub fn log_density_at(&self, x: &[f64], alpha_bar: f64) -> f64 {
        self.log_terms(x, alpha_bar).1
    }

    /// Posterior component probabilities at `x`.
    pub fn responsibilities_at(&self, x: &[f64], alpha_bar: f64) -> Vec<f64> {
        let (terms, lse) = self.log_terms(x, alpha_bar);
        terms.into_iter().map(|l| libm::exp(l - lse)).collect()
    }

    /// Per-component gradients `-(x - m_k)/v_k` and the variances `v_k`.
    fn component_grads(&self, x: &[f64], alpha_bar: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let root = libm::sqrt(alpha_bar);
        self.means
            .iter()
            .zip(&self.variances)
            .map(|(mu, s2)| {
                let var = alpha_bar * s2 + (1.0 - alpha_bar);
                (x.iter().zip(mu).map(|(xi, mi)| -(xi - root * mi) / var).collect(), var)
            })
            .unzip()
    }

    /// Gradient of the log density at noise level `alpha_bar`.
    pub fn score_at(&self, x: &[f64], alpha_bar: f64) -> Vec<f64> {
        let resp = self.responsibilities_at(x, alpha_bar);
        let (grads, _) = self.component_grads(x, alpha_bar);
        let mut out = alloc::vec![0.0; x.len()];
        for (r, g) in resp.iter().zip(&grads) {
            for (o, gi) in out.iter_mut().zip(g) {
                *o += r * gi;
            }
        }
        out
    }

    /// Hessian of the log density applied to `v`.
    ///
    /// `H = Σ_k r_k (g_k g_kᵀ - I/v_k) - s sᵀ` with responsibilities `r_k`,
    /// component gradients `g_k` and score `s = Σ_k r_k g_k`.
    pub fn hessian_vec_at(&self, x: &[f64], alpha_bar: f64, v: &[f64]) -> Vec<f64> {
        let resp = self.responsibilities_at(x, alpha_bar);
        let (grads, vars) = self.component_grads(x, alpha_bar);
        let dim = x.len();
        let mut score = alloc::vec![0.0; dim];
        let mut out = alloc::vec![0.0; dim];
        for ((r, g), var) in resp.iter().zip(&grads).zip(&vars) {
            let gv = dot(g, v);
            for i in 0..dim {
                score[i] += r * g[i];
                out[i] += r * (g[i] * gv - v[i] / var);
            }
        }
        let sv = dot(&score, v);
        for (o, s) in out.iter_mut().zip(&score) {
            *o -= s * sv;
        }
        out
    }

    /// Draws `n` samples.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let sd = libm::sqrt(self.variances[k]);
        standard_normal(rng, self.dim()).into_iter().zip(&self.means[k]).map(|(z, m)| m + sd * z).collect()
    }

    /// Index of the component whose mean is nearest to `x`.
    pub fn nearest_component(&self, x: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, m) in self.means.iter().enumerate() {
            let d = sq_dist(x, m);
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }
}

/// Exact score of the perturbed mixture at timestep `t`.
pub fn gmm_score(spec: &GmmSpec, x: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
    sched.check(t)?;
    check_dim(spec.dim(), x.len())?;
    Ok(spec.score_at(x, sched.alpha_bar(t)))
}

/// Noise predictor derived from the exact score of a [`GmmSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    spec: GmmSpec,
}

impl GmmModel {
    pub fn new(spec: GmmSpec) -> Self {
        GmmModel { spec }
    }

    pub fn spec(&self) -> &GmmSpec {
        &self.spec
    }
}

impl ScoreModel for GmmModel {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn eps(&self, x: &[f64], t: usize, sched: &NoiseSchedule) -> Vec<f64> {
        let a = sched.alpha_bar(t);
        let sigma = libm::sqrt(1.0 - a);
        self.spec.score_at(x, a).into_iter().map(|s| -sigma * s).collect()
    }

    fn eps_vjp(&self, x: &[f64], t: usize, sched: &NoiseSchedule, cotangent: &[f64]) -> Vec<f64> {
        // The Jacobian of eps is -sigma·H and H is symmetric.
        let a = sched.alpha_bar(t);
        let sigma = libm::sqrt(1.0 - a);
        self.spec.hessian_vec_at(x, a, cotangent).into_iter().map(|h| -sigma * h).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::ScheduleKind;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::build(ScheduleKind::linear_default(), 200).unwrap()
    }

    fn mixture() -> GmmSpec {
        GmmSpec::new(vec![0.5, 0.3, 0.2], vec![vec![1.0, 0.0], vec![-1.0, 0.5], vec![0.2, -1.5]], vec![0.1, 0.3, 0.05]).unwrap()
    }

    #[test]
    fn validation() {
        assert!(GmmSpec::new(vec![0.5, 0.6], vec![vec![0.0], vec![1.0]], vec![1.0, 1.0]).is_err());
        assert!(GmmSpec::new(vec![1.0, 0.0], vec![vec![0.0], vec![1.0]], vec![1.0, 1.0]).is_err());
        assert!(GmmSpec::new(vec![0.5, 0.5], vec![vec![0.0], vec![1.0]], vec![1.0, 0.0]).is_err());
        assert!(GmmSpec::new(vec![0.5, 0.5], vec![vec![0.0], vec![1.0, 2.0]], vec![1.0, 1.0]).is_err());
        assert!(GmmSpec::new(vec![], vec![], vec![]).is_err());
    }

    #[test]
    fn unit_gaussian_score_is_minus_x() {
        let spec = GmmSpec::standard_normal(3);
        let s = sched();
        let x = [0.3, -1.2, 2.5];
        for t in [1, 50, 200] {
            let got = gmm_score(&spec, &x, t, &s).unwrap();
            for (g, xi) in got.iter().zip(&x) {
                assert!((g + xi).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn symmetric_midpoint_has_zero_score() {
        let spec = GmmSpec::new(vec![0.5, 0.5], vec![vec![-2.0, 0.0], vec![2.0, 0.0]], vec![0.2, 0.2]).unwrap();
        let got = gmm_score(&spec, &[0.0, 0.0], 10, &sched()).unwrap();
        assert!(got.iter().all(|g| g.abs() < 1e-15));
        // Equal density at the two means.
        let a = spec.log_density_at(&[-2.0, 0.0], 1.0);
        let b = spec.log_density_at(&[2.0, 0.0], 1.0);
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn score_matches_finite_differences() {
        let spec = mixture();
        let s = sched();
        let h = 1e-5;
        for (t, x) in [(1, [0.4, 0.1]), (40, [-0.7, 0.9]), (150, [1.5, -2.0])] {
            let a = s.alpha_bar(t);
            let got = gmm_score(&spec, &x, t, &s).unwrap();
            for i in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[i] += h;
                xm[i] -= h;
                let fd = (spec.log_density_at(&xp, a) - spec.log_density_at(&xm, a)) / (2.0 * h);
                assert!((got[i] - fd).abs() <= 1e-6 * fd.abs().max(1e-3), "t={t} i={i} {} vs {fd}", got[i]);
            }
        }
    }

    #[test]
    fn hessian_matches_finite_differences_of_score() {
        let spec = mixture();
        let h = 1e-6;
        let x = [0.1, -0.4];
        let v = [0.7, -1.3];
        for a in [0.999, 0.5, 0.05] {
            let got = spec.hessian_vec_at(&x, a, &v);
            let xp: Vec<f64> = x.iter().zip(&v).map(|(xi, vi)| xi + h * vi).collect();
            let xm: Vec<f64> = x.iter().zip(&v).map(|(xi, vi)| xi - h * vi).collect();
            let sp = spec.score_at(&xp, a);
            let sm = spec.score_at(&xm, a);
            for i in 0..2 {
                let fd = (sp[i] - sm[i]) / (2.0 * h);
                assert!((got[i] - fd).abs() <= 1e-5 * fd.abs().max(1.0), "a={a} {} vs {fd}", got[i]);
            }
        }
    }

    #[test]
    fn small_noise_limit_matches_clean_score() {
        let spec = mixture();
        let x = [0.5, -0.2];
        let noisy = spec.score_at(&x, 1.0 - 1e-6);
        let clean = spec.score_at(&x, 1.0);
        for (n, c) in noisy.iter().zip(&clean) {
            assert!((n - c).abs() <= 1e-3 * c.abs().max(1e-12));
        }
    }

    #[test]
    fn eps_vjp_unit_gaussian() {
        let model = GmmModel::new(GmmSpec::standard_normal(2));
        let s = sched();
        let c = [0.3, -2.0];
        let got = model.eps_vjp(&[1.0, 4.0], 77, &s, &c);
        let sigma = libm::sqrt(1.0 - s.alpha_bar(77));
        for (g, ci) in got.iter().zip(&c) {
            assert!((g - sigma * ci).abs() < 1e-14);
        }
        assert_eq!(model.eps_vjp(&[1.0, 4.0], 77, &s, &[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn sampling_hits_component_weights() {
        let spec = mixture();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs = spec.sample(&mut rng, 20_000);
        let mut counts = [0usize; 3];
        for x in &xs {
            let r = spec.responsibilities_at(x, 1.0);
            let k = (0..3).max_by(|&i, &j| r[i].partial_cmp(&r[j]).unwrap()).unwrap();
            counts[k] += 1;
        }
        for (c, w) in counts.iter().zip(spec.weights()) {
            assert!((*c as f64 / 20_000.0 - w).abs() < 0.02);
        }
    }
}
