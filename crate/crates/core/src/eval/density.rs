use alloc::vec::Vec;

use crate::error::{check_dim, Result};
use crate::schedule::NoiseSchedule;
use crate::score_model::GmmSpec;

/// Exact log density of `spec` at `x`: the clean mixture when `noise` is
/// `None`, otherwise the mixture perturbed to timestep `t` of the schedule.
pub fn log_density_gmm(x: &[f64], spec: &GmmSpec, noise: Option<(usize, &NoiseSchedule)>) -> Result<f64> {
    check_dim(spec.dim(), x.len())?;
    let alpha_bar = match noise {
        None => 1.0,
        Some((t, sched)) => {
            sched.check(t)?;
            sched.alpha_bar(t)
        }
    };
    Ok(spec.log_density_at(x, alpha_bar))
}

/// Mean, spread and quantiles of a sample of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    /// Standard error of the mean.
    pub se: f64,
    pub min: f64,
    pub q05: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q95: f64,
    pub max: f64,
}

impl Summary {
    /// Summary of `values`; all fields are NaN for an empty slice.
    pub fn of(values: &[f64]) -> Summary {
        let n = values.len();
        if n == 0 {
            let nan = f64::NAN;
            return Summary {
                count: 0,
                mean: nan,
                std: nan,
                se: nan,
                min: nan,
                q05: nan,
                q25: nan,
                median: nan,
                q75: nan,
                q95: nan,
                max: nan,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        let std = libm::sqrt(var);
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Summary {
            count: n,
            mean,
            std,
            se: std / libm::sqrt(n as f64),
            min: sorted[0],
            q05: quantile_sorted(&sorted, 0.05),
            q25: quantile_sorted(&sorted, 0.25),
            median: quantile_sorted(&sorted, 0.5),
            q75: quantile_sorted(&sorted, 0.75),
            q95: quantile_sorted(&sorted, 0.95),
            max: sorted[n - 1],
        }
    }
}

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Exact per-sample log densities of a set of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityReport {
    pub clean: Vec<f64>,
    /// Timestep and per-sample perturbed log densities, when requested.
    pub perturbed: Option<(usize, Vec<f64>)>,
    pub clean_summary: Summary,
}

pub fn density_report(samples: &[Vec<f64>], spec: &GmmSpec, perturbed_at: Option<(usize, &NoiseSchedule)>) -> Result<DensityReport> {
    let clean = samples.iter().map(|x| log_density_gmm(x, spec, None)).collect::<Result<Vec<_>>>()?;
    let perturbed = match perturbed_at {
        None => None,
        Some((t, sched)) => Some((t, samples.iter().map(|x| log_density_gmm(x, spec, Some((t, sched)))).collect::<Result<Vec<_>>>()?)),
    };
    let clean_summary = Summary::of(&clean);
    Ok(DensityReport { clean, perturbed, clean_summary })
}
