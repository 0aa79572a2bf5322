//! Named experiment recipes. Each one runs a family of configs derived from
//! a base config, writes every run into its own subdirectory and a
//! `recipe.json` summary at the top.

use std::path::Path;

use rayon::prelude::*;
use serde_json::{json, Value};

use minority_core::eval::{identity_pointwise, spearman, Summary};
use minority_core::minority::{inference_metric, tweedie};
use minority_core::rng::{standard_normal, stream, StreamPurpose};
use minority_core::sampler::{ancestral_step, ChainState, GuidanceMethod, StopGradient};
use minority_core::schedule::NoiseSchedule;
use minority_core::score_model::{GmmModel, GmmSpec, ScoreModel};

use crate::config::{sg_name, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::io::write_atomic;
use crate::run::{config_json, execute, hex, prepare, resolved_config_text, write_report, Prepared, RunReport};

pub const RECIPES: &[(&str, &str)] = &[
    ("weight-sweep", "sweep w over {0, w/2, w}: mean log-density should fall and AvgkNN rise"),
    ("stop-gradient-ablation", "stop-gradient ablation at w: none, sg_first, sg_second against w = 0"),
    ("intermittent-sweep", "intermittent rate n in {1, 2, 5, 10, 20} at w against w = 0"),
    ("naive-contrast", "naive log-density guidance tuned to the same density shift as the proposed guidance"),
    ("metric-validity", "rank correlation of the inference metric with exact -log p(x0_hat) on mid-trajectory latents"),
    ("identity-check", "minority-score / denoising-loss identity on random draws and the unit-Gaussian closed form"),
];

/// `3·SE` significance of `b.mean < a.mean` for independent summaries.
pub fn significantly_below(b: &Summary, a: &Summary) -> bool {
    b.mean < a.mean - 3.0 * (a.se * a.se + b.se * b.se).sqrt()
}

/// Drop in mean log-density of `run` relative to `baseline`; positive means
/// the run produced lower-density samples.
pub fn density_shift(baseline: &RunReport, run: &RunReport) -> f64 {
    baseline.log_density.mean - run.log_density.mean
}

fn variant(base: &ExperimentConfig, label: &str, edit: impl FnOnce(&mut ExperimentConfig)) -> (String, ExperimentConfig) {
    let mut cfg = base.clone();
    edit(&mut cfg);
    cfg.output = base.output.join(label);
    (label.to_string(), cfg)
}

fn run_all(prep: &Prepared, variants: Vec<(String, ExperimentConfig)>) -> Result<Vec<(String, RunReport)>> {
    variants.into_iter().map(|(label, cfg)| Ok((label, execute(&cfg, prep)?))).collect()
}

fn run_line(label: &str, r: &RunReport) -> Value {
    json!({
        "label": label,
        "config_fingerprint": hex(r.fingerprint),
        "w": r.config.guidance.w,
        "n": r.config.guidance.n,
        "sg_mode": sg_name(r.config.guidance.sg_mode),
        "mean_log_density": r.log_density.mean,
        "se_log_density": r.log_density.se,
        "mean_avg_knn": r.avg_knn.mean,
        "se_avg_knn": r.avg_knn.se,
        "mean_lof": r.lof.mean,
        "low_density_fraction": r.low_density_fraction,
        "forward_calls": r.calls.forward,
        "backward_calls": r.calls.backward,
        "guided_steps_per_chain": r.config.guidance.guided_steps(r.config.schedule.sample_steps),
    })
}

pub struct WeightSweep {
    pub runs: Vec<(String, RunReport)>,
    pub density_decreasing: bool,
    pub avg_knn_increasing: bool,
}

pub fn weight_sweep(base: &ExperimentConfig, prep: &Prepared) -> Result<WeightSweep> {
    let w = base.guidance.w;
    let variants = [0.0, w / 2.0, w].iter().enumerate().map(|(i, &wi)| variant(base, &format!("w{i}"), |c| c.guidance.w = wi)).collect();
    let runs = run_all(prep, variants)?;
    let pairs = runs.windows(2);
    let density_decreasing = pairs.clone().all(|p| significantly_below(&p[1].1.log_density, &p[0].1.log_density));
    let avg_knn_increasing = pairs.clone().all(|p| significantly_below(&p[0].1.avg_knn, &p[1].1.avg_knn));
    Ok(WeightSweep { runs, density_decreasing, avg_knn_increasing })
}

pub struct SgAblation {
    pub baseline: RunReport,
    pub full: RunReport,
    pub sg_first: RunReport,
    pub sg_second: RunReport,
}

impl SgAblation {
    pub fn shifts(&self) -> (f64, f64, f64) {
        (
            density_shift(&self.baseline, &self.full),
            density_shift(&self.baseline, &self.sg_first),
            density_shift(&self.baseline, &self.sg_second),
        )
    }
}

pub fn sg_ablation(base: &ExperimentConfig, prep: &Prepared) -> Result<SgAblation> {
    let variants = vec![
        variant(base, "baseline", |c| c.guidance.w = 0.0),
        variant(base, "none", |c| c.guidance.sg_mode = StopGradient::None),
        variant(base, "sg_first", |c| c.guidance.sg_mode = StopGradient::SgFirst),
        variant(base, "sg_second", |c| c.guidance.sg_mode = StopGradient::SgSecond),
    ];
    let mut runs = run_all(prep, variants)?.into_iter().map(|(_, r)| r);
    Ok(SgAblation {
        baseline: runs.next().unwrap(),
        full: runs.next().unwrap(),
        sg_first: runs.next().unwrap(),
        sg_second: runs.next().unwrap(),
    })
}

pub const INTERMITTENT_RATES: [usize; 5] = [1, 2, 5, 10, 20];

pub struct IntermittentSweep {
    pub baseline: RunReport,
    /// `(n, report)` in [`INTERMITTENT_RATES`] order.
    pub runs: Vec<(usize, RunReport)>,
}

impl IntermittentSweep {
    pub fn shift(&self, n: usize) -> Option<f64> {
        self.runs.iter().find(|(k, _)| *k == n).map(|(_, r)| density_shift(&self.baseline, r))
    }
}

pub fn intermittent(base: &ExperimentConfig, prep: &Prepared, rates: &[usize]) -> Result<IntermittentSweep> {
    let mut variants = vec![variant(base, "baseline", |c| c.guidance.w = 0.0)];
    variants.extend(rates.iter().map(|&n| variant(base, &format!("n{n}"), |c| c.guidance.n = n)));
    let mut runs = run_all(prep, variants)?.into_iter().map(|(_, r)| r);
    let baseline = runs.next().unwrap();
    Ok(IntermittentSweep { baseline, runs: rates.iter().copied().zip(runs).collect() })
}

pub struct NaiveContrast {
    pub baseline: RunReport,
    pub proposed: RunReport,
    pub naive: RunReport,
    /// Naive scales tried, with the shift each produced.
    pub search: Vec<(f64, f64)>,
}

/// Relative tolerance of the shift match in [`naive_contrast`].
pub const SHIFT_MATCH_TOL: f64 = 0.02;

/// Bisects the naive method's scale until its density shift matches the
/// proposed guidance's within [`SHIFT_MATCH_TOL`] (or 40 steps pass).
pub fn naive_contrast(base: &ExperimentConfig, prep: &Prepared) -> Result<NaiveContrast> {
    let baseline = execute(&variant(base, "baseline", |c| c.guidance.w = 0.0).1, prep)?;
    let proposed = execute(&variant(base, "proposed", |c| c.guidance.method = GuidanceMethod::Minority).1, prep)?;
    let target = density_shift(&baseline, &proposed);
    if target.is_nan() || target <= 0.0 {
        return Err(HarnessError::Config(format!("proposed guidance gives no density shift ({target}); nothing to match")));
    }
    let naive_at = |w: f64| {
        let (_, cfg) = variant(base, "naive", |c| {
            c.guidance.method = GuidanceMethod::NaiveDensity;
            c.guidance.w = w;
        });
        execute(&cfg, prep)
    };
    let mut search = Vec::new();
    let (mut lo, mut hi) = (0.0, base.guidance.w.max(1e-3));
    let mut best = naive_at(hi)?;
    search.push((hi, density_shift(&baseline, &best)));
    while density_shift(&baseline, &best) < target {
        lo = hi;
        hi *= 2.0;
        best = naive_at(hi)?;
        search.push((hi, density_shift(&baseline, &best)));
        if search.len() > 30 {
            return Err(HarnessError::Config("naive guidance never reaches the target shift".into()));
        }
    }
    for _ in 0..40 {
        if (density_shift(&baseline, &best) - target).abs() <= SHIFT_MATCH_TOL * target {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let r = naive_at(mid)?;
        let s = density_shift(&baseline, &r);
        search.push((mid, s));
        if s < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if (s - target).abs() < (density_shift(&baseline, &best) - target).abs() {
            best = r;
        }
    }
    Ok(NaiveContrast { baseline, proposed, naive: best, search })
}

pub struct MetricValidity {
    pub t: usize,
    pub s: usize,
    /// Per-latent inference metric and exact `-log p(x̂0)`.
    pub metric: Vec<f64>,
    pub neg_log_density: Vec<f64>,
    pub spearman: f64,
}

/// Runs unguided chains down to `eval.metric_fraction · T` and correlates the
/// inference metric of each latent with the clean density of its surrogate.
pub fn metric_validity(cfg: &ExperimentConfig, prep: &Prepared) -> Result<MetricValidity> {
    let sched = &prep.sched;
    let model = prep.model.as_model();
    let t = sched.timestep_at_fraction(cfg.eval.metric_fraction);
    let s = cfg.guidance.perturbation_timestep(sched);
    let g = &cfg.guidance;
    let pairs: Vec<(f64, f64)> = (0..cfg.chains as u64)
        .into_par_iter()
        .map(|chain| {
            let mut st = ChainState::new(prep.spec.dim(), sched, cfg.seed, chain, false);
            while st.t > t {
                ancestral_step(&mut st, model, sched)?;
            }
            let mut rng = stream(cfg.seed, chain, StreamPurpose::Aux);
            let m = inference_metric(&st.x, t, s, model, sched, &g.distance, g.mc_samples, &mut rng)?.value;
            let x0 = tweedie(&st.x, t, model, sched)?;
            Ok((m, -prep.spec.log_density_at(&x0, 1.0)))
        })
        .collect::<Result<_>>()?;
    let (metric, neg_log_density): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let rho = spearman(&metric, &neg_log_density)?;
    Ok(MetricValidity { t, s, metric, neg_log_density, spearman: rho })
}

pub struct IdentityCheck {
    pub cases: usize,
    /// Largest `|lhs - rhs| / rhs` over the random `(x0, t, ε)` draws.
    pub max_rel_gap: f64,
    /// The same with `x̂0(x_t)` in place of `x0`.
    pub max_rel_gap_surrogate: f64,
    /// Largest relative error of the cubature mean against
    /// `ᾱ²D + ᾱ(1-ᾱ)||x0||²` for the unit Gaussian.
    pub max_rel_err_closed_form: f64,
}

/// Draws `cases` random `(x0, t, ε)`; `x0` from the benchmark mixture.
pub fn identity_check<M: ScoreModel + ?Sized>(
    spec: &GmmSpec,
    model: &M,
    sched: &NoiseSchedule,
    cases: usize,
    seed: u64,
) -> Result<IdentityCheck> {
    let dim = spec.dim();
    let mut rng = stream(seed, 0, StreamPurpose::Aux);
    let mut max_rel: f64 = 0.0;
    let mut max_rel_cor: f64 = 0.0;
    let mut max_closed: f64 = 0.0;
    let gauss = GmmModel::new(GmmSpec::standard_normal(dim));
    for _ in 0..cases {
        let x0 = spec.sample_one(&mut rng);
        let t = rand::Rng::random_range(&mut rng, 1..=sched.steps());
        let eps = standard_normal(&mut rng, dim);
        let (l, r) = identity_pointwise(&x0, t, &eps, model, sched)?;
        max_rel = max_rel.max((l - r).abs() / r);

        // Same identity at the Tweedie surrogate of a latent from another timestep.
        let tc = rand::Rng::random_range(&mut rng, 1..=sched.steps());
        let x_t = minority_core::schedule::perturb(&x0, tc, &standard_normal(&mut rng, dim), sched)?;
        let surrogate = tweedie(&x_t, tc, model, sched)?;
        let (l, r) = identity_pointwise(&surrogate, t, &eps, model, sched)?;
        max_rel_cor = max_rel_cor.max((l - r).abs() / r);

        // For N(0, I) the left side is quadratic in ε, so averaging it over
        // the 2D points ±sqrt(D)·e_i (zero mean, identity second moment)
        // gives its expectation exactly.
        let a = sched.alpha_bar(t);
        let norm2: f64 = x0.iter().map(|v| v * v).sum();
        let want = a * a * dim as f64 + a * (1.0 - a) * norm2;
        let mut mean = 0.0;
        for i in 0..dim {
            for sign in [1.0, -1.0] {
                let mut e = vec![0.0; dim];
                e[i] = sign * (dim as f64).sqrt();
                mean += identity_pointwise(&x0, t, &e, &gauss, sched)?.0;
            }
        }
        mean /= (2 * dim) as f64;
        max_closed = max_closed.max((mean - want).abs() / want);
    }
    Ok(IdentityCheck { cases, max_rel_gap: max_rel, max_rel_gap_surrogate: max_rel_cor, max_rel_err_closed_form: max_closed })
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

fn write_runs<'a>(runs: impl IntoIterator<Item = &'a RunReport>) -> Result<()> {
    for r in runs {
        write_report(r, &r.config.output)?;
    }
    Ok(())
}

/// Runs recipe `name` on top of `base`, writing into `base.output`.
pub fn run_recipe(name: &str, base: &ExperimentConfig) -> Result<Value> {
    let prep = prepare(base)?;
    let body = match name {
        "weight-sweep" => {
            let r = weight_sweep(base, &prep)?;
            write_runs(r.runs.iter().map(|(_, x)| x))?;
            json!({
                "runs": r.runs.iter().map(|(l, x)| run_line(l, x)).collect::<Vec<_>>(),
                "density_strictly_decreasing_3se": r.density_decreasing,
                "avg_knn_strictly_increasing_3se": r.avg_knn_increasing,
            })
        }
        "stop-gradient-ablation" => {
            let r = sg_ablation(base, &prep)?;
            write_runs([&r.baseline, &r.full, &r.sg_first, &r.sg_second])?;
            let (full, first, second) = r.shifts();
            json!({
                "runs": [run_line("baseline", &r.baseline), run_line("none", &r.full), run_line("sg_first", &r.sg_first), run_line("sg_second", &r.sg_second)],
                "shift_none": full,
                "shift_sg_first": first,
                "shift_sg_second": second,
                "sg_second_over_none": second / full,
                "sg_first_over_none": first / full,
            })
        }
        "intermittent-sweep" => {
            let r = intermittent(base, &prep, &INTERMITTENT_RATES)?;
            write_runs(std::iter::once(&r.baseline).chain(r.runs.iter().map(|(_, x)| x)))?;
            let s1 = r.shift(1).unwrap_or(f64::NAN);
            json!({
                "runs": std::iter::once(run_line("baseline", &r.baseline))
                    .chain(r.runs.iter().map(|(n, x)| {
                        let mut line = run_line(&format!("n{n}"), x);
                        line["shift"] = json!(density_shift(&r.baseline, x));
                        line["shift_over_n1"] = json!(density_shift(&r.baseline, x) / s1);
                        line
                    }))
                    .collect::<Vec<_>>(),
            })
        }
        "naive-contrast" => {
            let r = naive_contrast(base, &prep)?;
            write_runs([&r.baseline, &r.proposed, &r.naive])?;
            json!({
                "runs": [run_line("baseline", &r.baseline), run_line("proposed", &r.proposed), run_line("naive", &r.naive)],
                "shift_proposed": density_shift(&r.baseline, &r.proposed),
                "shift_naive": density_shift(&r.baseline, &r.naive),
                "low_density_fraction_proposed": r.proposed.low_density_fraction,
                "low_density_fraction_naive": r.naive.low_density_fraction,
                "naive_search": r.search.iter().map(|(w, s)| json!({"w": w, "shift": s})).collect::<Vec<_>>(),
            })
        }
        "metric-validity" => {
            let r = metric_validity(base, &prep)?;
            let rows = r
                .metric
                .iter()
                .zip(&r.neg_log_density)
                .enumerate()
                .map(|(i, (m, d))| vec![hex(base.fingerprint()), base.seed.to_string(), i.to_string(), m.to_string(), d.to_string()]);
            let header: Vec<String> = ["config_fingerprint", "seed", "chain", "inference_metric", "neg_log_density_x0_hat"]
                .iter()
                .map(|s| s.to_string())
                .collect();
            write_atomic(&base.output.join("latents.csv"), &crate::io::csv_bytes(&header, rows)?)?;
            json!({ "t": r.t, "s": r.s, "latents": r.metric.len(), "spearman": r.spearman })
        }
        "identity-check" => {
            let r = identity_check(&prep.spec, prep.model.as_model(), &prep.sched, base.chains.min(10_000), base.seed)?;
            json!({
                "cases": r.cases,
                "max_rel_gap": r.max_rel_gap,
                "max_rel_gap_surrogate": r.max_rel_gap_surrogate,
                "max_rel_err_unit_gaussian_closed_form": r.max_rel_err_closed_form,
            })
        }
        _ => {
            let known: Vec<&str> = RECIPES.iter().map(|(n, _)| *n).collect();
            return Err(HarnessError::Config(format!("unknown recipe {name:?} (known: {})", known.join(", "))));
        }
    };
    let out = json!({
        "schema": "minority-recipe/1",
        "recipe": name,
        "config_fingerprint": hex(base.fingerprint()),
        "seed": base.seed,
        "result": body,
        "config": config_json(base),
    });
    write_json(&base.output.join("recipe.json"), &out)?;
    write_atomic(&base.output.join("resolved-config"), resolved_config_text(base).as_bytes())?;
    Ok(out)
}
