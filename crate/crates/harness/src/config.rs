//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default, so an empty file is a valid config. [`ExperimentConfig::to_text`]
//! writes every key in canonical order and parsing that text gives back an
//! equal config.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use minority_core::eval::{ReferenceMode, AVG_KNN_K, LOF_K};
use minority_core::fingerprint::fnv64;
use minority_core::minority::{DistanceSpec, FeatureMap};
use minority_core::sampler::{GuidanceConfig, GuidanceMethod, StopGradient, WeightSchedule};
use minority_core::schedule::{NoiseSchedule, ScheduleKind, COSINE_DEFAULT_OFFSET};
use minority_core::score_model::{GmmSpec, TrainOptions, DEFAULT_EMBED_DIM, DEFAULT_HIDDEN};

use crate::benchmarks;
use crate::error::{HarnessError, Result};

/// Documentation of one config key.
pub struct KeyDoc {
    pub key: &'static str,
    pub help: &'static str,
}

/// Every accepted key in canonical order.
pub const KEYS: &[KeyDoc] = &[
    KeyDoc { key: "benchmark", help: "gmm8-ring | gmm2-imbalanced | inline" },
    KeyDoc {
        key: "gmm.components",
        help: "inline mixture (benchmark = inline): weight/mean/variance triples separated by ';', mean coordinates by ',', e.g. 0.9/0,0/0.1; 0.1/3,0/0.1",
    },
    KeyDoc { key: "schedule.kind", help: "cosine | linear" },
    KeyDoc { key: "schedule.beta_start", help: "first beta of the linear schedule" },
    KeyDoc { key: "schedule.beta_end", help: "last beta of the linear schedule" },
    KeyDoc { key: "schedule.cosine_offset", help: "offset s0 of the cosine schedule" },
    KeyDoc { key: "schedule.train_steps", help: "timesteps of the base schedule the model is defined on" },
    KeyDoc { key: "schedule.sample_steps", help: "timesteps used for sampling (uniform respacing of the base schedule)" },
    KeyDoc { key: "model", help: "analytic (exact mixture score) | mlp (trained noise predictor)" },
    KeyDoc { key: "model.checkpoint", help: "mlp checkpoint to load; empty trains a fresh model" },
    KeyDoc { key: "mlp.hidden", help: "width of the two hidden layers" },
    KeyDoc { key: "mlp.embed_dim", help: "width of the sinusoidal time embedding (even)" },
    KeyDoc { key: "mlp.train_steps", help: "Adam steps of denoising score matching" },
    KeyDoc { key: "mlp.batch_size", help: "training batch size" },
    KeyDoc { key: "mlp.learning_rate", help: "peak learning rate (cosine decay)" },
    KeyDoc { key: "mlp.train_size", help: "number of mixture samples in the training set" },
    KeyDoc { key: "guidance.method", help: "minority | naive (descent on the perturbed log-density)" },
    KeyDoc { key: "guidance.w", help: "guidance scale w >= 0" },
    KeyDoc { key: "guidance.t_mid", help: "switch-off timestep (guidance.schedule = switch_off)" },
    KeyDoc { key: "guidance.schedule", help: "fixed | switch_off | variance" },
    KeyDoc { key: "guidance.n", help: "intermittent rate: guide on steps with t mod n = 0" },
    KeyDoc { key: "guidance.s_fraction", help: "perturbation timestep of the metric as a fraction of T, in (0, 1)" },
    KeyDoc { key: "guidance.sg_mode", help: "none | sg_first | sg_second" },
    KeyDoc {
        key: "guidance.distance",
        help: "squared_error | tanh:<scale> | linear:<rows>:<row-major entries separated by ','>",
    },
    KeyDoc { key: "guidance.normalize_linf", help: "rescale guidance to unit l-inf norm (true | false)" },
    KeyDoc { key: "guidance.mc_samples", help: "noise draws per metric evaluation" },
    KeyDoc { key: "chains", help: "number of sampling chains" },
    KeyDoc { key: "seed", help: "run seed; every random stream is derived from it" },
    KeyDoc { key: "eval.k_avg_knn", help: "k of AvgkNN" },
    KeyDoc { key: "eval.k_lof", help: "k of LOF" },
    KeyDoc { key: "eval.reference", help: "neighbour reference set: real | generated | pooled" },
    KeyDoc { key: "eval.real_size", help: "number of real samples drawn as reference data" },
    KeyDoc { key: "eval.threshold_size", help: "data samples used to set the off-support density threshold (0.1% quantile)" },
    KeyDoc { key: "eval.metric_fraction", help: "timestep (fraction of T) at which each chain's inference metric is recorded" },
    KeyDoc { key: "eval.trace", help: "write per-step trace.csv (true | false)" },
    KeyDoc { key: "output", help: "output directory" },
];

/// Schedule keys. Both families' parameters are kept so switching
/// `schedule.kind` does not lose the other one's values.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    pub cosine: bool,
    pub beta_start: f64,
    pub beta_end: f64,
    pub cosine_offset: f64,
    pub train_steps: usize,
    pub sample_steps: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        let ScheduleKind::Linear { beta_start, beta_end } = ScheduleKind::linear_default() else { unreachable!() };
        ScheduleConfig { cosine: true, beta_start, beta_end, cosine_offset: COSINE_DEFAULT_OFFSET, train_steps: 1000, sample_steps: 250 }
    }
}

impl ScheduleConfig {
    pub fn kind(&self) -> ScheduleKind {
        if self.cosine {
            ScheduleKind::Cosine { offset: self.cosine_offset }
        } else {
            ScheduleKind::Linear { beta_start: self.beta_start, beta_end: self.beta_end }
        }
    }

    /// The base schedule models are trained on.
    pub fn base(&self) -> Result<NoiseSchedule> {
        Ok(NoiseSchedule::build(self.kind(), self.train_steps)?)
    }

    /// The (respaced) schedule used for sampling.
    pub fn sampling(&self) -> Result<NoiseSchedule> {
        let base = self.base()?;
        if self.sample_steps == self.train_steps {
            Ok(base)
        } else {
            Ok(base.respace(self.sample_steps)?)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Analytic,
    Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    pub hidden: usize,
    pub embed_dim: usize,
    pub train_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub train_size: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        let t = TrainOptions::default();
        MlpConfig {
            hidden: DEFAULT_HIDDEN,
            embed_dim: DEFAULT_EMBED_DIM,
            train_steps: t.steps,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            train_size: 20_000,
        }
    }
}

impl MlpConfig {
    pub fn train_options(&self) -> TrainOptions {
        TrainOptions { steps: self.train_steps, batch_size: self.batch_size, learning_rate: self.learning_rate, ..TrainOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub k_avg_knn: usize,
    pub k_lof: usize,
    pub reference: ReferenceMode,
    pub real_size: usize,
    pub threshold_size: usize,
    pub metric_fraction: f64,
    pub trace: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k_avg_knn: AVG_KNN_K,
            k_lof: LOF_K,
            reference: ReferenceMode::Pooled,
            real_size: 4000,
            threshold_size: 20_000,
            metric_fraction: 0.5,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub benchmark: String,
    /// Mixture used when `benchmark = inline`.
    pub inline_gmm: Option<GmmSpec>,
    pub schedule: ScheduleConfig,
    pub model: ModelKind,
    pub checkpoint: Option<PathBuf>,
    pub mlp: MlpConfig,
    pub guidance: GuidanceConfig,
    /// Remembered separately so it survives switching the weight schedule.
    pub t_mid: usize,
    pub chains: usize,
    pub seed: u64,
    pub eval: EvalConfig,
    pub output: PathBuf,
}

/// Guidance settings tuned for the 2-D benchmarks: a moderate perturbation
/// `s = 0.4T` and `w = 3`.
pub const BENCH_S_FRACTION: f64 = 0.4;
pub const BENCH_W: f64 = 3.0;

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            benchmark: "gmm8-ring".into(),
            inline_gmm: None,
            schedule: ScheduleConfig::default(),
            model: ModelKind::Analytic,
            checkpoint: None,
            mlp: MlpConfig::default(),
            guidance: GuidanceConfig { w: BENCH_W, s_fraction: BENCH_S_FRACTION, ..GuidanceConfig::default() },
            t_mid: 125,
            chains: 4000,
            seed: 0,
            eval: EvalConfig::default(),
            output: PathBuf::from("runs/default"),
        }
    }
}

fn bad(key: &str, value: &str, why: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(format!("{key} = {value:?}: {why}"))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| bad(key, value, e))
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    let v: f64 = parse_num(key, value)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(bad(key, value, "must be finite"))
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(key, value, "expected true or false")),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|v| parse_f64(key, v.trim())).collect()
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

pub fn parse_gmm(key: &str, value: &str) -> Result<GmmSpec> {
    let mut weights = Vec::new();
    let mut means = Vec::new();
    let mut vars = Vec::new();
    for comp in value.split(';').map(str::trim).filter(|c| !c.is_empty()) {
        let parts: Vec<&str> = comp.split('/').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(bad(key, value, format!("component {comp:?} is not weight/mean/variance")));
        }
        weights.push(parse_f64(key, parts[0])?);
        means.push(parse_list(key, parts[1])?);
        vars.push(parse_f64(key, parts[2])?);
    }
    if weights.is_empty() {
        return Err(bad(key, value, "no components"));
    }
    GmmSpec::new(weights, means, vars).map_err(|e| bad(key, value, e))
}

pub fn format_gmm(spec: &GmmSpec) -> String {
    (0..spec.components())
        .map(|k| format!("{}/{}/{}", spec.weights()[k], join(&spec.means()[k]), spec.variances()[k]))
        .collect::<Vec<_>>()
        .join("; ")
}

fn parse_distance(key: &str, value: &str) -> Result<DistanceSpec> {
    if value == "squared_error" {
        return Ok(DistanceSpec::SquaredError);
    }
    if let Some(scale) = value.strip_prefix("tanh:") {
        return Ok(DistanceSpec::Feature(FeatureMap::Tanh { scale: parse_f64(key, scale)? }));
    }
    if let Some(rest) = value.strip_prefix("linear:") {
        let (rows, entries) = rest.split_once(':').ok_or_else(|| bad(key, value, "expected linear:<rows>:<entries>"))?;
        return Ok(DistanceSpec::Feature(FeatureMap::Linear { out_dim: parse_num(key, rows)?, matrix: parse_list(key, entries)? }));
    }
    Err(bad(key, value, "expected squared_error, tanh:<scale> or linear:<rows>:<entries>"))
}

fn format_distance(d: &DistanceSpec) -> String {
    match d {
        DistanceSpec::SquaredError => "squared_error".into(),
        DistanceSpec::Feature(FeatureMap::Tanh { scale }) => format!("tanh:{scale}"),
        DistanceSpec::Feature(FeatureMap::Linear { out_dim, matrix }) => format!("linear:{out_dim}:{}", join(matrix)),
    }
}

pub fn parse_reference(value: &str) -> Option<ReferenceMode> {
    match value {
        "real" => Some(ReferenceMode::Real),
        "generated" => Some(ReferenceMode::Generated),
        "pooled" => Some(ReferenceMode::Pooled),
        _ => None,
    }
}

pub fn sg_name(sg: StopGradient) -> &'static str {
    match sg {
        StopGradient::None => "none",
        StopGradient::SgFirst => "sg_first",
        StopGradient::SgSecond => "sg_second",
    }
}

pub fn method_name(m: GuidanceMethod) -> &'static str {
    match m {
        GuidanceMethod::Minority => "minority",
        GuidanceMethod::NaiveDensity => "naive",
    }
}

pub fn schedule_name(s: WeightSchedule) -> &'static str {
    match s {
        WeightSchedule::Fixed => "fixed",
        WeightSchedule::SwitchOff { .. } => "switch_off",
        WeightSchedule::Variance => "variance",
    }
}

/// Splits `key=value` (as given to `--set`).
pub fn split_assignment(s: &str) -> Result<(String, String)> {
    let (k, v) = s.split_once('=').ok_or_else(|| HarnessError::Config(format!("expected key=value, got {s:?}")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn key_rank(key: &str) -> Option<usize> {
    KEYS.iter().position(|k| k.key == key)
}

impl ExperimentConfig {
    /// Sets one key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let g = &mut self.guidance;
        match key {
            "benchmark" => {
                if value != "inline" && benchmarks::by_name(value).is_none() {
                    return Err(bad(key, value, format!("unknown benchmark (known: {}, inline)", benchmarks::NAMES.join(", "))));
                }
                self.benchmark = value.to_string();
            }
            "gmm.components" => self.inline_gmm = if value.is_empty() { None } else { Some(parse_gmm(key, value)?) },
            "schedule.kind" => {
                self.schedule.cosine = match value {
                    "cosine" => true,
                    "linear" => false,
                    _ => return Err(bad(key, value, "expected cosine or linear")),
                }
            }
            "schedule.beta_start" => self.schedule.beta_start = parse_f64(key, value)?,
            "schedule.beta_end" => self.schedule.beta_end = parse_f64(key, value)?,
            "schedule.cosine_offset" => self.schedule.cosine_offset = parse_f64(key, value)?,
            "schedule.train_steps" => self.schedule.train_steps = parse_num(key, value)?,
            "schedule.sample_steps" => self.schedule.sample_steps = parse_num(key, value)?,
            "model" => {
                self.model = match value {
                    "analytic" => ModelKind::Analytic,
                    "mlp" => ModelKind::Mlp,
                    _ => return Err(bad(key, value, "expected analytic or mlp")),
                }
            }
            "model.checkpoint" => self.checkpoint = (!value.is_empty()).then(|| PathBuf::from(value)),
            "mlp.hidden" => self.mlp.hidden = parse_num(key, value)?,
            "mlp.embed_dim" => self.mlp.embed_dim = parse_num(key, value)?,
            "mlp.train_steps" => self.mlp.train_steps = parse_num(key, value)?,
            "mlp.batch_size" => self.mlp.batch_size = parse_num(key, value)?,
            "mlp.learning_rate" => self.mlp.learning_rate = parse_f64(key, value)?,
            "mlp.train_size" => self.mlp.train_size = parse_num(key, value)?,
            "guidance.method" => {
                g.method = match value {
                    "minority" => GuidanceMethod::Minority,
                    "naive" => GuidanceMethod::NaiveDensity,
                    _ => return Err(bad(key, value, "expected minority or naive")),
                }
            }
            "guidance.w" => g.w = parse_f64(key, value)?,
            "guidance.t_mid" => {
                self.t_mid = parse_num(key, value)?;
                if let WeightSchedule::SwitchOff { t_mid } = &mut g.schedule {
                    *t_mid = self.t_mid;
                }
            }
            "guidance.schedule" => {
                g.schedule = match value {
                    "fixed" => WeightSchedule::Fixed,
                    "switch_off" => WeightSchedule::SwitchOff { t_mid: self.t_mid },
                    "variance" => WeightSchedule::Variance,
                    _ => return Err(bad(key, value, "expected fixed, switch_off or variance")),
                }
            }
            "guidance.n" => g.n = parse_num(key, value)?,
            "guidance.s_fraction" => g.s_fraction = parse_f64(key, value)?,
            "guidance.sg_mode" => {
                g.sg_mode = match value {
                    "none" => StopGradient::None,
                    "sg_first" => StopGradient::SgFirst,
                    "sg_second" => StopGradient::SgSecond,
                    _ => return Err(bad(key, value, "expected none, sg_first or sg_second")),
                }
            }
            "guidance.distance" => g.distance = parse_distance(key, value)?,
            "guidance.normalize_linf" => g.normalize_linf = parse_bool(key, value)?,
            "guidance.mc_samples" => g.mc_samples = parse_num(key, value)?,
            "chains" => self.chains = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "eval.k_avg_knn" => self.eval.k_avg_knn = parse_num(key, value)?,
            "eval.k_lof" => self.eval.k_lof = parse_num(key, value)?,
            "eval.reference" => {
                self.eval.reference = parse_reference(value).ok_or_else(|| bad(key, value, "expected real, generated or pooled"))?
            }
            "eval.real_size" => self.eval.real_size = parse_num(key, value)?,
            "eval.threshold_size" => self.eval.threshold_size = parse_num(key, value)?,
            "eval.metric_fraction" => self.eval.metric_fraction = parse_f64(key, value)?,
            "eval.trace" => self.eval.trace = parse_bool(key, value)?,
            "output" => self.output = PathBuf::from(value),
            _ => return Err(HarnessError::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies assignments in canonical key order, so the result does not
    /// depend on the order they were written in.
    pub fn set_all(&mut self, pairs: &[(String, String)]) -> Result<()> {
        let mut sorted: Vec<(usize, &(String, String))> = Vec::with_capacity(pairs.len());
        for p in pairs {
            let rank = key_rank(&p.0).ok_or_else(|| HarnessError::Config(format!("unknown config key {:?}", p.0)))?;
            sorted.push((rank, p));
        }
        // Stable: a later assignment of the same key wins.
        sorted.sort_by_key(|(rank, _)| *rank);
        for (_, (k, v)) in sorted {
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Parses config text on top of the defaults. Repeating a key is an error.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        let mut seen = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = split_assignment(line).map_err(|_| HarnessError::Config(format!("line {}: expected key = value", lineno + 1)))?;
            if let Some(prev) = seen.insert(k.clone(), lineno + 1) {
                return Err(HarnessError::Config(format!("line {}: {k} already set on line {prev}", lineno + 1)));
            }
            pairs.push((k, v));
        }
        let mut cfg = ExperimentConfig::default();
        cfg.set_all(&pairs)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_text(&text)
    }

    /// Every key with its current value, in canonical order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let g = &self.guidance;
        let s = &self.schedule;
        let values: Vec<String> = vec![
            self.benchmark.clone(),
            self.inline_gmm.as_ref().map(format_gmm).unwrap_or_default(),
            if s.cosine { "cosine" } else { "linear" }.into(),
            s.beta_start.to_string(),
            s.beta_end.to_string(),
            s.cosine_offset.to_string(),
            s.train_steps.to_string(),
            s.sample_steps.to_string(),
            match self.model {
                ModelKind::Analytic => "analytic",
                ModelKind::Mlp => "mlp",
            }
            .into(),
            self.checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            self.mlp.hidden.to_string(),
            self.mlp.embed_dim.to_string(),
            self.mlp.train_steps.to_string(),
            self.mlp.batch_size.to_string(),
            self.mlp.learning_rate.to_string(),
            self.mlp.train_size.to_string(),
            method_name(g.method).into(),
            g.w.to_string(),
            self.t_mid.to_string(),
            schedule_name(g.schedule).into(),
            g.n.to_string(),
            g.s_fraction.to_string(),
            sg_name(g.sg_mode).into(),
            format_distance(&g.distance),
            g.normalize_linf.to_string(),
            g.mc_samples.to_string(),
            self.chains.to_string(),
            self.seed.to_string(),
            self.eval.k_avg_knn.to_string(),
            self.eval.k_lof.to_string(),
            self.eval.reference.name().into(),
            self.eval.real_size.to_string(),
            self.eval.threshold_size.to_string(),
            self.eval.metric_fraction.to_string(),
            self.eval.trace.to_string(),
            self.output.display().to_string(),
        ];
        KEYS.iter().map(|k| k.key).zip(values).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.pairs() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Hash of every setting except `output`, so the same experiment run
    /// into different directories has the same fingerprint.
    pub fn fingerprint(&self) -> u64 {
        let text: String = self.pairs().into_iter().filter(|(k, _)| *k != "output").map(|(k, v)| format!("{k} = {v}\n")).collect();
        fnv64(text.as_bytes())
    }

    /// The data distribution of this experiment.
    pub fn gmm(&self) -> Result<GmmSpec> {
        if self.benchmark == "inline" {
            self.inline_gmm.clone().ok_or_else(|| HarnessError::Config("benchmark = inline requires gmm.components".into()))
        } else {
            benchmarks::by_name(&self.benchmark).ok_or_else(|| HarnessError::Config(format!("unknown benchmark {:?}", self.benchmark)))
        }
    }

    /// Checks everything that can be checked without touching the file system.
    pub fn validate(&self) -> Result<()> {
        let spec = self.gmm()?;
        if self.benchmark != "inline" && self.inline_gmm.is_some() {
            return Err(HarnessError::Config("gmm.components is only used with benchmark = inline".into()));
        }
        if self.schedule.sample_steps > self.schedule.train_steps {
            return Err(HarnessError::Config("schedule.sample_steps cannot exceed schedule.train_steps".into()));
        }
        let sched = self.schedule.sampling()?;
        self.guidance.validate(&sched, spec.dim())?;
        if self.chains == 0 {
            return Err(HarnessError::Config("chains must be at least 1".into()));
        }
        if self.eval.k_avg_knn == 0 || self.eval.k_lof == 0 {
            return Err(HarnessError::Config("eval k values must be at least 1".into()));
        }
        if !(self.eval.metric_fraction > 0.0 && self.eval.metric_fraction <= 1.0) {
            return Err(HarnessError::Config("eval.metric_fraction must lie in (0, 1]".into()));
        }
        if self.eval.threshold_size == 0 {
            return Err(HarnessError::Config("eval.threshold_size must be positive".into()));
        }
        if self.eval.reference != ReferenceMode::Generated && self.eval.real_size == 0 {
            return Err(HarnessError::Config("eval.real_size must be positive for real or pooled references".into()));
        }
        if self.model == ModelKind::Mlp {
            let m = &self.mlp;
            if m.hidden == 0 || m.embed_dim == 0 || !m.embed_dim.is_multiple_of(2) {
                return Err(HarnessError::Config("mlp.hidden must be positive and mlp.embed_dim positive and even".into()));
            }
            if m.train_size == 0 || m.batch_size == 0 || !(m.learning_rate.is_finite() && m.learning_rate > 0.0) {
                return Err(HarnessError::Config("mlp.train_size, mlp.batch_size and mlp.learning_rate must be positive".into()));
            }
        }
        Ok(())
    }

    /// Help text listing every key and its default.
    pub fn key_help() -> String {
        let defaults = ExperimentConfig::default().pairs();
        let mut out = String::from("CONFIG KEYS (file lines `key = value`, or --set key=value):\n");
        for (doc, (_, default)) in KEYS.iter().zip(defaults) {
            let _ = writeln!(out, "  {:<24} {}  [default: {}]", doc.key, doc.help, if default.is_empty() { "<empty>" } else { &default });
        }
        out
    }
}
