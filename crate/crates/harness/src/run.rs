//! One experiment: model, guided sampling, evaluation and report files.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde_json::{json, Map, Value};

use minority_core::eval::{quantile_sorted, NeighborReport, ReferenceMode, Summary};
use minority_core::minority::inference_metric;
use minority_core::rng::{stream, StreamPurpose};
use minority_core::sampler::{guided_step, ChainState, StepRecord};
use minority_core::schedule::NoiseSchedule;
use minority_core::score_model::{train_dsm, CountingModel, GmmModel, GmmSpec, MlpEpsModel, ScoreModel};

use crate::checkpoint::load_checkpoint;
use crate::config::{method_name, schedule_name, sg_name, ExperimentConfig, ModelKind};
use crate::error::Result;
use crate::io::{csv_bytes, write_atomic};

/// Version tags of the files a run writes; see `docs/output-formats.md`.
pub const SAMPLES_SCHEMA: &str = "samples/1";
pub const METRICS_SCHEMA: &str = "metrics/1";
pub const TRACE_SCHEMA: &str = "trace/1";
pub const SUMMARY_SCHEMA: &str = "minority-run/1";

/// Quantile of data log-density below which a sample counts as off-support.
pub const LOW_DENSITY_QUANTILE: f64 = 0.001;

/// Indices of the [`StreamPurpose::Data`] streams of a run.
pub mod data_stream {
    pub const TRAIN_SET: u64 = 1;
    pub const TRAIN_LOOP: u64 = 2;
    pub const REFERENCE: u64 = 3;
    pub const THRESHOLD: u64 = 4;
}

pub enum LoadedModel {
    Analytic(GmmModel),
    Mlp(MlpEpsModel),
}

impl LoadedModel {
    pub fn as_model(&self) -> &dyn ScoreModel {
        match self {
            LoadedModel::Analytic(m) => m,
            LoadedModel::Mlp(m) => m,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelInfo {
    pub kind: &'static str,
    pub checkpoint: Option<PathBuf>,
    pub steps_trained: usize,
    /// Mean loss over the last 100 training steps run in this process.
    pub final_loss: Option<f64>,
    pub seconds: f64,
}

/// What every run of a config shares: the data, schedules and model.
pub struct Prepared {
    pub spec: GmmSpec,
    pub base: NoiseSchedule,
    pub sched: NoiseSchedule,
    pub model: LoadedModel,
    pub info: ModelInfo,
}

/// Trains an MLP noise predictor on samples of `spec`.
pub fn train_mlp(cfg: &ExperimentConfig, spec: &GmmSpec, base: &NoiseSchedule) -> Result<MlpEpsModel> {
    let m = &cfg.mlp;
    let mut model = MlpEpsModel::new(spec.dim(), m.hidden, m.embed_dim, cfg.seed)?;
    let data = spec.sample(&mut stream(cfg.seed, data_stream::TRAIN_SET, StreamPurpose::Data), m.train_size);
    train_dsm(&mut model, &data, base, &m.train_options(), &mut stream(cfg.seed, data_stream::TRAIN_LOOP, StreamPurpose::Data))?;
    Ok(model)
}

fn tail_mean(v: &[f64], n: usize) -> Option<f64> {
    let tail = &v[v.len().saturating_sub(n)..];
    (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64)
}

/// Validates `cfg` and builds its model (analytic, loaded or freshly trained).
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let spec = cfg.gmm()?;
    let base = cfg.schedule.base()?;
    let sched = cfg.schedule.sampling()?;
    let start = Instant::now();
    let (model, mut info) = match cfg.model {
        ModelKind::Analytic => (
            LoadedModel::Analytic(GmmModel::new(spec.clone())),
            ModelInfo { kind: "analytic", checkpoint: None, steps_trained: 0, final_loss: None, seconds: 0.0 },
        ),
        ModelKind::Mlp => match &cfg.checkpoint {
            Some(path) => {
                let m = load_checkpoint(path, &base)?;
                if m.sizes().first() != Some(&(spec.dim() + m.embed_dim())) {
                    return Err(crate::error::HarnessError::Config(format!(
                        "checkpoint {} does not match the {}-dimensional benchmark",
                        path.display(),
                        spec.dim()
                    )));
                }
                let info = ModelInfo {
                    kind: "mlp",
                    checkpoint: Some(path.clone()),
                    steps_trained: m.steps_trained(),
                    final_loss: None,
                    seconds: 0.0,
                };
                (LoadedModel::Mlp(m), info)
            }
            None => {
                let m = train_mlp(cfg, &spec, &base)?;
                let info = ModelInfo {
                    kind: "mlp",
                    checkpoint: None,
                    steps_trained: m.steps_trained(),
                    final_loss: tail_mean(m.loss_history(), 100),
                    seconds: 0.0,
                };
                (LoadedModel::Mlp(m), info)
            }
        },
    };
    info.seconds = start.elapsed().as_secs_f64();
    Ok(Prepared { spec, base, sched, model, info })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRow {
    pub chain: u64,
    pub x0: Vec<f64>,
    /// Exact clean log-density of `x0`.
    pub log_density: f64,
    /// Inference-time metric of the chain's latent at the metric timestep.
    pub metric: f64,
    pub avg_knn: f64,
    pub lof: f64,
    pub nearest_component: usize,
    pub below_threshold: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CallCounts {
    pub forward: u64,
    pub backward: u64,
    pub expected_forward: u64,
    pub expected_backward: u64,
}

impl CallCounts {
    pub fn matches(&self) -> bool {
        self.forward == self.expected_forward && self.backward == self.expected_backward
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Timings {
    pub model: f64,
    pub sampling: f64,
    pub evaluation: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub fingerprint: u64,
    pub schedule_fingerprint: u64,
    pub metric_timestep: usize,
    pub perturbation_timestep: usize,
    pub rows: Vec<SampleRow>,
    pub log_density: Summary,
    pub metric: Summary,
    pub avg_knn: Summary,
    pub lof: Summary,
    pub reference_size: usize,
    pub threshold: f64,
    pub low_density_fraction: f64,
    pub calls: CallCounts,
    pub timings: Timings,
    pub model: ModelInfo,
    pub traces: Option<Vec<Vec<StepRecord>>>,
}

impl RunReport {
    pub fn samples(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.x0.clone()).collect()
    }
}

struct ChainOutput {
    x0: Vec<f64>,
    x_metric: Vec<f64>,
    trace: Option<Vec<StepRecord>>,
}

/// Log-density below which a sample counts as off-support.
pub fn low_density_threshold(spec: &GmmSpec, size: usize, seed: u64) -> f64 {
    let data = spec.sample(&mut stream(seed, data_stream::THRESHOLD, StreamPurpose::Data), size);
    let mut dens: Vec<f64> = data.iter().map(|x| spec.log_density_at(x, 1.0)).collect();
    dens.sort_by(f64::total_cmp);
    quantile_sorted(&dens, LOW_DENSITY_QUANTILE)
}

/// Runs `cfg` with an already prepared model. Writes nothing.
pub fn execute(cfg: &ExperimentConfig, prep: &Prepared) -> Result<RunReport> {
    cfg.validate()?;
    let total = Instant::now();
    let g = &cfg.guidance;
    let sched = &prep.sched;
    let model = prep.model.as_model();
    let dim = prep.spec.dim();
    let t_metric = sched.timestep_at_fraction(cfg.eval.metric_fraction);
    let s = g.perturbation_timestep(sched);

    let start = Instant::now();
    let counted = CountingModel::new(model);
    let outputs: Vec<ChainOutput> = (0..cfg.chains as u64)
        .into_par_iter()
        .map(|chain| {
            let mut st = ChainState::new(dim, sched, cfg.seed, chain, cfg.eval.trace);
            let mut x_metric = Vec::new();
            while st.t > 0 {
                if st.t == t_metric {
                    x_metric = st.x.clone();
                }
                guided_step(&mut st, &counted, sched, g)?;
            }
            Ok(ChainOutput { x0: st.x, x_metric, trace: st.trace })
        })
        .collect::<Result<_>>()?;
    let (per_fwd, per_bwd) = g.expected_calls(sched.steps());
    let calls = CallCounts {
        forward: counted.forward_calls(),
        backward: counted.backward_calls(),
        expected_forward: per_fwd * cfg.chains as u64,
        expected_backward: per_bwd * cfg.chains as u64,
    };
    let sampling = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let metrics: Vec<f64> = outputs
        .par_iter()
        .enumerate()
        .map(|(chain, out)| {
            let mut rng = stream(cfg.seed, chain as u64, StreamPurpose::Aux);
            Ok(inference_metric(&out.x_metric, t_metric, s, model, sched, &g.distance, g.mc_samples, &mut rng)?.value)
        })
        .collect::<Result<_>>()?;
    let samples: Vec<Vec<f64>> = outputs.iter().map(|o| o.x0.clone()).collect();
    let real = match cfg.eval.reference {
        ReferenceMode::Generated => Vec::new(),
        _ => prep.spec.sample(&mut stream(cfg.seed, data_stream::REFERENCE, StreamPurpose::Data), cfg.eval.real_size),
    };
    let neighbors = NeighborReport::build(&samples, &real, cfg.eval.reference, cfg.eval.k_avg_knn, cfg.eval.k_lof)?;
    let threshold = low_density_threshold(&prep.spec, cfg.eval.threshold_size, cfg.seed);
    let rows: Vec<SampleRow> = samples
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let log_density = prep.spec.log_density_at(x, 1.0);
            SampleRow {
                chain: i as u64,
                x0: x.clone(),
                log_density,
                metric: metrics[i],
                avg_knn: neighbors.avg_knn[i],
                lof: neighbors.lof[i],
                nearest_component: prep.spec.nearest_component(x),
                below_threshold: log_density < threshold,
            }
        })
        .collect();
    let col = |f: fn(&SampleRow) -> f64| Summary::of(&rows.iter().map(f).collect::<Vec<_>>());
    let low = rows.iter().filter(|r| r.below_threshold).count() as f64 / rows.len() as f64;
    let evaluation = start.elapsed().as_secs_f64();

    let traces = cfg.eval.trace.then(|| outputs.into_iter().map(|o| o.trace.unwrap_or_default()).collect());
    Ok(RunReport {
        config: cfg.clone(),
        fingerprint: cfg.fingerprint(),
        schedule_fingerprint: sched.fingerprint(),
        metric_timestep: t_metric,
        perturbation_timestep: s,
        log_density: col(|r| r.log_density),
        metric: col(|r| r.metric),
        avg_knn: col(|r| r.avg_knn),
        lof: col(|r| r.lof),
        rows,
        reference_size: neighbors.reference_size,
        threshold,
        low_density_fraction: low,
        calls,
        timings: Timings { model: prep.info.seconds, sampling, evaluation, total: total.elapsed().as_secs_f64() + prep.info.seconds },
        model: prep.info.clone(),
        traces,
    })
}

/// Prepares, runs and writes one experiment into `cfg.output`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    let prep = prepare(cfg)?;
    let report = execute(cfg, &prep)?;
    write_report(&report, &cfg.output)?;
    Ok(report)
}

pub fn hex(v: u64) -> String {
    format!("{v:016x}")
}

fn summary_json(s: &Summary) -> Value {
    json!({
        "count": s.count, "mean": s.mean, "std": s.std, "se": s.se, "min": s.min,
        "q05": s.q05, "q25": s.q25, "median": s.median, "q75": s.q75, "q95": s.q95, "max": s.max,
    })
}

pub fn config_json(cfg: &ExperimentConfig) -> Value {
    Value::Object(cfg.pairs().into_iter().map(|(k, v)| (k.to_string(), Value::String(v))).collect::<Map<_, _>>())
}

/// Per-sample table, one row per chain.
pub fn samples_csv(report: &RunReport) -> Result<Vec<u8>> {
    let dim = report.rows.first().map_or(0, |r| r.x0.len());
    let mut header: Vec<String> = ["config_fingerprint", "seed", "chain"].iter().map(|s| s.to_string()).collect();
    header.extend((0..dim).map(|i| format!("x{i}")));
    header.extend(
        ["log_density", "inference_metric", "avg_knn", "lof", "nearest_component", "below_threshold"].iter().map(|s| s.to_string()),
    );
    let fp = hex(report.fingerprint);
    let seed = report.config.seed.to_string();
    csv_bytes(
        &header,
        report.rows.iter().map(|r| {
            let mut row = vec![fp.clone(), seed.clone(), r.chain.to_string()];
            row.extend(r.x0.iter().map(|v| v.to_string()));
            row.extend([
                r.log_density.to_string(),
                r.metric.to_string(),
                r.avg_knn.to_string(),
                r.lof.to_string(),
                r.nearest_component.to_string(),
                u8::from(r.below_threshold).to_string(),
            ]);
            row
        }),
    )
}

fn metrics_csv(report: &RunReport) -> Result<Vec<u8>> {
    let header: Vec<String> =
        ["config_fingerprint", "seed", "quantity", "count", "mean", "std", "se", "min", "q05", "q25", "median", "q75", "q95", "max"]
            .iter()
            .map(|s| s.to_string())
            .collect();
    let fp = hex(report.fingerprint);
    let quantities =
        [("log_density", &report.log_density), ("inference_metric", &report.metric), ("avg_knn", &report.avg_knn), ("lof", &report.lof)];
    csv_bytes(
        &header,
        quantities.iter().map(|(name, s)| {
            let mut row = vec![fp.clone(), report.config.seed.to_string(), name.to_string(), s.count.to_string()];
            row.extend([s.mean, s.std, s.se, s.min, s.q05, s.q25, s.median, s.q75, s.q95, s.max].iter().map(|v| v.to_string()));
            row
        }),
    )
}

fn trace_csv(report: &RunReport, traces: &[Vec<StepRecord>]) -> Result<Vec<u8>> {
    let header: Vec<String> = ["config_fingerprint", "seed", "chain", "t", "weight", "guided", "guidance_l2", "guidance_linf", "metric"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let fp = hex(report.fingerprint);
    let seed = report.config.seed.to_string();
    csv_bytes(
        &header,
        traces.iter().enumerate().flat_map(|(chain, steps)| {
            let fp = fp.clone();
            let seed = seed.clone();
            steps.iter().map(move |s| {
                vec![
                    fp.clone(),
                    seed.clone(),
                    chain.to_string(),
                    s.t.to_string(),
                    s.weight.to_string(),
                    u8::from(s.guided).to_string(),
                    s.guidance_l2.to_string(),
                    s.guidance_linf.to_string(),
                    s.metric.map(|m| m.to_string()).unwrap_or_default(),
                ]
            })
        }),
    )
}

pub fn summary_value(report: &RunReport) -> Value {
    let cfg = &report.config;
    let g = &cfg.guidance;
    json!({
        "schema": SUMMARY_SCHEMA,
        "config_fingerprint": hex(report.fingerprint),
        "seed": cfg.seed,
        "benchmark": cfg.benchmark,
        "chains": cfg.chains,
        "schedule": {
            "kind": cfg.schedule.kind().name(),
            "train_steps": cfg.schedule.train_steps,
            "sample_steps": cfg.schedule.sample_steps,
            "fingerprint": hex(report.schedule_fingerprint),
        },
        "guidance": {
            "method": method_name(g.method),
            "w": g.w,
            "schedule": schedule_name(g.schedule),
            "n": g.n,
            "guided_steps": g.guided_steps(cfg.schedule.sample_steps),
            "s_fraction": g.s_fraction,
            "s_timestep": report.perturbation_timestep,
            "sg_mode": sg_name(g.sg_mode),
            "normalize_linf": g.normalize_linf,
            "mc_samples": g.mc_samples,
        },
        "model": {
            "kind": report.model.kind,
            "checkpoint": report.model.checkpoint.as_ref().map(|p| p.display().to_string()),
            "steps_trained": report.model.steps_trained,
            "final_loss": report.model.final_loss,
        },
        "metric_timestep": report.metric_timestep,
        "summaries": {
            "log_density": summary_json(&report.log_density),
            "inference_metric": summary_json(&report.metric),
            "avg_knn": summary_json(&report.avg_knn),
            "lof": summary_json(&report.lof),
        },
        "low_density": {
            "quantile": LOW_DENSITY_QUANTILE,
            "threshold": report.threshold,
            "fraction": report.low_density_fraction,
        },
        "neighbors": {
            "reference": cfg.eval.reference.name(),
            "reference_size": report.reference_size,
            "k_avg_knn": cfg.eval.k_avg_knn,
            "k_lof": cfg.eval.k_lof,
        },
        "model_calls": {
            "forward": report.calls.forward,
            "backward": report.calls.backward,
            "expected_forward": report.calls.expected_forward,
            "expected_backward": report.calls.expected_backward,
            "match": report.calls.matches(),
        },
        "wall_clock_seconds": {
            "model": report.timings.model,
            "sampling": report.timings.sampling,
            "evaluation": report.timings.evaluation,
            "total": report.timings.total,
        },
        "files": {
            "samples": SAMPLES_SCHEMA,
            "metrics": METRICS_SCHEMA,
            "trace": report.traces.as_ref().map(|_| TRACE_SCHEMA),
        },
        "config": config_json(cfg),
    })
}

/// Config text headed by its fingerprint and seed; parses back to `cfg`.
pub fn resolved_config_text(cfg: &ExperimentConfig) -> String {
    format!("# config_fingerprint = {}\n# seed = {}\n{}", hex(cfg.fingerprint()), cfg.seed, cfg.to_text())
}

/// Writes `samples.csv`, `metrics.csv`, `summary.json`, `resolved-config`
/// and, when traced, `trace.csv` into `dir`.
pub fn write_report(report: &RunReport, dir: &Path) -> Result<()> {
    write_atomic(&dir.join("samples.csv"), &samples_csv(report)?)?;
    write_atomic(&dir.join("metrics.csv"), &metrics_csv(report)?)?;
    if let Some(traces) = &report.traces {
        write_atomic(&dir.join("trace.csv"), &trace_csv(report, traces)?)?;
    }
    let mut summary = serde_json::to_string_pretty(&summary_value(report)).expect("json values serialize");
    summary.push('\n');
    write_atomic(&dir.join("summary.json"), summary.as_bytes())?;
    write_atomic(&dir.join("resolved-config"), resolved_config_text(&report.config).as_bytes())
}
