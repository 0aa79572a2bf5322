use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use serde_json::json;

use minority_core::eval::{NeighborReport, ReferenceMode, Summary};
use minority_core::rng::{stream, StreamPurpose};
use minority_harness::checkpoint::save_checkpoint;
use minority_harness::config::{split_assignment, ModelKind};
use minority_harness::error::exit;
use minority_harness::io::{csv_bytes, write_atomic};
use minority_harness::recipes::{self, RECIPES};
use minority_harness::run::{self, data_stream, hex, low_density_threshold, resolved_config_text};
use minority_harness::{ExperimentConfig, HarnessError, Result};

/// Self-guided minority sampling on Gaussian-mixture benchmarks.
#[derive(Parser)]
#[command(name = "minority", version)]
struct Cli {
    /// Config file of `key = value` lines (defaults apply to missing keys).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the `output` key.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the `chains` key.
    #[arg(long, global = true)]
    chains: Option<usize>,
    /// Recipe to run with the `recipe` subcommand.
    #[arg(long, global = true)]
    recipe: Option<String>,
    /// `key=value` override; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an MLP noise predictor and save a checkpoint.
    Train {
        /// Checkpoint path (default: <output>/model.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run guided sampling and write samples.csv, metrics.csv, summary.json, resolved-config.
    Sample,
    /// Score an existing samples.csv (columns x0, x1, ...) against the configured benchmark.
    Eval {
        #[arg(long)]
        samples: PathBuf,
    },
    /// Check the minority-score / denoising-loss identity.
    Verify {
        /// Number of random (x0, t, eps) draws.
        #[arg(long, default_value_t = 100)]
        cases: usize,
    },
    /// Run a named recipe (`recipe list` shows them).
    Recipe { name: Option<String> },
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let pairs = cli.set.iter().map(|s| split_assignment(s)).collect::<Result<Vec<_>>>()?;
    cfg.set_all(&pairs)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output = o.clone();
    }
    if let Some(c) = cli.chains {
        cfg.chains = c;
    }
    Ok(cfg)
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json values serialize"));
}

fn train(mut cfg: ExperimentConfig, checkpoint: Option<PathBuf>) -> Result<()> {
    cfg.model = ModelKind::Mlp;
    cfg.checkpoint = None;
    cfg.validate()?;
    let spec = cfg.gmm()?;
    let base = cfg.schedule.base()?;
    let start = std::time::Instant::now();
    let model = run::train_mlp(&cfg, &spec, &base)?;
    let seconds = start.elapsed().as_secs_f64();
    let path = checkpoint.unwrap_or_else(|| cfg.output.join("model.ckpt"));
    save_checkpoint(&model, &base, &path)?;
    let losses = model.loss_history();
    let header = vec!["step".to_string(), "loss".to_string()];
    let rows = losses.iter().enumerate().map(|(i, l)| vec![i.to_string(), l.to_string()]);
    write_atomic(&cfg.output.join("training-loss.csv"), &csv_bytes(&header, rows)?)?;
    let mut resolved = cfg.clone();
    resolved.checkpoint = Some(path.clone());
    write_atomic(&cfg.output.join("resolved-config"), resolved_config_text(&resolved).as_bytes())?;
    let tail = &losses[losses.len().saturating_sub(100)..];
    print_json(&json!({
        "checkpoint": path.display().to_string(),
        "steps": model.steps_trained(),
        "final_loss": tail.iter().sum::<f64>() / tail.len().max(1) as f64,
        "seconds": seconds,
        "config_fingerprint": hex(resolved.fingerprint()),
    }));
    Ok(())
}

fn eval(cfg: ExperimentConfig, samples: PathBuf) -> Result<()> {
    cfg.validate()?;
    let spec = cfg.gmm()?;
    let mut reader = csv::Reader::from_path(&samples).map_err(|e| HarnessError::Config(format!("{}: {e}", samples.display())))?;
    let headers = reader.headers().map_err(|e| HarnessError::Config(format!("{}: {e}", samples.display())))?.clone();
    let cols: Vec<usize> = (0..spec.dim())
        .map(|i| {
            headers
                .iter()
                .position(|h| h == format!("x{i}"))
                .ok_or_else(|| HarnessError::Config(format!("{}: missing column x{i}", samples.display())))
        })
        .collect::<Result<_>>()?;
    let mut xs = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| HarnessError::Config(format!("{}: {e}", samples.display())))?;
        let x = cols
            .iter()
            .map(|&c| rec[c].parse::<f64>().map_err(|e| HarnessError::Config(format!("{}: {e}", samples.display()))))
            .collect::<Result<Vec<f64>>>()?;
        xs.push(x);
    }
    if xs.is_empty() {
        return Err(HarnessError::Config(format!("{}: no samples", samples.display())));
    }
    let real = match cfg.eval.reference {
        ReferenceMode::Generated => Vec::new(),
        _ => spec.sample(&mut stream(cfg.seed, data_stream::REFERENCE, StreamPurpose::Data), cfg.eval.real_size),
    };
    let nb = NeighborReport::build(&xs, &real, cfg.eval.reference, cfg.eval.k_avg_knn, cfg.eval.k_lof)?;
    let threshold = low_density_threshold(&spec, cfg.eval.threshold_size, cfg.seed);
    let dens: Vec<f64> = xs.iter().map(|x| spec.log_density_at(x, 1.0)).collect();
    let header: Vec<String> = ["row", "log_density", "avg_knn", "lof", "below_threshold"].iter().map(|s| s.to_string()).collect();
    let rows = (0..xs.len()).map(|i| {
        vec![
            i.to_string(),
            dens[i].to_string(),
            nb.avg_knn[i].to_string(),
            nb.lof[i].to_string(),
            u8::from(dens[i] < threshold).to_string(),
        ]
    });
    write_atomic(&cfg.output.join("eval.csv"), &csv_bytes(&header, rows)?)?;
    let s = |v: &[f64]| {
        let s = Summary::of(v);
        json!({"mean": s.mean, "se": s.se, "median": s.median})
    };
    let out = json!({
        "samples": samples.display().to_string(),
        "count": xs.len(),
        "config_fingerprint": hex(cfg.fingerprint()),
        "seed": cfg.seed,
        "reference": cfg.eval.reference.name(),
        "log_density": s(&dens),
        "avg_knn": s(&nb.avg_knn),
        "lof": s(&nb.lof),
        "low_density_fraction": dens.iter().filter(|d| **d < threshold).count() as f64 / xs.len() as f64,
    });
    let mut text = serde_json::to_string_pretty(&out).expect("json values serialize");
    text.push('\n');
    write_atomic(&cfg.output.join("eval.json"), text.as_bytes())?;
    print_json(&out);
    Ok(())
}

/// Pointwise tolerance of `verify`.
const VERIFY_TOL: f64 = 1e-10;

fn verify(cfg: ExperimentConfig, cases: usize) -> Result<bool> {
    let prep = run::prepare(&cfg)?;
    let r = recipes::identity_check(&prep.spec, prep.model.as_model(), &prep.sched, cases, cfg.seed)?;
    let ok = r.max_rel_gap <= VERIFY_TOL && r.max_rel_gap_surrogate <= VERIFY_TOL && r.max_rel_err_closed_form <= VERIFY_TOL;
    print_json(&json!({
        "cases": r.cases,
        "max_rel_gap": r.max_rel_gap,
        "max_rel_gap_surrogate": r.max_rel_gap_surrogate,
        "max_rel_err_unit_gaussian_closed_form": r.max_rel_err_closed_form,
        "tolerance": VERIFY_TOL,
        "pass": ok,
    }));
    Ok(ok)
}

fn dispatch(cli: Cli) -> Result<i32> {
    let cfg = resolve(&cli)?;
    match cli.command {
        Command::Train { checkpoint } => train(cfg, checkpoint)?,
        Command::Sample => {
            let r = run::run_experiment(&cfg)?;
            print_json(&run::summary_value(&r));
        }
        Command::Eval { samples } => eval(cfg, samples)?,
        Command::Verify { cases } => {
            if !verify(cfg, cases)? {
                return Ok(exit::NUMERIC);
            }
        }
        Command::Recipe { name } => {
            let name = name.or(cli.recipe).unwrap_or_else(|| "list".into());
            if name == "list" {
                for (n, help) in RECIPES {
                    println!("{n:<22} {help}");
                }
            } else {
                print_json(&recipes::run_recipe(&name, &cfg)?);
            }
        }
    }
    Ok(exit::SUCCESS)
}

fn main() -> ExitCode {
    let cmd = Cli::command().after_help(ExperimentConfig::key_help());
    let cli = match Cli::from_arg_matches(&cmd.get_matches()) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let code = match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
