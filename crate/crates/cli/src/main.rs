use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use gsan::attention::{load_checkpoint, parameter_count, save_checkpoint, ModelFamily};
use gsan::datasets::{read_archive, write_archive, TaskKind};
use gsan::operators::betti_number;
use gsan::propcheck::{run_propcheck, Fault};
use gsan::tasks::{attention_snapshot, evaluate, metric_name, train, Part, RunConfig};
use gsan::training::EpochRecord;
use gsan::{GsanError, Result};

const FORMAT_VERSION: u32 = 1;
const HISTOGRAM_BINS: usize = 20;

#[derive(Parser)]
#[command(name = "gsan", version, about = "Simplicial attention networks on synthetic tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Trajectory,
    Cyclic,
    Mdi,
    SimplexPrediction,
}

impl From<TaskArg> for TaskKind {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Trajectory => TaskKind::Trajectory,
            TaskArg::Cyclic => TaskKind::Cyclic,
            TaskArg::Mdi => TaskKind::Mdi,
            TaskArg::SimplexPrediction => TaskKind::SimplexPrediction,
        }
    }
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration; defaults for `--task` when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset archive.
    Generate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on an archive; writes a checkpoint and metrics.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Dataset archive written by `generate`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the test part of an archive.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the invariant suite on random complexes.
    Propcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        /// Inject a known bug (`b2-sign`).
        #[arg(long)]
        fault: Option<Fault>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate { config, out } => cmd_generate(&config, &out),
        Command::Train { config, data, out } => cmd_train(&config, &data, &out),
        Command::Eval { checkpoint, data, out } => cmd_eval(&checkpoint, &data, out.as_deref()),
        Command::Propcheck {
            seed,
            trials,
            fault,
            out,
        } => cmd_propcheck(seed, trials, fault, out.as_deref()),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                GsanError::InvalidConfig { .. } | GsanError::Parse(_) => 2,
                _ => 1,
            })
        }
    }
}

/// 1-based line of the first occurrence of the field's last path segment.
fn locate(text: &str, field: &str) -> Option<usize> {
    let key = field.rsplit('.').next()?.split('[').next()?;
    let quoted = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&quoted)).map(|i| i + 1)
}

fn resolve(args: &ConfigArgs) -> Result<RunConfig> {
    let (mut cfg, source) = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            let cfg: RunConfig =
                serde_json::from_str(&text).map_err(|e| GsanError::Parse(format!("{}: {e}", path.display())))?;
            (cfg, Some((path, text)))
        }
        None => {
            let task = args.task.ok_or_else(|| GsanError::InvalidConfig {
                field: "task".into(),
                reason: "pass --config or --task".into(),
            })?;
            (RunConfig::default_for(task.into()), None)
        }
    };
    if let Some(task) = args.task {
        let task: TaskKind = task.into();
        if task != cfg.dataset.task() {
            return Err(GsanError::InvalidConfig {
                field: "task".into(),
                reason: format!("--task {} but the config describes {}", task.name(), cfg.dataset.task().name()),
            });
        }
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    match cfg.validate() {
        Ok(()) => Ok(cfg),
        Err(GsanError::InvalidConfig { field, reason }) => {
            let reason = match source.and_then(|(p, text)| locate(&text, &field).map(|l| (p, l))) {
                Some((p, line)) => format!("{reason} ({}, line {line})", p.display()),
                None => reason,
            };
            Err(GsanError::InvalidConfig { field, reason })
        }
        Err(e) => Err(e),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn cmd_generate(args: &ConfigArgs, out: &Path) -> Result<u8> {
    let cfg = resolve(args)?;
    let d = cfg.dataset.generate(cfg.seed)?;
    let betti = (0..=d.complex.max_order())
        .map(|k| betti_number(&d.complex, k))
        .collect::<Result<Vec<_>>>()?;
    write_archive(out, &d, Some(betti.clone()))?;
    println!(
        "{} seed {}: N_k = {:?}, betti = {:?}, {} samples -> {}",
        d.task().name(),
        cfg.seed,
        d.complex.sizes(),
        betti,
        d.inputs.len(),
        out.display()
    );
    Ok(0)
}

#[derive(Serialize)]
struct Metrics<'a> {
    format_version: u32,
    task: TaskKind,
    seed: u64,
    dataset_seed: u64,
    config: &'a RunConfig,
    metric: &'a str,
    test_metric: f64,
    baseline: Option<f64>,
    /// Entries in the materialized parameter store.
    parameter_count: usize,
    /// Sum of the closed-form per-layer counts (attentional family only).
    parameter_count_formula: Option<usize>,
    best_epoch: usize,
    best_val: f64,
    epochs: &'a [EpochRecord],
}

fn cmd_train(args: &ConfigArgs, data: &Path, out: &Path) -> Result<u8> {
    let cfg = resolve(args)?;
    let d = read_archive(data)?;
    if d.params != cfg.dataset {
        return Err(GsanError::InvalidConfig {
            field: "dataset".into(),
            reason: format!("differs from the parameters recorded in {}", data.display()),
        });
    }
    let start = Instant::now();
    let (model, summary) = train(&cfg, &d)?;
    let wall = start.elapsed().as_secs_f64();
    fs::create_dir_all(out)?;
    save_checkpoint(&out.join("checkpoint"), &model, cfg.seed)?;
    let formula = (cfg.model.family == ModelFamily::Gsan).then(|| cfg.model.layers.iter().map(parameter_count).sum());
    let metrics = Metrics {
        format_version: FORMAT_VERSION,
        task: d.task(),
        seed: cfg.seed,
        dataset_seed: d.seed,
        config: &cfg,
        metric: metric_name(d.task()),
        test_metric: summary.test,
        baseline: summary.baseline,
        parameter_count: summary.parameter_count,
        parameter_count_formula: formula,
        best_epoch: summary.history.best_epoch,
        best_val: summary.history.best_val,
        epochs: &summary.history.epochs,
    };
    write_json(&out.join("metrics.json"), &metrics)?;

    let mut csv = String::from("format_version,epoch,train_loss,val_score\n");
    for e in &summary.history.epochs {
        csv.push_str(&format!("{FORMAT_VERSION},{},{:?},{:?}\n", e.epoch, e.train_loss, e.val_score));
    }
    fs::write(out.join("metrics.csv"), csv)?;

    let mut hist = String::from("format_version,layer,head,key,bin_lo,bin_hi,count\n");
    for (layer, head, key, values) in attention_snapshot(&model, &d)? {
        let mut counts = [0usize; HISTOGRAM_BINS];
        for v in values {
            let b = (((v + 1.0) / 2.0) * HISTOGRAM_BINS as f64).floor();
            counts[(b.max(0.0) as usize).min(HISTOGRAM_BINS - 1)] += 1;
        }
        for (b, c) in counts.iter().enumerate() {
            let lo = -1.0 + 2.0 * b as f64 / HISTOGRAM_BINS as f64;
            let hi = lo + 2.0 / HISTOGRAM_BINS as f64;
            hist.push_str(&format!("{FORMAT_VERSION},{layer},{head},{key},{lo:.2},{hi:.2},{c}\n"));
        }
    }
    fs::write(out.join("attention_histogram.csv"), hist)?;
    write_json(
        &out.join("timing.json"),
        &serde_json::json!({
            "format_version": FORMAT_VERSION,
            "wall_seconds": wall,
            "epochs_run": summary.history.epochs.len(),
        }),
    )?;
    println!(
        "{} test {} = {:.4}{} ({} epochs, best {}, {} parameters, {:.1}s) -> {}",
        d.task().name(),
        metrics.metric,
        summary.test,
        summary.baseline.map(|b| format!(", baseline {b:.4}")).unwrap_or_default(),
        summary.history.epochs.len(),
        summary.history.best_epoch,
        summary.parameter_count,
        wall,
        out.display()
    );
    Ok(0)
}

fn cmd_eval(checkpoint: &Path, data: &Path, out: Option<&Path>) -> Result<u8> {
    let (model, manifest) = load_checkpoint(checkpoint)?;
    let d = read_archive(data)?;
    let score = evaluate(&model, &d, Part::Test).map_err(|e| match e {
        GsanError::ShapeError(m) => GsanError::IncompatibleCheckpoint(m),
        GsanError::InvalidConfig { field, reason } => GsanError::IncompatibleCheckpoint(format!("{field}: {reason}")),
        e => e,
    })?;
    let metric = metric_name(d.task());
    println!("{} test {metric} = {score}", d.task().name());
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        write_json(
            &out.join("eval.json"),
            &serde_json::json!({
                "format_version": FORMAT_VERSION,
                "task": d.task(),
                "seed": manifest.seed,
                "config": manifest.config,
                "metric": metric,
                "test_metric": score,
            }),
        )?;
    }
    Ok(0)
}

fn cmd_propcheck(seed: u64, trials: usize, fault: Option<Fault>, out: Option<&Path>) -> Result<u8> {
    let report = run_propcheck(seed, trials, fault)?;
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        fs::write(out.join("propcheck.json"), text + "\n")?;
    }
    if report.is_vacuous() {
        eprintln!("no checks ran");
    } else if !report.passed {
        eprintln!("failed: {}", report.failing().join(", "));
    }
    Ok(report.exit_code() as u8)
}
