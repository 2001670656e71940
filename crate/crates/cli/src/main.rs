//! `videograph` command-line entry point.
//!
//! Flag values override the config file, which overrides built-in defaults.
//! Exit status: 0 on success, 1 when a run or validation fails, 2 on usage
//! errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use videograph::analysis::{
    confusion_csv, confusion_matrix, export_graph, extract_activity_graph, force_layout, ActivationStack, GraphFormat,
    DEFAULT_LAYOUT_ITERATIONS,
};
use videograph::gradcheck::{run_suite, SUITE_TOLERANCE};
use videograph::model::{shape_inference, ActivityModel, AnyModel, LabelMode};
use videograph::synthetic::{generate_dataset, write_manifest, Dataset, Label, PerturbMode, VideoSample};
use videograph::train::{
    evaluate, load_checkpoint, read_manifest, split_train_val, stack_batch, Precision, RunConfig, Trainer,
};
use videograph::{Scalar, Tape};

const THREADS_ENV: &str = "VIDEOGRAPH_THREADS";

#[derive(Parser, Debug)]
#[command(name = "videograph", version, about = "Train and inspect VideoGraph activity models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset (manifests plus VGFT feature files).
    GenData(GenData),
    /// Train a model; writes a checkpoint and a per-epoch metric CSV.
    Train(TrainArgs),
    /// Evaluate a checkpoint under one temporal perturbation.
    Eval(EvalArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Print per-stage tensor shapes for a configuration.
    Shapes(ShapesArgs),
    /// Export one activity graph per class as DOT and JSON.
    ExtractGraph(ExtractArgs),
    /// Compare natural, reversed and random temporal order.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct GenData {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Dataset directory holding `train.jsonl` and optionally `val.jsonl`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Resume from this checkpoint directory.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_parser = parse_perturb)]
    perturb: Option<PerturbMode>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write `confusion.csv` here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ShapesArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write `report.csv` here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_perturb(s: &str) -> std::result::Result<PerturbMode, String> {
    s.parse::<PerturbMode>().map_err(|_| format!("expected natural, reversed or random, got `{s}`"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(1)
        }
    }
}

/// Joins the error chain, skipping causes already spelled out by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut prev = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !prev.ends_with(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
        prev = msg;
    }
    out
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => {
            let cfg = load_config(&a.config, a.seed)?;
            match cfg.precision {
                Precision::F32 => train::<f32>(cfg, a),
                Precision::F64 => train::<f64>(cfg, a),
            }
        }
        Command::Eval(a) => match checkpoint_precision(&a.checkpoint)? {
            Precision::F32 => eval::<f32>(a),
            Precision::F64 => eval::<f64>(a),
        },
        Command::Gradcheck(a) => gradcheck(a.seed),
        Command::Shapes(a) => shapes(&a.config),
        Command::ExtractGraph(a) => match checkpoint_precision(&a.checkpoint)? {
            Precision::F32 => extract::<f32>(a),
            Precision::F64 => extract::<f64>(a),
        },
        Command::Report(a) => match checkpoint_precision(&a.checkpoint)? {
            Precision::F32 => report::<f32>(a),
            Precision::F64 => report::<f64>(a),
        },
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path).with_context(|| format!("loading config {}", path.display()))?;
    if let Some(s) = seed {
        cfg.model.seed = s;
    }
    Ok(cfg)
}

fn checkpoint_precision(dir: &Path) -> Result<Precision> {
    Ok(read_manifest(dir).with_context(|| format!("reading checkpoint {}", dir.display()))?.config.precision)
}

fn gen_data(a: GenData) -> Result<ExitCode> {
    let cfg = load_config(&a.config, a.seed)?;
    let spec = cfg.synthetic.as_ref().ok_or_else(|| anyhow!("config has no `synthetic` section"))?;
    let data = generate_dataset::<f32>(spec, cfg.seed())?;
    let train = write_manifest(&a.out, "train", &data.train)?;
    let mut written = vec![train];
    if !data.val.is_empty() {
        written.push(write_manifest(&a.out, "val", &data.val)?);
    }
    for p in &written {
        println!("wrote {}", p.display());
    }
    println!("{} train / {} val videos", data.train.len(), data.val.len());
    Ok(ExitCode::SUCCESS)
}

/// Train and validation samples: `--data` beats config paths; without a
/// validation manifest the training set is split 80/20.
type Splits<T> = (Vec<VideoSample<T>>, Vec<VideoSample<T>>);

fn load_splits<T: Scalar>(cfg: &RunConfig, data: Option<&Path>) -> Result<Splits<T>> {
    let (train_path, val_path) = match data {
        Some(dir) => {
            let val = dir.join("val.jsonl");
            (dir.join("train.jsonl"), val.exists().then_some(val))
        }
        None => (
            cfg.train_data.clone().ok_or_else(|| anyhow!("no --data given and config has no `train_data`"))?,
            cfg.val_data.clone(),
        ),
    };
    let train = Dataset::<T>::load(&train_path).with_context(|| format!("loading {}", train_path.display()))?;
    match val_path {
        Some(p) => {
            let val = Dataset::<T>::load(&p).with_context(|| format!("loading {}", p.display()))?;
            Ok((train.samples, val.samples))
        }
        None => Ok(split_train_val(&train.samples, cfg.seed())),
    }
}

fn train<T: Scalar>(cfg: RunConfig, a: TrainArgs) -> Result<ExitCode> {
    let (train, val) = load_splits::<T>(&cfg, a.data.as_deref())?;
    let mut trainer = match &a.checkpoint {
        Some(dir) => {
            let mut t = Trainer::<T>::resume(dir)?;
            if t.config().model != cfg.model || t.config().model_kind != cfg.model_kind {
                bail!("checkpoint {} was trained with a different architecture", dir.display());
            }
            t.set_epochs(cfg.epochs);
            t
        }
        None => Trainer::<T>::new(cfg, &train)?,
    };
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    while trainer.epoch() < trainer.config().epochs {
        let r = trainer.run_epoch(&train, &val)?;
        println!(
            "epoch {:>4}  loss {:.4}  train_acc {:.3}  val {:.3}  node_dist {:.4}",
            r.epoch, r.train_loss, r.train_acc, r.val_metric, r.mean_node_distance
        );
    }
    trainer.log().write_csv(a.out.join("metrics.csv"))?;
    trainer.save_checkpoint(a.out.join("checkpoint"))?;
    println!("wrote {}", a.out.join("checkpoint").display());
    Ok(ExitCode::SUCCESS)
}

fn eval_samples<T: Scalar>(cfg: &RunConfig, data: &Path) -> Result<Vec<VideoSample<T>>> {
    let (_, val) = load_splits::<T>(cfg, Some(data))?;
    if val.is_empty() {
        bail!("no evaluation samples found under {}", data.display());
    }
    Ok(val)
}

fn eval<T: Scalar>(a: EvalArgs) -> Result<ExitCode> {
    let ck = load_checkpoint::<T>(&a.checkpoint)?;
    let mode = a.perturb.unwrap_or(ck.config.perturbation);
    let seed = a.seed.unwrap_or(ck.config.seed());
    let samples = eval_samples::<T>(&ck.config, &a.data)?;
    let ev = evaluate(&ck.model, &samples, mode, seed)?;
    let cfg = ck.model.config();
    let name = match cfg.label_mode {
        LabelMode::Single => "accuracy",
        LabelMode::Multi => "mAP",
    };
    println!("{name} {:.6} ({:?} order, {} videos)", ev.metric, mode, samples.len());
    if cfg.label_mode == LabelMode::Single {
        let labels: Vec<usize> = samples.iter().filter_map(|s| s.label.single()).collect();
        let csv = confusion_csv(&confusion_matrix(&ev.predictions, &labels, cfg.num_classes)?);
        print!("{csv}");
        if let Some(out) = &a.out {
            fs::create_dir_all(out)?;
            fs::write(out.join("confusion.csv"), &csv)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(seed: u64) -> Result<ExitCode> {
    let entries = run_suite(seed)?;
    let mut worst = &entries[0];
    for e in &entries {
        println!(
            "{:<32} max rel err {:.3e}  {}",
            e.name,
            e.report.max_relative_error,
            if e.passed() { "ok" } else { "FAIL" }
        );
        if e.report.max_relative_error > worst.report.max_relative_error {
            worst = e;
        }
    }
    if worst.passed() {
        println!("all {} checks within {SUITE_TOLERANCE:e}", entries.len());
        Ok(ExitCode::SUCCESS)
    } else {
        let r = &worst.report;
        eprintln!(
            "gradient check failed: worst op `{}`, relative error {:.3e} at input {} index {} (analytic {:.6e}, numeric {:.6e})",
            worst.name, r.max_relative_error, r.worst_input, r.worst_index, r.analytic, r.numeric
        );
        Ok(ExitCode::from(1))
    }
}

fn shapes(path: &Path) -> Result<ExitCode> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    // Accept either a run config or a bare architecture config.
    let model = serde_json::from_value::<RunConfig>(value.clone())
        .map(|r| r.model)
        .or_else(|_| serde_json::from_value(value))
        .with_context(|| format!("parsing {}", path.display()))?;
    for stage in shape_inference(&model)? {
        println!("{stage}");
    }
    Ok(ExitCode::SUCCESS)
}

fn extract<T: Scalar>(a: ExtractArgs) -> Result<ExitCode> {
    let ck = load_checkpoint::<T>(&a.checkpoint)?;
    let AnyModel::VideoGraph(model) = &ck.model else {
        bail!("graph extraction needs a VideoGraph checkpoint");
    };
    let seed = a.seed.unwrap_or(ck.config.seed());
    let samples = eval_samples::<T>(&ck.config, &a.data)?;
    fs::create_dir_all(&a.out)?;
    for class in 0..model.config.num_classes {
        let idx: Vec<usize> = samples
            .iter()
            .enumerate()
            .filter(|(_, s)| match &s.label {
                Label::Single(c) => *c == class,
                Label::Multi(cs) => cs.contains(&class),
            })
            .map(|(i, _)| i)
            .collect();
        if idx.is_empty() {
            println!("class {class}: no videos, skipped");
            continue;
        }
        let mut tape = Tape::new();
        let x = tape.constant(stack_batch(&samples, &idx));
        let out = model.forward_eval(&mut tape, x)?;
        let last = *out.embeddings.last().ok_or_else(|| anyhow!("model has no embedding layers"))?;
        let stack = ActivationStack::from_layer_output(tape.value(last))?;
        let mut graph = extract_activity_graph(&stack, class)?;
        graph.positions = Some(force_layout(&graph, DEFAULT_LAYOUT_ITERATIONS, seed));
        for (fmt, ext) in [(GraphFormat::Dot, "dot"), (GraphFormat::Json, "json")] {
            export_graph(&graph, fmt, a.out.join(format!("class_{class}.{ext}")))?;
        }
        println!("class {class}: {} videos, {} nodes", idx.len(), graph.num_nodes());
    }
    Ok(ExitCode::SUCCESS)
}

fn report<T: Scalar>(a: ReportArgs) -> Result<ExitCode> {
    let ck = load_checkpoint::<T>(&a.checkpoint)?;
    let seed = a.seed.unwrap_or(ck.config.seed());
    let samples = eval_samples::<T>(&ck.config, &a.data)?;
    let mut rows = Vec::new();
    for mode in [PerturbMode::Natural, PerturbMode::Reversed, PerturbMode::Random] {
        rows.push((mode, evaluate(&ck.model, &samples, mode, seed)?.metric));
    }
    let base = rows[0].1;
    let mut csv = String::from("order,metric,drop_points,drop_percent\n");
    println!("{:<10} {:>8} {:>12} {:>13}", "order", "metric", "drop_points", "drop_percent");
    for (mode, m) in &rows {
        let points = 100.0 * (base - m);
        let percent = if base > 0.0 { 100.0 * (base - m) / base } else { 0.0 };
        let name = format!("{mode:?}").to_lowercase();
        println!("{name:<10} {m:>8.4} {points:>12.2} {percent:>13.2}");
        csv.push_str(&format!("{name},{m},{points},{percent}\n"));
    }
    if let Some(out) = &a.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("report.csv"), csv)?;
    }
    Ok(ExitCode::SUCCESS)
}
