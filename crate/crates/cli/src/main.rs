//! Operator entry point: dataset generation, training, sampling,
//! evaluation, and static plot emission.
//!
//! Every command is reproducible from its flag set; all randomness flows
//! from `--seed`. Exit codes: 0 success, 1 runtime/IO, 2 usage/config,
//! 3 acceptance-gate failure.

mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use defgen_core::checkpoint::{self, LoadedModel, ModelKind};
use defgen_core::cloud;
use defgen_core::eval::{self, EvalGates, EvalOptions};
use defgen_core::sampler::{self, SamplerVariant};
use defgen_core::tasks::{self, TaskKind};
use defgen_core::training::{self, TrainConfig};
use defgen_core::{baseline, rng};

#[derive(Parser)]
#[command(name = "defgen", version, about = "Diffusion goal generation for deformable-object point clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Retraction,
    Packaging,
}

impl From<TaskArg> for TaskKind {
    fn from(t: TaskArg) -> TaskKind {
        match t {
            TaskArg::Retraction => TaskKind::Retraction,
            TaskArg::Packaging => TaskKind::Packaging,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic demonstration dataset.
    GenData(GenDataArgs),
    /// Train the diffusion goal generator (or the deterministic baseline).
    Train(TrainArgs),
    /// Sample goal clouds from a trained checkpoint.
    Sample(SampleArgs),
    /// Evaluate a checkpoint over a held-out dataset.
    Eval(EvalArgs),
    /// Render point clouds as a static SVG (three orthographic views).
    Plot(PlotArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, value_enum)]
    task: TaskArg,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint stem: writes <out>.json, <out>.bin, <out>_loss.csv.
    #[arg(long)]
    out: PathBuf,
    /// Train the deterministic regressor baseline instead.
    #[arg(long)]
    baseline: bool,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    current: PathBuf,
    #[arg(long)]
    context: PathBuf,
    #[arg(long)]
    num: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Use the stochastic reverse-diffusion variant.
    #[arg(long)]
    stochastic: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Samples per scenario.
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report JSON path; a CSV table lands next to it.
    #[arg(long)]
    report: PathBuf,
    /// Optional JSON file with threshold gates (exit 3 when violated).
    #[arg(long)]
    gates: Option<PathBuf>,
    #[arg(long)]
    stochastic: bool,
}

#[derive(Args)]
struct PlotArgs {
    /// Cloud CSV files (up to 8).
    #[arg(long = "cloud", num_args = 1.., required = true)]
    clouds: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

const EXIT_OK: ExitCode = ExitCode::SUCCESS;
const EXIT_CONFIG: u8 = 2;
const EXIT_GATE: u8 = 3;

fn run(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::GenData(args) => gen_data(args),
        Command::Train(args) => train(args),
        Command::Sample(args) => sample(args),
        Command::Eval(args) => eval_cmd(args),
        Command::Plot(args) => plot_cmd(args),
    }
}

fn gen_data(args: GenDataArgs) -> anyhow::Result<ExitCode> {
    let dataset = tasks::generate(args.task.into(), args.count, args.seed)?;
    tasks::write_dataset(&args.out, &dataset)
        .with_context(|| format!("writing dataset to {}", args.out.display()))?;
    println!(
        "wrote {} {} records to {}",
        dataset.records.len(),
        dataset.manifest.task,
        args.out.display()
    );
    Ok(EXIT_OK)
}

fn train(args: TrainArgs) -> anyhow::Result<ExitCode> {
    let config_text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading config {}", args.config.display()))?;
    let config = match TrainConfig::from_json(&config_text) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("config error in {}: {e}", args.config.display());
            return Ok(ExitCode::from(EXIT_CONFIG));
        }
    };
    let dataset = tasks::read_dataset(&args.data)
        .with_context(|| format!("reading dataset {}", args.data.display()))?;

    // Snapshot checkpoints at quarter marks, final checkpoint at the stem.
    let snapshot_every = (config.epochs / 4).max(1);
    let record_ids: Vec<String> = dataset.records.iter().map(|r| r.id.clone()).collect();
    let mut curve_so_far: Vec<training::EpochLoss> = Vec::new();
    let out_stem = args.out.clone();
    let snapshot_config = config.clone();
    let snapshot_ids = record_ids.clone();
    let progress = move |epoch: usize,
                         loss: &training::EpochLoss,
                         models: &training::GoalModels| {
        if epoch % 10 == 0 || epoch + 1 == snapshot_config.epochs {
            eprintln!(
                "epoch {epoch}: noise {:.4} kl {:.4} total {:.4}",
                loss.noise, loss.kl, loss.total
            );
        }
        curve_so_far.push(*loss);
        let last = epoch + 1 == snapshot_config.epochs;
        if snapshot_config.epochs >= 8 && !last && (epoch + 1) % snapshot_every == 0 {
            let stem = snapshot_stem(&out_stem, epoch + 1);
            if let Err(e) = checkpoint::save_checkpoint(
                &stem,
                ModelKind::Diffusion,
                &snapshot_config,
                epoch + 1,
                &curve_so_far,
                &snapshot_ids,
                &models.store,
            ) {
                eprintln!("snapshot at epoch {} failed: {e}", epoch + 1);
            }
        }
    };

    let (kind, loss_curve, events, ids, store) = if args.baseline {
        let result = baseline::train_baseline(&dataset.records, &config)?;
        for e in &result.events {
            eprintln!("event: {e}");
        }
        (
            ModelKind::Baseline,
            result.loss_curve,
            result.events,
            result.train_record_ids,
            result.model.store,
        )
    } else {
        let result = training::train_with_progress(&dataset.records, &config, progress)?;
        for e in &result.events {
            eprintln!("event: {e}");
        }
        (
            ModelKind::Diffusion,
            result.loss_curve,
            result.events,
            result.train_record_ids,
            result.models.store,
        )
    };

    let header = checkpoint::save_checkpoint(
        &args.out,
        kind,
        &config,
        config.epochs,
        &loss_curve,
        &ids,
        &store,
    )?;

    let mut csv = String::from("epoch,noise,kl,total\n");
    for l in &loss_curve {
        csv.push_str(&format!("{},{},{},{}\n", l.epoch, l.noise, l.kl, l.total));
    }
    let loss_path = loss_stem(&args.out);
    std::fs::write(&loss_path, csv)?;

    println!(
        "trained {kind} checkpoint {} ({} events), loss curve at {}",
        header.id,
        events.len(),
        loss_path.display()
    );
    Ok(EXIT_OK)
}

fn loss_stem(out: &std::path::Path) -> PathBuf {
    let mut name = out
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into());
    name.push_str("_loss.csv");
    out.with_file_name(name)
}

fn snapshot_stem(out: &std::path::Path, epoch: usize) -> PathBuf {
    let mut name = out
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into());
    name.push_str(&format!("_ep{epoch}"));
    out.with_file_name(name)
}

fn sample(args: SampleArgs) -> anyhow::Result<ExitCode> {
    let loaded = checkpoint::load_model(&args.ckpt)?;
    let LoadedModel::Diffusion(models) = &loaded.model else {
        bail!("checkpoint {} is a baseline model; sampling needs a diffusion checkpoint", loaded.header.id);
    };
    let current = cloud::read_cloud_csv(&args.current)?;
    let context = cloud::read_cloud_csv(&args.context)?;
    let variant = if args.stochastic {
        SamplerVariant::Stochastic
    } else {
        SamplerVariant::Deterministic
    };
    let sched = models.config.schedule();
    let goals = sampler::sample_goals(
        models, &sched, &current, &context, args.num, args.seed, variant,
    )?;

    std::fs::create_dir_all(&args.out)?;
    let mut files = Vec::new();
    for (i, goal) in goals.iter().enumerate() {
        let name = format!("goal_{i:03}.csv");
        cloud::write_cloud_csv(&args.out.join(&name), goal)?;
        files.push(name);
    }
    let derived_seeds: Vec<u64> = (0..args.num)
        .map(|i| rng::derive(args.seed, &[i as u64]))
        .collect();
    let manifest = serde_json::json!({
        "checkpoint_id": loaded.header.id,
        "seed": args.seed,
        "derived_seeds": derived_seeds,
        "variant": variant.to_string(),
        "num": args.num,
        "files": files,
    });
    std::fs::write(
        args.out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    println!("wrote {} goal clouds to {}", goals.len(), args.out.display());
    Ok(EXIT_OK)
}

fn eval_cmd(args: EvalArgs) -> anyhow::Result<ExitCode> {
    let gates: Option<EvalGates> = match &args.gates {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading gates {}", path.display()))?;
            match serde_json::from_str(&text) {
                Ok(g) => Some(g),
                Err(e) => {
                    eprintln!("gates config error in {}: {e}", path.display());
                    return Ok(ExitCode::from(EXIT_CONFIG));
                }
            }
        }
        None => None,
    };
    let loaded = checkpoint::load_model(&args.ckpt)?;
    let dataset = tasks::read_dataset(&args.data)?;
    let report = eval::evaluate(
        &loaded,
        &dataset,
        &EvalOptions {
            samples_per_scenario: args.k,
            seed: args.seed,
            variant: if args.stochastic {
                SamplerVariant::Stochastic
            } else {
                SamplerVariant::Deterministic
            },
        },
    )?;

    std::fs::write(&args.report, report.to_json()?)?;
    let csv_path = args.report.with_extension("csv");
    std::fs::write(&csv_path, eval::report_to_csv(&report))?;
    println!(
        "evaluated {} scenarios x {} samples: chamfer median {:.6} (floor ratio {:.2})",
        report.scenarios.len(),
        args.k,
        report.aggregates.chamfer_median,
        report.aggregates.chamfer_floor_ratio
    );

    if let Some(gates) = gates {
        let violations = eval::check_gates(&report, &gates);
        if !violations.is_empty() {
            for v in &violations {
                eprintln!("gate violated: {v}");
            }
            return Ok(ExitCode::from(EXIT_GATE));
        }
        println!("all gates passed");
    }
    Ok(EXIT_OK)
}

fn plot_cmd(args: PlotArgs) -> anyhow::Result<ExitCode> {
    if args.clouds.len() > 8 {
        eprintln!("error: at most 8 clouds per plot (got {})", args.clouds.len());
        return Ok(ExitCode::from(EXIT_CONFIG));
    }
    let mut named = Vec::new();
    for path in &args.clouds {
        let c = cloud::read_cloud_csv(path)?;
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "cloud".into());
        named.push((label, c));
    }
    let svg = plot::render_svg(&named);
    std::fs::write(&args.out, svg)?;
    println!("wrote {}", args.out.display());
    Ok(EXIT_OK)
}
