//! Command-line interface: dataset generation, training, sampling with
//! uncertainty export, evaluation, and the ablation study. Every command
//! writes a run manifest with artifact checksums; violated preconditions
//! produce a nonzero exit with a message naming the violated condition.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ndarray::Array2;

use cediff::checkpoint;
use cediff::dataset::{self, DatasetConfig};
use cediff::manifest::ManifestBuilder;
use cediff::pngio::{save_png, save_png_autoscale};
use cediff::report::{render_ablation_table, render_eval_report};
use cediff::tensorio::write_image;
use cediff::trainer::{run_ablation, run_training, TrainConfig, Trainer};
use cediff_core::phantom::Split;
use cediff_core::schedule::SamplerConfig;

#[derive(Parser)]
#[command(name = "cediff", about = "Conditional diffusion synthesis of contrast-enhanced breast MRI from unenhanced phantom images", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom dataset with case-level splits.
    GenData(GenDataArgs),
    /// Train the denoiser (optionally resuming from a checkpoint).
    Train(TrainArgs),
    /// Sample a case: prediction, error map, and per-step uncertainty maps.
    Sample(SampleArgs),
    /// Evaluate a checkpoint on one dataset split.
    Eval(EvalArgs),
    /// Run the four-variant ablation study and print the comparison table.
    Ablation(AblationArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 200)]
    num_cases: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0.7)]
    train_fraction: f64,
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    #[arg(long, default_value_t = 0.1)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    /// Also write PNG previews of every channel.
    #[arg(long, default_value_t = false)]
    previews: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// TOML file with a [TrainConfig]; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Resume bit-exactly from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, default_value_t = false)]
    no_uncertainty: bool,
    #[arg(long, default_value_t = false)]
    no_dispersive: bool,
    #[arg(long, default_value_t = false)]
    no_perceptual: bool,
    #[arg(long, default_value_t = false)]
    no_attention: bool,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    case_id: u64,
    #[arg(long, default_value_t = 15)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = 15)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct AblationArgs {
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Epochs per variant (desk-scale default).
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 15)]
    steps: usize,
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => bail!("unknown split {other:?}; expected train, val, or test"),
    }
}

fn load_train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            toml::from_str::<TrainConfig>(&text)
                .with_context(|| format!("config schema violation in {}", path.display()))?
        }
        None => TrainConfig { epochs: 20, ..Default::default() },
    };
    if let Some(e) = args.epochs {
        config.epochs = e;
    }
    if let Some(b) = args.batch_size {
        config.batch_size = b;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if args.no_uncertainty {
        config.ablation.uncertainty = false;
    }
    if args.no_dispersive {
        config.ablation.dispersive = false;
    }
    if args.no_perceptual {
        config.ablation.perceptual = false;
    }
    if args.no_attention {
        config.ablation.multiscale_attention = false;
    }
    config.validate()?;
    Ok(config)
}

fn echo_config(config: &TrainConfig) {
    let w = cediff_core::losses::LossWeights::<f32>::default();
    println!(
        "config: epochs={} batch_size={} lr={:e} wd={:e} warmup_epochs={} warmup_factor={} clip={} seed={}",
        config.epochs,
        config.batch_size,
        config.learning_rate,
        config.weight_decay,
        config.warmup_epochs,
        config.warmup_factor,
        config.grad_clip_norm,
        config.seed
    );
    println!(
        "loss: beta={} tau={} logvar_clamp=[{}, {}] uncertainty={} dispersive={} perceptual={} multiscale_attention={}",
        if config.ablation.dispersive { w.beta } else { 0.0 },
        w.tau,
        w.logvar_clamp.0,
        w.logvar_clamp.1,
        config.ablation.uncertainty,
        config.ablation.dispersive,
        config.ablation.perceptual,
        config.ablation.multiscale_attention
    );
}

fn cmd_gen_data(args: GenDataArgs) -> Result<()> {
    let config = DatasetConfig {
        num_cases: args.num_cases,
        size: args.size,
        base_seed: args.seed,
        train_fraction: args.train_fraction,
        val_fraction: args.val_fraction,
        test_fraction: args.test_fraction,
    };
    let mut manifest = ManifestBuilder::new(
        "gen-data",
        args.seed,
        &args.out_dir,
        toml::to_string_pretty(&config)?,
    );
    let index = dataset::generate_dataset(&args.out_dir, &config, args.previews)?;
    manifest.add_artifact(&args.out_dir.join("manifest.toml"));
    manifest.finish(&args.out_dir)?;
    println!(
        "wrote {} cases ({} train / {} val / {} test) to {}",
        index.cases.len(),
        index.cases_in_split(Split::Train).len(),
        index.cases_in_split(Split::Val).len(),
        index.cases_in_split(Split::Test).len(),
        args.out_dir.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut trainer = match &args.resume {
        Some(path) => {
            let mut trainer = Trainer::resume(path)?;
            // --epochs may extend a resumed run; everything else comes from
            // the checkpoint so the continuation stays bit-exact
            if let Some(epochs) = args.epochs {
                trainer.config.epochs = epochs;
            }
            println!("resuming at epoch {} (step {})", trainer.epoch, trainer.step);
            trainer
        }
        None => Trainer::new(load_train_config(&args)?)?,
    };
    echo_config(&trainer.config);

    let index = dataset::load_index(&args.data_dir)?;
    let train_cases = dataset::load_split(&args.data_dir, &index, Split::Train)?;

    let mut manifest = ManifestBuilder::new(
        "train",
        trainer.config.seed,
        &args.out_dir,
        toml::to_string_pretty(&trainer.config)?,
    );
    fs::create_dir_all(&args.out_dir)?;
    let log_path = args.out_dir.join("train_log.txt");
    let mut log = fs::File::create(&log_path)?;
    let ckpt = run_training(&mut trainer, &train_cases, &args.out_dir, &mut log)?;
    log.flush()?;
    manifest.add_artifact(&log_path);
    manifest.add_artifact(&ckpt);
    manifest.finish(&args.out_dir)?;
    println!("trained {} epochs; checkpoint at {}", trainer.epoch, ckpt.display());
    Ok(())
}

fn find_case<'a>(
    index: &'a dataset::DatasetIndex,
    case_id: u64,
) -> Result<&'a dataset::CaseEntry> {
    index
        .cases
        .iter()
        .find(|c| c.id == case_id)
        .with_context(|| format!("case {case_id} is not in the dataset manifest"))
}

fn cmd_sample(args: SampleArgs) -> Result<()> {
    if args.steps == 0 {
        bail!("steps must be >= 1");
    }
    let (meta, _) = checkpoint::load(&args.checkpoint)?;
    let trainer = Trainer::resume(&args.checkpoint)?;
    let index = dataset::load_index(&args.data_dir)?;
    let entry = find_case(&index, args.case_id)?;
    let case = dataset::load_case(&args.data_dir, entry, index.config.size)?;

    let mut manifest = ManifestBuilder::new(
        "sample",
        args.seed,
        &args.out_dir,
        toml::to_string_pretty(&meta.config)?,
    );
    fs::create_dir_all(&args.out_dir)?;

    let cfg = SamplerConfig { num_inference_steps: args.steps, ..Default::default() };
    let traj = trainer.sample_trajectory(&case, &cfg, args.seed)?;
    let (h, w) = case.t1_pre.dim();
    let state = traj.final_state();
    let pred = Array2::from_shape_fn((h, w), |(i, j)| state[[0, 0, i, j]].clamp(0.0, 1.0));
    let final_log_var = traj.uncertainties.last().expect("at least one step");
    let uncertainty =
        Array2::from_shape_fn((h, w), |(i, j)| final_log_var[[0, 0, i, j]].exp());
    let error = Array2::from_shape_fn((h, w), |(i, j)| (pred[[i, j]] - case.t1_post[[i, j]]).abs());

    let write_pair = |name: &str,
                          img: &Array2<f32>,
                          autoscale: bool,
                          manifest: &mut ManifestBuilder|
     -> Result<()> {
        let raw = args.out_dir.join(format!("{name}.cedt"));
        let png = args.out_dir.join(format!("{name}.png"));
        write_image(&raw, img)?;
        if autoscale {
            save_png_autoscale(&png, img)?;
        } else {
            save_png(&png, img)?;
        }
        manifest.add_artifact(&raw);
        manifest.add_artifact(&png);
        Ok(())
    };

    write_pair("prediction", &pred, false, &mut manifest)?;
    write_pair("uncertainty", &uncertainty, true, &mut manifest)?;
    write_pair("error", &error, false, &mut manifest)?;
    write_pair("ground_truth", &case.t1_post, false, &mut manifest)?;
    for (step, log_var) in traj.uncertainties.iter().enumerate() {
        let map = Array2::from_shape_fn((h, w), |(i, j)| log_var[[0, 0, i, j]].exp());
        write_pair(&format!("uncertainty_step_{step:02}"), &map, true, &mut manifest)?;
    }
    manifest.finish(&args.out_dir)?;
    println!(
        "sampled case {} with {} steps (seed {}); outputs in {}",
        args.case_id,
        args.steps,
        args.seed,
        args.out_dir.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let (meta, _) = checkpoint::load(&args.checkpoint)?;
    let trainer = Trainer::resume(&args.checkpoint)?;
    let index = dataset::load_index(&args.data_dir)?;
    let split = parse_split(&args.split)?;
    let cases = dataset::load_split(&args.data_dir, &index, split)?;
    if cases.is_empty() {
        bail!("split {:?} contains no cases", args.split);
    }

    let mut manifest = ManifestBuilder::new(
        "eval",
        args.seed,
        &args.out_dir,
        toml::to_string_pretty(&meta.config)?,
    );
    let (global, tumor) = trainer.evaluate_cases(&cases, args.steps, args.seed)?;
    let report = render_eval_report(&global, &tumor);
    print!("{report}");
    fs::create_dir_all(&args.out_dir)?;
    let report_path = args.out_dir.join("eval_report.txt");
    fs::write(&report_path, &report)?;
    manifest.add_artifact(&report_path);
    manifest.finish(&args.out_dir)?;
    Ok(())
}

fn cmd_ablation(args: AblationArgs) -> Result<()> {
    let index = dataset::load_index(&args.data_dir)?;
    let train_cases = dataset::load_split(&args.data_dir, &index, Split::Train)?;
    let test_cases = dataset::load_split(&args.data_dir, &index, Split::Test)?;
    if test_cases.is_empty() {
        bail!("the dataset has no test split to evaluate the ablation on");
    }

    let config = TrainConfig {
        epochs: args.epochs,
        seed: args.seed,
        ..Default::default()
    };
    config.validate()?;
    let mut manifest = ManifestBuilder::new(
        "ablation",
        args.seed,
        &args.out_dir,
        toml::to_string_pretty(&config)?,
    );
    fs::create_dir_all(&args.out_dir)?;
    let log_path = args.out_dir.join("ablation_log.txt");
    let mut log = fs::File::create(&log_path)?;
    let rows = run_ablation(
        &config,
        &train_cases,
        &test_cases,
        &args.out_dir,
        args.steps,
        args.seed,
        &mut log,
    )?;
    log.flush()?;
    let table = render_ablation_table(&rows);
    print!("{table}");
    let table_path = args.out_dir.join("ablation_table.txt");
    fs::write(&table_path, &table)?;
    manifest.add_artifact(&log_path);
    manifest.add_artifact(&table_path);
    manifest.finish(&args.out_dir)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::Train(args) => cmd_train(args),
        Command::Sample(args) => cmd_sample(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Ablation(args) => cmd_ablation(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
