use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mallowseg::evalmetrics::evaluate_corpus;
use mallowseg::inference::RunConfig;
use mallowseg::io::{
    label_ids, read_features, read_label_file, read_labels, read_prediction, write_outputs,
    LABEL_SUFFIX,
};
use mallowseg::pipeline::{format_scores, segment_corpus, write_synthetic};
use mallowseg::synth::{generate_synthetic, GeneratorConfig};
use mallowseg::{Error, Result};

/// Unsupervised segmentation of videos into temporally ordered sub-activities.
#[derive(Parser)]
#[command(name = "mallowseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment every video of a feature directory.
    Segment(SegmentArgs),
    /// Draw a synthetic corpus from the model.
    Generate(GenerateArgs),
    /// Score predicted segmentations against ground truth.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    features: PathBuf,
    /// Ground-truth labels; when complete, metrics are reported.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 3)]
    q: usize,
    /// Model background frames.
    #[arg(long, overrides_with = "no_background")]
    background: bool,
    #[arg(long = "no-background", overrides_with = "background")]
    no_background: bool,
    #[arg(long, default_value_t = 5)]
    iterations: usize,
    /// Gibbs sweeps per iteration.
    #[arg(long, default_value_t = 1)]
    sweeps: usize,
    #[arg(long, default_value_t = 12)]
    epochs: usize,
    #[arg(long, default_value_t = 200)]
    embed_dim: usize,
    #[arg(long, default_value_t = 1.0)]
    margin: f64,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    l2: f64,
    #[arg(long, default_value_t = 0.1)]
    theta0: f64,
    #[arg(long, default_value_t = 1.0)]
    rho0: f64,
    #[arg(long, default_value_t = 0.1)]
    nu0: f64,
    #[arg(long, default_value_t = 0.2)]
    alpha: f64,
    #[arg(long, default_value_t = 0.2)]
    beta: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 3)]
    q: usize,
    #[arg(long)]
    videos: usize,
    /// Mean frames per video.
    #[arg(long)]
    frames: usize,
    #[arg(long)]
    dim: usize,
    /// Background probability.
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long, default_value_t = 4.0)]
    separation: f64,
    /// Dispersions, comma-separated (K-1 values) or one value for every position.
    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    rho: Vec<f64>,
    /// Concentration of the sub-activity proportions.
    #[arg(long, default_value_t = 10.0)]
    theta0: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    pred: PathBuf,
}

fn segment(args: SegmentArgs) -> Result<()> {
    let corpus = read_features(&args.features)?;
    let labels = match &args.labels {
        Some(dir) => read_labels(dir, corpus.ids())?,
        None => None,
    };
    if args.labels.is_some() && labels.is_none() {
        eprintln!("some videos lack ground-truth labels; metrics skipped");
    }
    let config = RunConfig {
        k: args.k,
        q: args.q,
        embed_dim: args.embed_dim,
        margin: args.margin,
        l2: args.l2,
        learning_rate: args.lr,
        epochs: args.epochs,
        outer_iterations: args.iterations,
        sweeps_per_iteration: args.sweeps,
        theta0: args.theta0,
        rho0: args.rho0,
        nu0: args.nu0,
        alpha: args.alpha,
        beta: args.beta,
        background: args.background && !args.no_background,
        seed: args.seed,
        ..RunConfig::new(args.k)
    };
    let summary = segment_corpus(&corpus, labels.as_deref(), &config)?;
    write_outputs(&args.out, &summary)?;
    if let Some(scores) = &summary.metrics {
        print!("{}", format_scores(scores));
    }
    Ok(())
}

fn generate(args: GenerateArgs) -> Result<()> {
    let positions = args.k.saturating_sub(1);
    let rho = match args.rho.as_slice() {
        [single] => vec![*single; positions],
        many => many.to_vec(),
    };
    let config = GeneratorConfig {
        k: args.k,
        q: args.q,
        videos: args.videos,
        frames: args.frames,
        dim: args.dim,
        rho,
        lambda: args.lambda,
        separation: args.separation,
        theta0: args.theta0,
        seed: args.seed,
    };
    let data = generate_synthetic(&config, &mut ChaCha8Rng::seed_from_u64(config.seed))?;
    write_synthetic(&args.out, &config, &data)
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let ids = label_ids(&args.gt)?;
    if ids.is_empty() {
        return Err(Error::input(format!(
            "{} contains no *{LABEL_SUFFIX} files",
            args.gt.display()
        )));
    }
    let mut gt = Vec::with_capacity(ids.len());
    let mut pred = Vec::with_capacity(ids.len());
    for id in &ids {
        gt.push(read_label_file(
            &args.gt.join(format!("{id}{LABEL_SUFFIX}")),
        )?);
        pred.push(read_prediction(&args.pred, id)?);
    }
    print!("{}", format_scores(&evaluate_corpus(&gt, &pred)?));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Segment(args) => segment(args),
        Command::Generate(args) => generate(args),
        Command::Evaluate(args) => evaluate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
