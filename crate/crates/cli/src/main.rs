//! `cttp` — a desk-scale lab for contrastive touch-to-touch pretraining:
//! generate paired synthetic tactile datasets, pretrain dual encoders under
//! several objectives, and evaluate the learned representations within and
//! across sensors.

mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "cttp",
    version,
    about = "Paired tactile simulation, contrastive pretraining, and cross-sensor evaluation",
    after_help = "Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.\n\
                  Every config key can also be set via CTTP_<SECTION>_<KEY> environment variables."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the five dataset splits plus manifest into a directory.
    Gen(GenArgs),
    /// Pretrain both sensor towers under one objective.
    Pretrain(PretrainArgs),
    /// Evaluate checkpoints: full comparison or a single (task, regime) cell.
    Eval(EvalArgs),
    /// Train one contrastive model per batch size and compare.
    Sweep(SweepArgs),
    /// Project embeddings of the test splits to 2-d CSV.
    Project(ProjectArgs),
    /// Check every op's and architecture's gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Run the whole desk-scale study: gen, all pretrainings, full eval,
    /// batch-size sweep, and projections.
    Paper(PaperArgs),
}

#[derive(Args)]
struct ConfigOpt {
    /// Config file (sections: dataset, model, pretrain, probes, eval, sweep).
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    config: ConfigOpt,
    /// Output dataset directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Overwrite an existing non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Override dataset.seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PretrainArgs {
    #[command(flatten)]
    config: ConfigOpt,
    /// Objective: cttp | recon | sup-class | sup-pose | random.
    #[arg(long)]
    mode: String,
    /// Dataset directory from `cttp gen`.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Output directory for checkpoint and loss trace.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long)]
    force: bool,
    /// Override pretrain.epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Override pretrain.batch_size.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Override pretrain.lr.
    #[arg(long)]
    lr: Option<f64>,
    /// Override model.tau.
    #[arg(long)]
    tau: Option<f64>,
    /// Override pretrain.seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigOpt,
    /// Dataset directory.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Checkpoints: either five `MODE=PATH` entries for the full comparison,
    /// or one bare `PATH` together with --task for a single cell.
    #[arg(long = "ckpt", value_name = "[MODE=]PATH", required = true)]
    ckpts: Vec<String>,
    /// Report JSON output path.
    #[arg(long, value_name = "FILE")]
    report: PathBuf,
    /// Single-cell task: class | pose | retrieval | insertion.
    #[arg(long)]
    task: Option<String>,
    /// Sensor the probe trains on (single-cell mode).
    #[arg(long, value_name = "gel|membrane")]
    train_sensor: Option<String>,
    /// Sensor the probe is evaluated on (single-cell mode).
    #[arg(long, value_name = "gel|membrane")]
    eval_sensor: Option<String>,
    /// Split pair: unseen-grasps | unseen-tools (single-cell mode).
    #[arg(long)]
    split: Option<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigOpt,
    /// Comma-separated batch sizes, e.g. 8,32,128,256.
    #[arg(long)]
    sizes: Option<String>,
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long)]
    force: bool,
    /// Parallel training jobs (acceptance runs use 1).
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct ProjectArgs {
    #[command(flatten)]
    config: ConfigOpt,
    /// Checkpoint whose towers embed the points.
    #[arg(long, value_name = "FILE")]
    ckpt: PathBuf,
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// pca | tsne.
    #[arg(long)]
    method: String,
    /// Output CSV path.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Optional JSON report path.
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PaperArgs {
    #[command(flatten)]
    config: ConfigOpt,
    /// Output directory for the whole study.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long)]
    force: bool,
    /// Parallel jobs for the sweep stage.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(args) => commands::gen(args),
        Command::Pretrain(args) => commands::pretrain(args),
        Command::Eval(args) => commands::eval(args),
        Command::Sweep(args) => commands::sweep(args),
        Command::Project(args) => commands::project(args),
        Command::Gradcheck(args) => commands::gradcheck(args),
        Command::Paper(args) => commands::paper(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
