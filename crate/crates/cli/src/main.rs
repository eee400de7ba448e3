use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use shazam_core::ablation::AblationKind;
use shazam_core::metrics::RankPolicy;

mod ablate;
mod config;
mod eval;
mod report;
mod settings;
mod synth;
mod train;

use settings::{data_path, load_data, ModelArgs, Settings};

#[derive(Parser, Debug)]
#[command(name = "shazam", version, about = "Multi-teacher feature fusion: synthesis, training, ablations and reports")]
struct Cli {
    /// Seed for data synthesis, splits, initialisation and resampling.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Root for relative data paths.
    #[arg(long, global = true, env = "SHAZAM_DATA_DIR")]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic feature container, or import CSV features.
    Synth {
        /// key = value generator config.
        config: PathBuf,
        /// Output container path.
        out: PathBuf,
    },
    /// Train one model on one fold and write a checkpoint with its logs.
    Train {
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Score a checkpoint on its held-out units with bootstrap intervals.
    Eval {
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Score every unit instead of the checkpoint's test split.
        #[arg(long)]
        all: bool,
        #[arg(long, default_value_t = 1000)]
        replicates: usize,
    },
    /// Run a teacher-removal, scale-combination or gating ablation.
    Ablate {
        data: PathBuf,
        /// teacher_removal, scale_combo or moe_switch.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Rank tables, paired tests and KM plots from a results directory.
    Report {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// mean (all metrics per task) or primary (one metric per task).
        #[arg(long, default_value = "mean")]
        policy: String,
    },
}

fn run(cli: Cli) -> Result<()> {
    let root = cli.data_dir.as_deref();
    let seed = cli.seed;
    match cli.command {
        Command::Synth { config, out } => synth::run(&config, &data_path(root, &out), seed),
        Command::Train { data, out, model } => {
            let fs = load_data(&data_path(root, &data))?;
            let s = Settings::resolve(&model, fs.manifest.task_kind, seed)?;
            train::run(&fs, &s, &out, seed)
        }
        Command::Eval { data, checkpoint, out, all, replicates } => {
            let fs = load_data(&data_path(root, &data))?;
            eval::run(&fs, &checkpoint, &out, all, replicates, seed)
        }
        Command::Ablate { data, kind, out_dir, model } => {
            let kind = AblationKind::parse(&kind)?;
            let fs = load_data(&data_path(root, &data))?;
            let s = Settings::resolve(&model, fs.manifest.task_kind, seed)?;
            ablate::run(&fs, kind, &s, &out_dir, seed, if cli.jobs == 0 { rayon_threads() } else { cli.jobs })
        }
        Command::Report { input, out, policy } => {
            report::run(&data_path(root, &input), &out, RankPolicy::parse(&policy)?)
        }
    }
}

fn rayon_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// 3 for numeric failures, 2 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    let numeric = e.chain().any(|c| c.downcast_ref::<shazam_core::Error>().is_some_and(|x| x.is_numeric()));
    if numeric {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if cli.jobs > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global() {
            eprintln!("error: cannot size the worker pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

