use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;

// The network allocates many large short-lived buffers per step; the system
// allocator returns them to the OS and pays page faults on every reuse.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "posebert", version, about = "Train and run a masked pose-sequence transformer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Refine,
    Complete,
    Future,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus of pose sequences and its split manifest.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `gen.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model on the train split of a corpus.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint up to `train.max_steps`.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// JSON-lines progress log; defaults to `<out>.log.jsonl`.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Overrides `train.seed` for a fresh run.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score the model and the baselines on the corrupted test split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 0.125)]
        mask_ratio: f64,
        #[arg(long, default_value_t = 0.5)]
        block_prob: f64,
        /// Axis-angle noise σ (rad) on visible frames.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run one task on a pose-sequence file.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        horizon: usize,
        /// Leading frames used as observations; defaults to the whole input.
        #[arg(long)]
        observed: Option<usize>,
        /// Accepted for uniformity; inference is deterministic.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Frame-dropping study on the test split.
    Study {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
        drops: Vec<f64>,
        #[arg(long)]
        report: PathBuf,
        /// Gains table; defaults to `<report>.gains.csv`.
        #[arg(long)]
        gains: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn init_threads() -> posebert::Result<()> {
    let Ok(v) = std::env::var("POSEBERT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .map_err(|_| posebert::Error::InvalidConfig(format!("POSEBERT_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| posebert::Error::InvalidConfig(e.to_string()))
}

fn run(cli: Cli) -> posebert::Result<()> {
    init_threads()?;
    match cli.command {
        Command::Generate { config, out, seed } => commands::generate(&config, &out, seed),
        Command::Train {
            config,
            data,
            out,
            resume,
            log,
            seed,
        } => commands::train(&config, &data, &out, resume.as_deref(), log, seed),
        Command::Eval {
            ckpt,
            data,
            report,
            mask_ratio,
            block_prob,
            noise,
            seed,
        } => commands::eval(&ckpt, &data, &report, mask_ratio, block_prob, noise, seed),
        Command::Infer {
            ckpt,
            task,
            input,
            out,
            horizon,
            observed,
            seed: _,
        } => {
            let task = match task {
                TaskArg::Refine => posebert::tasks::Task::Refine,
                TaskArg::Complete => posebert::tasks::Task::Complete,
                TaskArg::Future => posebert::tasks::Task::Future,
            };
            commands::infer(&ckpt, task, &input, &out, horizon, observed)
        }
        Command::Study {
            ckpt,
            data,
            drops,
            report,
            gains,
            seed,
        } => {
            let gains = gains.unwrap_or_else(|| commands::with_suffix(&report, ".gains.csv"));
            commands::study(&ckpt, &data, &drops, &report, &gains, seed)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
