mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use clcsca::model::{Task, Variant};
use clcsca::verify::Suite;

/// Train, evaluate and verify the cross-level cross-scale point-cloud network.
#[derive(Debug, Parser)]
#[command(name = "clcsca", version)]
struct Cli {
    /// Worker threads for batch-parallel work (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset (PCLD files plus dataset.json).
    GenData(GenDataArgs),
    /// Train a network and write metrics.csv, checkpoints and manifest.json.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Run a verification suite; exits 1 if any check fails.
    Check(CheckArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TaskArg {
    Classification,
    Segmentation,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::Classification => Task::Classification,
            TaskArg::Segmentation => Task::Segmentation,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VariantArg {
    Baseline,
    Clca,
    Csca,
    Full,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Variant {
        match v {
            VariantArg::Baseline => Variant::Baseline,
            VariantArg::Clca => Variant::Clca,
            VariantArg::Csca => Variant::Csca,
            VariantArg::Full => Variant::Full,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SuiteArg {
    Grad,
    Invariance,
    Oracle,
    All,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long, value_enum, default_value = "classification")]
    task: TaskArg,
    /// Shape kinds (classification, up to 4) or part categories (up to 3).
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    train_per_class: Option<usize>,
    #[arg(long)]
    test_per_class: Option<usize>,
    #[arg(long)]
    points: Option<usize>,
    /// Jitter sigma for classification shapes.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Network config JSON, a previous run's manifest.json, or one of the
    /// presets `desk` and `standard`.
    #[arg(long, default_value = "desk")]
    config: String,
    /// Training hyperparameters JSON (default: the standard settings for
    /// the task).
    #[arg(long)]
    train_config: Option<PathBuf>,
    /// Dataset directory (or its dataset.json).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fusion modules to keep.
    #[arg(long, value_enum)]
    ablate: Option<VariantArg>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// CLCW checkpoint; its directory must hold the run's network.json
    /// unless --config is given.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[arg(long, value_enum, default_value = "all")]
    suite: SuiteArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn suites(arg: SuiteArg) -> Vec<Suite> {
    match arg {
        SuiteArg::Grad => vec![Suite::Grad],
        SuiteArg::Invariance => vec![Suite::Invariance],
        SuiteArg::Oracle => vec![Suite::Oracle],
        SuiteArg::All => Suite::ALL.to_vec(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up the thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::GenData(a) => run::gen_data(a),
        Command::Train(a) => run::train(a),
        Command::Eval(a) => run::eval(a),
        Command::Check(a) => run::check(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io_or_format() { 2 } else { 1 })
        }
    }
}
