//! `uvmakeup`: makeup transfer, training, dataset synthesis and evaluation.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "uvmakeup", version, about = "Color and pattern makeup transfer in UV space")]
struct Cli {
    /// Log progress (repeat for debug output). `RUST_LOG` takes precedence.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Transfer the makeup of a reference face onto a source face.
    Transfer(TransferArgs),
    /// Train the color branch from a TOML config.
    TrainColor {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train the pattern segmentation network from a TOML config.
    TrainPattern {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate a pattern dataset (textures, masks, rendered faces).
    Synth1(Synth1Args),
    /// Generate transfer triplets (source, reference, ground truth).
    Synth2(Synth2Args),
    /// Evaluate models on a generated dataset and write a report.
    Eval(EvalArgs),
    /// Write procedural faces with their geometry.
    GenFaces {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Faces wear random makeup styles.
        #[arg(long)]
        styles: bool,
    },
    /// Write a procedural sticker library.
    GenStickers {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the configured bind address.
        #[arg(long)]
        bind: Option<String>,
    },
}

#[derive(Args, Debug)]
struct TransferArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    /// Second reference; its color is interpolated with the first by `alpha`.
    #[arg(long)]
    reference2: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    no_color: bool,
    #[arg(long)]
    no_pattern: bool,
    #[arg(long, default_value_t = 1.0)]
    alpha: f32,
    /// `full` or a comma list of `lips`, `eyes`, `skin`.
    #[arg(long, default_value = "full")]
    regions: String,
    /// Which reference supplies the pattern.
    #[arg(long, value_enum, default_value_t = PatternFrom::First)]
    pattern_source: PatternFrom,
    #[arg(long)]
    dump_intermediates: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "models")]
    models: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PatternFrom {
    First,
    Second,
}

#[derive(Args, Debug)]
struct Synth1Args {
    #[arg(long)]
    faces: PathBuf,
    #[arg(long)]
    stickers: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.25)]
    test_fraction: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct Synth2Args {
    #[arg(long)]
    faces: PathBuf,
    #[arg(long)]
    styles: PathBuf,
    #[arg(long)]
    stickers: PathBuf,
    /// Color model used to move faces to the styles; without it faces keep their color.
    #[arg(long)]
    models: Option<PathBuf>,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EvalTask {
    Seg,
    Transfer,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, value_enum)]
    task: EvalTask,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "models")]
    models: PathBuf,
    /// JSON-lines records; the summary goes next to it.
    #[arg(long)]
    report: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Transfer(a) => commands::transfer(a),
        Command::TrainColor { config } => commands::train_color(&config),
        Command::TrainPattern { config } => commands::train_pattern(&config),
        Command::Synth1(a) => commands::synth1(a),
        Command::Synth2(a) => commands::synth2(a),
        Command::Eval(a) => commands::eval(a),
        Command::GenFaces { n, seed, out, styles } => commands::gen_faces(n, seed, &out, styles),
        Command::GenStickers { n, seed, out } => commands::gen_stickers(n, seed, &out),
        Command::Serve { config, bind } => commands::serve(config.as_deref(), bind),
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
