//! `kfgnet` command line. Exit codes: 0 ok, 1 usage or configuration error, 2 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use kfgnet::harness::{self, Command, ExperimentConfig, KeyFrameSource, Precision};
use kfgnet::Error;

#[derive(Parser, Debug)]
#[command(
    name = "kfgnet",
    version,
    about = "Key-frame guided ultrasound video classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// JSON config file (a previous run.json works too); flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    key_frame_source: Option<SourceArg>,
    #[arg(long, global = true)]
    folds: Option<usize>,
    #[arg(long, global = true, value_enum)]
    precision: Option<PrecisionArg>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// Generate the synthetic dataset into --data-dir.
    GenData,
    /// Write per-video score-label and motion-index CSVs.
    GenLabels,
    /// Train the key-frame localizer on the training split.
    TrainLocalizer,
    /// accuracy@D curve (D = 0..32) on the held-out videos.
    EvalLocalizer,
    /// Train the clip classifier on the training split.
    TrainClassifier,
    /// Metrics and per-video probabilities on the held-out split.
    EvalClassifier,
    /// k-fold cross-validation of the classifier.
    Crossval,
    /// Cross-validate the 2x2x2 sampling / pooling / attention grid.
    Ablate,
    /// Finite-difference check of every kernel and both models.
    Gradcheck,
    /// Merge the run directory's CSVs into a summary, CSV and SVG plot.
    Report,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum SourceArg {
    Gt,
    Predicted,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum PrecisionArg {
    F64,
    F32,
}

impl Cmd {
    fn command(self) -> Command {
        match self {
            Cmd::GenData => Command::GenData,
            Cmd::GenLabels => Command::GenLabels,
            Cmd::TrainLocalizer => Command::TrainLocalizer,
            Cmd::EvalLocalizer => Command::EvalLocalizer,
            Cmd::TrainClassifier => Command::TrainClassifier,
            Cmd::EvalClassifier => Command::EvalClassifier,
            Cmd::Crossval => Command::Crossval,
            Cmd::Ablate => Command::Ablate,
            Cmd::Gradcheck => Command::Gradcheck,
            Cmd::Report => Command::Report,
        }
    }
}

fn resolve(cli: &Cli) -> kfgnet::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.data_dir {
        cfg.data_dir = d.clone();
    }
    if let Some(d) = &cli.out_dir {
        cfg.out_dir = d.clone();
    }
    if let Some(k) = cli.key_frame_source {
        cfg.key_frame_source = match k {
            SourceArg::Gt => KeyFrameSource::GroundTruth,
            SourceArg::Predicted => KeyFrameSource::Predicted,
        };
    }
    if let Some(f) = cli.folds {
        cfg.folds = f;
    }
    if let Some(p) = cli.precision {
        cfg.precision = match p {
            PrecisionArg::F64 => Precision::F64,
            PrecisionArg::F32 => Precision::F32,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let cfg = match resolve(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("kfgnet: {e}");
            return ExitCode::from(1);
        }
    };
    match harness::run(cli.command.command(), &cfg) {
        Ok(out) => {
            if !out.message.is_empty() {
                println!("{}", out.message);
            }
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("kfgnet: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 1,
                _ => 2,
            })
        }
    }
}
