//! Pipeline driver: one subcommand per stage, file-based artifacts under
//! the output directory.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use scwt_core::config::PipelineConfig;
use scwt_core::fusion::FusionStrategy;
use scwt_core::pipeline::{self, Stage};
use scwt_core::Error;

#[derive(Parser)]
#[command(
    name = "scwt",
    about = "Subcortical scout scalogram toolkit: synthetic EEG cohorts, sLORETA scout reconstruction, Morlet scalograms, hemisphere-fused classification",
    version
)]
struct Cli {
    /// Pipeline configuration JSON; defaults apply when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output root; stages write to <out>/<stage>/
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Master seed override (drives simulation, training, and the split)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Fusion strategy override: left|right|sum|product|early|tfn
    #[arg(long, global = true)]
    fusion: Option<String>,

    /// Split whole subjects instead of epochs (leakage-aware evaluation)
    #[arg(long = "subject-level-split", global = true, default_value_t = false)]
    subject_level_split: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the synthetic montage and labeled cohort
    Simulate,
    /// Re-reference, band-pass, and resample the recordings
    Preprocess,
    /// Build the inverse kernel and estimate source currents
    Localize,
    /// Average source currents into the six scout series
    Scout,
    /// Cut scout series into 0.25 s epochs
    Epoch,
    /// Turn epochs into left/right scalogram image batches
    Cwt,
    /// Split the epochs and train the hemisphere classifiers
    Train,
    /// Train the fusion head (early/tfn) or record the chosen strategy
    Fuse,
    /// Score the test split with the configured fusion strategy
    Evaluate,
    /// Emit metrics JSON and ROC/PR CSVs
    Report,
    /// Run every stage in order
    All,
}

fn effective_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    if let Some(fusion) = &cli.fusion {
        cfg.fusion.strategy = FusionStrategy::parse(fusion)?;
    }
    if cli.subject_level_split {
        cfg.split.subject_level = true;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Error> {
    let cfg = effective_config(cli)?;
    let stages: Vec<Stage> = match cli.command {
        Command::Simulate => vec![Stage::Simulate],
        Command::Preprocess => vec![Stage::Preprocess],
        Command::Localize => vec![Stage::Localize],
        Command::Scout => vec![Stage::Scout],
        Command::Epoch => vec![Stage::Epoch],
        Command::Cwt => vec![Stage::Cwt],
        Command::Train => vec![Stage::Train],
        Command::Fuse => vec![Stage::Fuse],
        Command::Evaluate => vec![Stage::Evaluate],
        Command::Report => vec![Stage::Report],
        Command::All => Stage::ALL.to_vec(),
    };
    for stage in stages {
        if stage == Stage::Evaluate {
            let report = pipeline::stage_evaluate(&cfg, &cli.out)?;
            println!(
                "evaluate[{}]: accuracy {:.4}, macro AUC {}, macro AP {} ({} test epochs)",
                report.strategy,
                report.metrics.accuracy,
                report
                    .metrics
                    .auc_macro
                    .map_or("n/a".to_string(), |v| format!("{v:.4}")),
                report
                    .metrics
                    .ap_macro
                    .map_or("n/a".to_string(), |v| format!("{v:.4}")),
                report.metrics.n_samples
            );
        } else {
            pipeline::run_stage(stage, &cfg, &cli.out)?;
            println!("{}: done -> {}", stage.name(), cli.out.join(stage.name()).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let payload = serde_json::json!({
                "error": { "kind": err.kind(), "message": err.to_string() }
            });
            eprintln!("{payload}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
