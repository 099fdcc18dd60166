//! Command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vocalbridge::config::ExperimentConfig;
use vocalbridge::error::{CliError, Result};
use vocalbridge::pipeline;

#[derive(Debug, Parser)]
#[command(
    name = "vocalbridge",
    about = "Latent diffusion-bridge purification: dataset generation, training, purification, and speaker-verification evaluation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset (latents, residuals, alignments, manifests).
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Train the bridge denoiser on the generated training split.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Purify the protected latents of a dataset manifest.
    Purify {
        #[command(flatten)]
        common: Common,
        /// Dataset manifest whose protected latents are purified
        /// (defaults to the dataset's trial split).
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Checkpoint to run (defaults to <out>/checkpoint.bin).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also decode purified latents to WAV files.
        #[arg(long)]
        wav: bool,
    },
    /// Calibrate the verification threshold and score purified trials.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Trial manifest (speaker, protected, purified), as written by purify.
        #[arg(long)]
        trials: PathBuf,
    },
    /// Run the built-in invariant suites.
    Selfcheck {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn out_dir(common: &Common) -> Result<PathBuf> {
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).map_err(|e| CliError::from_io(&dir, e))?;
    Ok(dir)
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Gen { common } => {
            let config = load_config(&common)?;
            let generated = pipeline::run_gen(&config, &common.config, common.out.as_deref())?;
            println!(
                "gen: wrote dataset to {} ({} train / {} test speakers)",
                generated.dir.display(),
                generated.num_train_speakers,
                generated.num_test_speakers
            );
            Ok(())
        }
        Command::Train { common } => {
            let config = load_config(&common)?;
            let out = out_dir(&common)?;
            let summary = pipeline::run_train(&config, &common.config, &out)?;
            println!(
                "train: {} steps, final loss {:.6}, val bridge loss {:.6}, {:.1}s -> {}",
                count_lines(&summary.log_path),
                summary.final_total,
                summary.val_bridge_loss,
                summary.wall_clock_secs,
                summary.checkpoint_path.display()
            );
            Ok(())
        }
        Command::Purify { common, manifest, checkpoint, wav } => {
            let config = load_config(&common)?;
            let out = out_dir(&common)?;
            let manifest = match manifest {
                Some(m) => m,
                None => {
                    let ds = config.dataset_dir(&common.config);
                    vocalbridge::dataset::manifest_paths(&ds).3
                }
            };
            let checkpoint = checkpoint.unwrap_or_else(|| out.join("checkpoint.bin"));
            let summary = pipeline::run_purify(&config, &manifest, &checkpoint, &out, wav)?;
            println!(
                "purify: {} utterances -> {}",
                summary.num_utterances,
                summary.trial_manifest.display()
            );
            Ok(())
        }
        Command::Eval { common, trials } => {
            let config = load_config(&common)?;
            let out = out_dir(&common)?;
            let summary = pipeline::run_eval(&config, &common.config, &trials, &out)?;
            if summary.calibration_frozen {
                println!("eval: reusing frozen calibration {}", summary.calibration_path.display());
            }
            println!("eval: {}", summary.report.summary());
            println!("eval: report written to {}", summary.metrics_path.display());
            Ok(())
        }
        Command::Selfcheck { common } => {
            let config = load_config(&common)?;
            let out = out_dir(&common)?;
            let results = pipeline::run_selfcheck(&config, &out)?;
            let mut all_ok = true;
            for r in &results {
                println!(
                    "selfcheck {}: {} ({})",
                    r.name,
                    if r.passed { "ok" } else { "FAIL" },
                    r.detail
                );
                all_ok &= r.passed;
            }
            if all_ok {
                println!("selfcheck: all {} checks passed", results.len());
                Ok(())
            } else {
                Err(CliError::Check("one or more selfcheck suites failed".into()))
            }
        }
    }
}

fn count_lines(path: &std::path::Path) -> usize {
    std::fs::read_to_string(path).map(|s| s.lines().count()).unwrap_or(0)
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error code={} kind={} msg={:?}", err.exit_code(), err.kind(), err.to_string());
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
