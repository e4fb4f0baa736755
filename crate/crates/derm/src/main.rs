use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use derm::commands;
use derm::config::RunConfig;
use derm::{CliError, CliResult};

/// Skin-lesion classification with hybrid CNN-Transformer models.
#[derive(Parser)]
#[command(name = "derm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stratified train/val/test split of a manifest.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Three comma-separated fractions summing to 1.
        #[arg(long, default_value = "0.8,0.1,0.1")]
        ratios: String,
    },
    /// Train a model from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        quiet: bool,
    },
    /// Evaluate a checkpoint on a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Directory image paths are relative to; defaults to the manifest's.
        #[arg(long)]
        data_root: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Classify one PPM image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
    /// Finite-difference check of every layer kind and both models.
    Gradcheck {
        /// Takes the seed from its [train] section.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Scale one op's backward pass, `op:scale`; for testing the harness.
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Write a synthetic bright/dark blob dataset with a manifest.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 64)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_ratios(s: &str) -> CliResult<[f64; 3]> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::config(format!("ratios must be three numbers, got {s:?}")))?;
    <[f64; 3]>::try_from(parts).map_err(|_| CliError::config(format!("ratios must be three numbers, got {s:?}")))
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Split {
            manifest,
            out_dir,
            seed,
            ratios,
        } => {
            let ratios = parse_ratios(&ratios)?;
            let [a, b, c] = commands::split(&manifest, &out_dir, seed, ratios)?;
            println!("train {a}  val {b}  test {c}");
        }
        Command::Train { config, out_dir, quiet } => {
            let s = commands::train(&config, &out_dir, !quiet)?;
            let t = &s.test;
            println!(
                "best epoch {}  test accuracy {:.4}  weighted f1 {:.4}  malignant f1 {:.4}",
                s.best_epoch, t.accuracy, t.weighted_f1, t.f1
            );
        }
        Command::Eval {
            checkpoint,
            manifest,
            data_root,
            out_dir,
        } => {
            let root = data_root.unwrap_or_else(|| manifest.parent().map(PathBuf::from).unwrap_or_default());
            let r = commands::eval(&checkpoint, &manifest, &root, &out_dir)?;
            println!(
                "accuracy {:.4}  weighted precision {:.4}  weighted recall {:.4}  weighted f1 {:.4}",
                r.accuracy, r.weighted_precision, r.weighted_recall, r.weighted_f1
            );
        }
        Command::Predict { checkpoint, image } => {
            println!("{}", commands::prediction_line(&commands::predict(&checkpoint, &image)?));
        }
        Command::Gradcheck {
            config,
            seed,
            inject_fault,
        } => {
            let from_config = match &config {
                Some(p) => RunConfig::load(p)?.train.seed,
                None => 0,
            };
            let fault = inject_fault.as_deref().map(commands::parse_fault).transpose()?;
            let (table, verdict) = commands::gradcheck(seed.unwrap_or(from_config), fault)?;
            print!("{table}");
            verdict?;
        }
        Command::Synth {
            out_dir,
            count,
            size,
            seed,
        } => {
            let m = commands::synth(&out_dir, count, size, seed)?;
            println!("{}", m.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // usage errors are configuration errors; --help and --version are not
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
