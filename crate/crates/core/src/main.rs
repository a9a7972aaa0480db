use clap::{Parser, Subcommand};
use fcm_former::cli::{self, CliError, PredictInput};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "fcmformer", version, about = "Leukemia lineage classification of multi-tube flow cytometry samples")]
struct Args {
    /// Log more (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic cohort (FCS 3.1 tubes plus manifest.csv).
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse FCS files and summarise their panel coverage.
    Parse {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Cross-validated training on the configured manifest.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score a checkpoint on a labelled manifest.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Print `sample_id,label,p_ball,p_tall,p_aml` lines.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Classify every sample of this manifest instead of TUBES.
        #[arg(long, conflicts_with_all = ["tubes", "sample_id"])]
        manifest: Option<PathBuf>,
        /// Id printed for TUBES; defaults to the first file's stem.
        #[arg(long)]
        sample_id: Option<String>,
        /// Tube files of one sample.
        tubes: Vec<PathBuf>,
    },
    /// Print the itemised parameter ledger.
    Params {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also list every architecture variant's total.
        #[arg(long)]
        variants: bool,
    },
    /// Print every config key with its default value.
    Config,
}

fn run(command: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Synth { config, out: dir } => {
            let cfg = cli::load_config(config.as_deref())?;
            cli::cmd_synth(&cfg, &dir, out).map(drop)
        }
        Command::Parse { files } => cli::cmd_parse(&files, out),
        Command::Train { config } => {
            let cfg = cli::load_config(Some(&config))?;
            cli::cmd_train(&cfg, out).map(drop)
        }
        Command::Evaluate { checkpoint, manifest } => cli::cmd_evaluate(&checkpoint, &manifest, out),
        Command::Predict {
            checkpoint,
            manifest,
            sample_id,
            tubes,
        } => {
            let input = match manifest {
                Some(m) => PredictInput::Manifest(m),
                None => PredictInput::Tubes { sample_id, paths: tubes },
            };
            cli::cmd_predict(&checkpoint, &input, out)
        }
        Command::Params { config, variants } => {
            let cfg = cli::load_config(config.as_deref())?;
            cli::cmd_params(&cfg, variants, out).map(drop)
        }
        Command::Config => write!(out, "{}", cli::RunConfig::default().render())
            .map_err(|e| CliError::Runtime(e.to_string())),
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    let level = match args.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match run(args.command, &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = out.flush();
            eprintln!("fcmformer: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
