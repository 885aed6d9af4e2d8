use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use scribe::commands::{cmd_generate, cmd_preprocess, cmd_run, cmd_train_embed};
use scribe::{ExperimentConfig, Failure};

#[derive(Parser)]
#[command(name = "scribe", version, about = "Decode handwritten characters from EEG")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic session with known ground truth.
    Generate(Common),
    /// Filter, clean, epoch and fold the session.
    Preprocess(Common),
    /// Fit one contrastive encoder per embedding width and fold.
    TrainEmbed(Common),
    /// Cross-validate every configured model and write the result tables.
    Run {
        #[command(flatten)]
        common: Common,
        /// Run generate, preprocess and train-embed first.
        #[arg(long)]
        all: bool,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment TOML; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, Failure> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Generate(c) => {
            let paths = cmd_generate(&c.load()?, &c.out)?;
            println!("wrote {}", paths.eeg.display());
        }
        Command::Preprocess(c) => {
            cmd_preprocess(&c.load()?, &c.out)?;
            println!("wrote {}", c.out.join("folds").display());
        }
        Command::TrainEmbed(c) => {
            let n = cmd_train_embed(&c.load()?, &c.out)?;
            println!("trained {} encoders", n);
        }
        Command::Run { common, all } => {
            let results = cmd_run(&common.load()?, &common.out, all)?;
            for r in &results {
                let label = match r.d_embed {
                    Some(d) => format!("{} d={}", r.model, d),
                    None => r.model.clone(),
                };
                println!(
                    "{:<16} acc {:.3} ± {:.3}  f1 {:.3} ± {:.3}",
                    label, r.report.mean_acc, r.report.std_acc, r.report.mean_f1, r.report.std_f1
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f);
            ExitCode::FAILURE
        }
    }
}
