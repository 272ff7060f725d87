use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use memotion_cli::{
    run_evaluate, run_experiment, run_predict, run_prepare, run_report, CliResult, ExperimentConfig,
};

#[derive(Parser)]
#[command(name = "memotion", version, about = "Multimodal meme classification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Split the data, build the vocabulary and write the label distribution.
    Prepare(Common),
    /// Train, predict, score and report.
    Train(Common),
    /// Predict the evaluation set with a trained run (or a late ensemble).
    Predict(Common),
    /// Score the run's prediction file.
    Evaluate(Common),
    /// Merge finished runs into one results table.
    Report {
        /// Run directories holding `result.json`.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Where the table is written.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(c: &Common) -> CliResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &c.out {
        cfg = cfg.with_output_dir(out.clone());
    }
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Prepare(c) => {
            let s = run_prepare(&load(&c)?)?;
            println!("prepared {} train / {} validation samples in {}", s.train, s.validation, s.dir.display());
        }
        Command::Train(c) => {
            let s = run_experiment(&load(&c)?)?;
            for (group, score) in &s.scores.groups {
                println!("{group}: {:.4}", score.aggregate);
            }
            println!("outputs in {}", s.dir.display());
        }
        Command::Predict(c) => {
            let path = run_predict(&load(&c)?)?;
            println!("{}", path.display());
        }
        Command::Evaluate(c) => {
            let scores = run_evaluate(&load(&c)?)?;
            for (task, e) in &scores.tasks {
                println!("{task}: macro F1 {:.4} (majority {:.4})", e.macro_f1, e.majority_macro_f1);
            }
        }
        Command::Report { runs, out } => {
            print!("{}", run_report(&runs, &out)?.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
