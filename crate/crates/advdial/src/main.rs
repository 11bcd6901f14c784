use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use advdial::config::RunConfig;
use advdial::pipeline::{run_experiment, RunOutcome, StageName};

#[derive(Parser)]
#[command(
    name = "advdial",
    version,
    about = "Train a dialogue generator, train a discriminator against its samples, \
             and evaluate how the two models rank responses"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration file (key = value lines).
    #[arg(long)]
    config: PathBuf,

    /// Directory for stage artifacts and reports.
    #[arg(long)]
    out: PathBuf,

    /// Override the seed from the configuration file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Produce the corpus and vocabulary artifacts.
    Synth(RunArgs),
    /// Train the generator (prerequisite stages run or reload first).
    TrainGen(RunArgs),
    /// Build the labeled human-vs-generated response dataset.
    BuildDataset(RunArgs),
    /// Train the discriminator on the labeled dataset.
    TrainDisc(RunArgs),
    /// Score the held-out data and emit the report files.
    Evaluate(RunArgs),
    /// Run every stage in order.
    RunAll {
        #[command(flatten)]
        args: RunArgs,

        /// Stop after this stage (corpus, split, train-gen,
        /// build-dataset, train-disc, evaluate).
        #[arg(long)]
        stage: Option<String>,
    },
}

fn execute(command: Command) -> advdial::Result<RunOutcome> {
    let (args, upto) = match command {
        Command::Synth(a) => (a, Some(StageName::Corpus)),
        Command::TrainGen(a) => (a, Some(StageName::TrainGen)),
        Command::BuildDataset(a) => (a, Some(StageName::BuildDataset)),
        Command::TrainDisc(a) => (a, Some(StageName::TrainDisc)),
        Command::Evaluate(a) => (a, None),
        Command::RunAll { args, stage } => {
            let upto = stage.as_deref().map(StageName::parse).transpose()?;
            (args, upto)
        }
    };
    let mut cfg = RunConfig::from_file(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    run_experiment(&cfg, &args.out, upto)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(outcome) => {
            for s in &outcome.stages {
                let status = if s.skipped { "up to date" } else { "done" };
                println!("{:<14} {status}", s.stage.as_str());
            }
            if let Some(report) = &outcome.report {
                println!(
                    "accuracy {} | perplexity {} | mean same-length rho {}",
                    advdial::evalsuite::fmt_sig(report.accuracy),
                    advdial::evalsuite::fmt_sig(report.gen_perplexity),
                    advdial::evalsuite::fmt_sig(report.mean_same_length_rho),
                );
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
