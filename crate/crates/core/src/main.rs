use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use frmd::cli;
use frmd::config::RunConfig;
use frmd::FrmdError;

#[derive(Parser)]
#[command(name = "frmd", version, about = "Motion-primitive diffusion policies with one-step distillation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate expert demonstrations as JSON lines.
    GenData(Args),
    /// Train the diffusion teacher (or the raw-head baseline).
    TrainTeacher(Args),
    /// Distill the teacher into a one-step student.
    Distill(Args),
    /// Roll out every available checkpoint and write an evaluation report.
    Eval(Args),
    /// Time one sample call per checkpoint on shared probe inputs.
    Bench(Args),
    /// Render a trace with its non-smooth points as SVG.
    Plot(Args),
}

#[derive(clap::Args)]
struct Args {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `seed` from the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `out` from the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn resolve(args: &Args) -> Result<RunConfig, FrmdError> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    print!("{}", cfg.render());
    Ok(cfg)
}

fn run(command: Command) -> Result<(), FrmdError> {
    match command {
        Command::GenData(a) => cli::cmd_gen_data(&resolve(&a)?).map(drop),
        Command::TrainTeacher(a) => cli::cmd_train_teacher(&resolve(&a)?).map(drop),
        Command::Distill(a) => cli::cmd_distill(&resolve(&a)?).map(drop),
        Command::Eval(a) => cli::cmd_eval(&resolve(&a)?).map(drop),
        Command::Bench(a) => cli::cmd_bench(&resolve(&a)?).map(drop),
        Command::Plot(a) => cli::cmd_plot(&resolve(&a)?).map(drop),
    }
}

fn main() -> ExitCode {
    let parsed = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(parsed.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
