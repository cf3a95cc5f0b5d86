use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use atro::error::{AtroError, Result};
use atro_cli::{exit_code, parse_config, run, Command, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "atro", version, about = "Adversarial training with a rejection option")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand, Clone, Copy)]
enum Sub {
    /// Train a linear classifier/rejector pair
    Train,
    /// Evaluate a saved model, clean and under attack
    Eval,
    /// Attack a saved model and dump per-sample perturbations
    Attack,
    /// Itemized generalization bound for a saved model
    Bound,
    /// Multi-trial benchmark table over a method grid
    Bench,
    /// Train the two-head network
    NeuralTrain,
}

#[derive(clap::Args)]
struct Flags {
    /// JSON run config; flags below override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dataset file
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Saved model JSON
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Radius for the command's main ε (training, attack, bound or bench grid)
    #[arg(long, global = true)]
    eps: Option<f64>,
    /// Rejection cost c
    #[arg(long, global = true)]
    cost: Option<f64>,
    /// svm, at, mh or atro
    #[arg(long, global = true)]
    mode: Option<String>,
    /// none, analytic_linear, fgsm or pgd
    #[arg(long, global = true)]
    attack: Option<String>,
    #[arg(long, global = true)]
    steps: Option<usize>,
}

fn enum_flag<T: serde::de::DeserializeOwned>(flag: &str, v: &Option<String>) -> Result<Option<T>> {
    v.as_ref()
        .map(|s| {
            serde_json::from_value(serde_json::Value::String(s.to_lowercase()))
                .map_err(|_| AtroError::config(format!("--{flag}"), format!("unknown value \"{s}\"")))
        })
        .transpose()
}

fn command_of(s: Sub) -> Command {
    match s {
        Sub::Train => Command::Train,
        Sub::Eval => Command::Eval,
        Sub::Attack => Command::Attack,
        Sub::Bound => Command::Bound,
        Sub::Bench => Command::Bench,
        Sub::NeuralTrain => Command::NeuralTrain,
    }
}

fn build(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.flags.config {
        Some(p) => {
            let raw = std::fs::read_to_string(p)
                .map_err(|e| AtroError::config("--config", format!("cannot read {}: {e}", p.display())))?;
            parse_config(&raw)?
        }
        None => RunConfig::default(),
    };
    cfg.command = command_of(cli.command);
    let f = &cli.flags;
    cfg.apply(&Overrides {
        seed: f.seed,
        out: f.out.clone(),
        data: f.data.clone(),
        model: f.model.clone(),
        eps: f.eps,
        cost: f.cost,
        mode: enum_flag("mode", &f.mode)?,
        attack: enum_flag("attack", &f.attack)?,
        steps: f.steps,
    });
    cfg.resolve()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = build(&cli).and_then(|cfg| run(&cfg));
    match result {
        Ok(out) => {
            print!("{}", out.summary);
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
