use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

use commands::Failure;

#[derive(Parser)]
#[command(name = "latentcomm", version, about = "Synthetic multi-agent thought recovery experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (JSON); defaults are used for anything missing.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the default config with every field filled in.
    Config {
        #[command(flatten)]
        common: Common,
    },
    /// Generate a synthetic dataset.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Train the autoencoder on a dataset directory.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Overrides the Jacobian penalty weight. The likelihood weight still comes
        /// from the config.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Evaluate a trained model against a dataset's ground truth.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also render the block R^2 heatmap as SVG.
        #[arg(long)]
        svg: bool,
    },
    /// Run routed and zero-adapter episodes with mock agents.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Train and evaluate one model per (dimension, seed).
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Skip settings whose report already exists.
        #[arg(long)]
        resume: bool,
        /// Use the large dimension list (124 to 1024).
        #[arg(long)]
        large: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Config { common } => commands::config(&common.into()),
        Command::Gen { common } => commands::gen(&common.into()),
        Command::Train { common, data, lambda } => commands::train(&common.into(), &data, lambda),
        Command::Eval {
            common,
            model,
            data,
            svg,
        } => commands::eval(&common.into(), &model, &data, svg),
        Command::Simulate { common } => commands::simulate(&common.into()),
        Command::Sweep {
            common,
            jobs,
            resume,
            large,
        } => commands::sweep(&common.into(), jobs, resume, large),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, message }) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}

impl From<Common> for commands::Inputs {
    fn from(c: Common) -> Self {
        Self {
            config: c.config,
            out: c.out,
            seed: c.seed,
        }
    }
}
