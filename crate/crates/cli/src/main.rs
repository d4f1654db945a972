use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

mod commands;
mod config;
mod output;

use commands::DesignKind;
use config::RunConfig;
use doptfact::fraction::Strategy;
use output::Meta;

/// Input problems: bad config, bad allocation file, wrong parameter kind.
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

#[derive(Parser)]
#[command(name = "doptfact", version, about = "D-optimal, EW and Bayes allocations for 2^k binary-response experiments")]
struct Cli {
    /// Omit the timestamp so that identical inputs give identical output.
    #[arg(long, global = true)]
    reproducible: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for result.json and the CSV tables; without it the JSON
    /// document goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    TopW,
    TopP,
    Exchange,
    Enumerate,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::TopW => Strategy::TopW,
            StrategyArg::TopP => Strategy::TopP,
            StrategyArg::Exchange => Strategy::Exchange,
            StrategyArg::Enumerate => Strategy::Enumerate,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Locally optimal (beta), EW or Bayes (prior) design.
    Design {
        #[arg(value_enum)]
        kind: DesignKind,
        #[command(flatten)]
        common: Common,
        /// Integer allocation of N runs.
        #[arg(long, value_name = "N")]
        integer: Option<u64>,
        /// Skip the Bayes comparison of an EW design.
        #[arg(long)]
        no_bayes: bool,
    },
    /// Best design restricted to m support points.
    Fraction {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, value_enum, default_value = "enumerate")]
        strategy: StrategyArg,
        /// Write the (beta0, beta3) region grid CSV for the 2^3 logit model.
        #[arg(long, value_name = "FILE")]
        region_grid: Option<PathBuf>,
    },
    /// Relative loss quantiles of candidate designs over prior draws.
    Robust {
        #[command(flatten)]
        common: Common,
        /// Comma-separated: uniform, ew, ebeta, bayes, most-robust.
        #[arg(long, value_delimiter = ',', default_value = "uniform,ew,ebeta,most-robust")]
        designs: Vec<String>,
        #[arg(long)]
        reps: Option<usize>,
    },
    /// Check an allocation against the optimality conditions.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        allocation: PathBuf,
    },
    /// Weights or expected weights per design point, plus nu curves.
    Weights {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Design { common, .. }
            | Command::Fraction { common, .. }
            | Command::Robust { common, .. }
            | Command::Verify { common, .. }
            | Command::Weights { common } => common,
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let common = cli.command.common();
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.set_seed(s);
    }
    let (name, bundle) = match &cli.command {
        Command::Design {
            kind,
            integer,
            no_bayes,
            ..
        } => {
            let name = match kind {
                DesignKind::Local => "design local",
                DesignKind::Ew => "design ew",
                DesignKind::Bayes => "design bayes",
            };
            (name, commands::design(&cfg, *kind, *integer, *no_bayes)?)
        }
        Command::Fraction {
            m,
            strategy,
            region_grid,
            ..
        } => (
            "fraction",
            commands::fraction(&cfg, *m, (*strategy).into(), region_grid.as_deref())?,
        ),
        Command::Robust { designs, reps, .. } => ("robust", commands::robust(&cfg, designs, *reps)?),
        Command::Verify { allocation, .. } => ("verify", commands::verify(&cfg, allocation)?),
        Command::Weights { .. } => ("weights", commands::weights_cmd(&cfg)?),
    };
    let meta = Meta {
        command: name.into(),
        seed: cfg.seed,
        reproducible: cli.reproducible,
    };
    output::emit(&meta, &bundle, common.out.as_deref())?;
    Ok(bundle.converged)
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<Invalid>() {
            return 2;
        }
        if let Some(de) = cause.downcast_ref::<doptfact::Error>() {
            return if de.is_validation() { 2 } else { 3 };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("doptfact: iteration cap reached before convergence");
            ExitCode::from(4)
        }
        Err(e) => {
            eprintln!("doptfact: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
