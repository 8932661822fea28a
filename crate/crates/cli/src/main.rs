//! `ccto`: solve chance-constrained plans, validate them by Monte Carlo and
//! tabulate the results.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Failure;
use config::RunConfig;

#[derive(Parser)]
#[command(name = "ccto", version, about = "Chance-constrained trajectory optimization for stochastic LCS")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for a plan and write it with the risk audit.
    Solve(Common),
    /// Roll a plan out under sampled noise and estimate its violation rate.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Plan file written by `solve`.
        #[arg(long)]
        plan: PathBuf,
        /// Also write every trial trajectory.
        #[arg(long)]
        dump: bool,
    },
    /// Tabulate all reports in the output directory and write plot series.
    Report {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Run configuration file; flags given here take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// cartpole, sliding_box, dual_manipulators, or custom (with problem_file).
    #[arg(long)]
    system: Option<String>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Problem file for the custom system.
    #[arg(long)]
    problem: Option<PathBuf>,
    /// Override a model or solver setting, e.g. `--set M=80 --set epsilon=0.01`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, Failure> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(s) = &self.system {
            c.system.clone_from(s);
        }
        if let Some(p) = &self.problem {
            c.problem_file = Some(p.clone());
            if self.system.is_none() {
                c.system = "custom".into();
            }
        }
        if let Some(d) = self.delta {
            c.delta = d;
        }
        if let Some(t) = self.trials {
            c.trials = t;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(o) = &self.out {
            c.output_dir.clone_from(o);
        }
        for s in &self.set {
            c.set(s)?;
        }
        c.validate()?;
        Ok(c)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(common) => common.resolve().and_then(|c| commands::solve(&c)),
        Command::Simulate { common, plan, dump } => common.resolve().and_then(|c| commands::simulate(&c, &plan, dump)),
        Command::Report { out } => commands::report(&out.unwrap_or_else(|| RunConfig::default().output_dir)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
