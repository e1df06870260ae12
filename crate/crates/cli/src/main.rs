use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cso_cli::commands::{self, Failure};
use cso_cli::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "cso",
    version,
    about = "Conditional stochastic optimization experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Level moments of the correction term and the fitted decay rate.
    Beta,
    /// Replicated stochastic gradient runs.
    Optimize,
    /// Variance of the three squared-loss estimators.
    CompareVariance,
    /// Finite-difference checks of the analytic derivatives.
    Gradcheck,
    /// Fitted IV function on a grid, with a data scatter.
    IvFit,
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::Other(e.into()))?;
    }
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = cli.out {
        config.output.dir = out;
    }
    match cli.command {
        Command::Beta => {
            let o = commands::cmd_beta(&config)?;
            match o.fit {
                Some(fit) => println!("beta = {:.4}", fit.beta),
                None => println!("beta not fitted: {}", o.fit_error.unwrap_or_default()),
            }
        }
        Command::Optimize => {
            let o = commands::cmd_optimize(&config)?;
            let (mean, se) = o.final_objective().expect("non-empty summary");
            println!("final objective = {mean:.6} +/- {se:.6}");
        }
        Command::CompareVariance => {
            for r in commands::cmd_compare_variance(&config)? {
                println!(
                    "M = {}: {:.6e} {:.6e} {:.6e} ordering {}",
                    r.m,
                    r.var[0],
                    r.var[1],
                    r.var[2],
                    if r.ordering_pass { "ok" } else { "violated" }
                );
            }
        }
        Command::Gradcheck => {
            let o = commands::cmd_gradcheck(&config)?;
            for m in &o.models {
                println!(
                    "{}: max rel err {:.3e}",
                    m.problem.name(),
                    m.report.max_rel_err()
                );
            }
        }
        Command::IvFit => {
            let o = commands::cmd_iv_fit(&config)?;
            println!(
                "{} grid points, {} scatter rows",
                o.grid.len(),
                o.scatter.len()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
