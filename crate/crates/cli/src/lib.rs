//! Command-line pipeline for caution-aware transfer experiments: train
//! source policies, transfer them to test tasks, evaluate by rollout, check
//! the suboptimality bounds and summarise.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{Context, Overrides};
pub use config::{Experiment, ExperimentConfig, Method};
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "cat", version, about = "Caution-aware transfer experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the source tasks and store policies, values, successor features and occupancies.
    Train(CommonArgs),
    /// Compose the stored source policies on every test task.
    Transfer(CommonArgs),
    /// Roll out the transferred policies and write results.csv and report.json.
    Evaluate(CommonArgs),
    /// Verify the suboptimality bounds on random instances and on the test tasks.
    CheckBounds(CommonArgs),
    /// Collect results into report.json and report.md.
    Report(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Experiment config file.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides the config's `output_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Evaluation rollout seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated methods: risk_neutral, cat, cat_sf, primal_variance.
    #[arg(long)]
    pub method: Option<String>,
    /// Caution weight.
    #[arg(long)]
    pub c: Option<f64>,
}

impl CommonArgs {
    fn context(&self) -> Result<Context> {
        let methods = self
            .method
            .as_deref()
            .map(config::parse_methods)
            .transpose()?;
        let overrides = Overrides {
            out: self.out.clone(),
            seed: self.seed,
            methods,
            c: self.c,
        };
        Context::load(&self.config, &overrides)
    }
}

/// Runs one parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => {
            let ctx = a.context()?;
            let m = commands::train(&ctx)?;
            println!(
                "trained {} sources into {}",
                m.sources.len(),
                ctx.layout.train_dir().display()
            );
        }
        Command::Transfer(a) => {
            let ctx = a.context()?;
            let records = commands::transfer(&ctx)?;
            println!(
                "wrote {} transfer results under {}",
                records.len(),
                ctx.layout.root.display()
            );
        }
        Command::Evaluate(a) => {
            let ctx = a.context()?;
            commands::evaluate(&ctx)?;
            println!("wrote {}", ctx.layout.results_csv().display());
        }
        Command::CheckBounds(a) => {
            let ctx = a.context()?;
            let s = commands::check_bounds(&ctx)?;
            println!(
                "bound holds on {}/{} random instances (max slack utilization {:.3})",
                s.n_holding, s.n_instances, s.max_slack_utilization
            );
            for w in &s.warnings {
                eprintln!("warning: {w}");
            }
        }
        Command::Report(a) => {
            let ctx = a.context()?;
            commands::report(&ctx)?;
            println!("wrote {}", ctx.layout.report_md().display());
        }
    }
    Ok(())
}
