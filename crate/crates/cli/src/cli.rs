//! Argument parsing and dispatch for the `archetype` binary.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{cmd_predict, cmd_run, cmd_sweep, cmd_synth, MODELS_DIR};
use crate::config::{LoadedConfig, Overrides};
use crate::error::{CliError, StageExt, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(
    name = "archetype",
    version,
    about = "Demand archetypes and per-archetype expert forecasters"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset and its ground-truth labels.
    Synth {
        #[arg(long)]
        config: PathBuf,
        /// Replaces the seed of the synth spec.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Cluster, train and evaluate at one k.
    Run(Common),
    /// Repeat the pipeline over several k and write the curve.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated cluster counts, e.g. `1,2,4`.
        #[arg(long, value_delimiter = ',', conflicts_with = "k")]
        ks: Option<Vec<usize>>,
    },
    /// Forecast the next 7 days of one site from saved models.
    Predict {
        /// Config whose `out_dir` holds the models of an earlier run.
        #[arg(long, required_unless_present = "models")]
        config: Option<PathBuf>,
        /// Model directory; overrides the one implied by `--config`.
        #[arg(long)]
        models: Option<PathBuf>,
        /// Single-site `site_id,date,kwh` CSV.
        #[arg(long)]
        input: PathBuf,
        /// Output CSV; printed to stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    /// Replaces the split, training and clustering seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

impl Common {
    fn load(&self, ks: Option<Vec<usize>>) -> Result<LoadedConfig, CliError> {
        let mut cfg = LoadedConfig::load(&self.config)?;
        cfg.apply(&Overrides {
            k: self.k,
            ks,
            seed: self.seed,
            epochs: self.epochs,
        });
        Ok(cfg)
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth { config, seed } => {
            let cfg = LoadedConfig::load(&config)?;
            let out = cmd_synth(&cfg, seed)?;
            println!(
                "wrote {} sites ({} rows) to {}",
                out.dataset.len(),
                out.dataset.total_days(),
                out.out_dir.display()
            );
        }
        Command::Run(common) => {
            let out = cmd_run(&common.load(None)?)?;
            let o = &out.report().overall;
            println!(
                "k={} test sites={} sMAPE global={:.3} expert={:.3} RMSE global={:.3} expert={:.3}",
                out.run.k, o.n_sites, o.smape_global, o.smape_expert, o.rmse_global, o.rmse_expert
            );
            println!("artifacts in {}", out.out_dir.display());
        }
        Command::Sweep { common, ks } => {
            let out = cmd_sweep(&common.load(ks)?)?;
            let curve = out.curve();
            println!("k,smape,rmse");
            for p in &curve.points {
                println!("{},{:.4},{:.4}", p.k, p.smape, p.rmse);
            }
            for note in &curve.notes {
                println!("note: {note}");
            }
            println!(
                "argmin sMAPE k={} argmin RMSE k={}; artifacts in {}",
                curve.argmin_smape,
                curve.argmin_rmse,
                out.out_dir.display()
            );
        }
        Command::Predict {
            config,
            models,
            input,
            output,
        } => {
            let models = match (models, config) {
                (Some(m), _) => m,
                (None, Some(c)) => LoadedConfig::load(&c)?.out_dir().join(MODELS_DIR),
                (None, None) => return Err(CliError::Usage("predict needs --models or --config".into())),
            };
            let p = cmd_predict(&models, &input, output.as_deref())?;
            if output.is_none() {
                let bytes = p.to_csv().stage("write")?;
                std::io::stdout()
                    .write_all(&bytes)
                    .map_err(|e| CliError::Usage(format!("cannot write to stdout: {e}")))?;
            } else {
                eprintln!("site {} routed to cluster {}", p.site_id, p.cluster);
            }
        }
    }
    Ok(())
}
