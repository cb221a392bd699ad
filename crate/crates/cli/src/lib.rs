//! Command-line driver for offline/online experiments.

pub mod config;
pub mod presets;
pub mod run;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use hsfem::HsfemError;

use crate::config::ExperimentConfig;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "hsfem", version, about = "Offline/online stochastic FEM experiments")]
pub struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Source {
    /// Experiment configuration file (TOML).
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Named preset; append `-desk` or pass `--desk` for the reduced scale.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub desk: bool,
    /// Override the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Source {
    pub fn load(&self) -> hsfem::Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(name)) => presets::preset(name, self.desk)?,
            (None, None) => return Err(HsfemError::Config("pass --config FILE or --preset NAME".into())),
        };
        if let Some(out) = &self.out {
            cfg.output = out.clone();
        }
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the local stochastic basis and the coupled system.
    Offline(Source),
    /// Solve the configured forcings with a stored offline artifact.
    Online {
        #[command(flatten)]
        source: Source,
        /// Offline artifact (default: <output>/offline.hsfem).
        #[arg(long)]
        artifact: Option<PathBuf>,
    },
    /// KL truncation baseline of the reference ensemble.
    BaselineKl {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        artifact: Option<PathBuf>,
        /// Matched rank (default: the artifact's average k).
        #[arg(long)]
        k: Option<f64>,
    },
    /// Singular values of the explicit solution operator at one node.
    Tmatrix(Source),
    /// Control-variate error estimation and correction.
    Correct {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        artifact: Option<PathBuf>,
    },
    /// Inspect the built-in presets.
    Preset {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Debug, Subcommand)]
pub enum PresetAction {
    /// List preset names.
    List,
    /// Print a preset as a configuration file.
    Show {
        name: String,
        #[arg(long)]
        desk: bool,
    },
}

fn print_json<T: serde::Serialize>(v: &T) -> hsfem::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

pub fn execute(cli: &Cli) -> hsfem::Result<()> {
    match &cli.command {
        Command::Offline(src) => {
            let (_, summary) = run::run_offline(&src.load()?)?;
            print_json(&summary)
        }
        Command::Online { source, artifact } => {
            for r in run::run_online(&source.load()?, artifact.as_deref())? {
                print_json(&r)?;
            }
            Ok(())
        }
        Command::BaselineKl { source, artifact, k } => print_json(&run::run_baseline(&source.load()?, artifact.as_deref(), *k)?),
        Command::Tmatrix(src) => print_json(&run::run_tmatrix(&src.load()?)?),
        Command::Correct { source, artifact } => {
            let r = run::run_correct(&source.load()?, artifact.as_deref())?;
            let rep = &r.report;
            println!(
                "decision: {:?}; E[g(u_h)] = {:.4e}, corrected = {:.4e}, interval = [{:.4e}, {:.4e}], N_MC = {}",
                rep.decision, rep.e_g_uh, rep.corrected, rep.interval[0], rep.interval[1], rep.n_mc
            );
            print_json(&r)
        }
        Command::Preset { action: PresetAction::List } => {
            for p in presets::presets() {
                println!("{:<24} {}", p.name, p.description);
            }
            Ok(())
        }
        Command::Preset {
            action: PresetAction::Show { name, desk },
        } => {
            print!("{}", presets::preset(name, *desk)?.to_toml());
            Ok(())
        }
    }
}

/// Process exit code for an error: 3 for numerical failures, 2 otherwise.
pub fn exit_code(err: &HsfemError) -> i32 {
    if err.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_CONFIG
    }
}
