//! `deid`: manifest-driven de-identification runs and their evaluation.
//!
//! Every subcommand works inside one run directory laid out as
//! `{run.json, manifest.json, clips/, subjects/, reports/, review/}`.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod run;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::PipelineConfig;

/// Outcome of a subcommand that did not hit a fatal error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// Some cases failed or were skipped; the rest completed.
    Partial,
}

impl Status {
    pub fn exit_code(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::Partial => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "deid", version, about = "Facial video de-identification and evaluation")]
pub struct Cli {
    /// More log output (-v debug, -vv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    /// Only warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Replace the identity in every manifest case with a pseudo-identity.
    Deidentify(DeidentifyArgs),
    /// Embedding-similarity privacy report over real/synthetic clips.
    EvalPrivacy(EvalPrivacyArgs),
    /// Cross-validated triage under the four real/synthetic schemes.
    EvalTriage(EvalTriageArgs),
    /// Run the human review service over a run directory.
    ServeReview(ServeReviewArgs),
    /// Summarise the reports of a run directory.
    Report(ReportArgs),
    /// Render procedural exam clips with exact landmark tracks.
    Fixtures(FixturesArgs),
    /// Print the default configuration as TOML.
    Config,
}

/// Flags shared by the pipeline subcommands; each overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML configuration file.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Case manifest (JSON).
    #[arg(short, long)]
    pub manifest: Option<PathBuf>,
    /// Run directory.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Cases processed concurrently (0 = one per thread).
    #[arg(long)]
    pub workers: Option<usize>,
}

impl CommonArgs {
    /// Config file, then flags, then validation.
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::load_or_default(self.config.as_deref())?;
        if let Some(m) = &self.manifest {
            cfg.manifest = Some(m.clone());
        }
        if let Some(o) = &self.out {
            cfg.out_dir = Some(o.clone());
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct DeidentifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvalPrivacyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Frame pairs per group and case.
    #[arg(long)]
    pub n_pairs: Option<usize>,
    /// Verification threshold recorded in the report.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalTriageArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Use a fixed score threshold instead of sensitivity matching.
    #[arg(long)]
    pub fixed_threshold: Option<f64>,
    #[arg(long)]
    pub target_sensitivity: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ServeReviewArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Roster JSON; default: built from the run's manifest.
    #[arg(long)]
    pub roster: Option<PathBuf>,
    #[arg(long)]
    pub bind: Option<String>,
    /// 0 picks a free port; the bound address is printed on stdout.
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long = "rater")]
    pub raters: Vec<String>,
    #[arg(long = "clinician")]
    pub clinicians: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct FixturesArgs {
    /// Output directory.
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub cases: usize,
    #[arg(long, default_value_t = 48)]
    pub frames: usize,
    /// Frame side in pixels.
    #[arg(long, default_value_t = 384)]
    pub size: u32,
    /// Camera roll applied to every clip.
    #[arg(long, default_value_t = 0.0)]
    pub roll: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(cli: Cli) -> Result<Status> {
    match cli.command {
        Command::Deidentify(a) => commands::deidentify::run(&a),
        Command::EvalPrivacy(a) => commands::privacy::run(&a),
        Command::EvalTriage(a) => commands::triage::run(&a),
        Command::ServeReview(a) => commands::review::run(&a),
        Command::Report(a) => commands::report::run(&a),
        Command::Fixtures(a) => commands::fixtures::run(&a),
        Command::Config => {
            print!("{}", PipelineConfig::default().to_toml());
            Ok(Status::Ok)
        }
    }
}
