//! Operator command line and HTTP service.
//!
//! Exit codes: 0 on success, 1 on an operational error, 2 on a usage error.

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use infradiag::engine::EngineMode;

pub mod commands;
pub mod server;
pub mod specs;

use specs::{EnvChoice, FeedbackChoice, LlmChoice, ResourceArgs};

#[derive(Debug, Parser)]
#[command(name = "infradiag", version, about = "Incident diagnosis for AI workloads")]
pub struct Cli {
    /// Seed for every randomized step; overrides the seed in config files.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Embed incident records and write a corpus directory.
    Ingest(IngestArgs),
    /// Two-pass taxonomy construction from incidents and guides.
    BuildTaxonomy(BuildArgs),
    /// Draft verification scripts from on-call discussions.
    ExtractChecks(ExtractArgs),
    /// Diagnose one incident end to end.
    Diagnose(DiagnoseArgs),
    /// Run an experiment config and print the report JSON.
    Evaluate(EvaluateArgs),
    /// Record replay scripts for an experiment with the simulated expert.
    GenerateSuite(GenerateArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Incident records, one JSON object per line.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Output directory for the records and their vectors.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Resolved incidents (JSONL) with on-call discussions.
    #[arg(long, value_name = "FILE")]
    pub incidents: PathBuf,
    /// Troubleshooting guides (JSON array).
    #[arg(long, value_name = "FILE")]
    pub tsgs: Option<PathBuf>,
    /// Existing taxonomy to extend; the six bootstrap categories otherwise.
    #[arg(long, value_name = "FILE")]
    pub taxonomy: Option<PathBuf>,
    /// Where the built taxonomy is written.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long, default_value = "simulated", value_name = "SPEC")]
    pub llm: LlmChoice,
    /// Model call budget for the whole build.
    #[arg(long, default_value_t = 10_000)]
    pub budget: usize,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Labelled incidents (JSONL) with on-call discussions.
    #[arg(long, value_name = "FILE")]
    pub incidents: PathBuf,
    /// Where the draft script registry is written.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long, default_value = "simulated", value_name = "SPEC")]
    pub llm: LlmChoice,
    #[arg(long, default_value_t = 10_000)]
    pub budget: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModeArg {
    Full,
    TaxonomyOnly,
}

impl From<ModeArg> for EngineMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Full => EngineMode::Full,
            ModeArg::TaxonomyOnly => EngineMode::TaxonomyOnly,
        }
    }
}

/// Engine settings shared by `diagnose` and `serve`.
#[derive(Debug, Clone, Args)]
pub struct EngineArgs {
    #[arg(long, value_enum, default_value = "full")]
    pub mode: ModeArg,
    /// Model call budget per session.
    #[arg(long, value_name = "CALLS")]
    pub budget: Option<usize>,
    /// Skip the incident's own record during retrieval.
    #[arg(long)]
    pub exclude_self: bool,
    /// Stop the taxonomy search at the first confirmed leaf.
    #[arg(long)]
    pub early_exit: bool,
}

impl EngineArgs {
    pub fn config(&self) -> infradiag::engine::EngineConfig {
        let mut c = infradiag::engine::EngineConfig { mode: self.mode.into(), exclude_self: self.exclude_self, early_exit: self.early_exit, ..Default::default() };
        if let Some(b) = self.budget {
            c.llm_budget = b;
        }
        c
    }
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Incident record JSON.
    #[arg(long, value_name = "FILE")]
    pub incident: PathBuf,
    /// Execution environment: sim, sim:<scenario.json> or local.
    #[arg(long, default_value = "sim", value_name = "SPEC")]
    pub env: EnvChoice,
    /// Model backend: replay:<file>, simulated or live.
    #[arg(long, default_value = "simulated", value_name = "SPEC")]
    pub llm: LlmChoice,
    /// Pipeline 3 answers: interactive, scripted:<file> or none.
    #[arg(long, default_value = "none", value_name = "SPEC")]
    pub feedback: FeedbackChoice,
    /// Trace JSONL output.
    #[arg(long, default_value = "trace.jsonl", value_name = "FILE")]
    pub trace: PathBuf,
    /// Escalation ticket JSON output, written only when one is produced.
    #[arg(long, value_name = "FILE")]
    pub ticket: Option<PathBuf>,
    /// Print the outcome as JSON instead of the report text.
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub engine: EngineArgs,
    #[command(flatten)]
    pub resources: ResourceArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Experiment config JSON.
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,
    /// Report JSON output; stdout otherwise.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Per-incident predictions CSV.
    #[arg(long, value_name = "FILE")]
    pub predictions: Option<PathBuf>,
    /// Leaves to remove for the unseen-label ablation (repeatable).
    #[arg(long, value_name = "LABEL")]
    pub ablate: Vec<String>,
    /// Ablation rows JSON output; printed to stderr otherwise.
    #[arg(long, value_name = "FILE")]
    pub ablation_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Experiment config whose incidents and scenarios are recorded.
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,
    /// Replay JSONL output.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Also record against the taxonomy without these leaves.
    #[arg(long, value_name = "LABEL")]
    pub ablate: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8700")]
    pub addr: SocketAddr,
    /// Default backend for sessions that do not bring their own.
    #[arg(long, default_value = "simulated", value_name = "SPEC")]
    pub llm: LlmChoice,
    /// Interval between heartbeat lines on trace streams.
    #[arg(long, default_value_t = 5000, value_name = "MS")]
    pub heartbeat_ms: u64,
    #[command(flatten)]
    pub engine: EngineArgs,
    #[command(flatten)]
    pub resources: ResourceArgs,
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn cli_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match commands::run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
