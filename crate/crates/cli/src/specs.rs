//! Values of the `--llm`, `--env` and `--feedback` flags, and the shared
//! resource loading used by the subcommands and the service.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use anyhow::Context;
use infradiag::agents::Prompts;
use infradiag::corpus::{HashingEmbedder, IncidentStore};
use infradiag::engine::{FeedbackProvider, FeedbackResponse, Resources};
use infradiag::gateway::{ChatBackend, LiveBackend, LiveConfig, ReplayBackend, DEFAULT_MODEL};
use infradiag::kb::{bundled_library, load_library, KnowledgeBase};
use infradiag::sim::SimulatedExpert;
use infradiag::taxonomy::Taxonomy;
use infradiag::verify::{CommandTable, Environment, RealEnvironment, Scenario, ScriptRegistry, SimulatedEnvironment};

/// Corpus layout written by `ingest`.
pub const STORE_RECORDS: &str = "incidents.jsonl";
pub const STORE_VECTORS: &str = "vectors.f32";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LlmChoice {
    Replay(PathBuf),
    Simulated,
    Live,
}

impl FromStr for LlmChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "simulated" => Ok(LlmChoice::Simulated),
            "live" => Ok(LlmChoice::Live),
            _ => match s.strip_prefix("replay:") {
                Some(p) if !p.is_empty() => Ok(LlmChoice::Replay(p.into())),
                _ => Err(format!("`{s}`: expected replay:<file>, simulated or live")),
            },
        }
    }
}

impl fmt::Display for LlmChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LlmChoice::Replay(p) => write!(f, "replay:{}", p.display()),
            LlmChoice::Simulated => f.write_str("simulated"),
            LlmChoice::Live => f.write_str("live"),
        }
    }
}

impl LlmChoice {
    /// Backend and model tag. The simulated expert learns the injected
    /// faults from `faults` (incident id to fault tags).
    pub fn backend(
        &self,
        faults: BTreeMap<String, Vec<String>>,
        published: &Published,
    ) -> anyhow::Result<(Arc<dyn ChatBackend>, String)> {
        Ok(match self {
            LlmChoice::Replay(p) => {
                let b = ReplayBackend::from_file(p).with_context(|| format!("loading replay {}", p.display()))?;
                (Arc::new(b), DEFAULT_MODEL.to_string())
            }
            LlmChoice::Simulated => {
                let expert = SimulatedExpert::new(faults, &published.taxonomy, &published.registry, &published.table);
                (expert.shared(), DEFAULT_MODEL.to_string())
            }
            LlmChoice::Live => {
                let (cfg, model) = LiveConfig::from_env()?;
                (Arc::new(LiveBackend::new(cfg)), model)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EnvChoice {
    /// Simulated node, optionally with a scenario file.
    Simulated(Option<PathBuf>),
    /// Runs allowlisted programs on this host.
    Local,
}

impl FromStr for EnvChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sim" => Ok(EnvChoice::Simulated(None)),
            "local" => Ok(EnvChoice::Local),
            _ => match s.strip_prefix("sim:") {
                Some(p) if !p.is_empty() => Ok(EnvChoice::Simulated(Some(p.into()))),
                _ => Err(format!("`{s}`: expected sim, sim:<scenario.json> or local")),
            },
        }
    }
}

impl EnvChoice {
    pub fn scenario(&self) -> anyhow::Result<Scenario> {
        match self {
            EnvChoice::Simulated(Some(p)) => Scenario::load(p).with_context(|| format!("loading scenario {}", p.display())),
            _ => Ok(Scenario::default()),
        }
    }

    pub fn environment(&self, table: &CommandTable) -> anyhow::Result<Box<dyn Environment>> {
        Ok(match self {
            EnvChoice::Simulated(_) => Box::new(SimulatedEnvironment::new(table.clone(), self.scenario()?)),
            EnvChoice::Local => Box::new(RealEnvironment),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FeedbackChoice {
    Interactive,
    Scripted(PathBuf),
    None,
}

impl FromStr for FeedbackChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "interactive" => Ok(FeedbackChoice::Interactive),
            "none" => Ok(FeedbackChoice::None),
            _ => match s.strip_prefix("scripted:") {
                Some(p) if !p.is_empty() => Ok(FeedbackChoice::Scripted(p.into())),
                _ => Err(format!("`{s}`: expected interactive, scripted:<file> or none")),
            },
        }
    }
}

/// Feedback typed at a terminal. Suggestions are numbered from 1.
pub struct PromptFeedback<R, W> {
    input: R,
    output: W,
    rounds: usize,
}

impl<R: BufRead, W: Write> PromptFeedback<R, W> {
    pub fn new(input: R, output: W, rounds: usize) -> Self {
        PromptFeedback { input, output, rounds }
    }
}

/// Reads one answer: `accept <n>`, `decline` (or an empty line), or free
/// text.
pub fn parse_answer(line: &str) -> FeedbackResponse {
    let line = line.trim();
    if line.is_empty() || line.eq_ignore_ascii_case("decline") {
        return FeedbackResponse::Decline;
    }
    if let Some(n) = line.strip_prefix("accept ").and_then(|n| n.trim().parse::<usize>().ok()) {
        if n >= 1 {
            return FeedbackResponse::Accept { index: n - 1 };
        }
    }
    FeedbackResponse::Feedback { text: line.to_string() }
}

impl<R: BufRead, W: Write> FeedbackProvider for PromptFeedback<R, W> {
    fn max_rounds(&self) -> usize {
        self.rounds
    }

    fn next_feedback(&mut self, round: usize, suggestions: &[String]) -> FeedbackResponse {
        let _ = writeln!(self.output, "Suggestions (round {round}):");
        for (i, s) in suggestions.iter().enumerate() {
            let _ = writeln!(self.output, "  {}. {s}", i + 1);
        }
        let _ = write!(self.output, "accept <n>, decline, or describe what you saw: ");
        let _ = self.output.flush();
        let mut line = String::new();
        match self.input.read_line(&mut line) {
            Ok(0) | Err(_) => FeedbackResponse::Decline,
            Ok(_) => parse_answer(&line),
        }
    }
}

/// Optional overrides for the published resources; bundled assets fill the
/// rest.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct ResourceArgs {
    /// Taxonomy JSON document.
    #[arg(long, value_name = "FILE")]
    pub taxonomy: Option<PathBuf>,
    /// Verification script registry JSON.
    #[arg(long, value_name = "FILE")]
    pub scripts: Option<PathBuf>,
    /// Simulated command table JSON.
    #[arg(long, value_name = "FILE")]
    pub commands: Option<PathBuf>,
    /// Historical incidents: a JSONL file, or a directory written by `ingest`.
    #[arg(long, value_name = "PATH")]
    pub corpus: Option<PathBuf>,
    /// Knowledge base JSONL.
    #[arg(long, value_name = "FILE")]
    pub kb: Option<PathBuf>,
    /// Troubleshooting library text.
    #[arg(long, value_name = "FILE")]
    pub library: Option<PathBuf>,
}

/// Everything a diagnosis session reads.
pub struct Published {
    pub taxonomy: Taxonomy,
    pub registry: ScriptRegistry,
    pub table: CommandTable,
    pub corpus: IncidentStore,
    pub embedder: HashingEmbedder,
    pub kb: KnowledgeBase,
    pub library: String,
    pub prompts: Prompts,
}

fn read(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn load_corpus(path: &Path, embedder: &HashingEmbedder) -> anyhow::Result<IncidentStore> {
    use infradiag::corpus::EmbeddingProvider;
    if path.is_dir() {
        let store = IncidentStore::load(&path.join(STORE_RECORDS), &path.join(STORE_VECTORS), embedder.dimension())?;
        return Ok(store);
    }
    Ok(IncidentStore::from_jsonl(path, embedder).with_context(|| format!("loading corpus {}", path.display()))?)
}

impl Published {
    pub fn load(args: &ResourceArgs) -> anyhow::Result<Self> {
        let embedder = HashingEmbedder::default();
        let taxonomy = match &args.taxonomy {
            Some(p) => Taxonomy::load(&read(p)?).with_context(|| format!("parsing {}", p.display()))?,
            None => Taxonomy::bundled(),
        };
        let registry = match &args.scripts {
            Some(p) => ScriptRegistry::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => ScriptRegistry::bundled(),
        };
        let table = match &args.commands {
            Some(p) => CommandTable::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => CommandTable::bundled(),
        };
        let corpus = match &args.corpus {
            Some(p) => load_corpus(p, &embedder)?,
            None => IncidentStore::new(),
        };
        let kb = match &args.kb {
            Some(p) => KnowledgeBase::load(p, &embedder)?,
            None => KnowledgeBase::bundled(&embedder),
        };
        let library = match &args.library {
            Some(p) => load_library(p)?,
            None => bundled_library().to_string(),
        };
        Ok(Published { taxonomy, registry, table, corpus, embedder, kb, library, prompts: Prompts::bundled() })
    }

    pub fn resources(&self) -> Resources<'_> {
        Resources {
            taxonomy: &self.taxonomy,
            registry: &self.registry,
            corpus: &self.corpus,
            embedder: &self.embedder,
            kb: &self.kb,
            library: &self.library,
            prompts: &self.prompts,
        }
    }
}
