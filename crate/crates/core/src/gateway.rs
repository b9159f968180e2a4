//! LLM access: request/response types, backends, usage accounting and pricing.
//!
//! Every model call in the crate goes through an [`LlmSession`], which wraps a
//! shared [`ChatBackend`] with a per-session [`UsageLedger`] and call budget.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::ops::{Add, AddAssign};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::util::{round_half_up, sha256_hex, truncate_utf8};

pub const DEFAULT_MODEL: &str = "gpt-4o";
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 1024;
pub const DEFAULT_CALL_BUDGET: usize = 64;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GatewayError {
    #[error("LLM backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("replay script exhausted (request {0})")]
    ReplayExhausted(String),
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
    #[error("session LLM call budget of {0} exhausted")]
    BudgetExceeded(usize),
    #[error("no pricing for model `{0}`")]
    UnknownModel(String),
    #[error("gateway configuration: {0}")]
    Config(String),
}

// ---------------------------------------------------------------------------
// Request / response
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: MessageRole,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message { role: MessageRole::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Message { role: MessageRole::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Message { role: MessageRole::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub model_tag: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Name of the structured-output grammar the reply must satisfy.
    pub response_grammar: Option<String>,
}

impl ChatRequest {
    pub fn new(system: impl Into<String>, user: impl Into<String>, model_tag: impl Into<String>) -> Self {
        ChatRequest {
            messages: vec![Message::system(system), Message::user(user)],
            model_tag: model_tag.into(),
            temperature: 0.0,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            response_grammar: None,
        }
    }

    pub fn with_grammar(mut self, grammar: &str) -> Self {
        self.response_grammar = Some(grammar.to_string());
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        match self.messages.first() {
            None => return Err(GatewayError::InvalidRequest("empty message list".into())),
            Some(m) if m.role != MessageRole::System => {
                return Err(GatewayError::InvalidRequest("first message must be system-role".into()))
            }
            _ => {}
        }
        if !(self.temperature >= 0.0) {
            return Err(GatewayError::InvalidRequest("temperature must be ≥ 0".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization. Field order is fixed by
    /// the struct definition, so equal requests always hash equally.
    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_vec(self).expect("request serializes"))
    }

    /// One-line human description for replay files.
    pub fn summary(&self) -> String {
        let last = self.messages.last().map(|m| m.content.as_str()).unwrap_or("");
        let first_line = last.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
        format!(
            "[{}] {}",
            self.response_grammar.as_deref().unwrap_or("text"),
            truncate_utf8(first_line.trim(), 80)
        )
    }

    /// Whitespace-token estimate over all message contents.
    pub fn estimated_input_tokens(&self) -> u64 {
        self.messages.iter().map(|m| estimate_tokens(&m.content)).sum()
    }
}

/// Whitespace-token count × 4/3, rounded up.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.split_whitespace().count() as u64 * 4).div_ceil(3)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl Add for TokenUsage {
    type Output = TokenUsage;
    fn add(self, o: TokenUsage) -> TokenUsage {
        TokenUsage {
            input_tokens: self.input_tokens + o.input_tokens,
            output_tokens: self.output_tokens + o.output_tokens,
        }
    }
}

impl AddAssign for TokenUsage {
    fn add_assign(&mut self, o: TokenUsage) {
        *self = *self + o;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackendKind {
    Live,
    Replay,
    /// In-process scripted responder, used to generate synthetic suites.
    Simulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub usage: TokenUsage,
    pub backend: BackendKind,
}

/// Anything that can answer a chat request. Implementations must be safe to
/// share between sessions.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for Arc<B> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).complete(req)
    }
}

// ---------------------------------------------------------------------------
// Replay
// ---------------------------------------------------------------------------

/// One scripted exchange. Entries with a digest answer exactly that request
/// (any number of times); entries without one are consumed in file order by
/// requests that match no digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub digest: Option<String>,
    #[serde(default)]
    pub request_summary: String,
    pub response_text: String,
    #[serde(default)]
    pub usage: Option<TokenUsage>,
}

impl ReplayEntry {
    pub fn cursor(response_text: impl Into<String>) -> Self {
        ReplayEntry {
            digest: None,
            request_summary: String::new(),
            response_text: response_text.into(),
            usage: None,
        }
    }
}

#[derive(Debug, Default)]
pub struct ReplayBackend {
    by_digest: HashMap<String, ReplayEntry>,
    cursor: Mutex<VecDeque<ReplayEntry>>,
}

impl ReplayBackend {
    pub fn new(entries: impl IntoIterator<Item = ReplayEntry>) -> Self {
        let mut by_digest = HashMap::new();
        let mut cursor = VecDeque::new();
        for e in entries {
            match &e.digest {
                Some(d) => {
                    by_digest.insert(d.clone(), e);
                }
                None => cursor.push_back(e),
            }
        }
        ReplayBackend { by_digest, cursor: Mutex::new(cursor) }
    }

    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        Ok(ReplayBackend::new(read_replay(path)?))
    }

    /// Cursor entries not yet consumed.
    pub fn remaining(&self) -> usize {
        self.cursor.lock().unwrap().len()
    }

    fn respond(req: &ChatRequest, e: &ReplayEntry) -> ChatResponse {
        let usage = e.usage.unwrap_or(TokenUsage {
            input_tokens: req.estimated_input_tokens(),
            output_tokens: estimate_tokens(&e.response_text),
        });
        ChatResponse { text: e.response_text.clone(), usage, backend: BackendKind::Replay }
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let digest = req.digest();
        if let Some(e) = self.by_digest.get(&digest) {
            return Ok(Self::respond(req, e));
        }
        let next = self.cursor.lock().unwrap().pop_front();
        match next {
            Some(e) => Ok(Self::respond(req, &e)),
            None => Err(GatewayError::ReplayExhausted(format!("{} {}", &digest[..16], req.summary()))),
        }
    }
}

pub fn read_replay(path: &Path) -> Result<Vec<ReplayEntry>, GatewayError> {
    let file = fs::File::open(path).map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| GatewayError::Config(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| GatewayError::Config(format!("{}:{}: {e}", path.display(), n + 1)))?,
        );
    }
    Ok(out)
}

pub fn write_replay(path: &Path, entries: &[ReplayEntry]) -> Result<(), GatewayError> {
    let io = |e: std::io::Error| GatewayError::Config(format!("{}: {e}", path.display()));
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    for e in entries {
        writeln!(f, "{}", serde_json::to_string(e).expect("entry serializes")).map_err(io)?;
    }
    f.flush().map_err(io)
}

/// Wraps a backend and keeps every exchange as a digest-keyed replay entry.
pub struct RecordingBackend<B> {
    inner: B,
    recorded: Mutex<Vec<ReplayEntry>>,
}

impl<B: ChatBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        RecordingBackend { inner, recorded: Mutex::new(Vec::new()) }
    }

    /// Recorded entries with duplicate digests removed, in first-seen order.
    pub fn entries(&self) -> Vec<ReplayEntry> {
        let mut seen = std::collections::HashSet::new();
        self.recorded
            .lock()
            .unwrap()
            .iter()
            .filter(|e| seen.insert(e.digest.clone()))
            .cloned()
            .collect()
    }
}

impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let resp = self.inner.complete(req)?;
        self.recorded.lock().unwrap().push(ReplayEntry {
            digest: Some(req.digest()),
            request_summary: req.summary(),
            response_text: resp.text.clone(),
            usage: Some(resp.usage),
        });
        Ok(resp)
    }
}

// ---------------------------------------------------------------------------
// Live
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct LiveConfig {
    /// Full chat-completions URL.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl LiveConfig {
    pub const ENV_ENDPOINT: &'static str = "INFRADIAG_LLM_ENDPOINT";
    pub const ENV_API_KEY: &'static str = "INFRADIAG_LLM_API_KEY";
    pub const ENV_MODEL: &'static str = "INFRADIAG_LLM_MODEL";
    pub const ENV_TIMEOUT: &'static str = "INFRADIAG_LLM_TIMEOUT_SECS";

    pub fn new(endpoint: impl Into<String>) -> Self {
        LiveConfig {
            endpoint: endpoint.into(),
            api_key: None,
            timeout: Duration::from_secs(60),
            attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }

    /// Reads endpoint, key and timeout from the environment. Returns the
    /// config and the model tag to use.
    pub fn from_env() -> Result<(LiveConfig, String), GatewayError> {
        let endpoint = std::env::var(Self::ENV_ENDPOINT)
            .map_err(|_| GatewayError::Config(format!("{} is not set", Self::ENV_ENDPOINT)))?;
        let mut cfg = LiveConfig::new(endpoint);
        cfg.api_key = std::env::var(Self::ENV_API_KEY).ok().filter(|k| !k.is_empty());
        if let Ok(t) = std::env::var(Self::ENV_TIMEOUT) {
            let secs: u64 = t
                .parse()
                .map_err(|_| GatewayError::Config(format!("{} must be an integer", Self::ENV_TIMEOUT)))?;
            cfg.timeout = Duration::from_secs(secs);
        }
        let model = std::env::var(Self::ENV_MODEL).unwrap_or_else(|_| DEFAULT_MODEL.to_string());
        Ok((cfg, model))
    }
}

/// Chat-completions client over HTTP JSON.
pub struct LiveBackend {
    config: LiveConfig,
    agent: ureq::Agent,
}

enum Attempt {
    Retry(String),
    Fatal(String),
}

impl LiveBackend {
    pub fn new(config: LiveConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        LiveBackend { config, agent }
    }

    fn body(req: &ChatRequest) -> Value {
        json!({
            "model": req.model_tag,
            "messages": req.messages,
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        })
    }

    fn attempt(&self, body: &Value) -> Result<ChatResponse, Attempt> {
        let mut request = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.config.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = request.send_json(body).map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        if status >= 500 {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if status >= 400 {
            return Err(Attempt::Fatal(format!("HTTP {status}")));
        }
        let v: Value = resp.body_mut().read_json().map_err(|e| Attempt::Fatal(format!("bad response body: {e}")))?;
        let text = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| Attempt::Fatal("response has no choices[0].message.content".into()))?
            .to_string();
        let usage = TokenUsage {
            input_tokens: v["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
            output_tokens: v["usage"]["completion_tokens"].as_u64().unwrap_or(0),
        };
        Ok(ChatResponse { text, usage, backend: BackendKind::Live })
    }
}

impl ChatBackend for LiveBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let body = Self::body(req);
        let mut backoff = self.config.initial_backoff;
        let mut last = String::new();
        for attempt in 1..=self.config.attempts.max(1) {
            match self.attempt(&body) {
                Ok(r) => return Ok(r),
                Err(Attempt::Fatal(msg)) => return Err(GatewayError::BackendUnavailable(msg)),
                Err(Attempt::Retry(msg)) => {
                    log::warn!("LLM attempt {attempt} failed: {msg}");
                    last = msg;
                    if attempt < self.config.attempts {
                        std::thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Err(GatewayError::BackendUnavailable(format!(
            "{} attempts failed, last: {last}",
            self.config.attempts
        )))
    }
}

// ---------------------------------------------------------------------------
// Ledger and session
// ---------------------------------------------------------------------------

/// Which prompt a call belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Summarization,
    Planning,
    Reflection,
    Exploration,
    Conclusion,
    Rerank,
    Labelling,
    Refinement,
    Extraction,
}

/// Stage of processing a call is made in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Intake,
    Pipeline1,
    Pipeline2,
    Pipeline3,
    Conclusion,
    Offline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub role: AgentRole,
    pub stage: Stage,
    pub model_tag: String,
    pub digest: String,
    pub usage: TokenUsage,
    pub duration_ms: u64,
}

/// A call whose failure was absorbed rather than surfaced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Degradation {
    pub role: AgentRole,
    pub stage: Stage,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct UsageLedger {
    entries: Mutex<Vec<LedgerEntry>>,
    degradations: Mutex<Vec<Degradation>>,
}

impl UsageLedger {
    pub fn append(&self, e: LedgerEntry) {
        self.entries.lock().unwrap().push(e);
    }

    pub fn degrade(&self, d: Degradation) {
        log::info!("degraded {:?} call in {:?}: {}", d.role, d.stage, d.reason);
        self.degradations.lock().unwrap().push(d);
    }

    pub fn entries(&self) -> Vec<LedgerEntry> {
        self.entries.lock().unwrap().clone()
    }

    pub fn degradations(&self) -> Vec<Degradation> {
        self.degradations.lock().unwrap().clone()
    }

    pub fn calls(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn totals(&self) -> TokenUsage {
        self.entries.lock().unwrap().iter().fold(TokenUsage::default(), |acc, e| acc + e.usage)
    }

    pub fn totals_by_model(&self) -> BTreeMap<String, TokenUsage> {
        let mut out: BTreeMap<String, TokenUsage> = BTreeMap::new();
        for e in self.entries.lock().unwrap().iter() {
            *out.entry(e.model_tag.clone()).or_default() += e.usage;
        }
        out
    }
}

/// Per-diagnosis view of a shared backend.
pub struct LlmSession {
    backend: Arc<dyn ChatBackend>,
    pub model_tag: String,
    pub ledger: UsageLedger,
    budget: usize,
    stage: Mutex<Stage>,
}

impl LlmSession {
    pub fn new(backend: Arc<dyn ChatBackend>, model_tag: impl Into<String>) -> Self {
        LlmSession {
            backend,
            model_tag: model_tag.into(),
            ledger: UsageLedger::default(),
            budget: DEFAULT_CALL_BUDGET,
            stage: Mutex::new(Stage::Intake),
        }
    }

    pub fn with_budget(mut self, calls: usize) -> Self {
        self.budget = calls;
        self
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn remaining_budget(&self) -> usize {
        self.budget.saturating_sub(self.ledger.calls())
    }

    pub fn set_stage(&self, stage: Stage) {
        *self.stage.lock().unwrap() = stage;
    }

    pub fn stage(&self) -> Stage {
        *self.stage.lock().unwrap()
    }

    /// A request from this session's model with the given prompts.
    pub fn request(&self, system: impl Into<String>, user: impl Into<String>) -> ChatRequest {
        ChatRequest::new(system, user, self.model_tag.clone())
    }

    pub fn complete(&self, role: AgentRole, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        if self.ledger.calls() >= self.budget {
            return Err(GatewayError::BudgetExceeded(self.budget));
        }
        let start = Instant::now();
        let resp = self.backend.complete(req)?;
        self.ledger.append(LedgerEntry {
            role,
            stage: self.stage(),
            model_tag: req.model_tag.clone(),
            digest: req.digest(),
            usage: resp.usage,
            duration_ms: start.elapsed().as_millis() as u64,
        });
        Ok(resp)
    }

    pub fn degrade(&self, role: AgentRole, reason: impl Into<String>) {
        self.ledger.degrade(Degradation { role, stage: self.stage(), reason: reason.into() });
    }
}

// ---------------------------------------------------------------------------
// Pricing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRates {
    pub input_usd_per_million: f64,
    pub output_usd_per_million: f64,
}

impl ModelRates {
    /// Unrounded price of the given (possibly averaged) token counts.
    pub fn price(&self, input_tokens: f64, output_tokens: f64) -> f64 {
        input_tokens * self.input_usd_per_million / 1e6 + output_tokens * self.output_usd_per_million / 1e6
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PricingConfig {
    pub models: BTreeMap<String, ModelRates>,
}

const DEFAULT_PRICING: &str = include_str!("../assets/pricing.toml");

impl PricingConfig {
    pub fn from_toml(text: &str) -> Result<Self, GatewayError> {
        let cfg: PricingConfig = toml::from_str(text).map_err(|e| GatewayError::Config(e.to_string()))?;
        cfg.validate()
    }

    pub fn from_json(text: &str) -> Result<Self, GatewayError> {
        let cfg: PricingConfig = serde_json::from_str(text).map_err(|e| GatewayError::Config(e.to_string()))?;
        cfg.validate()
    }

    /// Loads `.json` files as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = fs::read_to_string(path).map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
    }

    fn validate(self) -> Result<Self, GatewayError> {
        for (model, r) in &self.models {
            if !(r.input_usd_per_million >= 0.0 && r.output_usd_per_million >= 0.0) {
                return Err(GatewayError::Config(format!("negative rate for `{model}`")));
            }
        }
        Ok(self)
    }

    pub fn rates(&self, model: &str) -> Result<&ModelRates, GatewayError> {
        self.models.get(model).ok_or_else(|| GatewayError::UnknownModel(model.to_string()))
    }
}

impl Default for PricingConfig {
    fn default() -> Self {
        PricingConfig::from_toml(DEFAULT_PRICING).expect("bundled pricing parses")
    }
}

/// Unrounded USD cost of per-model token totals.
pub fn cost(totals: &BTreeMap<String, TokenUsage>, pricing: &PricingConfig) -> Result<f64, GatewayError> {
    totals.iter().try_fold(0.0, |acc, (model, u)| {
        Ok(acc + pricing.rates(model)?.price(u.input_tokens as f64, u.output_tokens as f64))
    })
}

/// Cost as reported: rounded half-up to 3 decimals.
pub fn reported_cost(usd: f64) -> f64 {
    round_half_up(usd, 3)
}
