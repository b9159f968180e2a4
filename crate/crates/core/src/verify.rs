//! Verification scripts and the environments that run them.
//!
//! A [`VerificationScript`] is an argv command plus a rule deciding whether
//! its output means "healthy". Scripts are bound to taxonomy nodes by id and
//! executed through an [`Executor`], which owns one [`Environment`], enforces
//! the command allowlist and keeps the session's verification-time ledger.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Read;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::taxonomy::{Taxonomy, TaxonomyPath};
use crate::util::truncate_utf8;

/// Per-stream capture cap.
pub const OUTPUT_CAP_BYTES: usize = 64 * 1024;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum VerifyError {
    #[error("invalid script `{id}`: {reason}")]
    InvalidScript { id: String, reason: String },
    #[error("duplicate script id `{0}`")]
    DuplicateScript(String),
    #[error("{0}")]
    Io(String),
}

// ---------------------------------------------------------------------------
// Scripts
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScriptLevel {
    Leaf,
    Internal,
}

/// When a run counts as healthy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SuccessRule {
    ExitZero,
    StdoutRegex(String),
    ExitZeroAndRegex(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ScriptStatus {
    #[default]
    Active,
    Draft,
    Quarantined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerificationScript {
    pub id: String,
    pub bound_path: TaxonomyPath,
    pub level: ScriptLevel,
    pub command: Vec<String>,
    pub timeout_secs: f64,
    pub success_rule: SuccessRule,
    #[serde(default)]
    pub status: ScriptStatus,
}

impl VerificationScript {
    pub fn validate(&self) -> Result<(), VerifyError> {
        let bad = |reason: String| VerifyError::InvalidScript { id: self.id.clone(), reason };
        if self.id.trim().is_empty() {
            return Err(bad("empty id".into()));
        }
        if self.command.is_empty() || self.command[0].is_empty() {
            return Err(bad("empty command".into()));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(bad("timeout must be positive".into()));
        }
        let depth = self.bound_path.depth();
        match self.level {
            ScriptLevel::Leaf if depth != 3 => return Err(bad(format!("leaf script bound to depth-{depth} path"))),
            ScriptLevel::Internal if depth == 3 => return Err(bad("internal script bound to a depth-3 path".into())),
            _ => {}
        }
        if let SuccessRule::StdoutRegex(p) | SuccessRule::ExitZeroAndRegex(p) = &self.success_rule {
            Regex::new(p).map_err(|e| bad(format!("bad regex: {e}")))?;
        }
        Ok(())
    }

    /// Program name used for allowlist checks.
    pub fn program(&self) -> &str {
        program_name(&self.command[0])
    }
}

fn program_name(arg0: &str) -> &str {
    arg0.rsplit('/').next().unwrap_or(arg0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Pass,
    Fail,
    Timeout,
    ExecError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub script_id: String,
    /// Absent when the process never started or was killed.
    pub exit_code: Option<i32>,
    pub stdout: String,
    pub stderr: String,
    pub duration_secs: f64,
    pub timed_out: bool,
    pub outcome: Outcome,
}

/// Outcome of a run from its stored fields.
pub fn classify(rule: &SuccessRule, exit_code: Option<i32>, stdout: &str, timed_out: bool) -> Outcome {
    if timed_out {
        return Outcome::Timeout;
    }
    let Some(code) = exit_code else {
        return Outcome::ExecError;
    };
    let matches = |p: &str| Regex::new(p).map(|r| r.is_match(stdout)).unwrap_or(false);
    let healthy = match rule {
        SuccessRule::ExitZero => code == 0,
        SuccessRule::StdoutRegex(p) => matches(p),
        SuccessRule::ExitZeroAndRegex(p) => code == 0 && matches(p),
    };
    if healthy {
        Outcome::Pass
    } else {
        Outcome::Fail
    }
}

impl VerificationResult {
    /// Recomputes the outcome from stored fields.
    pub fn recompute(&self, rule: &SuccessRule) -> Outcome {
        classify(rule, self.exit_code, &self.stdout, self.timed_out)
    }

    fn exec_error(script_id: &str, reason: String) -> Self {
        VerificationResult {
            script_id: script_id.to_string(),
            exit_code: None,
            stdout: String::new(),
            stderr: reason,
            duration_secs: 0.0,
            timed_out: false,
            outcome: Outcome::ExecError,
        }
    }
}

/// Ordered collection of scripts keyed by id.
#[derive(Debug, Clone, Default)]
pub struct ScriptRegistry {
    scripts: Vec<VerificationScript>,
    by_id: HashMap<String, usize>,
}

impl ScriptRegistry {
    pub fn new(scripts: Vec<VerificationScript>) -> Result<Self, VerifyError> {
        let mut reg = ScriptRegistry::default();
        for s in scripts {
            reg.insert(s)?;
        }
        Ok(reg)
    }

    pub fn insert(&mut self, s: VerificationScript) -> Result<(), VerifyError> {
        s.validate()?;
        if self.by_id.contains_key(&s.id) {
            return Err(VerifyError::DuplicateScript(s.id));
        }
        self.by_id.insert(s.id.clone(), self.scripts.len());
        self.scripts.push(s);
        Ok(())
    }

    /// Parses a JSON array of scripts.
    pub fn from_json(text: &str) -> Result<Self, VerifyError> {
        let scripts: Vec<VerificationScript> = serde_json::from_str(text).map_err(|e| VerifyError::Io(e.to_string()))?;
        Self::new(scripts)
    }

    pub fn bundled() -> Self {
        ScriptRegistry::from_json(include_str!("../assets/scripts.json")).expect("bundled scripts parse")
    }

    pub fn load(path: &Path) -> Result<Self, VerifyError> {
        Self::from_json(&fs::read_to_string(path).map_err(|e| VerifyError::Io(format!("{}: {e}", path.display())))?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.scripts).expect("scripts serialize") + "\n"
    }

    pub fn get(&self, id: &str) -> Option<&VerificationScript> {
        self.by_id.get(id).map(|&i| &self.scripts[i])
    }

    pub fn scripts(&self) -> &[VerificationScript] {
        &self.scripts
    }

    pub fn len(&self) -> usize {
        self.scripts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scripts.is_empty()
    }

    /// Binds every active script to its node in `taxonomy`. Scripts whose
    /// path is missing are returned.
    pub fn bind_all(&self, taxonomy: &mut Taxonomy) -> Vec<String> {
        let mut unbound = Vec::new();
        for s in self.scripts.iter().filter(|s| s.status == ScriptStatus::Active) {
            if taxonomy.bind_script(&s.bound_path, &s.id).is_err() {
                unbound.push(s.id.clone());
            }
        }
        unbound
    }
}

// ---------------------------------------------------------------------------
// Environments
// ---------------------------------------------------------------------------

/// What an environment reports for one command.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRun {
    pub exit_code: Option<i32>,
    pub stdout: String,
    pub stderr: String,
    pub duration: Duration,
    pub timed_out: bool,
}

impl RawRun {
    fn exec_error(reason: impl Into<String>) -> Self {
        RawRun {
            exit_code: None,
            stdout: String::new(),
            stderr: reason.into(),
            duration: Duration::ZERO,
            timed_out: false,
        }
    }
}

/// A place commands run. Owned by one session at a time.
pub trait Environment: Send {
    fn execute(&mut self, argv: &[String], timeout: Duration) -> RawRun;
}

/// Local process execution without a shell.
#[derive(Debug, Default)]
pub struct RealEnvironment;

fn capture(mut stream: impl Read + Send + 'static) -> std::thread::JoinHandle<String> {
    std::thread::spawn(move || {
        let mut kept = Vec::new();
        let mut chunk = [0u8; 8192];
        loop {
            match stream.read(&mut chunk) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let room = (OUTPUT_CAP_BYTES + 4).saturating_sub(kept.len());
                    kept.extend_from_slice(&chunk[..n.min(room)]);
                }
            }
        }
        let text = String::from_utf8_lossy(&kept).into_owned();
        truncate_utf8(&text, OUTPUT_CAP_BYTES).to_string()
    })
}

impl Environment for RealEnvironment {
    fn execute(&mut self, argv: &[String], timeout: Duration) -> RawRun {
        let start = Instant::now();
        let mut child = match Command::new(&argv[0])
            .args(&argv[1..])
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
        {
            Ok(c) => c,
            Err(e) => return RawRun::exec_error(format!("cannot start `{}`: {e}", argv[0])),
        };
        let out = capture(child.stdout.take().expect("piped stdout"));
        let err = capture(child.stderr.take().expect("piped stderr"));
        let (exit_code, timed_out) = match child.wait_timeout(timeout) {
            Ok(Some(status)) => (status.code(), false),
            Ok(None) => {
                let _ = child.kill();
                let _ = child.wait();
                (None, true)
            }
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                return RawRun::exec_error(format!("wait failed: {e}"));
            }
        };
        RawRun {
            exit_code,
            stdout: out.join().unwrap_or_default(),
            stderr: err.join().unwrap_or_default(),
            duration: start.elapsed(),
            timed_out,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CannedOutput {
    pub exit: i32,
    pub stdout: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultOutput {
    pub tag: String,
    pub exit: i32,
    pub stdout: String,
}

/// Canned behaviour of one simulated command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandEntry {
    pub argv_prefix: Vec<String>,
    pub duration_secs: f64,
    pub healthy: CannedOutput,
    /// Checked in order; the first fault present in the scenario wins.
    #[serde(default)]
    pub faults: Vec<FaultOutput>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandTable {
    pub commands: Vec<CommandEntry>,
}

const DEFAULT_COMMAND_TABLE: &str = include_str!("../assets/command_table.json");

impl CommandTable {
    pub fn from_json(text: &str) -> Result<Self, VerifyError> {
        serde_json::from_str(text).map_err(|e| VerifyError::Io(format!("command table: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, VerifyError> {
        Self::from_json(&fs::read_to_string(path).map_err(|e| VerifyError::Io(format!("{}: {e}", path.display())))?)
    }

    /// The bundled table of stand-in diagnostics.
    pub fn bundled() -> Self {
        Self::from_json(DEFAULT_COMMAND_TABLE).expect("bundled command table parses")
    }

    /// Entry with the longest argv prefix of `argv`.
    pub fn lookup(&self, argv: &[String]) -> Option<&CommandEntry> {
        self.commands
            .iter()
            .filter(|e| !e.argv_prefix.is_empty() && argv.starts_with(&e.argv_prefix))
            .max_by_key(|e| e.argv_prefix.len())
    }

    pub fn fault_tags(&self) -> BTreeSet<String> {
        self.commands.iter().flat_map(|e| e.faults.iter().map(|f| f.tag.clone())).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioOverride {
    pub argv_prefix: Vec<String>,
    pub exit: i32,
    pub stdout: String,
}

/// Injected faults for one simulated node.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub faults: Vec<String>,
    #[serde(default)]
    pub overrides: Vec<ScenarioOverride>,
}

impl Scenario {
    pub fn with_faults(faults: &[&str]) -> Self {
        Scenario { faults: faults.iter().map(|f| f.to_string()).collect(), overrides: Vec::new() }
    }

    pub fn load(path: &Path) -> Result<Self, VerifyError> {
        let text = fs::read_to_string(path).map_err(|e| VerifyError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| VerifyError::Io(format!("{}: {e}", path.display())))
    }
}

/// Deterministic fault-injectable stand-in for a GPU node.
#[derive(Debug, Clone)]
pub struct SimulatedEnvironment {
    table: CommandTable,
    scenario: Scenario,
}

impl SimulatedEnvironment {
    pub fn new(table: CommandTable, scenario: Scenario) -> Self {
        SimulatedEnvironment { table, scenario }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }
}

impl Environment for SimulatedEnvironment {
    fn execute(&mut self, argv: &[String], timeout: Duration) -> RawRun {
        let Some(entry) = self.table.lookup(argv) else {
            return RawRun::exec_error(format!("unknown command `{}` in simulated environment", argv.join(" ")));
        };
        let duration = Duration::from_secs_f64(entry.duration_secs.max(0.0));
        if duration > timeout {
            return RawRun { exit_code: None, stdout: String::new(), stderr: String::new(), duration: timeout, timed_out: true };
        }
        let override_hit = self
            .scenario
            .overrides
            .iter()
            .filter(|o| argv.starts_with(&o.argv_prefix))
            .max_by_key(|o| o.argv_prefix.len());
        let (exit, stdout) = if let Some(o) = override_hit {
            (o.exit, o.stdout.as_str())
        } else if let Some(f) = entry.faults.iter().find(|f| self.scenario.faults.contains(&f.tag)) {
            (f.exit, f.stdout.as_str())
        } else {
            (entry.healthy.exit, entry.healthy.stdout.as_str())
        };
        RawRun {
            exit_code: Some(exit),
            stdout: truncate_utf8(stdout, OUTPUT_CAP_BYTES).to_string(),
            stderr: String::new(),
            duration,
            timed_out: false,
        }
    }
}

// ---------------------------------------------------------------------------
// Allowlist and executor
// ---------------------------------------------------------------------------

/// Read-only diagnostic programs permitted to run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allowlist {
    programs: BTreeSet<String>,
    allow_any: bool,
}

const DEFAULT_PROGRAMS: &[&str] = &[
    "all_reduce_perf",
    "compute-sanitizer",
    "dcgmi",
    "deviceQuery",
    "df",
    "dmesg",
    "findmnt",
    "ib_write_bw",
    "ibdev2netdev",
    "ibstat",
    "ibv_devinfo",
    "infradiag-probe",
    "journalctl",
    "lspci",
    "modinfo",
    "nvbandwidth",
    "nvcc",
    "nvidia-smi",
    "sysctl",
    "uname",
];

impl Default for Allowlist {
    fn default() -> Self {
        Allowlist { programs: DEFAULT_PROGRAMS.iter().map(|p| p.to_string()).collect(), allow_any: false }
    }
}

impl Allowlist {
    pub fn only(programs: &[&str]) -> Self {
        Allowlist { programs: programs.iter().map(|p| p.to_string()).collect(), allow_any: false }
    }

    /// Operator opt-in: run anything.
    pub fn unrestricted() -> Self {
        Allowlist { programs: BTreeSet::new(), allow_any: true }
    }

    pub fn permit(&mut self, program: &str) {
        self.programs.insert(program.to_string());
    }

    pub fn allows(&self, argv: &[String]) -> bool {
        self.allow_any || argv.first().is_some_and(|p| self.programs.contains(program_name(p)))
    }
}

/// Aggregate of all scripts bound to one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeStatus {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeCheck {
    pub overall: NodeStatus,
    pub results: Vec<VerificationResult>,
}

pub fn aggregate(results: &[VerificationResult]) -> NodeStatus {
    if results.iter().any(|r| r.outcome == Outcome::Fail) {
        NodeStatus::Fail
    } else if !results.is_empty() && results.iter().all(|r| r.outcome == Outcome::Pass) {
        NodeStatus::Pass
    } else {
        NodeStatus::Inconclusive
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeEntry {
    pub script_id: String,
    pub duration_secs: f64,
}

/// Runs scripts in one environment on behalf of one session.
pub struct Executor {
    env: Box<dyn Environment>,
    allowlist: Allowlist,
    time_ledger: Vec<TimeEntry>,
}

impl Executor {
    pub fn new(env: Box<dyn Environment>, allowlist: Allowlist) -> Self {
        Executor { env, allowlist, time_ledger: Vec::new() }
    }

    pub fn simulated(scenario: Scenario) -> Self {
        Executor::new(Box::new(SimulatedEnvironment::new(CommandTable::bundled(), scenario)), Allowlist::default())
    }

    pub fn time_ledger(&self) -> &[TimeEntry] {
        &self.time_ledger
    }

    pub fn total_verification_secs(&self) -> f64 {
        self.time_ledger.iter().map(|e| e.duration_secs).sum()
    }

    pub fn run_script(&mut self, s: &VerificationScript) -> VerificationResult {
        let result = if !self.allowlist.allows(&s.command) {
            VerificationResult::exec_error(&s.id, format!("`{}` is not on the command allowlist", s.program()))
        } else {
            let timeout = Duration::from_secs_f64(s.timeout_secs);
            let raw = self.env.execute(&s.command, timeout);
            VerificationResult {
                script_id: s.id.clone(),
                outcome: classify(&s.success_rule, raw.exit_code, &raw.stdout, raw.timed_out),
                exit_code: raw.exit_code,
                stdout: raw.stdout,
                stderr: raw.stderr,
                duration_secs: raw.duration.as_secs_f64(),
                timed_out: raw.timed_out,
            }
        };
        self.time_ledger.push(TimeEntry { script_id: s.id.clone(), duration_secs: result.duration_secs });
        result
    }

    /// Runs every script bound to `path`, in binding order.
    pub fn verify_node(&mut self, path: &TaxonomyPath, taxonomy: &Taxonomy, registry: &ScriptRegistry) -> NodeCheck {
        let ids = taxonomy.lookup(path).map(|n| n.verification.clone()).unwrap_or_default();
        let results: Vec<VerificationResult> = ids
            .iter()
            .map(|id| match registry.get(id) {
                Some(s) if s.status == ScriptStatus::Active => self.run_script(s),
                Some(_) => VerificationResult::exec_error(id, format!("script `{id}` is not active")),
                None => VerificationResult::exec_error(id, format!("script `{id}` is not registered")),
            })
            .collect();
        NodeCheck { overall: aggregate(&results), results }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Utc;

    fn argv(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn script(id: &str, path: &str, level: ScriptLevel, cmd: &str, rule: SuccessRule) -> VerificationScript {
        VerificationScript {
            id: id.into(),
            bound_path: path.parse().unwrap(),
            level,
            command: argv(cmd),
            timeout_secs: 30.0,
            success_rule: rule,
            status: ScriptStatus::Active,
        }
    }

    fn bundled_registry() -> ScriptRegistry {
        ScriptRegistry::from_json(include_str!("../assets/scripts.json")).unwrap()
    }

    fn reference_taxonomy() -> Taxonomy {
        let mut t = Taxonomy::load(include_str!("../assets/taxonomy.json")).unwrap();
        assert!(bundled_registry().bind_all(&mut t).is_empty());
        t
    }

    #[test]
    fn script_level_must_match_depth() {
        let ok = script("a", "GPU.MEMORY.ECC Error", ScriptLevel::Leaf, "nvidia-smi", SuccessRule::ExitZero);
        assert!(ok.validate().is_ok());
        let bad = script("b", "GPU", ScriptLevel::Leaf, "nvidia-smi", SuccessRule::ExitZero);
        assert!(bad.validate().is_err());
        let bad = script("c", "GPU.MEMORY.ECC Error", ScriptLevel::Internal, "nvidia-smi", SuccessRule::ExitZero);
        assert!(bad.validate().is_err());
        let bad = script("d", "GPU", ScriptLevel::Internal, "x", SuccessRule::StdoutRegex("(".into()));
        assert!(bad.validate().is_err());
    }

    #[test]
    fn classification_rules() {
        assert_eq!(classify(&SuccessRule::ExitZero, Some(0), "", false), Outcome::Pass);
        assert_eq!(classify(&SuccessRule::ExitZero, Some(3), "", false), Outcome::Fail);
        assert_eq!(classify(&SuccessRule::StdoutRegex("ok".into()), Some(3), "all ok", false), Outcome::Pass);
        assert_eq!(classify(&SuccessRule::ExitZeroAndRegex("ok".into()), Some(3), "ok", false), Outcome::Fail);
        assert_eq!(classify(&SuccessRule::ExitZero, None, "", true), Outcome::Timeout);
        assert_eq!(classify(&SuccessRule::ExitZero, None, "", false), Outcome::ExecError);
    }

    #[test]
    fn nvlink_check_fails_under_inactive_links() {
        let reg = bundled_registry();
        let s = reg.get("nvlink_status_check").unwrap();
        let mut faulty = Executor::simulated(Scenario::with_faults(&["nvlink_inactive"]));
        let r = faulty.run_script(s);
        assert_eq!(r.outcome, Outcome::Fail);
        assert!(r.stdout.contains("inactive"));
        let mut healthy = Executor::simulated(Scenario::default());
        assert_eq!(healthy.run_script(s).outcome, Outcome::Pass);
    }

    #[test]
    fn simulated_timeout_and_unknown_command() {
        let mut ex = Executor::new(
            Box::new(SimulatedEnvironment::new(CommandTable::bundled(), Scenario::default())),
            Allowlist::unrestricted(),
        );
        let mut sleepy = script("s", "GPU", ScriptLevel::Internal, "sleep 5", SuccessRule::ExitZero);
        sleepy.timeout_secs = 0.01;
        let r = ex.run_script(&sleepy);
        assert_eq!(r.outcome, Outcome::Timeout);
        assert!((r.duration_secs - 0.01).abs() < 1e-9);
        let unknown = script("u", "GPU", ScriptLevel::Internal, "frobnicate --all", SuccessRule::ExitZero);
        assert_eq!(ex.run_script(&unknown).outcome, Outcome::ExecError);
    }

    #[test]
    fn simulated_runs_are_deterministic() {
        let reg = bundled_registry();
        let run = || {
            let mut ex = Executor::simulated(Scenario::with_faults(&["ecc_uncorrectable", "xid_48"]));
            reg.scripts().iter().map(|s| ex.run_script(s)).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn overrides_take_precedence() {
        let reg = bundled_registry();
        let s = reg.get("nvlink_status_check").unwrap();
        let scenario = Scenario {
            faults: vec![],
            overrides: vec![ScenarioOverride { argv_prefix: argv("nvidia-smi nvlink"), exit: 9, stdout: "broken".into() }],
        };
        let r = Executor::simulated(scenario).run_script(s);
        assert_eq!(r.exit_code, Some(9));
        assert_eq!(r.outcome, Outcome::Fail);
    }

    #[test]
    fn verify_node_cases() {
        let t = reference_taxonomy();
        let reg = bundled_registry();
        let mut ex = Executor::simulated(Scenario::with_faults(&["nvlink_inactive"]));
        let leaf: TaxonomyPath = "Interconnect & Networking.NVLink.NVLink_Failure".parse().unwrap();
        let check = ex.verify_node(&leaf, &t, &reg);
        assert_eq!((check.overall, check.results.len()), (NodeStatus::Fail, 1));

        let mut healthy = Executor::simulated(Scenario::default());
        let gpu = healthy.verify_node(&"GPU".parse().unwrap(), &t, &reg);
        assert_eq!((gpu.overall, gpu.results.len()), (NodeStatus::Pass, 4));

        let bare = Taxonomy::bootstrap(Utc::now());
        let none = healthy.verify_node(&"Other".parse().unwrap(), &bare, &reg);
        assert_eq!((none.overall, none.results.len()), (NodeStatus::Inconclusive, 0));
        let secs: f64 = healthy.time_ledger().iter().map(|e| e.duration_secs).sum();
        assert_eq!(healthy.total_verification_secs(), secs);
    }

    #[test]
    fn allowlist_blocks_execution() {
        let mut ex = Executor::new(Box::new(RealEnvironment), Allowlist::only(&["true"]));
        let rm = script("rm", "GPU", ScriptLevel::Internal, "rm -rf /tmp/nothing", SuccessRule::ExitZero);
        let r = ex.run_script(&rm);
        assert_eq!(r.outcome, Outcome::ExecError);
        assert!(r.stderr.contains("allowlist"));
        let ok = script("t", "GPU", ScriptLevel::Internal, "/bin/true", SuccessRule::ExitZero);
        assert_eq!(ex.run_script(&ok).outcome, Outcome::Pass);
    }

    #[test]
    fn real_environment_timeout_missing_binary_and_cap() {
        let mut ex = Executor::new(Box::new(RealEnvironment), Allowlist::unrestricted());
        let mut sleepy = script("s", "GPU", ScriptLevel::Internal, "sleep 5", SuccessRule::ExitZero);
        sleepy.timeout_secs = 0.05;
        let start = Instant::now();
        assert_eq!(ex.run_script(&sleepy).outcome, Outcome::Timeout);
        assert!(start.elapsed() < Duration::from_secs(3));

        let missing = script("m", "GPU", ScriptLevel::Internal, "/nonexistent/binary", SuccessRule::ExitZero);
        assert_eq!(ex.run_script(&missing).outcome, Outcome::ExecError);

        let big = script("b", "GPU", ScriptLevel::Internal, "head -c 200000 /dev/zero", SuccessRule::ExitZero);
        let r = ex.run_script(&big);
        assert_eq!(r.outcome, Outcome::Pass);
        assert_eq!(r.stdout.len(), OUTPUT_CAP_BYTES);
    }

    #[test]
    fn bundled_assets_are_consistent() {
        let reg = bundled_registry();
        let table = CommandTable::bundled();
        for s in reg.scripts() {
            assert!(table.lookup(&s.command).is_some(), "no simulated command for {}", s.id);
            assert!(Allowlist::default().allows(&s.command), "{} not allowlisted", s.id);
            let mut ex = Executor::simulated(Scenario::default());
            assert_eq!(ex.run_script(s).outcome, Outcome::Pass, "{} fails on a healthy node", s.id);
        }
        let t = reference_taxonomy();
        for path in t.leaves() {
            assert!(!t.lookup(&path).unwrap().verification.is_empty(), "leaf {path} has no script");
        }
    }
}
