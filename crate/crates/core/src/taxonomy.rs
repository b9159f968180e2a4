//! The three-level root-cause taxonomy.
//!
//! Labels are addressed by dotted paths, `<main>.<sub>.<detail>`, e.g.
//! `GPU.MEMORY.ECC_Error`. The tree is persisted as JSON with sibling order
//! preserved; that order is the deterministic tie-break the diagnosis engine
//! uses when two children rank equally.
//!
//! ```
//! use infradiag::taxonomy::{Origin, Taxonomy, TaxonomyPath, UpsertOutcome};
//!
//! let at = "2023-04-01T00:00:00Z".parse().unwrap();
//! let mut t = Taxonomy::bootstrap(at);
//! assert_eq!(t.node_count(), 6);
//!
//! let path: TaxonomyPath = "GPU.MEMORY.ECC_Error".parse().unwrap();
//! let first = t.upsert_label(&path, "Uncorrectable ECC error", Origin::IncidentDerived, at).unwrap();
//! assert!(matches!(first, UpsertOutcome::Added { .. }));
//! let second = t.upsert_label(&path, "Uncorrectable ECC error in HBM", Origin::IncidentDerived, at).unwrap();
//! assert_eq!(second, UpsertOutcome::Refined { previous: "Uncorrectable ECC error".into() });
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, SecondsFormat, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};
use thiserror::Error;

pub const PATH_SEPARATOR: char = '.';
pub const MAX_DEPTH: usize = 3;
pub const DOCUMENT_VERSION: u64 = 1;

/// Description given to intermediate nodes created implicitly by an upsert.
pub const AUTO_CREATED_DESCRIPTION: &str = "(auto-created, pending refinement)";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaxonomyError {
    #[error("schema error at `{path}`: {reason}")]
    Schema { path: String, reason: String },
    #[error("parent of `{0}` does not exist")]
    MissingParent(String),
    #[error("no taxonomy node at `{0}`")]
    NotFound(String),
}

impl TaxonomyError {
    fn schema(path: impl Into<String>, reason: impl Into<String>) -> Self {
        TaxonomyError::Schema {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

// ---------------------------------------------------------------------------
// Main categories
// ---------------------------------------------------------------------------

/// The six top-level categories every bootstrapped taxonomy starts with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MainCategory {
    Gpu,
    SystemSoftware,
    InterconnectNetworking,
    FrameworkLibrary,
    UserApplication,
    Other,
}

impl MainCategory {
    pub const ALL: [MainCategory; 6] = [
        MainCategory::Gpu,
        MainCategory::SystemSoftware,
        MainCategory::InterconnectNetworking,
        MainCategory::FrameworkLibrary,
        MainCategory::UserApplication,
        MainCategory::Other,
    ];

    pub fn label(self) -> &'static str {
        match self {
            MainCategory::Gpu => "GPU",
            MainCategory::SystemSoftware => "System Software",
            MainCategory::InterconnectNetworking => "Interconnect & Networking",
            MainCategory::FrameworkLibrary => "Framework & Library",
            MainCategory::UserApplication => "User Application",
            MainCategory::Other => "Other",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            MainCategory::Gpu => "Incidents related to GPU hardware.",
            MainCategory::SystemSoftware => {
                "Problems with system-level software such as the GPU driver, CUDA and infrastructure software."
            }
            MainCategory::InterconnectNetworking => {
                "Incidents related to the network and high-speed interconnects."
            }
            MainCategory::FrameworkLibrary => "Incidents related to AI frameworks and libraries.",
            MainCategory::UserApplication => {
                "Incidents caused by the user's application: code errors, configuration conflicts and misuse."
            }
            MainCategory::Other => "Incidents that do not fall into the other categories.",
        }
    }

    /// Resolves a spelling variant (`User`, `SYSTEM_SOFTWARE`, `Networking`,
    /// ...) to its category.
    pub fn from_alias(label: &str) -> Option<MainCategory> {
        let key: String = label
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase()
            .replace("and", "");
        Some(match key.as_str() {
            "gpu" => MainCategory::Gpu,
            "systemsoftware" | "syssw" => MainCategory::SystemSoftware,
            "interconnectnetworking" | "networking" | "interconnect" | "network" => {
                MainCategory::InterconnectNetworking
            }
            "frameworklibrary" | "framework" => MainCategory::FrameworkLibrary,
            "userapplication" | "user" | "userapp" => MainCategory::UserApplication,
            "other" => MainCategory::Other,
            _ => return None,
        })
    }
}

impl fmt::Display for MainCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

// ---------------------------------------------------------------------------
// Paths
// ---------------------------------------------------------------------------

/// A 1–3 segment label path. The first segment is canonicalized when it is a
/// known main-category alias, so `User.Config.X` and
/// `User Application.Config.X` are the same path.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TaxonomyPath(Vec<String>);

impl TaxonomyPath {
    pub fn new<I, S>(segments: I) -> Result<Self, TaxonomyError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut segments: Vec<String> = segments.into_iter().map(Into::into).collect();
        let shown = segments.join(".");
        if segments.is_empty() {
            return Err(TaxonomyError::schema(shown, "path has no segments"));
        }
        if segments.len() > MAX_DEPTH {
            return Err(TaxonomyError::schema(
                shown,
                format!("depth {} exceeds the maximum of {MAX_DEPTH}", segments.len()),
            ));
        }
        for s in &mut segments {
            let trimmed = s.trim();
            if trimmed.is_empty() {
                return Err(TaxonomyError::schema(shown, "empty path segment"));
            }
            if trimmed.contains(PATH_SEPARATOR) {
                return Err(TaxonomyError::schema(shown, "segment contains the path separator"));
            }
            if trimmed.len() != s.len() {
                *s = trimmed.to_string();
            }
        }
        if let Some(main) = MainCategory::from_alias(&segments[0]) {
            segments[0] = main.label().to_string();
        }
        Ok(TaxonomyPath(segments))
    }

    pub fn segments(&self) -> &[String] {
        &self.0
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    /// The last segment.
    pub fn label(&self) -> &str {
        self.0.last().map(String::as_str).unwrap_or_default()
    }

    pub fn main_category(&self) -> &str {
        &self.0[0]
    }

    pub fn parent(&self) -> Option<TaxonomyPath> {
        (self.0.len() > 1).then(|| TaxonomyPath(self.0[..self.0.len() - 1].to_vec()))
    }

    pub fn child(&self, label: &str) -> Result<TaxonomyPath, TaxonomyError> {
        let mut segments = self.0.clone();
        segments.push(label.to_string());
        TaxonomyPath::new(segments)
    }

    /// The path cut to at most `depth` segments.
    pub fn truncated(&self, depth: usize) -> TaxonomyPath {
        TaxonomyPath(self.0[..depth.clamp(1, self.0.len())].to_vec())
    }

    /// Every prefix from depth 1 down to `self`, inclusive.
    pub fn prefixes(&self) -> impl Iterator<Item = TaxonomyPath> + '_ {
        (1..=self.0.len()).map(|d| TaxonomyPath(self.0[..d].to_vec()))
    }

    pub fn is_prefix_of(&self, other: &TaxonomyPath) -> bool {
        other.0.len() >= self.0.len() && other.0[..self.0.len()] == self.0[..]
    }
}

impl fmt::Display for TaxonomyPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            f.write_str(s)?;
        }
        Ok(())
    }
}

impl FromStr for TaxonomyPath {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaxonomyPath::new(s.split(PATH_SEPARATOR))
    }
}

impl Serialize for TaxonomyPath {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TaxonomyPath {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// Nodes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    IncidentDerived,
    #[serde(rename = "TSGDerived")]
    TsgDerived,
    Manual,
}

impl Origin {
    fn parse(s: &str) -> Option<Origin> {
        match s {
            "IncidentDerived" => Some(Origin::IncidentDerived),
            "TSGDerived" => Some(Origin::TsgDerived),
            "Manual" => Some(Origin::Manual),
            _ => None,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Origin::IncidentDerived => "IncidentDerived",
            Origin::TsgDerived => "TSGDerived",
            Origin::Manual => "Manual",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaxonomyNode {
    pub label: String,
    pub description: String,
    pub origin: Origin,
    pub created_at: DateTime<Utc>,
    /// Ids of verification scripts bound to this node.
    pub verification: Vec<String>,
    children: Vec<TaxonomyNode>,
}

impl TaxonomyNode {
    pub fn new(label: impl Into<String>, description: impl Into<String>, origin: Origin, created_at: DateTime<Utc>) -> Self {
        TaxonomyNode {
            label: label.into(),
            description: description.into(),
            origin,
            created_at,
            verification: Vec::new(),
            children: Vec::new(),
        }
    }

    pub fn children(&self) -> &[TaxonomyNode] {
        &self.children
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Result of [`Taxonomy::upsert_label`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UpsertOutcome {
    /// The node is new. `auto_created` lists intermediate nodes that had to
    /// be created on the way down, shallowest first.
    Added { auto_created: Vec<TaxonomyPath> },
    /// The node existed; its description was replaced.
    Refined { previous: String },
}

/// Calendar month bucket used for growth statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn of(at: DateTime<Utc>) -> Self {
        YearMonth {
            year: at.year(),
            month: at.month(),
        }
    }

    pub fn succ(self) -> Self {
        if self.month == 12 {
            YearMonth { year: self.year + 1, month: 1 }
        } else {
            YearMonth { year: self.year, month: self.month + 1 }
        }
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl Serialize for YearMonth {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

// ---------------------------------------------------------------------------
// Taxonomy
// ---------------------------------------------------------------------------

/// The label tree. The synthetic root is implicit: `roots()` are its
/// children (the main categories).
#[derive(Debug, Clone, PartialEq)]
pub struct Taxonomy {
    roots: Vec<TaxonomyNode>,
    index: BTreeMap<String, Vec<usize>>,
}

impl Default for Taxonomy {
    fn default() -> Self {
        Taxonomy::empty()
    }
}

impl Taxonomy {
    pub fn empty() -> Self {
        Taxonomy {
            roots: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    /// A taxonomy holding only the six main categories.
    pub fn bootstrap(at: DateTime<Utc>) -> Self {
        let roots = MainCategory::ALL
            .iter()
            .map(|c| TaxonomyNode::new(c.label(), c.description(), Origin::Manual, at))
            .collect();
        Taxonomy::from_roots(roots).expect("bootstrap categories are valid")
    }

    /// Builds a taxonomy from the main-category nodes, validating depth and
    /// sibling uniqueness.
    pub fn from_roots(mut roots: Vec<TaxonomyNode>) -> Result<Self, TaxonomyError> {
        for n in &mut roots {
            if let Some(main) = MainCategory::from_alias(&n.label) {
                n.label = main.label().to_string();
            }
        }
        let mut t = Taxonomy {
            roots,
            index: BTreeMap::new(),
        };
        t.validate()?;
        t.reindex();
        Ok(t)
    }

    /// Checks depth, label whitespace and sibling uniqueness.
    pub fn validate(&self) -> Result<(), TaxonomyError> {
        fn check(nodes: &[TaxonomyNode], prefix: &[String]) -> Result<(), TaxonomyError> {
            let mut seen = BTreeSet::new();
            for n in nodes {
                let mut segs = prefix.to_vec();
                segs.push(n.label.clone());
                let path = TaxonomyPath::new(segs.clone())?;
                if n.label.trim() != n.label {
                    return Err(TaxonomyError::schema(path.to_string(), "label has surrounding whitespace"));
                }
                if !seen.insert(path.label().to_string()) {
                    return Err(TaxonomyError::schema(path.to_string(), "duplicate sibling label"));
                }
                check(&n.children, path.segments())?;
            }
            Ok(())
        }
        check(&self.roots, &[])
    }

    fn reindex(&mut self) {
        fn walk(nodes: &[TaxonomyNode], prefix: &str, pos: &mut Vec<usize>, out: &mut BTreeMap<String, Vec<usize>>) {
            for (i, n) in nodes.iter().enumerate() {
                let key = if prefix.is_empty() {
                    n.label.clone()
                } else {
                    format!("{prefix}.{}", n.label)
                };
                pos.push(i);
                out.insert(key.clone(), pos.clone());
                walk(&n.children, &key, pos, out);
                pos.pop();
            }
        }
        let mut index = BTreeMap::new();
        walk(&self.roots, "", &mut Vec::new(), &mut index);
        self.index = index;
    }

    pub fn roots(&self) -> &[TaxonomyNode] {
        &self.roots
    }

    /// Children of `parent`, or the main categories for `None`.
    pub fn children(&self, parent: Option<&TaxonomyPath>) -> &[TaxonomyNode] {
        match parent {
            None => &self.roots,
            Some(p) => self.lookup(p).map(TaxonomyNode::children).unwrap_or_default(),
        }
    }

    /// Full paths of the children of `parent`, in sibling order.
    pub fn child_paths(&self, parent: Option<&TaxonomyPath>) -> Vec<TaxonomyPath> {
        self.children(parent)
            .iter()
            .map(|c| match parent {
                None => TaxonomyPath(vec![c.label.clone()]),
                Some(p) => {
                    let mut segs = p.0.clone();
                    segs.push(c.label.clone());
                    TaxonomyPath(segs)
                }
            })
            .collect()
    }

    pub fn lookup(&self, path: &TaxonomyPath) -> Option<&TaxonomyNode> {
        let pos = self.index.get(&path.to_string())?;
        Some(self.node_at(pos))
    }

    pub fn contains(&self, path: &TaxonomyPath) -> bool {
        self.index.contains_key(&path.to_string())
    }

    fn node_at(&self, pos: &[usize]) -> &TaxonomyNode {
        let mut node = &self.roots[pos[0]];
        for &i in &pos[1..] {
            node = &node.children[i];
        }
        node
    }

    fn node_at_mut(&mut self, pos: &[usize]) -> &mut TaxonomyNode {
        let mut node = &mut self.roots[pos[0]];
        for &i in &pos[1..] {
            node = &mut node.children[i];
        }
        node
    }

    fn lookup_mut(&mut self, path: &TaxonomyPath) -> Option<&mut TaxonomyNode> {
        let pos = self.index.get(&path.to_string())?.clone();
        Some(self.node_at_mut(&pos))
    }

    fn children_mut(&mut self, parent: Option<&TaxonomyPath>) -> Option<&mut Vec<TaxonomyNode>> {
        match parent {
            None => Some(&mut self.roots),
            Some(p) => self.lookup_mut(p).map(|n| &mut n.children),
        }
    }

    /// Number of labelled nodes (the synthetic root is not counted).
    pub fn node_count(&self) -> usize {
        self.index.len()
    }

    /// Canonical path strings of every node, sorted.
    pub fn index_keys(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }

    /// Pre-order walk yielding each node with its path.
    pub fn walk(&self) -> Vec<(TaxonomyPath, &TaxonomyNode)> {
        fn go<'a>(nodes: &'a [TaxonomyNode], prefix: &[String], out: &mut Vec<(TaxonomyPath, &'a TaxonomyNode)>) {
            for n in nodes {
                let mut segs = prefix.to_vec();
                segs.push(n.label.clone());
                out.push((TaxonomyPath(segs.clone()), n));
                go(&n.children, &segs, out);
            }
        }
        let mut out = Vec::new();
        go(&self.roots, &[], &mut out);
        out
    }

    pub fn leaves(&self) -> Vec<TaxonomyPath> {
        self.walk()
            .into_iter()
            .filter(|(_, n)| n.is_leaf())
            .map(|(p, _)| p)
            .collect()
    }

    /// Inserts or refines a label.
    ///
    /// Missing intermediate nodes are created for incident- and TSG-derived
    /// labels; manual additions must name an existing parent.
    pub fn upsert_label(
        &mut self,
        path: &TaxonomyPath,
        description: &str,
        origin: Origin,
        at: DateTime<Utc>,
    ) -> Result<UpsertOutcome, TaxonomyError> {
        if let Some(node) = self.lookup_mut(path) {
            let previous = std::mem::replace(&mut node.description, description.to_string());
            return Ok(UpsertOutcome::Refined { previous });
        }
        let mut auto_created = Vec::new();
        for prefix in path.prefixes().take(path.depth() - 1) {
            if self.contains(&prefix) {
                continue;
            }
            if origin == Origin::Manual {
                return Err(TaxonomyError::MissingParent(path.to_string()));
            }
            self.append_child(&prefix, TaxonomyNode::new(prefix.label(), AUTO_CREATED_DESCRIPTION, origin, at));
            auto_created.push(prefix);
        }
        self.append_child(path, TaxonomyNode::new(path.label(), description, origin, at));
        Ok(UpsertOutcome::Added { auto_created })
    }

    fn append_child(&mut self, path: &TaxonomyPath, node: TaxonomyNode) {
        let parent = path.parent();
        let siblings = self
            .children_mut(parent.as_ref())
            .expect("parent created before child");
        siblings.push(node);
        self.reindex();
    }

    /// Binds a verification script id to a node (no-op if already bound).
    pub fn bind_script(&mut self, path: &TaxonomyPath, script_id: &str) -> Result<(), TaxonomyError> {
        let node = self
            .lookup_mut(path)
            .ok_or_else(|| TaxonomyError::NotFound(path.to_string()))?;
        if !node.verification.iter().any(|s| s == script_id) {
            node.verification.push(script_id.to_string());
        }
        Ok(())
    }

    /// Removes a node and its subtree, returning it.
    pub fn remove(&mut self, path: &TaxonomyPath) -> Result<TaxonomyNode, TaxonomyError> {
        let pos = self
            .index
            .get(&path.to_string())
            .cloned()
            .ok_or_else(|| TaxonomyError::NotFound(path.to_string()))?;
        let last = *pos.last().expect("non-empty position");
        let parent = path.parent();
        let siblings = self
            .children_mut(parent.as_ref())
            .expect("indexed node has a parent list");
        let removed = siblings.remove(last);
        self.reindex();
        Ok(removed)
    }

    /// Number of nodes added per calendar month, by `created_at`.
    ///
    /// The six bootstrap categories are excluded. Buckets are contiguous from
    /// the first to the last month (or over `range` when given), with zero
    /// counts for months without additions.
    pub fn label_growth(&self, range: Option<(YearMonth, YearMonth)>) -> Vec<(YearMonth, usize)> {
        let mut counts: BTreeMap<YearMonth, usize> = BTreeMap::new();
        for (path, node) in self.walk() {
            if path.depth() == 1 && MainCategory::from_alias(&node.label).is_some() {
                continue;
            }
            *counts.entry(YearMonth::of(node.created_at)).or_default() += 1;
        }
        let (start, end) = match range {
            Some(r) => r,
            None => match (counts.keys().next(), counts.keys().next_back()) {
                (Some(a), Some(b)) => (*a, *b),
                _ => return Vec::new(),
            },
        };
        let mut out = Vec::new();
        let mut m = start;
        while m <= end {
            out.push((m, counts.get(&m).copied().unwrap_or(0)));
            m = m.succ();
        }
        out
    }

    // -----------------------------------------------------------------------
    // JSON persistence
    // -----------------------------------------------------------------------

    /// Parses a taxonomy document, reporting the offending path on failure.
    /// The shipped catalog with its checks bound.
    pub fn bundled() -> Taxonomy {
        Taxonomy::load(include_str!("../assets/taxonomy.json")).expect("bundled taxonomy parses")
    }

    pub fn load(document: &str) -> Result<Taxonomy, TaxonomyError> {
        let value: Value =
            serde_json::from_str(document).map_err(|e| TaxonomyError::schema("$", format!("invalid JSON: {e}")))?;
        Taxonomy::from_value(&value)
    }

    pub fn from_value(value: &Value) -> Result<Taxonomy, TaxonomyError> {
        let obj = value
            .as_object()
            .ok_or_else(|| TaxonomyError::schema("$", "document must be an object"))?;
        for key in obj.keys() {
            if key != "version" && key != "nodes" {
                return Err(TaxonomyError::schema("$", format!("unknown field `{key}`")));
            }
        }
        match obj.get("version").and_then(Value::as_u64) {
            Some(DOCUMENT_VERSION) => {}
            Some(v) => return Err(TaxonomyError::schema("$.version", format!("unsupported version {v}"))),
            None => return Err(TaxonomyError::schema("$.version", "missing or non-integer version")),
        }
        let nodes = obj
            .get("nodes")
            .and_then(Value::as_array)
            .ok_or_else(|| TaxonomyError::schema("$.nodes", "missing `nodes` array"))?;
        let roots = parse_nodes(nodes, &[])?;
        Taxonomy::from_roots(roots)
    }

    pub fn to_value(&self) -> Value {
        fn node_value(n: &TaxonomyNode) -> Value {
            let mut m = Map::new();
            m.insert("label".into(), Value::String(n.label.clone()));
            m.insert("description".into(), Value::String(n.description.clone()));
            m.insert("origin".into(), Value::String(n.origin.as_str().into()));
            m.insert(
                "created_at".into(),
                Value::String(n.created_at.to_rfc3339_opts(SecondsFormat::AutoSi, true)),
            );
            m.insert(
                "verification".into(),
                Value::Array(n.verification.iter().cloned().map(Value::String).collect()),
            );
            m.insert("children".into(), Value::Array(n.children.iter().map(node_value).collect()));
            Value::Object(m)
        }
        let mut m = Map::new();
        m.insert("version".into(), Value::from(DOCUMENT_VERSION));
        m.insert("nodes".into(), Value::Array(self.roots.iter().map(node_value).collect()));
        Value::Object(m)
    }

    /// Canonical serialization: fixed field order, UTC timestamps, two-space
    /// indentation, trailing newline.
    pub fn save(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_value()).expect("taxonomy serializes");
        s.push('\n');
        s
    }
}

/// `save(load(document))`: the canonical form of a schema-valid document.
pub fn canonicalize(document: &str) -> Result<String, TaxonomyError> {
    Taxonomy::load(document).map(|t| t.save())
}

fn parse_nodes(values: &[Value], prefix: &[String]) -> Result<Vec<TaxonomyNode>, TaxonomyError> {
    let mut out = Vec::with_capacity(values.len());
    let mut seen = BTreeSet::new();
    for (i, v) in values.iter().enumerate() {
        let here = if prefix.is_empty() {
            format!("$.nodes[{i}]")
        } else {
            format!("{}[{i}]", prefix.join("."))
        };
        let obj = v
            .as_object()
            .ok_or_else(|| TaxonomyError::schema(&here, "node must be an object"))?;
        let label = obj
            .get("label")
            .and_then(Value::as_str)
            .ok_or_else(|| TaxonomyError::schema(&here, "missing string `label`"))?;
        let mut segs = prefix.to_vec();
        segs.push(label.to_string());
        let path = TaxonomyPath::new(segs)?;
        let at = path.to_string();
        for key in obj.keys() {
            if !matches!(
                key.as_str(),
                "label" | "description" | "origin" | "created_at" | "verification" | "children"
            ) {
                return Err(TaxonomyError::schema(&at, format!("unknown field `{key}`")));
            }
        }
        if !seen.insert(path.label().to_string()) {
            return Err(TaxonomyError::schema(&at, "duplicate sibling label"));
        }
        let description = obj
            .get("description")
            .and_then(Value::as_str)
            .ok_or_else(|| TaxonomyError::schema(&at, "missing string `description`"))?;
        let origin = obj
            .get("origin")
            .and_then(Value::as_str)
            .and_then(Origin::parse)
            .ok_or_else(|| TaxonomyError::schema(&at, "`origin` must be IncidentDerived, TSGDerived or Manual"))?;
        let created_at = obj
            .get("created_at")
            .and_then(Value::as_str)
            .and_then(|s| DateTime::parse_from_rfc3339(s).ok())
            .map(|d| d.with_timezone(&Utc))
            .ok_or_else(|| TaxonomyError::schema(&at, "`created_at` must be an RFC 3339 timestamp"))?;
        let verification = match obj.get("verification") {
            None => Vec::new(),
            Some(Value::Array(items)) => items
                .iter()
                .map(|s| s.as_str().map(str::to_string))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| TaxonomyError::schema(&at, "`verification` must hold script id strings"))?,
            Some(_) => return Err(TaxonomyError::schema(&at, "`verification` must be an array")),
        };
        let children = match obj.get("children") {
            None => Vec::new(),
            Some(Value::Array(items)) => {
                if !items.is_empty() && path.depth() == MAX_DEPTH {
                    let child = items[0].get("label").and_then(Value::as_str).unwrap_or("?");
                    return Err(TaxonomyError::schema(
                        format!("{at}.{child}"),
                        format!("depth {} exceeds the maximum of {MAX_DEPTH}", MAX_DEPTH + 1),
                    ));
                }
                parse_nodes(items, path.segments())?
            }
            Some(_) => return Err(TaxonomyError::schema(&at, "`children` must be an array")),
        };
        out.push(TaxonomyNode {
            label: path.label().to_string(),
            description: description.to_string(),
            origin,
            created_at,
            verification,
            children,
        });
    }
    Ok(out)
}
