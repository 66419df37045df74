//! Reference snippets with their expected verdicts.
//!
//! Each entry is an assembly file plus a JSON sidecar of the same stem:
//!
//! ```json
//! {
//!   "name": "memcpy-right",
//!   "description": "...",
//!   "layout": {"private": {"start": 4096, "end": 8192}, "shared": {"start": 32768, "end": 36864}},
//!   "policy": {"public_regs": ["a0"]},
//!   "space": {"registers": {"a0": ["0", "0x8000"]}},
//!   "fuel": 256,
//!   "expected": {"sta": {"outcome": "pass", "basis": "by-definition", "note": "..."}}
//! }
//! ```
//!
//! Only `name`, `space` and `expected` are required. Check names are `sta`,
//! `direct:<observer>` and `relative:<premise>=><conclusion>`, where an
//! observer is a contract (`shm-seq`) or a hardware mode (`burst_sta`).

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asm::{parse_program, Program};
use crate::machine::MemoryLayout;
use crate::ni::{self, CheckConfig, NiError, Observer, Policy, StateSpace};
use crate::sta::{self, StaError};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus entry `{entry}`: {reason}")]
    Integrity { entry: String, reason: String },
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn integrity(entry: &str, reason: impl fmt::Display) -> CorpusError {
    CorpusError::Integrity { entry: entry.to_string(), reason: reason.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Check {
    Sta,
    Direct(Observer),
    Relative(Observer, Observer),
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Check::Sta => f.write_str("sta"),
            Check::Direct(o) => write!(f, "direct:{o}"),
            Check::Relative(a, b) => write!(f, "relative:{a}=>{b}"),
        }
    }
}

impl FromStr for Check {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "sta" {
            return Ok(Check::Sta);
        }
        if let Some(o) = s.strip_prefix("direct:") {
            return Ok(Check::Direct(o.parse()?));
        }
        if let Some(rest) = s.strip_prefix("relative:") {
            let (a, b) = rest.split_once("=>").ok_or_else(|| format!("`{s}` lacks `=>`"))?;
            return Ok(Check::Relative(a.parse()?, b.parse()?));
        }
        Err(format!("unknown check `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Pass,
    Fail,
    Holds,
    Violated,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Pass => "pass",
            Outcome::Fail => "fail",
            Outcome::Holds => "holds",
            Outcome::Violated => "violated",
        })
    }
}

/// Where an expected verdict comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Basis {
    /// Stated for the published listing.
    ReferenceListing,
    /// Follows from the definitions alone.
    ByDefinition,
    /// Computed by the checkers and confirmed by hand.
    OracleComputed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Expectation {
    pub outcome: Outcome,
    pub basis: Basis,
    pub note: String,
}

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub name: String,
    pub description: String,
    pub source: String,
    pub program: Program,
    pub layout: MemoryLayout,
    pub policy: Policy,
    pub space: StateSpace,
    pub fuel: Option<usize>,
    /// Ordered by check name.
    pub expected: Vec<(Check, Expectation)>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    name: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    layout: Option<MemoryLayout>,
    #[serde(default)]
    policy: Policy,
    space: StateSpace,
    #[serde(default)]
    fuel: Option<usize>,
    expected: BTreeMap<String, Expectation>,
}

/// Build an entry from its assembly and sidecar text. `stem` names it in errors.
pub fn parse_entry(stem: &str, source: &str, sidecar: &str) -> Result<CorpusEntry, CorpusError> {
    let program = parse_program(source).map_err(|e| integrity(stem, e))?;
    let side: Sidecar = serde_json::from_str(sidecar).map_err(|e| integrity(stem, format!("sidecar: {e}")))?;
    let mut expected = Vec::new();
    for (k, v) in side.expected {
        let check: Check = k.parse().map_err(|e| integrity(stem, e))?;
        let fits = match check {
            Check::Sta => matches!(v.outcome, Outcome::Pass | Outcome::Fail),
            _ => matches!(v.outcome, Outcome::Holds | Outcome::Violated),
        };
        if !fits {
            return Err(integrity(stem, format!("`{}` is not an outcome of `{k}`", v.outcome)));
        }
        expected.push((check, v));
    }
    Ok(CorpusEntry {
        name: side.name,
        description: side.description,
        source: source.to_string(),
        program,
        layout: side.layout.unwrap_or_default(),
        policy: side.policy,
        space: side.space,
        fuel: side.fuel,
        expected,
    })
}

macro_rules! embedded {
    ($($stem:literal),* $(,)?) => {
        [$(($stem, include_str!(concat!("../../../corpus/", $stem, ".s")), include_str!(concat!("../../../corpus/", $stem, ".json")))),*]
    };
}

const EMBEDDED: [(&str, &str, &str); 8] = embedded!(
    "jal_far_away",
    "memcpy_left",
    "memcpy_right",
    "shared_streaming",
    "spectre_v1",
    "straightline_arith",
    "tensor_deref_hoisted",
    "tensor_double_deref",
);

/// The built-in corpus, sorted by name.
pub fn load_corpus() -> Result<Vec<CorpusEntry>, CorpusError> {
    let mut out = EMBEDDED.iter().map(|(stem, s, j)| parse_entry(stem, s, j)).collect::<Result<Vec<_>, _>>()?;
    out.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(out)
}

/// Every `.s` file in `dir` with its `.json` sidecar, sorted by name.
pub fn load_dir(dir: &Path) -> Result<Vec<CorpusEntry>, CorpusError> {
    fn io(path: &Path) -> impl Fn(std::io::Error) -> CorpusError + '_ {
        move |source| CorpusError::Io { path: path.to_path_buf(), source }
    }
    let mut out = Vec::new();
    for item in std::fs::read_dir(dir).map_err(io(dir))? {
        let path = item.map_err(io(dir))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("s") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let side = path.with_extension("json");
        let source = std::fs::read_to_string(&path).map_err(io(&path))?;
        let sidecar = std::fs::read_to_string(&side).map_err(io(&side))?;
        out.push(parse_entry(&stem, &source, &sidecar)?);
    }
    out.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(out)
}

#[derive(Debug, Error)]
pub enum CheckError {
    #[error(transparent)]
    Ni(#[from] NiError),
    #[error(transparent)]
    Sta(#[from] StaError),
}

impl CorpusEntry {
    pub fn config(&self, base: CheckConfig) -> CheckConfig {
        CheckConfig { fuel: self.fuel.unwrap_or(base.fuel), ..base }
    }

    /// Run one check live.
    pub fn run(&self, check: Check, config: CheckConfig) -> Result<Outcome, CheckError> {
        let config = self.config(config);
        Ok(match check {
            Check::Sta => {
                if sta::analyze(&self.program, &self.policy, &self.layout)?.passed() {
                    Outcome::Pass
                } else {
                    Outcome::Fail
                }
            }
            Check::Direct(o) => {
                ni_outcome(ni::check_direct(&self.program, o, &self.policy, &self.space, &self.layout, config)?.holds)
            }
            Check::Relative(a, b) => {
                ni_outcome(ni::check_relative(&self.program, a, b, &self.space, &self.layout, config)?.holds)
            }
        })
    }
}

fn ni_outcome(holds: bool) -> Outcome {
    if holds {
        Outcome::Holds
    } else {
        Outcome::Violated
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub check: String,
    pub expected: Outcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub actual: Option<Outcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EntryReport {
    pub name: String,
    pub ok: bool,
    pub checks: Vec<CheckResult>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CorpusReport {
    pub ok: bool,
    pub entries: Vec<EntryReport>,
}

pub fn verify_entry(entry: &CorpusEntry, config: CheckConfig) -> EntryReport {
    let checks: Vec<CheckResult> = entry
        .expected
        .iter()
        .map(|(check, exp)| {
            let (actual, error) = match entry.run(*check, config) {
                Ok(o) => (Some(o), None),
                Err(e) => (None, Some(e.to_string())),
            };
            CheckResult { check: check.to_string(), expected: exp.outcome, actual, error, ok: actual == Some(exp.outcome) }
        })
        .collect();
    EntryReport { name: entry.name.clone(), ok: checks.iter().all(|c| c.ok), checks }
}

/// Verify entries in parallel; the report is ordered by entry name.
pub fn verify_all(entries: &[CorpusEntry], config: CheckConfig) -> CorpusReport {
    let mut reports: Vec<EntryReport> = entries.par_iter().map(|e| verify_entry(e, config)).collect();
    reports.sort_by(|a, b| a.name.cmp(&b.name));
    CorpusReport { ok: reports.iter().all(|r| r.ok), entries: reports }
}

impl fmt::Display for CorpusReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(f, "{} {}", if e.ok { "ok  " } else { "FAIL" }, e.name)?;
            for c in &e.checks {
                let got = match (&c.actual, &c.error) {
                    (Some(a), _) => a.to_string(),
                    (None, Some(err)) => format!("error: {err}"),
                    (None, None) => "?".into(),
                };
                let mark = if c.ok { " " } else { "!" };
                writeln!(f, "  {mark} {:<32} expected {:<8} got {got}", c.check, c.expected.to_string())?;
            }
        }
        let bad = self.entries.iter().filter(|e| !e.ok).count();
        write!(f, "{} entries, {} failing", self.entries.len(), bad)
    }
}
