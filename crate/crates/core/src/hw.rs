//! Attacker observations under each hardware defense mode.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asm::Program;
use crate::contract::{
    committed_run, Contract, ContractError, ExecModel, LeakageModel, ObservationTrace, RawEvent, TraceSet,
    DEFAULT_SPEC_DEPTH,
};
use crate::machine::{ArchState, MemoryLayout};
use crate::ni::Policy;
use crate::sta::{self, AnalysisReport, StaError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HwMode {
    /// Shared memory observable under full speculation; the attack baseline.
    Insecure,
    /// No shared memory at all.
    Mi6,
    /// Shared accesses wait until they are non-speculative.
    Safe,
    /// Straight-line speculation inside Burst regions, safe elsewhere.
    Burst,
    /// Burst, but only for programs the static analyzer accepts.
    BurstSta,
}

impl HwMode {
    pub const ALL: [HwMode; 5] = [HwMode::Insecure, HwMode::Mi6, HwMode::Safe, HwMode::Burst, HwMode::BurstSta];

    pub fn name(self) -> &'static str {
        match self {
            HwMode::Insecure => "insecure",
            HwMode::Mi6 => "mi6",
            HwMode::Safe => "safe",
            HwMode::Burst => "burst",
            HwMode::BurstSta => "burst_sta",
        }
    }
}

impl fmt::Display for HwMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HwMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        HwMode::ALL
            .into_iter()
            .find(|m| m.name() == s || m.name().replace('_', "-") == s)
            .ok_or_else(|| format!("unknown mode `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HwError {
    #[error(transparent)]
    Contract(#[from] ContractError),
    #[error(transparent)]
    Sta(#[from] StaError),
    #[error("analysis report was produced for a different program")]
    ReportProgramMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HwDiagnostic {
    /// Execution with Burst mode on left the static region it started in.
    SelfContainmentViolation { index: usize, line: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HwTraces {
    pub traces: TraceSet,
    pub diagnostics: Vec<HwDiagnostic>,
}

/// A mode with its per-program decisions already made.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Semantics {
    /// Every run yields the single empty trace.
    Empty,
    /// Exactly the traces of a contract.
    Contract(Contract),
    /// Straight-line speculation while the Burst flag is set.
    Burst { spec_depth: usize },
}

impl Semantics {
    /// Observation model used when comparing traces of this semantics.
    pub fn leak(&self) -> LeakageModel {
        match self {
            Semantics::Contract(c) => c.leak,
            _ => LeakageModel::Shm,
        }
    }

    pub fn trace_set(
        &self,
        program: &Program,
        state0: &ArchState,
        layout: &MemoryLayout,
        fuel: usize,
        cap: usize,
    ) -> Result<HwTraces, ContractError> {
        match *self {
            Semantics::Empty => Ok(HwTraces { traces: TraceSet::from([ObservationTrace::default()]), diagnostics: Vec::new() }),
            Semantics::Contract(c) => {
                let traces = crate::contract::contract_trace_set(program, state0, layout, c, fuel, cap)?;
                Ok(HwTraces { traces, diagnostics: Vec::new() })
            }
            Semantics::Burst { spec_depth } => {
                let gate = |_: usize, flag: bool| flag;
                let run = committed_run(program, state0, layout, ExecModel::stl().with_depth(spec_depth), fuel, &gate)?;
                let diagnostics = escapes(program, &run.steps, &run.burst_flags);
                Ok(HwTraces { traces: run.trace_set(LeakageModel::Shm, cap)?, diagnostics })
            }
        }
    }
}

/// Committed steps taken with the Burst flag on that leave the static
/// region they belong to.
fn escapes(program: &Program, steps: &[RawEvent], flags: &[bool]) -> Vec<HwDiagnostic> {
    let pcs: Vec<usize> = steps
        .iter()
        .filter_map(|e| match e {
            RawEvent::Step { pc, .. } => Some(*pc),
            RawEvent::Rollback => None,
        })
        .collect();
    let mut out = Vec::new();
    for (i, (&pc, &flag)) in pcs.iter().zip(flags).enumerate() {
        if !flag {
            continue;
        }
        let next = pcs.get(i + 1).copied().unwrap_or(program.len());
        let ok = match program.region_containing(pc) {
            Some(r) => next > r.on && next <= r.off,
            None => program.burst_regions.iter().any(|r| r.off == pc),
        };
        if !ok {
            let d = HwDiagnostic::SelfContainmentViolation { index: pc, line: program.line_of(pc) };
            if !out.contains(&d) {
                out.push(d);
            }
        }
    }
    out
}

pub const SHM_SEQ: Contract = Contract::new(LeakageModel::Shm, ExecModel::seq());
pub const SHM_STL: Contract = Contract::new(LeakageModel::Shm, ExecModel::stl());
pub const SHM_SPEC: Contract = Contract::new(LeakageModel::Shm, ExecModel::spec());

/// Resolve `mode` for `program`. For `burst_sta` this runs the analyzer
/// with every register secret, since the hardware cannot know the policy.
pub fn resolve(program: &Program, mode: HwMode, layout: &MemoryLayout) -> Result<Semantics, HwError> {
    Ok(match mode {
        HwMode::Insecure => Semantics::Contract(SHM_SPEC),
        HwMode::Mi6 => Semantics::Empty,
        HwMode::Safe => Semantics::Contract(SHM_SEQ),
        HwMode::Burst => Semantics::Burst { spec_depth: DEFAULT_SPEC_DEPTH },
        HwMode::BurstSta => {
            let report = sta::analyze(program, &Policy::all_secret(), layout)?;
            sta_gate(program, &report)?
        }
    })
}

/// Burst semantics when the report passes, the empty semantics otherwise.
pub fn sta_gate(program: &Program, report: &AnalysisReport) -> Result<Semantics, HwError> {
    if report.program_digest != program.digest() {
        return Err(HwError::ReportProgramMismatch);
    }
    Ok(if report.passed() { Semantics::Burst { spec_depth: DEFAULT_SPEC_DEPTH } } else { Semantics::Empty })
}

pub fn hw_trace_set(
    program: &Program,
    state0: &ArchState,
    layout: &MemoryLayout,
    mode: HwMode,
    fuel: usize,
    cap: usize,
) -> Result<HwTraces, HwError> {
    Ok(resolve(program, mode, layout)?.trace_set(program, state0, layout, fuel, cap)?)
}
