//! Contract traces: what a leakage model exposes under an execution model.
//!
//! A run is simulated once along the committed path. At every dynamic
//! control-flow instruction the engine records the wrong-path segments the
//! execution model admits; a trace picks one option per control point, and
//! the trace set is the product of those options.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asm::{BurstMarker, Op, Program};
use crate::machine::{
    apply, evaluate, AccessKind, ArchState, Domain, MachineError, MemEvent, MemoryLayout, MemoryView, RunOutcome,
};

/// Default cap on the number of traces a set enumeration may produce.
pub const DEFAULT_ENUMERATION_CAP: usize = 1 << 16;

pub const DEFAULT_SPEC_DEPTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeakageModel {
    /// Program counter plus every memory address.
    Ct,
    /// `ct` plus loaded values.
    Arch,
    /// Addresses of all memory accesses.
    Mem,
    /// Addresses of shared-memory accesses.
    Shm,
}

impl LeakageModel {
    pub const ALL: [LeakageModel; 4] = [LeakageModel::Arch, LeakageModel::Ct, LeakageModel::Mem, LeakageModel::Shm];

    pub fn name(self) -> &'static str {
        match self {
            LeakageModel::Ct => "ct",
            LeakageModel::Arch => "arch",
            LeakageModel::Mem => "mem",
            LeakageModel::Shm => "shm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecKind {
    Seq,
    Stl,
    Spec,
}

impl ExecKind {
    pub fn name(self) -> &'static str {
        match self {
            ExecKind::Seq => "seq",
            ExecKind::Stl => "stl",
            ExecKind::Spec => "spec",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ExecModel {
    pub kind: ExecKind,
    /// Maximum number of wrong-path instructions per misprediction.
    pub spec_depth: usize,
}

impl ExecModel {
    pub const fn new(kind: ExecKind) -> Self {
        ExecModel { kind, spec_depth: DEFAULT_SPEC_DEPTH }
    }

    pub const fn seq() -> Self {
        Self::new(ExecKind::Seq)
    }

    pub const fn stl() -> Self {
        Self::new(ExecKind::Stl)
    }

    pub const fn spec() -> Self {
        Self::new(ExecKind::Spec)
    }

    pub fn with_depth(mut self, spec_depth: usize) -> Self {
        self.spec_depth = spec_depth;
        self
    }
}

/// A leakage model paired with an execution model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Contract {
    pub leak: LeakageModel,
    pub exec: ExecModel,
}

impl Contract {
    pub const fn new(leak: LeakageModel, exec: ExecModel) -> Self {
        Contract { leak, exec }
    }
}

impl fmt::Display for Contract {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.leak.name(), self.exec.kind.name())
    }
}

impl FromStr for Contract {
    type Err = String;

    /// Accepts `shm-seq`, `shm,seq` or `shm:seq`.
    fn from_str(s: &str) -> Result<Self, String> {
        let (l, e) = s
            .split_once(['-', ',', ':'])
            .ok_or_else(|| format!("expected <leak>-<exec>, got `{s}`"))?;
        let leak = match l.trim() {
            "ct" => LeakageModel::Ct,
            "arch" => LeakageModel::Arch,
            "mem" => LeakageModel::Mem,
            "shm" => LeakageModel::Shm,
            other => return Err(format!("unknown leakage model `{other}`")),
        };
        let kind = match e.trim() {
            "seq" => ExecKind::Seq,
            "stl" => ExecKind::Stl,
            "spec" => ExecKind::Spec,
            other => return Err(format!("unknown execution model `{other}`")),
        };
        Ok(Contract::new(leak, ExecModel::new(kind)))
    }
}

impl Serialize for Contract {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Contract {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Observation {
    Pc { index: usize },
    Addr { addr: u64, domain: Domain },
    Val { value: u64 },
    Rollback,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObservationTrace(pub Vec<Observation>);

impl ObservationTrace {
    pub fn events(&self) -> &[Observation] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn rollbacks(&self) -> usize {
        self.0.iter().filter(|o| **o == Observation::Rollback).count()
    }

    /// What an attacker distinguishes under `leak`.
    ///
    /// Under `mem` and `shm` the attacker sees memory accesses only, so
    /// rollback markers carry no information and are dropped. Under `ct`
    /// and `arch` they are kept: the pc stream already reveals where the
    /// wrong path ended.
    pub fn view(&self, leak: LeakageModel) -> ObservationTrace {
        match leak {
            LeakageModel::Ct | LeakageModel::Arch => self.clone(),
            LeakageModel::Mem | LeakageModel::Shm => {
                ObservationTrace(self.0.iter().copied().filter(|o| *o != Observation::Rollback).collect())
            }
        }
    }
}

pub type TraceSet = BTreeSet<ObservationTrace>;

/// Attacker views of every trace in a set.
pub fn view_set(set: &TraceSet, leak: LeakageModel) -> TraceSet {
    set.iter().map(|t| t.view(leak)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Prediction {
    Correct,
    Mispredict(usize),
}

/// One prediction per dynamic control-flow instruction on the committed
/// path, in execution order. Missing trailing entries mean `Correct`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PredictorChoice(pub Vec<Prediction>);

impl PredictorChoice {
    pub fn all_correct() -> Self {
        PredictorChoice(Vec::new())
    }

    pub fn get(&self, k: usize) -> Prediction {
        self.0.get(k).copied().unwrap_or(Prediction::Correct)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContractError {
    #[error("prediction {index} is not admissible: {reason}")]
    InconsistentChoice { index: usize, reason: String },
    #[error("trace enumeration exceeds the cap of {0}")]
    EnumerationCapExceeded(usize),
    #[error(transparent)]
    Machine(#[from] MachineError),
}

/// Raw event stream from which every leakage model is a projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum RawEvent {
    Step { pc: usize, mem: Option<MemEvent> },
    Rollback,
}

pub(crate) fn project(leak: LeakageModel, raw: &[RawEvent], out: &mut Vec<Observation>) {
    for ev in raw {
        match *ev {
            RawEvent::Rollback => out.push(Observation::Rollback),
            RawEvent::Step { pc, mem } => {
                if matches!(leak, LeakageModel::Ct | LeakageModel::Arch) {
                    out.push(Observation::Pc { index: pc });
                }
                if let Some(m) = mem {
                    let addr = Observation::Addr { addr: m.addr, domain: m.domain };
                    match leak {
                        LeakageModel::Shm if m.domain != Domain::Shared => {}
                        _ => out.push(addr),
                    }
                    if leak == LeakageModel::Arch && m.kind == AccessKind::Load {
                        out.push(Observation::Val { value: m.value });
                    }
                }
            }
        }
    }
}

/// Store buffer over committed memory for wrong-path execution.
struct Overlay<'a> {
    base: &'a ArchState,
    buffered: BTreeMap<(Domain, u64), u8>,
}

impl MemoryView for Overlay<'_> {
    fn read_byte(&self, domain: Domain, addr: u64) -> u8 {
        match self.buffered.get(&(domain, addr)) {
            Some(v) => *v,
            None => self.base.byte(domain, addr),
        }
    }
}

/// One committed control-flow instruction and its wrong-path alternatives.
#[derive(Debug, Clone)]
pub(crate) struct ChoicePoint {
    /// Position in the committed step sequence.
    pub step: usize,
    pub pc: usize,
    /// Admissible mispredict targets with their wrong-path events
    /// (ending in a rollback).
    pub alternatives: Vec<(usize, Vec<RawEvent>)>,
}

#[derive(Debug, Clone)]
pub(crate) struct CommittedRun {
    pub steps: Vec<RawEvent>,
    pub points: Vec<ChoicePoint>,
    pub final_state: ArchState,
    pub outcome: RunOutcome,
    /// Burst flag in effect when each committed step executed.
    pub burst_flags: Vec<bool>,
}

/// Decides whether a committed control instruction may be mispredicted,
/// given its index and the burst flag at that point.
pub(crate) type Gate<'a> = &'a (dyn Fn(usize, bool) -> bool + Sync);

pub(crate) fn always(_: usize, _: bool) -> bool {
    true
}

fn admissible_targets(program: &Program, exec: ExecKind, pc: usize, actual: usize) -> Vec<usize> {
    let n = program.len();
    let inst = &program.instructions[pc];
    let mut out = Vec::new();
    match exec {
        ExecKind::Seq => {}
        ExecKind::Stl => {
            if actual != pc + 1 && pc + 1 < n {
                out.push(pc + 1);
            }
        }
        ExecKind::Spec => match &inst.op {
            Op::Branch { target, .. } => {
                let taken = target.index().unwrap_or(n);
                for t in [pc + 1, taken] {
                    if t != actual && t < n && !out.contains(&t) {
                        out.push(t);
                    }
                }
            }
            Op::Jal { .. } => {
                if actual != pc + 1 && pc + 1 < n {
                    out.push(pc + 1);
                }
            }
            Op::Jalr { .. } => out.extend((0..n).filter(|t| *t != actual)),
            _ => {}
        },
    }
    out
}

/// Execute at most `depth` wrong-path instructions from `start`.
///
/// Control on the wrong path follows computed outcomes, a burst marker
/// stops it before executing, and a fault squashes it silently.
fn wrong_path(
    program: &Program,
    layout: &MemoryLayout,
    committed: &ArchState,
    start: usize,
    depth: usize,
) -> Vec<RawEvent> {
    let mut regs = *committed.regs();
    let mut mem = Overlay { base: committed, buffered: BTreeMap::new() };
    let mut pc = start;
    let mut events = Vec::new();
    for _ in 0..depth {
        let Some(inst) = program.get(pc) else { break };
        if inst.is_burst_marker() {
            break;
        }
        let Ok(effect) = evaluate(program, pc, &regs, &mem, layout) else { break };
        events.push(RawEvent::Step { pc, mem: effect.mem_event });
        for (r, v) in &effect.reg_writes {
            regs[r.index()] = *v;
        }
        if let Some(ev) = effect.mem_event {
            if ev.kind == AccessKind::Store {
                for k in 0..ev.width {
                    mem.buffered.insert((ev.domain, ev.addr + k), (ev.value >> (8 * k)) as u8);
                }
            }
        }
        pc = effect.next_pc;
    }
    events.push(RawEvent::Rollback);
    events
}

pub(crate) fn committed_run(
    program: &Program,
    state0: &ArchState,
    layout: &MemoryLayout,
    exec: ExecModel,
    fuel: usize,
    gate: Gate<'_>,
) -> Result<CommittedRun, MachineError> {
    let mut state = state0.clone();
    let mut run = CommittedRun {
        steps: Vec::new(),
        points: Vec::new(),
        final_state: ArchState::new(),
        outcome: RunOutcome::Halted,
        burst_flags: Vec::new(),
    };
    let mut flag = false;
    loop {
        if state.halted || state.pc >= program.len() {
            state.halted = true;
            break;
        }
        if run.steps.len() == fuel {
            run.outcome = RunOutcome::FuelExhausted;
            break;
        }
        let pc = state.pc;
        let inst = &program.instructions[pc];
        let effect = evaluate(program, pc, state.regs(), &state, layout)?;
        apply(program, &mut state, &effect);
        run.burst_flags.push(flag);
        let step = run.steps.len();
        run.steps.push(RawEvent::Step { pc, mem: effect.mem_event });
        if inst.is_control() && gate(pc, flag) {
            let alternatives = admissible_targets(program, exec.kind, pc, effect.next_pc)
                .into_iter()
                .map(|t| (t, wrong_path(program, layout, &state, t, exec.spec_depth)))
                .collect();
            run.points.push(ChoicePoint { step, pc, alternatives });
        } else if inst.is_control() {
            run.points.push(ChoicePoint { step, pc, alternatives: Vec::new() });
        }
        if let Op::Csrwi { marker } = inst.op {
            flag = marker == BurstMarker::On;
        }
    }
    run.final_state = state;
    Ok(run)
}

impl CommittedRun {
    /// The trace selected by `choice`.
    pub(crate) fn trace(&self, leak: LeakageModel, exec: ExecKind, choice: &PredictorChoice) -> Result<ObservationTrace, ContractError> {
        if let Some(k) = choice.0.iter().skip(self.points.len()).position(|p| *p != Prediction::Correct) {
            return Err(ContractError::InconsistentChoice {
                index: self.points.len() + k,
                reason: "no such dynamic control-flow instruction".into(),
            });
        }
        let mut segments: BTreeMap<usize, &[RawEvent]> = BTreeMap::new();
        for (k, point) in self.points.iter().enumerate() {
            if let Prediction::Mispredict(t) = choice.get(k) {
                match point.alternatives.iter().find(|(target, _)| *target == t) {
                    Some((_, seg)) => {
                        segments.insert(point.step, seg);
                    }
                    None => {
                        return Err(ContractError::InconsistentChoice {
                            index: k,
                            reason: format!("target {t} is not admissible under {}", exec.name()),
                        })
                    }
                }
            }
        }
        let mut out = Vec::new();
        for (i, ev) in self.steps.iter().enumerate() {
            project(leak, std::slice::from_ref(ev), &mut out);
            if let Some(seg) = segments.get(&i) {
                project(leak, seg, &mut out);
            }
        }
        Ok(ObservationTrace(out))
    }

    /// Every trace reachable by some admissible choice.
    pub(crate) fn trace_set(&self, leak: LeakageModel, cap: usize) -> Result<TraceSet, ContractError> {
        // Projected options per control point, deduplicated.
        let mut options: Vec<(usize, Vec<Vec<Observation>>)> = Vec::new();
        let mut total: usize = 1;
        for point in &self.points {
            if point.alternatives.is_empty() {
                continue;
            }
            let mut set = BTreeSet::new();
            set.insert(Vec::new());
            for (_, seg) in &point.alternatives {
                let mut o = Vec::new();
                project(leak, seg, &mut o);
                set.insert(o);
            }
            total = total.saturating_mul(set.len());
            if total > cap {
                return Err(ContractError::EnumerationCapExceeded(cap));
            }
            options.push((point.step, set.into_iter().collect()));
        }
        let mut chunks: Vec<Vec<Observation>> = Vec::new();
        let mut last = 0;
        for (step, _) in &options {
            let mut c = Vec::new();
            project(leak, &self.steps[last..=*step], &mut c);
            chunks.push(c);
            last = step + 1;
        }
        let mut tail = Vec::new();
        project(leak, &self.steps[last..], &mut tail);

        let mut result = TraceSet::new();
        let mut idx = vec![0usize; options.len()];
        loop {
            let mut t = Vec::new();
            for (k, (_, opts)) in options.iter().enumerate() {
                t.extend_from_slice(&chunks[k]);
                t.extend_from_slice(&opts[idx[k]]);
            }
            t.extend_from_slice(&tail);
            result.insert(ObservationTrace(t));
            // odometer increment
            let mut k = options.len();
            loop {
                if k == 0 {
                    return Ok(result);
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < options[k].1.len() {
                    break;
                }
                idx[k] = 0;
            }
        }
    }
}

/// Trace of one execution under a fixed predictor choice.
pub fn contract_trace(
    program: &Program,
    state0: &ArchState,
    layout: &MemoryLayout,
    contract: Contract,
    choice: &PredictorChoice,
    fuel: usize,
) -> Result<ObservationTrace, ContractError> {
    let run = committed_run(program, state0, layout, contract.exec, fuel, &always)?;
    run.trace(contract.leak, contract.exec.kind, choice)
}

/// All traces over every admissible predictor choice.
pub fn contract_trace_set(
    program: &Program,
    state0: &ArchState,
    layout: &MemoryLayout,
    contract: Contract,
    fuel: usize,
    cap: usize,
) -> Result<TraceSet, ContractError> {
    let run = committed_run(program, state0, layout, contract.exec, fuel, &always)?;
    run.trace_set(contract.leak, cap)
}

/// Final committed state under a predictor choice. Speculation never
/// changes it; exposed so that property can be checked.
pub fn committed_state(
    program: &Program,
    state0: &ArchState,
    layout: &MemoryLayout,
    exec: ExecModel,
    choice: &PredictorChoice,
    fuel: usize,
) -> Result<ArchState, ContractError> {
    let run = committed_run(program, state0, layout, exec, fuel, &always)?;
    run.trace(LeakageModel::Arch, exec.kind, choice)?;
    Ok(run.final_state)
}

/// Number of dynamic control points and the admissible targets at each,
/// for building explicit choices.
pub fn choice_points(
    program: &Program,
    state0: &ArchState,
    layout: &MemoryLayout,
    exec: ExecModel,
    fuel: usize,
) -> Result<Vec<(usize, Vec<usize>)>, ContractError> {
    let run = committed_run(program, state0, layout, exec, fuel, &always)?;
    Ok(run.points.iter().map(|p| (p.pc, p.alternatives.iter().map(|(t, _)| *t).collect())).collect())
}
