//! Static analysis of Burst regions.
//!
//! A region passes when control stays inside it and no secret initial
//! register can reach a transmitter along a straight-line speculative path.
//! The leakage pass walks backwards from every transmitter (load, store,
//! branch) through three kinds of states:
//!
//! * architectural: the transmitter and everything before it commit;
//! * wrong path: the transmitter runs after a mispredicted fall-through,
//!   at most `spec_depth` instructions past the divergence;
//! * prefix: the walk has crossed the divergence and is back on the
//!   committed path leading to it.
//!
//! Registers still leaked when a prefix walk reaches the `BURST_ON` marker
//! are initial values the region can expose speculatively.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::fmt::{self, Write as _};

use serde::Serialize;
use thiserror::Error;

use crate::asm::{AluOp, BranchCond, BurstRegion, ImmOp, Instruction, Op, Program, Reg};
use crate::contract::DEFAULT_SPEC_DEPTH;
use crate::machine::{Domain, MemoryLayout};
use crate::ni::Policy;

pub const DEFAULT_NODE_CAP: usize = 10_000;

/// Which non-speculative accesses count as revealing their base register.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Declassify {
    /// Only accesses whose address is statically known to be shared. An
    /// access to private memory is invisible to a shared-memory attacker
    /// and reveals nothing.
    SharedOnly,
    /// Every non-speculative load or store.
    AnyAccess,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StaConfig {
    pub spec_depth: usize,
    pub node_cap: usize,
    pub declassify: Declassify,
}

impl Default for StaConfig {
    fn default() -> Self {
        StaConfig { spec_depth: DEFAULT_SPEC_DEPTH, node_cap: DEFAULT_NODE_CAP, declassify: Declassify::SharedOnly }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ContainmentIssue {
    IndirectBranch,
    TargetOutside,
    UnmatchedMarkers,
}

impl fmt::Display for ContainmentIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContainmentIssue::IndirectBranch => "indirect branch",
            ContainmentIssue::TargetOutside => "target outside snippet",
            ContainmentIssue::UnmatchedMarkers => "unmatched markers",
        })
    }
}

/// Why a speculative path is wrong: the divergence instruction's committed
/// outcome differs from the fall-through that was speculated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PathCondition {
    pub branch: usize,
    pub line: usize,
    /// e.g. `branch at line 3 taken`.
    pub outcome: String,
    /// Value-level reading in terms of initial registers, when derivable.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
}

impl fmt::Display for PathCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.outcome)?;
        if let Some(v) = &self.value {
            write!(f, " ({v})")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NotSelfContained { reason: ContainmentIssue, index: usize, line: usize },
    SecretLeak { register: Reg, transmitter: usize, transmitter_line: usize, divergence: usize, condition: PathCondition },
    MemoryDependentLeak { transmitter: usize, transmitter_line: usize, load: usize, load_line: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PathStep {
    pub index: usize,
    pub line: usize,
    pub speculative: bool,
}

/// An initial register value that reaches a transmitter speculatively.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LeakedRegister {
    pub register: Reg,
    pub secret: bool,
    pub transmitter: usize,
    pub divergence: usize,
    pub condition: PathCondition,
    /// From the region entry to the transmitter.
    pub path: Vec<PathStep>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AnalysisReport {
    pub verdict: Verdict,
    pub violations: Vec<Violation>,
    pub leaked_initial_registers: Vec<LeakedRegister>,
    /// Backward search states expanded.
    pub explored_paths: usize,
    #[serde(serialize_with = "hex_digest")]
    pub program_digest: u64,
    #[serde(skip)]
    pub(crate) names: BTreeMap<Reg, String>,
    #[serde(skip)]
    pub(crate) lines: Vec<(usize, String)>,
}

fn hex_digest<S: serde::Serializer>(d: &u64, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(&format_args!("{d:016x}"))
}

impl AnalysisReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    /// Leaked registers, deduplicated, in register order.
    pub fn leaked_set(&self) -> BTreeSet<Reg> {
        self.leaked_initial_registers.iter().map(|l| l.register).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StaError {
    #[error("backward exploration exceeded {0} states")]
    PathExplosion(usize),
}

/// Self-containment of one region.
pub fn check_self_contained(program: &Program, region: BurstRegion) -> Vec<Violation> {
    let mut out = Vec::new();
    for i in region.on + 1..region.off {
        let inst = &program.instructions[i];
        let issue = match &inst.op {
            Op::Jalr { .. } => Some(ContainmentIssue::IndirectBranch),
            Op::Branch { target, .. } | Op::Jal { target, .. } => match target.index() {
                Some(t) if t > region.on && t <= region.off => None,
                _ => Some(ContainmentIssue::TargetOutside),
            },
            Op::Csrwi { .. } => Some(ContainmentIssue::UnmatchedMarkers),
            _ => None,
        };
        if let Some(reason) = issue {
            out.push(Violation::NotSelfContained { reason, index: i, line: inst.line });
        }
    }
    out
}

fn unmatched_markers(program: &Program) -> Vec<Violation> {
    let paired: BTreeSet<usize> = program.burst_regions.iter().flat_map(|r| [r.on, r.off]).collect();
    program
        .instructions
        .iter()
        .enumerate()
        .filter(|(i, inst)| inst.is_burst_marker() && !paired.contains(i))
        .map(|(i, inst)| Violation::NotSelfContained { reason: ContainmentIssue::UnmatchedMarkers, index: i, line: inst.line })
        .collect()
}

// ---------------------------------------------------------------------------
// Linear facts: register values as linear forms over the region-entry values.

#[derive(Debug, Clone, PartialEq, Eq)]
struct Linear {
    terms: BTreeMap<Reg, i64>,
    c: i64,
}

impl Linear {
    fn constant(c: i64) -> Self {
        Linear { terms: BTreeMap::new(), c }
    }

    fn var(r: Reg) -> Self {
        Linear { terms: BTreeMap::from([(r, 1)]), c: 0 }
    }

    fn combine(&self, other: &Linear, sign: i64) -> Linear {
        let mut terms = self.terms.clone();
        for (r, k) in &other.terms {
            let e = terms.entry(*r).or_insert(0);
            *e = e.wrapping_add(sign.wrapping_mul(*k));
            if *e == 0 {
                terms.remove(r);
            }
        }
        Linear { terms, c: self.c.wrapping_add(sign.wrapping_mul(other.c)) }
    }

    fn as_const(&self) -> Option<i64> {
        self.terms.is_empty().then_some(self.c)
    }
}

type Facts = [Option<Linear>; 32];

fn entry_facts() -> Facts {
    std::array::from_fn(|i| {
        let r = Reg::new(i as u8).unwrap();
        Some(if r.is_zero() { Linear::constant(0) } else { Linear::var(r) })
    })
}

fn transfer_facts(inst: &Instruction, index: usize, facts: &mut Facts) {
    let get = |f: &Facts, r: Reg| f[r.index()].clone();
    let value = match &inst.op {
        Op::Alu { op, rs1, rs2, .. } => match (op, get(facts, *rs1), get(facts, *rs2)) {
            (AluOp::Add, Some(a), Some(b)) => Some(a.combine(&b, 1)),
            (AluOp::Sub, Some(a), Some(b)) => Some(a.combine(&b, -1)),
            (_, Some(a), Some(b)) => match (a.as_const(), b.as_const(), op) {
                (Some(x), Some(y), AluOp::And) => Some(Linear::constant(x & y)),
                (Some(x), Some(y), AluOp::Or) => Some(Linear::constant(x | y)),
                (Some(x), Some(y), AluOp::Xor) => Some(Linear::constant(x ^ y)),
                _ => None,
            },
            _ => None,
        },
        Op::AluImm { op, rs1, imm, .. } => match (op, get(facts, *rs1)) {
            (ImmOp::Add, Some(a)) => Some(a.combine(&Linear::constant(*imm), 1)),
            (ImmOp::Sll, Some(a)) => a.as_const().map(|x| Linear::constant(((x as u64) << (*imm as u32 & 63)) as i64)),
            (ImmOp::Srl, Some(a)) => a.as_const().map(|x| Linear::constant(((x as u64) >> (*imm as u32 & 63)) as i64)),
            _ => None,
        },
        Op::Li { imm, .. } => Some(Linear::constant(*imm)),
        Op::Mv { rs, .. } => get(facts, *rs),
        Op::Jal { .. } | Op::Jalr { .. } => {
            Some(Linear::constant((crate::machine::TEXT_BASE + 4 * (index as u64 + 1)) as i64))
        }
        _ => None,
    };
    if let Some(rd) = inst.dest_reg() {
        facts[rd.index()] = value;
    }
}

/// Successors of `i` along committed control flow, restricted to `(on, off)`.
fn successors(program: &Program, region: BurstRegion, i: usize) -> Vec<usize> {
    let inst = &program.instructions[i];
    let mut out = Vec::new();
    match &inst.op {
        Op::Branch { target, .. } => {
            out.push(i + 1);
            if let Some(t) = target.index() {
                out.push(t);
            }
        }
        Op::Jal { target, .. } => out.extend(target.index()),
        Op::Jalr { .. } => {}
        _ => out.push(i + 1),
    }
    out.retain(|s| region.contains(*s));
    out.dedup();
    out
}

/// Input facts per interior index.
fn region_facts(program: &Program, region: BurstRegion) -> BTreeMap<usize, Facts> {
    let mut facts: BTreeMap<usize, Facts> = BTreeMap::new();
    let mut work = VecDeque::new();
    if region.contains(region.on + 1) {
        facts.insert(region.on + 1, entry_facts());
        work.push_back(region.on + 1);
    }
    while let Some(i) = work.pop_front() {
        let mut out = facts[&i].clone();
        transfer_facts(&program.instructions[i], i, &mut out);
        for s in successors(program, region, i) {
            let changed = match facts.get_mut(&s) {
                None => {
                    facts.insert(s, out.clone());
                    true
                }
                Some(cur) => {
                    let mut changed = false;
                    for k in 0..32 {
                        if cur[k].is_some() && cur[k] != out[k] {
                            cur[k] = None;
                            changed = true;
                        }
                    }
                    changed
                }
            };
            if changed {
                work.push_back(s);
            }
        }
    }
    facts
}

fn render_side(terms: &[(Reg, i64)], c: i64, names: &BTreeMap<Reg, String>) -> String {
    let mut parts: Vec<String> = terms
        .iter()
        .map(|(r, k)| {
            let n = names.get(r).cloned().unwrap_or_else(|| r.name().to_string());
            if *k == 1 { n } else { format!("{k}*{n}") }
        })
        .collect();
    if c != 0 || parts.is_empty() {
        parts.push(c.to_string());
    }
    parts.join(" + ")
}

/// Value reading of "the branch is taken", in terms of entry values.
fn taken_condition(cond: BranchCond, a: &Linear, b: &Linear, names: &BTreeMap<Reg, String>) -> Option<String> {
    let d = a.combine(b, -1);
    let pos: Vec<(Reg, i64)> = d.terms.iter().filter(|(_, k)| **k > 0).map(|(r, k)| (*r, *k)).collect();
    let neg: Vec<(Reg, i64)> = d.terms.iter().filter(|(_, k)| **k < 0).map(|(r, k)| (*r, -*k)).collect();
    let (pc, nc) = if d.c >= 0 { (d.c, 0) } else { (0, d.c.wrapping_neg()) };
    let lhs = render_side(&pos, pc, names);
    let rhs = render_side(&neg, nc, names);
    let zero_l = pos.is_empty() && pc == 0;
    let zero_r = neg.is_empty() && nc == 0;
    Some(match cond {
        BranchCond::Eq => format!("{lhs} == {rhs}"),
        BranchCond::Ne => format!("{lhs} != {rhs}"),
        BranchCond::Lt => format!("{lhs} < {rhs}"),
        // unsigned, read without wrap-around
        BranchCond::Geu if zero_r => "always".to_string(),
        BranchCond::Geu if zero_l => format!("{rhs} == 0"),
        BranchCond::Geu => format!("{lhs} >= {rhs}"),
    })
}

fn divergence_condition(
    program: &Program,
    d: usize,
    facts: &BTreeMap<usize, Facts>,
    names: &BTreeMap<Reg, String>,
) -> PathCondition {
    let inst = &program.instructions[d];
    let line = inst.line;
    match &inst.op {
        Op::Branch { cond, rs1, rs2, .. } => {
            let value = facts.get(&d).and_then(|f| match (&f[rs1.index()], &f[rs2.index()]) {
                (Some(a), Some(b)) => taken_condition(*cond, a, b, names),
                _ => None,
            });
            PathCondition { branch: d, line, outcome: format!("branch at line {line} taken"), value }
        }
        _ => PathCondition { branch: d, line, outcome: format!("jump at line {line} (always)"), value: None },
    }
}

// ---------------------------------------------------------------------------
// Backward search.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Phase {
    Arch,
    /// On the wrong path; the count includes the current instruction.
    Spec(usize),
    Prefix(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct Node {
    pos: usize,
    leaked: u32,
    declassified: u32,
    phase: Phase,
}

fn bit(r: Reg) -> u32 {
    if r.is_zero() { 0 } else { 1 << r.index() }
}

fn regs_of(mask: u32) -> impl Iterator<Item = Reg> {
    (1..32u8).filter(move |i| mask & (1 << i) != 0).map(|i| Reg::new(i).unwrap())
}

/// Registers whose values a transmitter exposes.
fn transmitted(inst: &Instruction) -> Option<u32> {
    match &inst.op {
        Op::Load { base, .. } | Op::Store { base, .. } => Some(bit(*base)),
        Op::Branch { rs1, rs2, .. } => Some(bit(*rs1) | bit(*rs2)),
        _ => None,
    }
}

fn sources(inst: &Instruction) -> u32 {
    match &inst.op {
        Op::Alu { rs1, rs2, .. } => bit(*rs1) | bit(*rs2),
        Op::AluImm { rs1, .. } => bit(*rs1),
        Op::Mv { rs, .. } => bit(*rs),
        Op::Load { base, .. } => bit(*base),
        _ => 0,
    }
}

struct Search<'a> {
    program: &'a Program,
    region: BurstRegion,
    layout: &'a MemoryLayout,
    config: StaConfig,
    facts: BTreeMap<usize, Facts>,
    /// Interior predecessors of each interior index.
    preds: BTreeMap<usize, Vec<usize>>,
}

enum Found {
    Entry { node: usize, leaked: u32, divergence: usize },
    MemDep { load: usize },
}

/// Visited nodes with their parent links, and what was found.
type Expansion = (Vec<(Node, Option<usize>)>, Vec<Found>);

impl Search<'_> {
    fn base_is_shared(&self, p: usize) -> bool {
        let inst = &self.program.instructions[p];
        let (base, offset, width) = match &inst.op {
            Op::Load { base, offset, width, .. } | Op::Store { base, offset, width, .. } => (*base, *offset, *width),
            _ => return false,
        };
        let Some(Some(lin)) = self.facts.get(&p).map(|f| f[base.index()].clone()) else { return false };
        let Some(c) = lin.as_const() else { return false };
        let addr = (c as u64).wrapping_add(offset as u64);
        self.layout.classify_access(addr, width.bytes()) == Some(Domain::Shared)
    }

    /// Backward transfer through instruction `p`. Returns the new masks and
    /// whether a load defined a leaked register.
    fn transfer(&self, p: usize, leaked: u32, declassified: u32, architectural: bool) -> (u32, u32, bool) {
        let inst = &self.program.instructions[p];
        let (mut l, mut d) = (leaked, declassified);
        let mut memdep = false;
        if let Some(rd) = inst.dest_reg() {
            let b = bit(rd);
            d &= !b;
            if l & b != 0 {
                l &= !b;
                if matches!(inst.op, Op::Load { .. }) {
                    memdep = true;
                }
                l |= sources(inst) & !d;
            }
        }
        if architectural && inst.is_memory() {
            let reveals = match self.config.declassify {
                Declassify::AnyAccess => true,
                Declassify::SharedOnly => self.base_is_shared(p),
            };
            if reveals {
                if let Op::Load { base, .. } | Op::Store { base, .. } = inst.op {
                    d |= bit(base);
                    l &= !bit(base);
                }
            }
        }
        (l, d, memdep)
    }

    /// `d` can be mispredicted into falling through to `d + 1`.
    fn can_diverge(&self, d: usize) -> bool {
        if !self.region.contains(d) {
            return false;
        }
        match &self.program.instructions[d].op {
            Op::Branch { target, .. } | Op::Jal { target, .. } => target.index() != Some(d + 1),
            _ => false,
        }
    }

    fn run(&self, transmitter: usize, budget: &mut usize, explored: &mut usize) -> Result<Expansion, StaError> {
        let start = transmitted(&self.program.instructions[transmitter]).unwrap_or(0);
        let mut nodes: Vec<(Node, Option<usize>)> = Vec::new();
        let mut seen: HashSet<Node> = HashSet::new();
        let mut queue = VecDeque::new();
        let mut found = Vec::new();
        let mut push = |n: Node, parent: Option<usize>, nodes: &mut Vec<(Node, Option<usize>)>, queue: &mut VecDeque<usize>| -> Result<(), StaError> {
            if seen.insert(n) {
                if *budget == 0 {
                    return Err(StaError::PathExplosion(self.config.node_cap));
                }
                *budget -= 1;
                nodes.push((n, parent));
                queue.push_back(nodes.len() - 1);
            }
            Ok(())
        };
        if start == 0 {
            return Ok((nodes, found));
        }
        push(Node { pos: transmitter, leaked: start, declassified: 0, phase: Phase::Arch }, None, &mut nodes, &mut queue)?;
        if self.config.spec_depth > 0 {
            push(Node { pos: transmitter, leaked: start, declassified: 0, phase: Phase::Spec(1) }, None, &mut nodes, &mut queue)?;
        }
        let empty = Vec::new();
        while let Some(id) = queue.pop_front() {
            *explored += 1;
            let node = nodes[id].0;
            if node.leaked == 0 {
                continue;
            }
            let q = node.pos;
            match node.phase {
                Phase::Arch | Phase::Prefix(_) => {
                    if q == self.region.on + 1 {
                        if let Phase::Prefix(d) = node.phase {
                            found.push(Found::Entry { node: id, leaked: node.leaked, divergence: d });
                        }
                    }
                    for &p in self.preds.get(&q).unwrap_or(&empty) {
                        let (l, d, memdep) = self.transfer(p, node.leaked, node.declassified, true);
                        if memdep {
                            found.push(Found::MemDep { load: p });
                        }
                        push(Node { pos: p, leaked: l, declassified: d, phase: node.phase }, Some(id), &mut nodes, &mut queue)?;
                    }
                }
                Phase::Spec(k) => {
                    if q >= 1 && self.can_diverge(q - 1) {
                        let dv = q - 1;
                        let (mut l, d, _) = self.transfer(dv, node.leaked, node.declassified, false);
                        // whether the wrong path runs at all depends on the
                        // divergence operands
                        if let Op::Branch { rs1, rs2, .. } = self.program.instructions[dv].op {
                            l |= (bit(rs1) | bit(rs2)) & !d;
                        }
                        push(Node { pos: dv, leaked: l, declassified: d, phase: Phase::Prefix(dv) }, Some(id), &mut nodes, &mut queue)?;
                    }
                    if k < self.config.spec_depth {
                        for &p in self.preds.get(&q).unwrap_or(&empty) {
                            let (l, d, memdep) = self.transfer(p, node.leaked, node.declassified, false);
                            if memdep {
                                found.push(Found::MemDep { load: p });
                            }
                            push(Node { pos: p, leaked: l, declassified: d, phase: Phase::Spec(k + 1) }, Some(id), &mut nodes, &mut queue)?;
                        }
                    }
                }
            }
        }
        Ok((nodes, found))
    }
}

fn path_of(program: &Program, region: BurstRegion, nodes: &[(Node, Option<usize>)], mut id: usize) -> Vec<PathStep> {
    let mut steps = vec![PathStep { index: region.on, line: program.line_of(region.on), speculative: false }];
    loop {
        let (n, parent) = nodes[id];
        steps.push(PathStep { index: n.pos, line: program.line_of(n.pos), speculative: matches!(n.phase, Phase::Spec(_)) });
        match parent {
            Some(p) => id = p,
            None => return steps,
        }
    }
}

/// Analyze every Burst region of `program` with the default configuration.
pub fn analyze(program: &Program, policy: &Policy, layout: &MemoryLayout) -> Result<AnalysisReport, StaError> {
    analyze_with(program, policy, layout, StaConfig::default())
}

pub fn analyze_with(program: &Program, policy: &Policy, layout: &MemoryLayout, config: StaConfig) -> Result<AnalysisReport, StaError> {
    let mut violations = unmatched_markers(program);
    let mut leaked = Vec::new();
    let mut explored = 0;
    let mut budget = config.node_cap;
    let mut seen_leaks = BTreeSet::new();
    let mut seen_memdep = BTreeSet::new();

    for &region in &program.burst_regions {
        let contained = check_self_contained(program, region);
        if !contained.is_empty() {
            violations.extend(contained);
            continue;
        }
        let mut preds: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for p in region.on + 1..region.off {
            for s in successors(program, region, p) {
                preds.entry(s).or_default().push(p);
            }
        }
        let search = Search { program, region, layout, config, facts: region_facts(program, region), preds };
        for t in region.on + 1..region.off {
            let inst = &program.instructions[t];
            if transmitted(inst).is_none() {
                continue;
            }
            let (nodes, found) = search.run(t, &mut budget, &mut explored)?;
            for f in found {
                match f {
                    Found::MemDep { load } => {
                        if seen_memdep.insert((t, load)) {
                            violations.push(Violation::MemoryDependentLeak {
                                transmitter: t,
                                transmitter_line: inst.line,
                                load,
                                load_line: program.line_of(load),
                            });
                        }
                    }
                    Found::Entry { node, leaked: mask, divergence } => {
                        for r in regs_of(mask) {
                            if !seen_leaks.insert((r, t, divergence)) {
                                continue;
                            }
                            let condition = divergence_condition(program, divergence, &search.facts, &policy.names);
                            let secret = policy.is_secret_reg(r);
                            if secret {
                                violations.push(Violation::SecretLeak {
                                    register: r,
                                    transmitter: t,
                                    transmitter_line: inst.line,
                                    divergence,
                                    condition: condition.clone(),
                                });
                            }
                            leaked.push(LeakedRegister {
                                register: r,
                                secret,
                                transmitter: t,
                                divergence,
                                condition,
                                path: path_of(program, region, &nodes, node),
                            });
                        }
                    }
                }
            }
        }
    }
    let verdict = if violations.is_empty() { Verdict::Pass } else { Verdict::Fail };
    Ok(AnalysisReport {
        verdict,
        violations,
        leaked_initial_registers: leaked,
        explored_paths: explored,
        program_digest: program.digest(),
        names: policy.names.clone(),
        lines: program.instructions.iter().map(|i| (i.line, i.to_string())).collect(),
    })
}

/// Human-readable account of a report.
pub fn explain(report: &AnalysisReport) -> String {
    let mut out = String::new();
    if report.violations.is_empty() {
        out.push_str("no violations\n");
        return out;
    }
    let name = |r: Reg| report.names.get(&r).map(|n| format!("{} ({n})", r.name())).unwrap_or_else(|| r.name().to_string());
    let text = |i: usize| report.lines.get(i).map(|(_, t)| t.as_str()).unwrap_or("?");
    for v in &report.violations {
        match v {
            Violation::NotSelfContained { reason, line, index } => {
                let _ = writeln!(out, "line {line}: region is not self-contained: {reason} (`{}`)", text(*index));
            }
            Violation::MemoryDependentLeak { transmitter_line, load_line, transmitter, load } => {
                let _ = writeln!(
                    out,
                    "line {transmitter_line}: `{}` transmits a value loaded at line {load_line} (`{}`); memory-dependent leak, rejected conservatively",
                    text(*transmitter),
                    text(*load)
                );
            }
            Violation::SecretLeak { register, transmitter_line, condition, .. } => {
                let _ = writeln!(
                    out,
                    "line {transmitter_line}: initial {} leaks speculatively past line {}; the path is wrong when {condition}",
                    name(*register),
                    condition.line
                );
            }
        }
    }
    let mut shown = BTreeSet::new();
    for l in &report.leaked_initial_registers {
        if !l.secret || !shown.insert((l.transmitter, l.divergence)) {
            continue;
        }
        let _ = writeln!(out, "\nspeculative path to line {}:", report.lines.get(l.transmitter).map(|x| x.0).unwrap_or(0));
        for s in &l.path {
            let mark = if s.index == l.divergence {
                "  <- divergence"
            } else if s.speculative {
                "  (wrong path)"
            } else {
                ""
            };
            let _ = writeln!(out, "  {:>3}: {}{mark}", s.line, text(s.index));
        }
    }
    out
}
