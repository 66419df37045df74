//! Architectural state and the sequential step function.
//!
//! Every execution model in [`crate::contract`] is built from [`evaluate`]: it
//! computes what one instruction would do against a read-only view of
//! registers and memory, and the caller decides whether to commit the result
//! or keep it on a discarded wrong path.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asm::{AluOp, Dest, ImmOp, Instruction, Op, Program, Reg, Width};

/// Code addresses handed out as link values: instruction `i` lives at
/// `TEXT_BASE + 4 * i`. Outside both data ranges by construction.
pub const TEXT_BASE: u64 = 0x1_0000;

/// Half-open address interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AddrRange {
    pub start: u64,
    pub end: u64,
}

impl AddrRange {
    pub const fn new(start: u64, end: u64) -> Self {
        AddrRange { start, end }
    }

    pub fn contains(&self, addr: u64) -> bool {
        self.start <= addr && addr < self.end
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }

    fn overlaps(&self, other: &AddrRange) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Private,
    Shared,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Private => "private",
            Domain::Shared => "shared",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LayoutError {
    #[error("memory range [{0:#x}, {1:#x}) is empty")]
    EmptyRange(u64, u64),
    #[error("private and shared ranges overlap")]
    Overlap,
}

/// Private and shared address ranges. The domain of an address is decided
/// from the address alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawLayout")]
pub struct MemoryLayout {
    private: AddrRange,
    shared: AddrRange,
}

#[derive(Deserialize)]
struct RawLayout {
    private: AddrRange,
    shared: AddrRange,
}

impl TryFrom<RawLayout> for MemoryLayout {
    type Error = LayoutError;
    fn try_from(raw: RawLayout) -> Result<Self, LayoutError> {
        MemoryLayout::new(raw.private, raw.shared)
    }
}

impl Default for MemoryLayout {
    fn default() -> Self {
        MemoryLayout {
            private: AddrRange::new(0x1000, 0x2000),
            shared: AddrRange::new(0x8000, 0x9000),
        }
    }
}

impl MemoryLayout {
    pub fn new(private: AddrRange, shared: AddrRange) -> Result<Self, LayoutError> {
        for r in [private, shared] {
            if r.is_empty() {
                return Err(LayoutError::EmptyRange(r.start, r.end));
            }
        }
        if private.overlaps(&shared) {
            return Err(LayoutError::Overlap);
        }
        Ok(MemoryLayout { private, shared })
    }

    pub fn private(&self) -> AddrRange {
        self.private
    }

    pub fn shared(&self) -> AddrRange {
        self.shared
    }

    pub fn classify(&self, addr: u64) -> Option<Domain> {
        if self.private.contains(addr) {
            Some(Domain::Private)
        } else if self.shared.contains(addr) {
            Some(Domain::Shared)
        } else {
            None
        }
    }

    /// Domain of a naturally aligned access of `len` bytes, or `None` if any
    /// byte falls outside the access's range or the access is misaligned.
    pub fn classify_access(&self, addr: u64, len: u64) -> Option<Domain> {
        if !addr.is_multiple_of(len) {
            return None;
        }
        let last = addr.checked_add(len - 1)?;
        let d = self.classify(addr)?;
        (self.classify(last) == Some(d)).then_some(d)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MachineError {
    #[error("access to {0:#x} is outside both memory ranges or misaligned")]
    OutOfRangeAccess(u64),
    #[error("pc {0} is not a valid instruction index")]
    InvalidPc(usize),
}

/// Read access to byte-addressed memory, split by domain.
pub trait MemoryView {
    fn read_byte(&self, domain: Domain, addr: u64) -> u8;
}

/// Architectural state: pc, registers and the two memories.
///
/// Memories are total maps defaulting to zero; only non-zero bytes are
/// stored, so two states are equal iff they agree everywhere.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ArchState {
    pub pc: usize,
    regs: [u64; 32],
    private_mem: BTreeMap<u64, u8>,
    shared_mem: BTreeMap<u64, u8>,
    pub halted: bool,
}

impl ArchState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reg(&self, r: Reg) -> u64 {
        self.regs[r.index()]
    }

    /// Writes to `x0` are dropped.
    pub fn set_reg(&mut self, r: Reg, value: u64) {
        if !r.is_zero() {
            self.regs[r.index()] = value;
        }
    }

    pub fn regs(&self) -> &[u64; 32] {
        &self.regs
    }

    fn mem(&self, domain: Domain) -> &BTreeMap<u64, u8> {
        match domain {
            Domain::Private => &self.private_mem,
            Domain::Shared => &self.shared_mem,
        }
    }

    fn mem_mut(&mut self, domain: Domain) -> &mut BTreeMap<u64, u8> {
        match domain {
            Domain::Private => &mut self.private_mem,
            Domain::Shared => &mut self.shared_mem,
        }
    }

    pub fn byte(&self, domain: Domain, addr: u64) -> u8 {
        self.mem(domain).get(&addr).copied().unwrap_or(0)
    }

    pub fn set_byte(&mut self, domain: Domain, addr: u64, value: u8) {
        let mem = self.mem_mut(domain);
        if value == 0 {
            mem.remove(&addr);
        } else {
            mem.insert(addr, value);
        }
    }

    /// Store a byte at `addr`, routing it by `layout`.
    pub fn poke(&mut self, layout: &MemoryLayout, addr: u64, value: u8) -> Result<(), MachineError> {
        let d = layout.classify(addr).ok_or(MachineError::OutOfRangeAccess(addr))?;
        self.set_byte(d, addr, value);
        Ok(())
    }

    pub fn peek(&self, layout: &MemoryLayout, addr: u64) -> Result<u8, MachineError> {
        let d = layout.classify(addr).ok_or(MachineError::OutOfRangeAccess(addr))?;
        Ok(self.byte(d, addr))
    }

    /// Write a little-endian value of `width` bytes.
    pub fn poke_wide(&mut self, layout: &MemoryLayout, addr: u64, width: Width, value: u64) -> Result<(), MachineError> {
        for k in 0..width.bytes() {
            self.poke(layout, addr + k, (value >> (8 * k)) as u8)?;
        }
        Ok(())
    }

    pub fn memory(&self, domain: Domain) -> impl Iterator<Item = (u64, u8)> + '_ {
        self.mem(domain).iter().map(|(a, v)| (*a, *v))
    }

    /// Every stored address lies in its declared range.
    pub fn respects(&self, layout: &MemoryLayout) -> bool {
        self.private_mem.keys().all(|a| layout.classify(*a) == Some(Domain::Private))
            && self.shared_mem.keys().all(|a| layout.classify(*a) == Some(Domain::Shared))
    }
}

impl MemoryView for ArchState {
    fn read_byte(&self, domain: Domain, addr: u64) -> u8 {
        self.byte(domain, addr)
    }
}

#[derive(Serialize, Deserialize)]
struct StateJson {
    #[serde(default)]
    pc: usize,
    #[serde(default)]
    regs: BTreeMap<String, u64>,
    #[serde(default)]
    private_mem: BTreeMap<String, u8>,
    #[serde(default)]
    shared_mem: BTreeMap<String, u8>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    halted: bool,
}

fn parse_addr(s: &str) -> Result<u64, String> {
    let r = match s.strip_prefix("0x") {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => s.parse(),
    };
    r.map_err(|_| format!("bad address `{s}`"))
}

impl Serialize for ArchState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let hex = |m: &BTreeMap<u64, u8>| m.iter().map(|(a, v)| (format!("{a:#x}"), *v)).collect();
        StateJson {
            pc: self.pc,
            regs: Reg::all()
                .filter(|r| self.reg(*r) != 0)
                .map(|r| (r.name().to_string(), self.reg(r)))
                .collect(),
            private_mem: hex(&self.private_mem),
            shared_mem: hex(&self.shared_mem),
            halted: self.halted,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ArchState {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let raw = StateJson::deserialize(d)?;
        let mut st = ArchState { pc: raw.pc, halted: raw.halted, ..ArchState::default() };
        for (name, v) in raw.regs {
            let r = Reg::parse(&name).ok_or_else(|| D::Error::custom(format!("unknown register `{name}`")))?;
            st.set_reg(r, v);
        }
        for (a, v) in raw.private_mem {
            st.set_byte(Domain::Private, parse_addr(&a).map_err(D::Error::custom)?, v);
        }
        for (a, v) in raw.shared_mem {
            st.set_byte(Domain::Shared, parse_addr(&a).map_err(D::Error::custom)?, v);
        }
        Ok(st)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessKind {
    Load,
    Store,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct MemEvent {
    pub kind: AccessKind,
    pub addr: u64,
    pub width: u64,
    pub domain: Domain,
    /// Loaded value, or the value being stored.
    pub value: u64,
}

/// What one instruction does. Applying it is left to the caller.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepEffect {
    pub next_pc: usize,
    pub mem_event: Option<MemEvent>,
    pub reg_writes: Vec<(Reg, u64)>,
}

fn link_value(pc: usize) -> u64 {
    TEXT_BASE + 4 * (pc as u64 + 1)
}

/// Instruction index for an indirect jump to `addr`; anything outside the
/// text image leaves the program.
fn code_index(program: &Program, addr: u64) -> usize {
    let addr = addr & !1;
    if addr >= TEXT_BASE && (addr - TEXT_BASE).is_multiple_of(4) {
        let idx = ((addr - TEXT_BASE) / 4) as usize;
        if idx < program.len() {
            return idx;
        }
    }
    program.len()
}

fn read_wide(mem: &impl MemoryView, domain: Domain, addr: u64, width: Width) -> u64 {
    let mut v = 0u64;
    for k in 0..width.bytes() {
        v |= (mem.read_byte(domain, addr + k) as u64) << (8 * k);
    }
    match width {
        Width::Word => v as u32 as i32 as i64 as u64,
        _ => v,
    }
}

/// Compute the effect of the instruction at `pc` without modifying anything.
pub fn evaluate(
    program: &Program,
    pc: usize,
    regs: &[u64; 32],
    mem: &impl MemoryView,
    layout: &MemoryLayout,
) -> Result<StepEffect, MachineError> {
    let inst: &Instruction = program.get(pc).ok_or(MachineError::InvalidPc(pc))?;
    let r = |reg: Reg| regs[reg.index()];
    let mut effect = StepEffect { next_pc: pc + 1, mem_event: None, reg_writes: Vec::new() };
    let write = |reg: Reg, v: u64, e: &mut StepEffect| {
        if !reg.is_zero() {
            e.reg_writes.push((reg, v));
        }
    };
    match &inst.op {
        Op::Load { width, rd, base, offset } => {
            let addr = r(*base).wrapping_add(*offset as u64);
            let domain = layout.classify_access(addr, width.bytes()).ok_or(MachineError::OutOfRangeAccess(addr))?;
            let value = read_wide(mem, domain, addr, *width);
            effect.mem_event = Some(MemEvent { kind: AccessKind::Load, addr, width: width.bytes(), domain, value });
            write(*rd, value, &mut effect);
        }
        Op::Store { width, src, base, offset } => {
            let addr = r(*base).wrapping_add(*offset as u64);
            let domain = layout.classify_access(addr, width.bytes()).ok_or(MachineError::OutOfRangeAccess(addr))?;
            let bits = 8 * width.bytes();
            let value = if bits == 64 { r(*src) } else { r(*src) & ((1u64 << bits) - 1) };
            effect.mem_event = Some(MemEvent { kind: AccessKind::Store, addr, width: width.bytes(), domain, value });
        }
        Op::Alu { op, rd, rs1, rs2 } => {
            let (a, b) = (r(*rs1), r(*rs2));
            let v = match op {
                AluOp::Add => a.wrapping_add(b),
                AluOp::Sub => a.wrapping_sub(b),
                AluOp::And => a & b,
                AluOp::Or => a | b,
                AluOp::Xor => a ^ b,
            };
            write(*rd, v, &mut effect);
        }
        Op::AluImm { op, rd, rs1, imm } => {
            let a = r(*rs1);
            let v = match op {
                ImmOp::Add => a.wrapping_add(*imm as u64),
                ImmOp::Sll => a << (*imm as u32 & 63),
                ImmOp::Srl => a >> (*imm as u32 & 63),
            };
            write(*rd, v, &mut effect);
        }
        Op::Li { rd, imm } => write(*rd, *imm as u64, &mut effect),
        Op::Mv { rd, rs } => write(*rd, r(*rs), &mut effect),
        Op::Branch { cond, rs1, rs2, target } => {
            if cond.holds(r(*rs1), r(*rs2)) {
                effect.next_pc = resolve(program, &target.dest);
            }
        }
        Op::Jal { rd, target } => {
            write(*rd, link_value(pc), &mut effect);
            effect.next_pc = resolve(program, &target.dest);
        }
        Op::Jalr { rd, base, offset } => {
            let dest = r(*base).wrapping_add(*offset as u64);
            write(*rd, link_value(pc), &mut effect);
            effect.next_pc = code_index(program, dest);
        }
        Op::Csrwi { .. } => {}
    }
    Ok(effect)
}

fn resolve(program: &Program, dest: &Dest) -> usize {
    match dest {
        Dest::Index(i) => *i,
        Dest::External => program.len(),
    }
}

/// Commit an effect to `state`.
pub fn apply(program: &Program, state: &mut ArchState, effect: &StepEffect) {
    for (r, v) in &effect.reg_writes {
        state.set_reg(*r, *v);
    }
    if let Some(ev) = effect.mem_event {
        if ev.kind == AccessKind::Store {
            for k in 0..ev.width {
                state.set_byte(ev.domain, ev.addr + k, (ev.value >> (8 * k)) as u8);
            }
        }
    }
    state.pc = effect.next_pc;
    state.halted = state.pc >= program.len();
}

/// One sequential step.
pub fn step(program: &Program, state: &ArchState, layout: &MemoryLayout) -> Result<(ArchState, StepEffect), MachineError> {
    if state.halted || state.pc >= program.len() {
        return Err(MachineError::InvalidPc(state.pc));
    }
    let effect = evaluate(program, state.pc, &state.regs, state, layout)?;
    let mut next = state.clone();
    apply(program, &mut next, &effect);
    Ok((next, effect))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunOutcome {
    Halted,
    FuelExhausted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeqRun {
    pub final_state: ArchState,
    pub effects: Vec<StepEffect>,
    pub outcome: RunOutcome,
}

/// Run sequentially until the program halts or `fuel` steps have been taken.
pub fn run_seq(program: &Program, state0: &ArchState, layout: &MemoryLayout, fuel: usize) -> Result<SeqRun, MachineError> {
    let mut state = state0.clone();
    let mut effects = Vec::new();
    loop {
        if state.halted || state.pc >= program.len() {
            state.halted = true;
            return Ok(SeqRun { final_state: state, effects, outcome: RunOutcome::Halted });
        }
        if effects.len() == fuel {
            return Ok(SeqRun { final_state: state, effects, outcome: RunOutcome::FuelExhausted });
        }
        let effect = evaluate(program, state.pc, &state.regs, &state, layout)?;
        apply(program, &mut state, &effect);
        effects.push(effect);
    }
}
