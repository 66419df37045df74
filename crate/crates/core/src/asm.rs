//! Front end for the small RISC-V dialect the rest of the crate understands.
//!
//! The dialect is a subset of GNU assembler syntax: one instruction or label per
//! line, `#` comments, and `csrwi MSPEC, BURST_ON` / `BURST_OFF` markers that
//! delimit Burst regions. Two extension directives are recognised:
//!
//! * `.symbol name = value` binds a name usable wherever an immediate is accepted
//!   (array bases in listings that never define their addresses);
//! * `.extern name` declares a jump target that lives outside the snippet.
//!
//! Every other directive is skipped with a warning.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

/// A general-purpose integer register, `x0` to `x31`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Reg(u8);

const ABI_NAMES: [&str; 32] = [
    "zero", "ra", "sp", "x3", "x4", "t0", "t1", "t2", "s0", "s1", "a0", "a1", "a2", "a3", "a4",
    "a5", "a6", "a7", "s2", "s3", "s4", "s5", "s6", "s7", "s8", "s9", "s10", "s11", "t3", "t4",
    "t5", "t6",
];

impl Reg {
    pub const ZERO: Reg = Reg(0);
    pub const RA: Reg = Reg(1);
    pub const SP: Reg = Reg(2);

    pub fn new(index: u8) -> Option<Reg> {
        (index < 32).then_some(Reg(index))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    /// Canonical (ABI) spelling, used by the pretty printer and in JSON.
    pub fn name(self) -> &'static str {
        ABI_NAMES[self.index()]
    }

    /// Accepts `x0`..`x31` and the ABI aliases listed in the dialect.
    pub fn parse(text: &str) -> Option<Reg> {
        if let Some(rest) = text.strip_prefix('x') {
            if !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()) && rest.len() <= 2 {
                return rest.parse::<u8>().ok().and_then(Reg::new);
            }
        }
        ABI_NAMES
            .iter()
            .position(|n| *n == text)
            .map(|i| Reg(i as u8))
    }

    pub fn all() -> impl Iterator<Item = Reg> {
        (0..32).map(Reg)
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for Reg {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> serde::Deserialize<'de> for Reg {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Reg::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown register `{s}`")))
    }
}

/// Supported mnemonics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Opcode {
    Lw,
    Lbu,
    Ld,
    Sw,
    Sb,
    Sd,
    Add,
    Addi,
    Sub,
    And,
    Or,
    Xor,
    Slli,
    Srli,
    Li,
    Mv,
    Beq,
    Bne,
    Blt,
    Bgeu,
    Jal,
    Jalr,
    Ret,
    Csrwi,
}

impl Opcode {
    const TABLE: [(Opcode, &'static str); 24] = [
        (Opcode::Lw, "lw"),
        (Opcode::Lbu, "lbu"),
        (Opcode::Ld, "ld"),
        (Opcode::Sw, "sw"),
        (Opcode::Sb, "sb"),
        (Opcode::Sd, "sd"),
        (Opcode::Add, "add"),
        (Opcode::Addi, "addi"),
        (Opcode::Sub, "sub"),
        (Opcode::And, "and"),
        (Opcode::Or, "or"),
        (Opcode::Xor, "xor"),
        (Opcode::Slli, "slli"),
        (Opcode::Srli, "srli"),
        (Opcode::Li, "li"),
        (Opcode::Mv, "mv"),
        (Opcode::Beq, "beq"),
        (Opcode::Bne, "bne"),
        (Opcode::Blt, "blt"),
        (Opcode::Bgeu, "bgeu"),
        (Opcode::Jal, "jal"),
        (Opcode::Jalr, "jalr"),
        (Opcode::Ret, "ret"),
        (Opcode::Csrwi, "csrwi"),
    ];

    pub fn from_mnemonic(m: &str) -> Option<Opcode> {
        Self::TABLE.iter().find(|(_, s)| *s == m).map(|(o, _)| *o)
    }

    pub fn mnemonic(self) -> &'static str {
        Self::TABLE.iter().find(|(o, _)| *o == self).map(|(_, s)| *s).unwrap()
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Width {
    /// `lbu`/`sb`: one byte, zero-extended on load.
    Byte,
    /// `lw`/`sw`: four bytes, sign-extended on load.
    Word,
    /// `ld`/`sd`.
    Double,
}

impl Width {
    pub fn bytes(self) -> u64 {
        match self {
            Width::Byte => 1,
            Width::Word => 4,
            Width::Double => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AluOp {
    Add,
    Sub,
    And,
    Or,
    Xor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ImmOp {
    Add,
    Sll,
    Srl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BranchCond {
    Eq,
    Ne,
    Lt,
    Geu,
}

impl BranchCond {
    pub fn holds(self, a: u64, b: u64) -> bool {
        match self {
            BranchCond::Eq => a == b,
            BranchCond::Ne => a != b,
            BranchCond::Lt => (a as i64) < (b as i64),
            BranchCond::Geu => a >= b,
        }
    }
}

/// Where a direct jump or branch goes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Dest {
    /// An instruction index; `program.len()` is allowed and means "fall off the end".
    Index(usize),
    /// A symbol declared with `.extern`: control leaves the snippet.
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct JumpTarget {
    pub label: String,
    pub dest: Dest,
}

impl JumpTarget {
    pub fn index(&self) -> Option<usize> {
        match self.dest {
            Dest::Index(i) => Some(i),
            Dest::External => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BurstMarker {
    On,
    Off,
}

/// Decoded instruction semantics.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Op {
    Load { width: Width, rd: Reg, base: Reg, offset: i64 },
    Store { width: Width, src: Reg, base: Reg, offset: i64 },
    Alu { op: AluOp, rd: Reg, rs1: Reg, rs2: Reg },
    AluImm { op: ImmOp, rd: Reg, rs1: Reg, imm: i64 },
    Li { rd: Reg, imm: i64 },
    Mv { rd: Reg, rs: Reg },
    Branch { cond: BranchCond, rs1: Reg, rs2: Reg, target: JumpTarget },
    Jal { rd: Reg, target: JumpTarget },
    Jalr { rd: Reg, base: Reg, offset: i64 },
    Csrwi { marker: BurstMarker },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub op: Op,
    /// 1-based source line.
    pub line: usize,
}

impl Instruction {
    pub fn opcode(&self) -> Opcode {
        match &self.op {
            Op::Load { width: Width::Byte, .. } => Opcode::Lbu,
            Op::Load { width: Width::Word, .. } => Opcode::Lw,
            Op::Load { width: Width::Double, .. } => Opcode::Ld,
            Op::Store { width: Width::Byte, .. } => Opcode::Sb,
            Op::Store { width: Width::Word, .. } => Opcode::Sw,
            Op::Store { width: Width::Double, .. } => Opcode::Sd,
            Op::Alu { op, .. } => match op {
                AluOp::Add => Opcode::Add,
                AluOp::Sub => Opcode::Sub,
                AluOp::And => Opcode::And,
                AluOp::Or => Opcode::Or,
                AluOp::Xor => Opcode::Xor,
            },
            Op::AluImm { op, .. } => match op {
                ImmOp::Add => Opcode::Addi,
                ImmOp::Sll => Opcode::Slli,
                ImmOp::Srl => Opcode::Srli,
            },
            Op::Li { .. } => Opcode::Li,
            Op::Mv { .. } => Opcode::Mv,
            Op::Branch { cond, .. } => match cond {
                BranchCond::Eq => Opcode::Beq,
                BranchCond::Ne => Opcode::Bne,
                BranchCond::Lt => Opcode::Blt,
                BranchCond::Geu => Opcode::Bgeu,
            },
            Op::Jal { .. } => Opcode::Jal,
            Op::Jalr { .. } => Opcode::Jalr,
            Op::Csrwi { .. } => Opcode::Csrwi,
        }
    }

    /// Register written by this instruction, if any (never `x0`).
    pub fn dest_reg(&self) -> Option<Reg> {
        let rd = match &self.op {
            Op::Load { rd, .. }
            | Op::Alu { rd, .. }
            | Op::AluImm { rd, .. }
            | Op::Li { rd, .. }
            | Op::Mv { rd, .. }
            | Op::Jal { rd, .. }
            | Op::Jalr { rd, .. } => *rd,
            _ => return None,
        };
        (!rd.is_zero()).then_some(rd)
    }

    pub fn is_control(&self) -> bool {
        matches!(self.op, Op::Branch { .. } | Op::Jal { .. } | Op::Jalr { .. })
    }

    pub fn is_memory(&self) -> bool {
        matches!(self.op, Op::Load { .. } | Op::Store { .. })
    }

    pub fn is_burst_marker(&self) -> bool {
        matches!(self.op, Op::Csrwi { .. })
    }

    /// Same operation, ignoring source position.
    pub fn same_op(&self, other: &Instruction) -> bool {
        self.op == other.op
    }
}

fn fmt_imm(v: i64) -> String {
    if v < 0 {
        format!("{v}")
    } else if v >= 4096 {
        format!("{v:#x}")
    } else {
        format!("{v}")
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.opcode();
        match &self.op {
            Op::Load { rd, base, offset, .. } => write!(f, "{m} {rd}, {}({base})", fmt_imm(*offset)),
            Op::Store { src, base, offset, .. } => {
                write!(f, "{m} {src}, {}({base})", fmt_imm(*offset))
            }
            Op::Alu { rd, rs1, rs2, .. } => write!(f, "{m} {rd}, {rs1}, {rs2}"),
            Op::AluImm { rd, rs1, imm, .. } => write!(f, "{m} {rd}, {rs1}, {}", fmt_imm(*imm)),
            Op::Li { rd, imm } => write!(f, "{m} {rd}, {}", fmt_imm(*imm)),
            Op::Mv { rd, rs } => write!(f, "{m} {rd}, {rs}"),
            Op::Branch { rs1, rs2, target, .. } => write!(f, "{m} {rs1}, {rs2}, {}", target.label),
            Op::Jal { rd, target } => write!(f, "{m} {rd}, {}", target.label),
            Op::Jalr { rd, base, offset } => write!(f, "{m} {rd}, {}({base})", fmt_imm(*offset)),
            Op::Csrwi { marker } => write!(
                f,
                "{m} MSPEC, {}",
                match marker {
                    BurstMarker::On => "BURST_ON",
                    BurstMarker::Off => "BURST_OFF",
                }
            ),
        }
    }
}

/// A closed Burst region: instruction indices of the `BURST_ON` and matching `BURST_OFF`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct BurstRegion {
    pub on: usize,
    pub off: usize,
}

impl BurstRegion {
    /// Strictly between the two markers.
    pub fn contains(&self, index: usize) -> bool {
        self.on < index && index < self.off
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub instructions: Vec<Instruction>,
    pub labels: BTreeMap<String, usize>,
    pub externs: BTreeSet<String>,
    pub burst_regions: Vec<BurstRegion>,
}

impl Program {
    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Instruction> {
        self.instructions.get(index)
    }

    /// Source line of an instruction index, for diagnostics.
    pub fn line_of(&self, index: usize) -> usize {
        self.instructions.get(index).map(|i| i.line).unwrap_or(0)
    }

    /// The Burst region whose interior holds `index`, if any.
    pub fn region_containing(&self, index: usize) -> Option<BurstRegion> {
        self.burst_regions.iter().copied().find(|r| r.contains(index))
    }

    /// Equality on code and labels, ignoring source line numbers.
    pub fn same_code(&self, other: &Program) -> bool {
        self.labels == other.labels
            && self.externs == other.externs
            && self.burst_regions == other.burst_regions
            && self.instructions.len() == other.instructions.len()
            && self
                .instructions
                .iter()
                .zip(&other.instructions)
                .all(|(a, b)| a.same_op(b))
    }

    /// A stable 64-bit FNV-1a digest of the canonical listing.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.to_string().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut by_index: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
        for (name, idx) in &self.labels {
            by_index.entry(*idx).or_default().push(name);
        }
        for name in &self.externs {
            writeln!(f, ".extern {name}")?;
        }
        for (i, inst) in self.instructions.iter().enumerate() {
            for name in by_index.get(&i).into_iter().flatten() {
                writeln!(f, "{name}:")?;
            }
            writeln!(f, "  {inst}")?;
        }
        for name in by_index.get(&self.len()).into_iter().flatten() {
            writeln!(f, "{name}:")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AsmError {
    #[error("line {line}, column {column}: unknown mnemonic `{mnemonic}`")]
    UnknownMnemonic { line: usize, column: usize, mnemonic: String },
    #[error("line {line}, column {column}: unresolved label `{name}`")]
    UnresolvedLabel { line: usize, column: usize, name: String },
    #[error("line {line}, column {column}: {message}")]
    MalformedOperand { line: usize, column: usize, message: String },
    #[error("line {line}: unmatched Burst marker at instruction {index}")]
    UnmatchedBurstMarker { line: usize, index: usize },
    #[error("line {line}, column {column}: label `{name}` defined twice")]
    DuplicateLabel { line: usize, column: usize, name: String },
    #[error("input is not valid UTF-8 (byte offset {offset})")]
    NotUtf8 { offset: usize },
}

/// Machine-readable form of an [`AsmError`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl AsmError {
    pub fn line(&self) -> usize {
        match self {
            AsmError::UnknownMnemonic { line, .. }
            | AsmError::UnresolvedLabel { line, .. }
            | AsmError::MalformedOperand { line, .. }
            | AsmError::UnmatchedBurstMarker { line, .. }
            | AsmError::DuplicateLabel { line, .. } => *line,
            AsmError::NotUtf8 { .. } => 0,
        }
    }

    pub fn column(&self) -> usize {
        match self {
            AsmError::UnknownMnemonic { column, .. }
            | AsmError::UnresolvedLabel { column, .. }
            | AsmError::MalformedOperand { column, .. }
            | AsmError::DuplicateLabel { column, .. } => *column,
            AsmError::UnmatchedBurstMarker { .. } | AsmError::NotUtf8 { .. } => 1,
        }
    }

    pub fn diagnostic(&self) -> Diagnostic {
        Diagnostic { line: self.line(), column: self.column(), message: self.to_string() }
    }
}

/// Operand text with its 1-based column in the source line.
#[derive(Debug, Clone, Copy)]
struct Tok<'a> {
    text: &'a str,
    column: usize,
}

struct PendingInst<'a> {
    line: usize,
    mnemonic: Tok<'a>,
    operands: Vec<Tok<'a>>,
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '.' || c == '$')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '$')
}

fn parse_int(s: &str) -> Option<i64> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let magnitude: u64 = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16).ok()?
    } else if let Some(bin) = body.strip_prefix("0b") {
        u64::from_str_radix(bin, 2).ok()?
    } else if !body.is_empty() && body.bytes().all(|b| b.is_ascii_digit()) {
        body.parse().ok()?
    } else {
        return None;
    };
    Some(if neg { (magnitude as i64).wrapping_neg() } else { magnitude as i64 })
}

/// Split `rest` (which starts at byte offset `base` of the line) on commas.
fn split_operands(rest: &str, base: usize) -> Vec<Tok<'_>> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, c) in rest.char_indices().chain(std::iter::once((rest.len(), ','))) {
        if c == ',' {
            let piece = &rest[start..i];
            let lead = piece.len() - piece.trim_start().len();
            let text = piece.trim();
            out.push(Tok { text, column: base + start + lead + 1 });
            start = i + 1;
        }
    }
    if out.len() == 1 && out[0].text.is_empty() {
        out.clear();
    }
    out
}

struct Resolver<'a> {
    symbols: &'a HashMap<String, i64>,
    labels: &'a BTreeMap<String, usize>,
    externs: &'a BTreeSet<String>,
    line: usize,
}

impl Resolver<'_> {
    fn malformed(&self, tok: Tok<'_>, message: impl Into<String>) -> AsmError {
        AsmError::MalformedOperand { line: self.line, column: tok.column, message: message.into() }
    }

    fn reg(&self, tok: Tok<'_>) -> Result<Reg, AsmError> {
        Reg::parse(tok.text)
            .ok_or_else(|| self.malformed(tok, format!("expected a register, found `{}`", tok.text)))
    }

    fn imm(&self, tok: Tok<'_>) -> Result<i64, AsmError> {
        if let Some(v) = parse_int(tok.text) {
            return Ok(v);
        }
        if let Some(v) = self.symbols.get(tok.text) {
            return Ok(*v);
        }
        Err(self.malformed(tok, format!("expected an immediate, found `{}`", tok.text)))
    }

    /// `offset(base)`, `(base)`.
    fn mem(&self, tok: Tok<'_>) -> Result<(i64, Reg), AsmError> {
        let t = tok.text;
        let open = t.find('(').ok_or_else(|| self.malformed(tok, format!("expected `offset(reg)`, found `{t}`")))?;
        if !t.ends_with(')') {
            return Err(self.malformed(tok, format!("expected `offset(reg)`, found `{t}`")));
        }
        let off_text = t[..open].trim();
        let reg_text = t[open + 1..t.len() - 1].trim();
        let offset = if off_text.is_empty() {
            0
        } else {
            self.imm(Tok { text: off_text, column: tok.column })?
        };
        let base = self.reg(Tok { text: reg_text, column: tok.column + open + 1 })?;
        Ok((offset, base))
    }

    fn target(&self, tok: Tok<'_>) -> Result<JumpTarget, AsmError> {
        if let Some(idx) = self.labels.get(tok.text) {
            return Ok(JumpTarget { label: tok.text.to_string(), dest: Dest::Index(*idx) });
        }
        if self.externs.contains(tok.text) {
            return Ok(JumpTarget { label: tok.text.to_string(), dest: Dest::External });
        }
        if is_ident(tok.text) {
            Err(AsmError::UnresolvedLabel { line: self.line, column: tok.column, name: tok.text.to_string() })
        } else {
            Err(self.malformed(tok, format!("expected a label, found `{}`", tok.text)))
        }
    }

    fn expect_count(&self, ops: &[Tok<'_>], n: usize, mnemonic: Tok<'_>) -> Result<(), AsmError> {
        if ops.len() == n {
            Ok(())
        } else {
            let at = ops.get(n).copied().unwrap_or(mnemonic);
            Err(self.malformed(at, format!("`{}` takes {n} operand(s), found {}", mnemonic.text, ops.len())))
        }
    }

    fn build(&self, opcode: Opcode, mnemonic: Tok<'_>, ops: &[Tok<'_>]) -> Result<Op, AsmError> {
        use Opcode::*;
        let op = match opcode {
            Lw | Lbu | Ld => {
                self.expect_count(ops, 2, mnemonic)?;
                let width = match opcode {
                    Lbu => Width::Byte,
                    Lw => Width::Word,
                    _ => Width::Double,
                };
                let (offset, base) = self.mem(ops[1])?;
                Op::Load { width, rd: self.reg(ops[0])?, base, offset }
            }
            Sw | Sb | Sd => {
                self.expect_count(ops, 2, mnemonic)?;
                let width = match opcode {
                    Sb => Width::Byte,
                    Sw => Width::Word,
                    _ => Width::Double,
                };
                let (offset, base) = self.mem(ops[1])?;
                Op::Store { width, src: self.reg(ops[0])?, base, offset }
            }
            Add | Sub | And | Or | Xor => {
                self.expect_count(ops, 3, mnemonic)?;
                let rd = self.reg(ops[0])?;
                let rs1 = self.reg(ops[1])?;
                match Reg::parse(ops[2].text) {
                    Some(rs2) => {
                        let op = match opcode {
                            Add => AluOp::Add,
                            Sub => AluOp::Sub,
                            And => AluOp::And,
                            Or => AluOp::Or,
                            _ => AluOp::Xor,
                        };
                        Op::Alu { op, rd, rs1, rs2 }
                    }
                    // GNU as accepts `add rd, rs, imm` as `addi`.
                    None if opcode == Add => Op::AluImm { op: ImmOp::Add, rd, rs1, imm: self.imm(ops[2])? },
                    None => return Err(self.malformed(ops[2], format!("expected a register, found `{}`", ops[2].text))),
                }
            }
            Addi | Slli | Srli => {
                self.expect_count(ops, 3, mnemonic)?;
                let op = match opcode {
                    Addi => ImmOp::Add,
                    Slli => ImmOp::Sll,
                    _ => ImmOp::Srl,
                };
                let imm = self.imm(ops[2])?;
                if op != ImmOp::Add && !(0..64).contains(&imm) {
                    return Err(self.malformed(ops[2], format!("shift amount {imm} out of range")));
                }
                Op::AluImm { op, rd: self.reg(ops[0])?, rs1: self.reg(ops[1])?, imm }
            }
            Li => {
                self.expect_count(ops, 2, mnemonic)?;
                Op::Li { rd: self.reg(ops[0])?, imm: self.imm(ops[1])? }
            }
            Mv => {
                self.expect_count(ops, 2, mnemonic)?;
                Op::Mv { rd: self.reg(ops[0])?, rs: self.reg(ops[1])? }
            }
            Beq | Bne | Blt | Bgeu => {
                self.expect_count(ops, 3, mnemonic)?;
                let cond = match opcode {
                    Beq => BranchCond::Eq,
                    Bne => BranchCond::Ne,
                    Blt => BranchCond::Lt,
                    _ => BranchCond::Geu,
                };
                Op::Branch { cond, rs1: self.reg(ops[0])?, rs2: self.reg(ops[1])?, target: self.target(ops[2])? }
            }
            Jal => match ops.len() {
                1 => Op::Jal { rd: Reg::RA, target: self.target(ops[0])? },
                2 => Op::Jal { rd: self.reg(ops[0])?, target: self.target(ops[1])? },
                _ => return Err(self.malformed(mnemonic, "`jal` takes 1 or 2 operands")),
            },
            Jalr => match ops.len() {
                1 => Op::Jalr { rd: Reg::RA, base: self.reg(ops[0])?, offset: 0 },
                2 => {
                    let rd = self.reg(ops[0])?;
                    if ops[1].text.contains('(') {
                        let (offset, base) = self.mem(ops[1])?;
                        Op::Jalr { rd, base, offset }
                    } else {
                        Op::Jalr { rd, base: self.reg(ops[1])?, offset: 0 }
                    }
                }
                3 => Op::Jalr { rd: self.reg(ops[0])?, base: self.reg(ops[1])?, offset: self.imm(ops[2])? },
                _ => return Err(self.malformed(mnemonic, "`jalr` takes 1 to 3 operands")),
            },
            Ret => {
                self.expect_count(ops, 0, mnemonic)?;
                Op::Jalr { rd: Reg::ZERO, base: Reg::RA, offset: 0 }
            }
            Csrwi => {
                self.expect_count(ops, 2, mnemonic)?;
                if ops[0].text != "MSPEC" {
                    return Err(self.malformed(ops[0], format!("only the MSPEC CSR is modeled, found `{}`", ops[0].text)));
                }
                let marker = match ops[1].text {
                    "BURST_ON" => BurstMarker::On,
                    "BURST_OFF" => BurstMarker::Off,
                    other => {
                        return Err(self.malformed(ops[1], format!("expected BURST_ON or BURST_OFF, found `{other}`")))
                    }
                };
                Op::Csrwi { marker }
            }
        };
        Ok(op)
    }
}

/// Parse raw bytes; invalid UTF-8 is reported rather than panicking.
pub fn parse_bytes(bytes: &[u8]) -> Result<Program, AsmError> {
    match std::str::from_utf8(bytes) {
        Ok(text) => parse_program(text),
        Err(e) => Err(AsmError::NotUtf8 { offset: e.valid_up_to() }),
    }
}

/// Parse an assembly listing into a [`Program`].
///
/// ```
/// use rmi_core::asm::parse_program;
///
/// let p = parse_program("loop:\n  addi a0, a0, 1\n  bne a0, a1, loop\n").unwrap();
/// assert_eq!(p.len(), 2);
/// assert_eq!(p.labels["loop"], 0);
/// ```
pub fn parse_program(text: &str) -> Result<Program, AsmError> {
    let mut labels = BTreeMap::new();
    let mut symbols = HashMap::new();
    let mut externs = BTreeSet::new();
    let mut pending = Vec::new();

    for (line_no, raw) in text.lines().enumerate() {
        let line = line_no + 1;
        let code = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        };
        let mut rest = code;
        let mut offset = 0;
        // Leading `label:` definitions.
        loop {
            let trimmed = rest.trim_start();
            let lead = rest.len() - trimmed.len();
            let word_end = trimmed.find(|c: char| c.is_whitespace() || c == ':').unwrap_or(trimmed.len());
            if trimmed[word_end..].starts_with(':') && is_ident(&trimmed[..word_end]) {
                let name = &trimmed[..word_end];
                let column = offset + lead + 1;
                if labels.insert(name.to_string(), pending.len()).is_some() {
                    return Err(AsmError::DuplicateLabel { line, column, name: name.to_string() });
                }
                offset += lead + word_end + 1;
                rest = &trimmed[word_end + 1..];
            } else {
                offset += lead;
                rest = trimmed;
                break;
            }
        }
        let rest = rest.trim_end();
        if rest.is_empty() {
            continue;
        }
        let word_end = rest.find(char::is_whitespace).unwrap_or(rest.len());
        let word = &rest[..word_end];
        let column = offset + 1;
        if word.starts_with('.') {
            let args = rest[word_end..].trim();
            match word {
                ".symbol" | ".set" | ".equ" => {
                    let (name, value) = match args.split_once('=').or_else(|| args.split_once(',')) {
                        Some((n, v)) => (n.trim(), v.trim()),
                        None => {
                            return Err(AsmError::MalformedOperand {
                                line,
                                column,
                                message: format!("expected `{word} name = value`"),
                            })
                        }
                    };
                    let v = parse_int(value).or_else(|| symbols.get(value).copied()).ok_or_else(|| {
                        AsmError::MalformedOperand { line, column, message: format!("bad symbol value `{value}`") }
                    })?;
                    if !is_ident(name) {
                        return Err(AsmError::MalformedOperand { line, column, message: format!("bad symbol name `{name}`") });
                    }
                    symbols.insert(name.to_string(), v);
                }
                ".extern" => {
                    for name in args.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                        externs.insert(name.to_string());
                    }
                }
                _ => log::warn!("line {line}: skipping directive `{word}`"),
            }
            continue;
        }
        let operands = split_operands(&rest[word_end..], offset + word_end);
        pending.push(PendingInst { line, mnemonic: Tok { text: word, column }, operands });
    }

    let mut instructions = Vec::with_capacity(pending.len());
    for p in &pending {
        let opcode = Opcode::from_mnemonic(p.mnemonic.text).ok_or_else(|| AsmError::UnknownMnemonic {
            line: p.line,
            column: p.mnemonic.column,
            mnemonic: p.mnemonic.text.to_string(),
        })?;
        if let Some(empty) = p.operands.iter().find(|t| t.text.is_empty()) {
            return Err(AsmError::MalformedOperand { line: p.line, column: empty.column, message: "empty operand".into() });
        }
        let resolver = Resolver { symbols: &symbols, labels: &labels, externs: &externs, line: p.line };
        let op = resolver.build(opcode, p.mnemonic, &p.operands)?;
        instructions.push(Instruction { op, line: p.line });
    }

    let burst_regions = burst_regions(&instructions)?;
    Ok(Program { instructions, labels, externs, burst_regions })
}

fn burst_regions(instructions: &[Instruction]) -> Result<Vec<BurstRegion>, AsmError> {
    let mut regions = Vec::new();
    let mut open: Option<usize> = None;
    for (i, inst) in instructions.iter().enumerate() {
        if let Op::Csrwi { marker } = inst.op {
            match (marker, open) {
                (BurstMarker::On, None) => open = Some(i),
                (BurstMarker::Off, Some(on)) => {
                    regions.push(BurstRegion { on, off: i });
                    open = None;
                }
                _ => return Err(AsmError::UnmatchedBurstMarker { line: inst.line, index: i }),
            }
        }
    }
    if let Some(on) = open {
        return Err(AsmError::UnmatchedBurstMarker { line: instructions[on].line, index: on });
    }
    Ok(regions)
}
