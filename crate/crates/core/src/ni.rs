//! Brute-force non-interference checks over small enumerable state spaces.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asm::{Program, Reg};
use crate::contract::{view_set, Contract, ContractError, TraceSet, DEFAULT_ENUMERATION_CAP};
use crate::hw::{self, HwError, HwMode, Semantics};
use crate::machine::{ArchState, Domain, MachineError, MemoryLayout, RunOutcome};

/// Which parts of the initial state the attacker may know.
///
/// Shared memory and the pc are always public; registers and private cells
/// are secret unless listed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    #[serde(default)]
    pub public_regs: BTreeSet<Reg>,
    #[serde(default, with = "addr_set")]
    pub public_private_cells: BTreeSet<u64>,
    /// Display names for registers in reports, e.g. `a2` → `len`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub names: BTreeMap<Reg, String>,
}

impl Policy {
    /// Nothing but shared memory is public.
    pub fn all_secret() -> Self {
        Policy::default()
    }

    pub fn with_public_regs(regs: impl IntoIterator<Item = Reg>) -> Self {
        Policy { public_regs: regs.into_iter().collect(), ..Policy::default() }
    }

    pub fn is_public_reg(&self, r: Reg) -> bool {
        r.is_zero() || self.public_regs.contains(&r)
    }

    pub fn is_secret_reg(&self, r: Reg) -> bool {
        !self.is_public_reg(r)
    }

    pub fn display_name(&self, r: Reg) -> String {
        self.names.get(&r).cloned().unwrap_or_else(|| r.name().to_string())
    }

    /// Agreement on every public component.
    pub fn equivalent(&self, a: &ArchState, b: &ArchState) -> bool {
        a.pc == b.pc
            && self.public_regs.iter().all(|r| a.reg(*r) == b.reg(*r))
            && self
                .public_private_cells
                .iter()
                .all(|c| a.byte(Domain::Private, *c) == b.byte(Domain::Private, *c))
            && a.memory(Domain::Shared).eq(b.memory(Domain::Shared))
    }
}

/// Addresses as JSON numbers or `"0x…"` strings; written as hex strings.
pub(crate) mod addr_set {
    use std::collections::BTreeSet;

    use serde::{Deserialize, Deserializer, Serializer};

    pub(crate) enum Addr {
        Num(u64),
        Text(String),
    }

    impl Addr {
        pub(crate) fn value<E: serde::de::Error>(self) -> Result<u64, E> {
            match self {
                Addr::Num(n) => Ok(n),
                Addr::Text(s) => {
                    let r = match s.strip_prefix("0x") {
                        Some(h) => u64::from_str_radix(h, 16),
                        None => s.parse(),
                    };
                    r.map_err(|_| E::custom(format!("bad address `{s}`")))
                }
            }
        }
    }

    pub fn serialize<S: Serializer>(set: &BTreeSet<u64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(set.iter().map(|a| format!("{a:#x}")))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeSet<u64>, D::Error> {
        Vec::<Addr>::deserialize(d)?.into_iter().map(Addr::value).collect()
    }
}

/// Values a register may take in a [`StateSpace`] unless configured.
pub const DEFAULT_REG_DOMAIN: [u64; 4] = [0, 1, 2, 0x8000];
/// Values a memory cell may take unless configured.
pub const DEFAULT_CELL_DOMAIN: [u8; 2] = [0, 1];
/// Largest number of state pairs an exhaustive check may consider.
pub const DEFAULT_PAIR_CAP: usize = 1 << 20;

/// A finite set of initial states: a base state with some components
/// ranging over small domains.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSpace {
    pub base: ArchState,
    pub registers: Vec<(Reg, Vec<u64>)>,
    /// Memory bytes; the domain of each address follows the layout.
    pub cells: Vec<(u64, Vec<u8>)>,
}

impl StateSpace {
    pub fn new(base: ArchState) -> Self {
        StateSpace { base, registers: Vec::new(), cells: Vec::new() }
    }

    /// Vary `regs` over the default register domain and `cells` over the
    /// default cell domain.
    pub fn with_defaults(base: ArchState, regs: &[Reg], cells: &[u64]) -> Self {
        StateSpace {
            base,
            registers: regs.iter().map(|r| (*r, DEFAULT_REG_DOMAIN.to_vec())).collect(),
            cells: cells.iter().map(|c| (*c, DEFAULT_CELL_DOMAIN.to_vec())).collect(),
        }
    }

    pub fn vary_reg(mut self, r: Reg, values: impl IntoIterator<Item = u64>) -> Self {
        self.registers.push((r, values.into_iter().collect()));
        self
    }

    pub fn vary_cell(mut self, addr: u64, values: impl IntoIterator<Item = u8>) -> Self {
        self.cells.push((addr, values.into_iter().collect()));
        self
    }

    fn radices(&self) -> impl Iterator<Item = usize> + '_ {
        self.registers.iter().map(|(_, d)| d.len()).chain(self.cells.iter().map(|(_, d)| d.len()))
    }

    /// Number of states, or `None` on overflow.
    pub fn size(&self) -> Option<usize> {
        self.radices().try_fold(1usize, |acc, r| acc.checked_mul(r))
    }

    /// The `index`-th state; the last component varies fastest.
    pub fn state(&self, index: usize, layout: &MemoryLayout) -> Result<ArchState, MachineError> {
        let radices: Vec<usize> = self.radices().collect();
        let mut digits = vec![0usize; radices.len()];
        let mut rest = index;
        for k in (0..radices.len()).rev() {
            digits[k] = rest % radices[k];
            rest /= radices[k];
        }
        let mut s = self.base.clone();
        for (k, (r, dom)) in self.registers.iter().enumerate() {
            s.set_reg(*r, dom[digits[k]]);
        }
        let off = self.registers.len();
        for (k, (addr, dom)) in self.cells.iter().enumerate() {
            s.poke(layout, *addr, dom[digits[off + k]])?;
        }
        Ok(s)
    }

    /// Copy component `k` of `from` into `to`.
    fn copy_component(&self, k: usize, from: &ArchState, to: &mut ArchState, layout: &MemoryLayout) {
        if k < self.registers.len() {
            let r = self.registers[k].0;
            to.set_reg(r, from.reg(r));
        } else {
            let addr = self.cells[k - self.registers.len()].0;
            if let Ok(v) = from.peek(layout, addr) {
                let _ = to.poke(layout, addr, v);
            }
        }
    }

    fn components(&self) -> usize {
        self.registers.len() + self.cells.len()
    }
}

#[derive(Deserialize)]
struct SpaceJson {
    #[serde(default)]
    base: ArchState,
    #[serde(default)]
    registers: BTreeMap<Reg, Vec<addr_set::Addr>>,
    #[serde(default)]
    cells: BTreeMap<String, Vec<u8>>,
}

impl<'de> Deserialize<'de> for StateSpace {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = SpaceJson::deserialize(d)?;
        let mut space = StateSpace::new(raw.base);
        for (r, vals) in raw.registers {
            let vals = vals.into_iter().map(addr_set::Addr::value).collect::<Result<Vec<u64>, D::Error>>()?;
            space.registers.push((r, vals));
        }
        for (a, vals) in raw.cells {
            let addr = addr_set::Addr::Text(a).value()?;
            space.cells.push((addr, vals));
        }
        Ok(space)
    }
}

impl<'de> Deserialize<'de> for addr_set::Addr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u64),
            Text(String),
        }
        Ok(match Raw::deserialize(d)? {
            Raw::Num(n) => addr_set::Addr::Num(n),
            Raw::Text(s) => addr_set::Addr::Text(s),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NiError {
    #[error("{0} state pairs exceed the cap of {1}")]
    EnumerationCapExceeded(usize, usize),
    #[error(transparent)]
    Contract(#[from] ContractError),
    #[error(transparent)]
    Hw(#[from] HwError),
    #[error("state space cell: {0}")]
    Space(MachineError),
}

/// What produces the traces being compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Observer {
    Contract(Contract),
    Hardware(HwMode),
}

impl std::str::FromStr for Observer {
    type Err = String;

    /// A contract such as `shm-seq`, or a hardware mode such as `burst_sta`.
    fn from_str(s: &str) -> Result<Self, String> {
        s.parse::<Contract>()
            .map(Observer::Contract)
            .or_else(|_| s.parse::<HwMode>().map(Observer::Hardware))
            .map_err(|_| format!("`{s}` is neither a contract nor a hardware mode"))
    }
}

impl std::fmt::Display for Observer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Observer::Contract(c) => write!(f, "{c}"),
            Observer::Hardware(m) => write!(f, "{m}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sampling {
    pub pairs: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckConfig {
    pub fuel: usize,
    /// Cap on traces per state, passed to trace-set enumeration.
    pub trace_cap: usize,
    pub pair_cap: usize,
    /// Check random pairs instead of all of them.
    pub sampling: Option<Sampling>,
    pub shrink: bool,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            fuel: 256,
            trace_cap: DEFAULT_ENUMERATION_CAP,
            pair_cap: DEFAULT_PAIR_CAP,
            sampling: None,
            shrink: true,
        }
    }
}

/// Observation sets of one state pair that contradict the property.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Witness {
    pub left: ArchState,
    pub right: ArchState,
    /// What the concluding observer produced for each side.
    pub left_traces: TraceSet,
    pub right_traces: TraceSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NiVerdict {
    pub holds: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
    /// States enumerated (or sampled endpoints).
    pub states: usize,
    /// States whose committed execution faults, left out of every pair.
    pub excluded: usize,
}

/// JSON shape for one verdict.
#[derive(Debug, Clone, Serialize)]
pub struct NiReport {
    pub program: String,
    pub contract: String,
    pub verdict: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
}

impl NiVerdict {
    pub fn report(&self, program: &str, contract: impl std::fmt::Display) -> NiReport {
        NiReport {
            program: program.to_string(),
            contract: contract.to_string(),
            verdict: if self.holds { "holds" } else { "violated" },
            witness: self.witness.clone(),
        }
    }
}

/// An observer resolved against one program.
struct Bound<'a> {
    program: &'a Program,
    layout: &'a MemoryLayout,
    semantics: Semantics,
    config: CheckConfig,
}

impl<'a> Bound<'a> {
    fn new(observer: Observer, program: &'a Program, layout: &'a MemoryLayout, config: CheckConfig) -> Result<Self, NiError> {
        let semantics = match observer {
            Observer::Contract(c) => Semantics::Contract(c),
            Observer::Hardware(m) => hw::resolve(program, m, layout)?,
        };
        Ok(Bound { program, layout, semantics, config })
    }

    /// Attacker-view trace set, or `None` if the committed run faults or
    /// does not halt within the fuel budget.
    fn observe(&self, state: &ArchState) -> Result<Option<TraceSet>, NiError> {
        match crate::machine::run_seq(self.program, state, self.layout, self.config.fuel) {
            Err(e) => {
                log::trace!("excluded state: {e}");
                return Ok(None);
            }
            Ok(run) if run.outcome == RunOutcome::FuelExhausted => return Ok(None),
            Ok(_) => {}
        }
        let t = self.semantics.trace_set(self.program, state, self.layout, self.config.fuel, self.config.trace_cap)?;
        Ok(Some(view_set(&t.traces, self.semantics.leak())))
    }
}

/// pc, public registers, public private bytes, shared memory.
type PublicKey = (usize, Vec<u64>, Vec<u8>, Vec<(u64, u8)>);

fn public_key(policy: &Policy, s: &ArchState) -> PublicKey {
    (
        s.pc,
        policy.public_regs.iter().map(|r| s.reg(*r)).collect(),
        policy.public_private_cells.iter().map(|c| s.byte(Domain::Private, *c)).collect(),
        s.memory(Domain::Shared).collect(),
    )
}

fn enumerate(space: &StateSpace, layout: &MemoryLayout, config: &CheckConfig) -> Result<Vec<ArchState>, NiError> {
    let n = space.size().unwrap_or(usize::MAX);
    if config.sampling.is_none() && n.saturating_mul(n) > config.pair_cap {
        return Err(NiError::EnumerationCapExceeded(n.saturating_mul(n), config.pair_cap));
    }
    (0..n).map(|i| space.state(i, layout).map_err(NiError::Space)).collect()
}

/// Index pairs to compare when sampling. For direct checks the right
/// state is the left one with every secret component redrawn.
fn sample_pairs(n: usize, s: Sampling) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    (0..s.pairs).map(|_| (rng.gen_range(0..n), rng.gen_range(0..n))).collect()
}

/// First violating pair in enumeration order among `groups`, where every
/// member of a group must observe the same thing.
fn first_violation(groups: impl Iterator<Item = Vec<usize>>, views: &[Option<TraceSet>]) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    for g in groups {
        let first = g[0];
        if let Some(&j) = g.iter().find(|&&j| views[j] != views[first]) {
            if best.is_none_or(|b| (first, j) < b) {
                best = Some((first, j));
            }
        }
    }
    best
}

/// Greedily reset components of the pair to the base state while `bad`
/// still holds.
fn shrink(
    space: &StateSpace,
    layout: &MemoryLayout,
    mut pair: (ArchState, ArchState),
    bad: &(dyn Fn(&ArchState, &ArchState) -> Result<bool, NiError> + Sync),
) -> Result<(ArchState, ArchState), NiError> {
    let mut progress = true;
    while progress {
        progress = false;
        for k in 0..space.components() {
            for side in 0..3 {
                let mut cand = pair.clone();
                if side != 1 {
                    space.copy_component(k, &space.base, &mut cand.0, layout);
                }
                if side != 0 {
                    space.copy_component(k, &space.base, &mut cand.1, layout);
                }
                if cand != pair && bad(&cand.0, &cand.1)? {
                    pair = cand;
                    progress = true;
                }
            }
        }
    }
    Ok(pair)
}

fn witness(bound: &Bound<'_>, left: ArchState, right: ArchState) -> Result<Witness, NiError> {
    let left_traces = bound.observe(&left)?.unwrap_or_default();
    let right_traces = bound.observe(&right)?.unwrap_or_default();
    Ok(Witness { left, right, left_traces, right_traces })
}

fn observe_all(bound: &Bound<'_>, states: &[ArchState]) -> Result<Vec<Option<TraceSet>>, NiError> {
    states.par_iter().map(|s| bound.observe(s)).collect()
}

/// Every pair of policy-equivalent states yields the same observations.
pub fn check_direct_ni(
    program: &Program,
    contract: Contract,
    policy: &Policy,
    space: &StateSpace,
    layout: &MemoryLayout,
    config: CheckConfig,
) -> Result<NiVerdict, NiError> {
    check_direct(program, Observer::Contract(contract), policy, space, layout, config)
}

/// Direct non-interference for any observer, contract or hardware.
pub fn check_direct(
    program: &Program,
    observer: Observer,
    policy: &Policy,
    space: &StateSpace,
    layout: &MemoryLayout,
    config: CheckConfig,
) -> Result<NiVerdict, NiError> {
    let bound = Bound::new(observer, program, layout, config)?;
    let states = enumerate(space, layout, &config)?;
    let views = observe_all(&bound, &states)?;
    let excluded = views.iter().filter(|v| v.is_none()).count();

    let found = match config.sampling {
        None => {
            let mut groups: BTreeMap<_, Vec<usize>> = BTreeMap::new();
            for (i, s) in states.iter().enumerate() {
                if views[i].is_some() {
                    groups.entry(public_key(policy, s)).or_default().push(i);
                }
            }
            first_violation(groups.into_values(), &views)
        }
        Some(s) => sample_pairs(states.len(), s).into_iter().find(|&(i, j)| {
            views[i].is_some() && views[j].is_some() && policy.equivalent(&states[i], &states[j]) && views[i] != views[j]
        }),
    };
    let witness = match found {
        None => None,
        Some((i, j)) => {
            let bad = |a: &ArchState, b: &ArchState| -> Result<bool, NiError> {
                if !policy.equivalent(a, b) {
                    return Ok(false);
                }
                match (bound.observe(a)?, bound.observe(b)?) {
                    (Some(x), Some(y)) => Ok(x != y),
                    _ => Ok(false),
                }
            };
            let mut pair = (states[i].clone(), states[j].clone());
            if config.shrink {
                pair = shrink(space, layout, pair, &bad)?;
            }
            Some(witness(&bound, pair.0, pair.1)?)
        }
    };
    Ok(NiVerdict { holds: witness.is_none(), witness, states: states.len(), excluded })
}

/// Whenever `premise` observes the same for two states, so does
/// `conclusion`. Quantifies over all pairs, not only policy-equivalent ones.
pub fn check_relative(
    program: &Program,
    premise: Observer,
    conclusion: Observer,
    space: &StateSpace,
    layout: &MemoryLayout,
    config: CheckConfig,
) -> Result<NiVerdict, NiError> {
    let a = Bound::new(premise, program, layout, config)?;
    let b = Bound::new(conclusion, program, layout, config)?;
    let states = enumerate(space, layout, &config)?;
    let va = observe_all(&a, &states)?;
    let vb = observe_all(&b, &states)?;
    let live = |i: usize| va[i].is_some() && vb[i].is_some();
    let excluded = (0..states.len()).filter(|&i| !live(i)).count();

    let found = match config.sampling {
        None => {
            let mut groups: BTreeMap<&TraceSet, Vec<usize>> = BTreeMap::new();
            for i in (0..states.len()).filter(|&i| live(i)) {
                groups.entry(va[i].as_ref().unwrap()).or_default().push(i);
            }
            first_violation(groups.into_values(), &vb)
        }
        Some(s) => sample_pairs(states.len(), s)
            .into_iter()
            .find(|&(i, j)| live(i) && live(j) && va[i] == va[j] && vb[i] != vb[j]),
    };
    let witness = match found {
        None => None,
        Some((i, j)) => {
            let bad = |x: &ArchState, y: &ArchState| -> Result<bool, NiError> {
                match (a.observe(x)?, a.observe(y)?, b.observe(x)?, b.observe(y)?) {
                    (Some(ax), Some(ay), Some(bx), Some(by)) => Ok(ax == ay && bx != by),
                    _ => Ok(false),
                }
            };
            let mut pair = (states[i].clone(), states[j].clone());
            if config.shrink {
                pair = shrink(space, layout, pair, &bad)?;
            }
            Some(witness(&b, pair.0, pair.1)?)
        }
    };
    Ok(NiVerdict { holds: witness.is_none(), witness, states: states.len(), excluded })
}

/// Relative non-interference between two contracts.
pub fn check_relative_ni(
    program: &Program,
    contract_a: Contract,
    contract_b: Contract,
    space: &StateSpace,
    layout: &MemoryLayout,
    config: CheckConfig,
) -> Result<NiVerdict, NiError> {
    check_relative(program, Observer::Contract(contract_a), Observer::Contract(contract_b), space, layout, config)
}

/// A program with the states to check it over.
#[derive(Debug, Clone)]
pub struct Case<'a> {
    pub name: &'a str,
    pub program: &'a Program,
    pub space: &'a StateSpace,
}

#[derive(Debug, Clone, Serialize)]
pub struct Satisfaction {
    pub mode: HwMode,
    pub contract: Contract,
    pub holds: bool,
    pub programs: Vec<(String, NiVerdict)>,
}

/// Hardware `mode` leaks nothing beyond `contract` on each program.
pub fn check_hw_satisfies(
    mode: HwMode,
    contract: Contract,
    cases: &[Case<'_>],
    layout: &MemoryLayout,
    config: CheckConfig,
) -> Result<Satisfaction, NiError> {
    let mut programs = Vec::new();
    for c in cases {
        let v = check_relative(c.program, Observer::Contract(contract), Observer::Hardware(mode), c.space, layout, config)?;
        programs.push((c.name.to_string(), v));
    }
    Ok(Satisfaction { mode, contract, holds: programs.iter().all(|(_, v)| v.holds), programs })
}

/// Re-run both observers on a witness and confirm it still separates them.
pub fn replay_relative(
    program: &Program,
    premise: Observer,
    conclusion: Observer,
    w: &Witness,
    layout: &MemoryLayout,
    config: CheckConfig,
) -> Result<bool, NiError> {
    let a = Bound::new(premise, program, layout, config)?;
    let b = Bound::new(conclusion, program, layout, config)?;
    Ok(a.observe(&w.left)? == a.observe(&w.right)? && b.observe(&w.left)? != b.observe(&w.right)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::parse_program;
    use crate::hw::{SHM_SEQ, SHM_SPEC, SHM_STL};

    fn r(n: &str) -> Reg {
        Reg::parse(n).unwrap()
    }

    const LEFT: &str = "  csrwi MSPEC, BURST_ON\n  add a2,a0,a2\n  bgeu a0,a2,.end\n.loop:\n  lbu a4,0(a1)\n  add a1,a1,1\n  add a0,a0,1\n  sb a4,-1(a0)\n  bne a1,a2,.loop\n.end:\n  csrwi MSPEC, BURST_OFF\n";
    const RIGHT: &str = "  add a2,a0,a2\n  bgeu a0,a2,.end\n  csrwi MSPEC, BURST_ON\n.loop:\n  lbu a4,0(a1)\n  add a1,a1,1\n  add a0,a0,1\n  sb a4,-1(a0)\n  bne a1,a2,.loop\n  csrwi MSPEC, BURST_OFF\n.end:\n";

    // The listing loops until src reaches dest + len; states where src
    // starts above that walk off the mapped ranges and are excluded.
    fn memcpy_space() -> StateSpace {
        StateSpace::with_defaults(ArchState::new(), &[r("a0"), r("a1"), r("a2")], &[])
    }

    #[test]
    fn no_memory_means_direct_ni() {
        let p = parse_program("add a0, a1, a2\nbeq a0, x0, e\naddi a0, a0, 1\ne:").unwrap();
        let space = StateSpace::with_defaults(ArchState::new(), &[r("a1"), r("a2")], &[]);
        let v = check_direct_ni(&p, SHM_SEQ, &Policy::all_secret(), &space, &MemoryLayout::default(), CheckConfig::default()).unwrap();
        assert!(v.holds);
        assert_eq!(v.states, 16);
    }

    #[test]
    fn public_pointer_load_is_ni() {
        let p = parse_program("lbu a4, 0(a1)").unwrap();
        let space = StateSpace::new(ArchState::new()).vary_reg(r("a1"), [0x8000, 0x8001]).vary_reg(r("a0"), [0, 1]);
        let pol = Policy::with_public_regs([r("a1")]);
        let v = check_direct_ni(&p, SHM_SEQ, &pol, &space, &MemoryLayout::default(), CheckConfig::default()).unwrap();
        assert!(v.holds);
        // a secret pointer is not
        let v = check_direct_ni(&p, SHM_SEQ, &Policy::all_secret(), &space, &MemoryLayout::default(), CheckConfig::default()).unwrap();
        assert!(!v.holds);
        let w = v.witness.unwrap();
        assert_ne!(w.left.reg(r("a1")), w.right.reg(r("a1")));
        // shrinking reset the irrelevant register on both sides
        assert_eq!(w.left.reg(r("a0")), 0);
        assert_eq!(w.right.reg(r("a0")), 0);
    }

    #[test]
    fn faulting_states_are_excluded() {
        let p = parse_program("lbu a4, 0(a1)").unwrap();
        let space = StateSpace::with_defaults(ArchState::new(), &[r("a1")], &[]);
        let v = check_direct_ni(&p, SHM_SEQ, &Policy::all_secret(), &space, &MemoryLayout::default(), CheckConfig::default()).unwrap();
        assert_eq!(v.excluded, 3);
        assert!(v.holds);
    }

    #[test]
    fn relative_ni_memcpy() {
        let layout = MemoryLayout::default();
        let cfg = CheckConfig::default();
        let right = parse_program(RIGHT).unwrap();
        assert!(check_relative_ni(&right, SHM_SEQ, SHM_STL, &memcpy_space(), &layout, cfg).unwrap().holds);
        let left = parse_program(LEFT).unwrap();
        let v = check_relative_ni(&left, SHM_SEQ, SHM_STL, &memcpy_space(), &layout, cfg).unwrap();
        assert!(!v.holds);
        let w = v.witness.unwrap();
        assert_eq!(w.left.reg(r("a2")), 0);
        assert_eq!(w.right.reg(r("a2")), 0);
        assert_ne!(w.left.reg(r("a1")), w.right.reg(r("a1")));
        assert!(replay_relative(&left, Observer::Contract(SHM_SEQ), Observer::Contract(SHM_STL), &w, &layout, cfg).unwrap());
    }

    #[test]
    fn reflexive() {
        let left = parse_program(LEFT).unwrap();
        for c in [SHM_SEQ, SHM_STL, SHM_SPEC] {
            let v = check_relative_ni(&left, c, c, &memcpy_space(), &MemoryLayout::default(), CheckConfig::default()).unwrap();
            assert!(v.holds);
        }
    }

    #[test]
    fn hardware_satisfaction() {
        let layout = MemoryLayout::default();
        let left = parse_program(LEFT).unwrap();
        let space = memcpy_space();
        let cases = [Case { name: "left", program: &left, space: &space }];
        let cfg = CheckConfig::default();
        assert!(check_hw_satisfies(HwMode::Mi6, SHM_SEQ, &cases, &layout, cfg).unwrap().holds);
        assert!(check_hw_satisfies(HwMode::Safe, SHM_SEQ, &cases, &layout, cfg).unwrap().holds);
        assert!(!check_hw_satisfies(HwMode::Burst, SHM_SEQ, &cases, &layout, cfg).unwrap().holds);
        assert!(check_hw_satisfies(HwMode::BurstSta, SHM_SEQ, &cases, &layout, cfg).unwrap().holds);
    }

    #[test]
    fn pair_cap() {
        let p = parse_program("li a0, 1").unwrap();
        let space = StateSpace::with_defaults(ArchState::new(), &[r("a0"), r("a1"), r("a2")], &[]);
        let cfg = CheckConfig { pair_cap: 100, ..CheckConfig::default() };
        assert_eq!(
            check_direct_ni(&p, SHM_SEQ, &Policy::all_secret(), &space, &MemoryLayout::default(), cfg).unwrap_err(),
            NiError::EnumerationCapExceeded(4096, 100)
        );
    }

    #[test]
    fn sampling_finds_the_memcpy_leak() {
        let left = parse_program(LEFT).unwrap();
        let cfg = CheckConfig { sampling: Some(Sampling { pairs: 2000, seed: 7 }), ..CheckConfig::default() };
        let v = check_relative_ni(&left, SHM_SEQ, SHM_STL, &memcpy_space(), &MemoryLayout::default(), cfg).unwrap();
        assert!(!v.holds);
    }

    #[test]
    fn space_json() {
        let j = r#"{"registers":{"a0":[0,"0x8000"]},"cells":{"0x1004":[0,1]},"base":{"regs":{"a1":4096}}}"#;
        let s: StateSpace = serde_json::from_str(j).unwrap();
        assert_eq!(s.size(), Some(4));
        let st = s.state(3, &MemoryLayout::default()).unwrap();
        assert_eq!(st.reg(r("a0")), 0x8000);
        assert_eq!(st.byte(Domain::Private, 0x1004), 1);
        assert_eq!(st.reg(r("a1")), 4096);
        let pol: Policy = serde_json::from_str(r#"{"public_regs":["a0"],"public_private_cells":["0x1000",4097],"names":{"a2":"len"}}"#).unwrap();
        assert!(pol.is_public_reg(r("a0")));
        assert_eq!(pol.public_private_cells.len(), 2);
        assert_eq!(pol.display_name(r("a2")), "len");
    }
}
