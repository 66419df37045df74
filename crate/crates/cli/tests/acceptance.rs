//! Acceptance checks, one line per criterion.
//!
//! Run with `cargo test --test acceptance`. Exits non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rmi_core::asm::{parse_program, Reg};
use rmi_core::contract::{
    contract_trace_set, view_set, Contract, ExecModel, LeakageModel, TraceSet, DEFAULT_ENUMERATION_CAP,
};
use rmi_core::corpus::{load_corpus, CorpusEntry};
use rmi_core::hw::{self, HwMode, Semantics, SHM_SEQ, SHM_SPEC, SHM_STL};
use rmi_core::llc::{reference_table, Geometry, Llc, PartitionTable, DRAM_BYTES, REGIONS, REGION_BYTES};
use rmi_core::machine::{run_seq, ArchState, Domain, MemoryLayout, RunOutcome};
use rmi_core::ni::{self, Case, CheckConfig, Observer, Policy, StateSpace};
use rmi_core::sta;

const STA_TIME_LIMIT: Duration = Duration::from_secs(1);
const GADGET_TIME_LIMIT: Duration = Duration::from_secs(60);
const LATTICE_PAIRS: usize = 1000;
const RANDOM_SNIPPETS: usize = 200;
const MAX_SNIPPET_LEN: usize = 12;
const LLC_SEQUENCES: usize = 10_000;
const SEED: u64 = 0x5eed;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn entry<'a>(corpus: &'a [CorpusEntry], name: &str) -> &'a CorpusEntry {
    corpus.iter().find(|e| e.name == name).unwrap_or_else(|| panic!("corpus lacks {name}"))
}

fn reg(n: &str) -> Reg {
    Reg::parse(n).unwrap()
}

fn criterion_1(corpus: &[CorpusEntry]) -> Outcome {
    let left = entry(corpus, "memcpy-left");
    let t = Instant::now();
    let rep = sta::analyze(&left.program, &left.policy, &left.layout).map_err(|e| e.to_string())?;
    let dt_left = t.elapsed();
    ensure(!rep.passed(), "memcpy-left passed")?;
    let leaked = rep.leaked_set();
    ensure(leaked.contains(&reg("a1")) && leaked.contains(&reg("a2")), format!("leaked set {leaked:?}"))?;
    let conds: BTreeSet<String> = rep.leaked_initial_registers.iter().map(|l| l.condition.to_string()).collect();
    ensure(conds.iter().all(|c| c.contains("line 3") && c.contains("len == 0")), format!("conditions {conds:?}"))?;

    let right = entry(corpus, "memcpy-right");
    let t = Instant::now();
    let rep = sta::analyze(&right.program, &right.policy, &right.layout).map_err(|e| e.to_string())?;
    let dt_right = t.elapsed();
    ensure(rep.passed(), "memcpy-right failed")?;
    ensure(dt_left < STA_TIME_LIMIT && dt_right < STA_TIME_LIMIT, format!("slow: {dt_left:?} / {dt_right:?}"))?;
    Ok(format!("left fails leaking {:?} when {}; right passes ({dt_left:?}, {dt_right:?})", leaked.iter().map(|r| r.name()).collect::<Vec<_>>(), conds.iter().next().unwrap()))
}

fn criterion_2(corpus: &[CorpusEntry]) -> Outcome {
    let e = entry(corpus, "spectre-v1");
    let cfg = e.config(CheckConfig::default());
    let t = Instant::now();
    let mut witnesses = 0;
    for obs in [Observer::Hardware(HwMode::Insecure), Observer::Contract(SHM_SPEC)] {
        let v = ni::check_direct(&e.program, obs, &e.policy, &e.space, &e.layout, cfg).map_err(|x| x.to_string())?;
        let w = v.witness.ok_or_else(|| format!("{obs}: no violation"))?;
        ensure(w.left.regs() == w.right.regs(), "witness registers differ")?;
        ensure(w.left.memory(Domain::Shared).eq(w.right.memory(Domain::Shared)), "witness shared memory differs")?;
        let cells = |s: &ArchState| s.memory(Domain::Private).collect::<BTreeSet<_>>();
        let diff: BTreeSet<u64> = cells(&w.left).symmetric_difference(&cells(&w.right)).map(|(a, _)| *a).collect();
        ensure(diff.len() == 1, format!("witness differs in {diff:?}"))?;
        let addr = *diff.iter().next().unwrap();
        ensure(!e.policy.public_private_cells.contains(&addr), format!("{addr:#x} is public"))?;
        witnesses += 1;
    }
    let safe = ni::check_direct(&e.program, Observer::Hardware(HwMode::Safe), &e.policy, &e.space, &e.layout, cfg)
        .map_err(|x| x.to_string())?;
    ensure(safe.holds, "safe mode leaks")?;
    let dt = t.elapsed();
    ensure(dt < GADGET_TIME_LIMIT, format!("took {dt:?}"))?;
    Ok(format!("{witnesses} one-secret-byte witnesses (insecure, shm-spec); safe holds; {dt:?}"))
}

fn cases(corpus: &[CorpusEntry]) -> Vec<Case<'_>> {
    corpus.iter().map(|e| Case { name: &e.name, program: &e.program, space: &e.space }).collect()
}

fn satisfies_all(corpus: &[CorpusEntry], mode: HwMode, contract: Contract) -> Result<usize, String> {
    let mut ok = 0;
    for (e, c) in corpus.iter().zip(cases(corpus)) {
        let s = ni::check_hw_satisfies(mode, contract, &[c], &e.layout, e.config(CheckConfig::default()))
            .map_err(|x| x.to_string())?;
        ensure(s.holds, format!("{mode} does not satisfy {contract} on {}", e.name))?;
        ok += 1;
    }
    Ok(ok)
}

fn criterion_3(corpus: &[CorpusEntry]) -> Outcome {
    let n = satisfies_all(corpus, HwMode::Safe, SHM_SEQ)?;
    Ok(format!("safe satisfies shm-seq on {n}/{} entries", corpus.len()))
}

fn criterion_4(corpus: &[CorpusEntry]) -> Outcome {
    let a = satisfies_all(corpus, HwMode::Burst, SHM_STL)?;
    let b = satisfies_all(corpus, HwMode::BurstSta, SHM_SEQ)?;
    let left = entry(corpus, "memcpy-left");
    let gated = hw::resolve(&left.program, HwMode::BurstSta, &left.layout).map_err(|e| e.to_string())?;
    ensure(gated == Semantics::Empty, "memcpy-left is not gated to the empty semantics")?;
    Ok(format!("burst => shm-stl on {a}, burst_sta => shm-seq on {b} entries; memcpy-left gated to empty"))
}

/// Observations of every contract for one state, or None if it faults.
fn all_views(e: &CorpusEntry, s: &ArchState, fuel: usize) -> Option<Vec<Vec<TraceSet>>> {
    match run_seq(&e.program, s, &e.layout, fuel) {
        Ok(r) if r.outcome == RunOutcome::Halted => {}
        _ => return None,
    }
    let execs = [ExecModel::seq(), ExecModel::stl(), ExecModel::spec()];
    let mut out = Vec::new();
    for exec in execs {
        let mut row = Vec::new();
        for leak in [LeakageModel::Arch, LeakageModel::Ct, LeakageModel::Mem, LeakageModel::Shm] {
            let t = contract_trace_set(&e.program, s, &e.layout, Contract::new(leak, exec), fuel, DEFAULT_ENUMERATION_CAP).ok()?;
            row.push(view_set(&t, leak));
        }
        out.push(row);
    }
    Some(out)
}

fn criterion_5(corpus: &[CorpusEntry]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut checked = 0;
    let mut equal_pairs = 0;
    for e in corpus {
        let fuel = e.config(CheckConfig::default()).fuel;
        let n = e.space.size().ok_or("space too large")?;
        let views: Vec<_> = (0..n).map(|i| e.space.state(i, &e.layout).ok().and_then(|s| all_views(e, &s, fuel))).collect();
        let live: Vec<usize> = (0..n).filter(|i| views[*i].is_some()).collect();
        ensure(!live.is_empty(), format!("{}: no terminating states", e.name))?;
        for _ in 0..LATTICE_PAIRS {
            let i = *live.choose(&mut rng).unwrap();
            let j = *live.choose(&mut rng).unwrap();
            let (a, b) = (views[i].as_ref().unwrap(), views[j].as_ref().unwrap());
            // leak order arch, ct, mem, shm; exec order seq, stl, spec
            for x in 0..3 {
                for k in 0..3 {
                    if a[x][k] == b[x][k] && a[x][k + 1] != b[x][k + 1] {
                        return Err(format!("{}: leak lattice broken at exec {x}, states {i}/{j}", e.name));
                    }
                }
            }
            for k in 0..4 {
                for x in (1..3).rev() {
                    if a[x][k] == b[x][k] && a[x - 1][k] != b[x - 1][k] {
                        return Err(format!("{}: exec lattice broken at leak {k}, states {i}/{j}", e.name));
                    }
                }
            }
            if a[2][0] == b[2][0] {
                equal_pairs += 1;
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} sampled pairs over {} entries, 0 counterexamples ({equal_pairs} with equal arch-spec traces)", corpus.len()))
}

const POOL: [&str; 5] = ["a0", "a1", "a2", "t0", "t1"];

/// A Burst-wrapped snippet of at most `MAX_SNIPPET_LEN` instructions with forward branches only.
fn random_snippet(rng: &mut ChaCha8Rng) -> String {
    let body = rng.gen_range(1..=MAX_SNIPPET_LEN - 2);
    let r = |rng: &mut ChaCha8Rng| *POOL.choose(rng).unwrap();
    let mut s = String::from("  csrwi MSPEC, BURST_ON\n");
    for i in 0..body {
        s.push_str(&format!("L{i}:\n"));
        let line = match rng.gen_range(0..9) {
            0 | 1 => format!("lbu {}, {}({})", r(rng), rng.gen_range(0..2), r(rng)),
            2 => format!("sb {}, 0({})", r(rng), r(rng)),
            3 => format!("add {}, {}, {}", r(rng), r(rng), r(rng)),
            4 => format!("addi {}, {}, {}", r(rng), r(rng), [1, -1, 16].choose(rng).unwrap()),
            5 => format!("li {}, {}", r(rng), ["0", "1", "0x8000"].choose(rng).unwrap()),
            6 => format!("mv {}, {}", r(rng), r(rng)),
            7 => format!("slli {}, {}, 6", r(rng), r(rng)),
            _ => {
                let op = ["beq", "bne", "blt", "bgeu"].choose(rng).unwrap();
                format!("{op} {}, {}, L{}", r(rng), r(rng), rng.gen_range(i + 1..=body))
            }
        };
        s.push_str(&format!("  {line}\n"));
    }
    s.push_str(&format!("L{body}:\n  csrwi MSPEC, BURST_OFF\n"));
    s
}

fn snippet_space() -> StateSpace {
    let mut space = StateSpace::with_defaults(ArchState::new(), &[reg("a0"), reg("a1"), reg("a2")], &[0x8000, 0x8001]);
    space.cells.push((0x1000, vec![0, 1]));
    space
}

fn criterion_6(corpus: &[CorpusEntry]) -> Outcome {
    let policy = Policy::all_secret();
    let mut programs: Vec<(String, rmi_core::asm::Program, StateSpace, MemoryLayout, CheckConfig)> = corpus
        .iter()
        .map(|e| (e.name.clone(), e.program.clone(), e.space.clone(), e.layout, e.config(CheckConfig::default())))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    for k in 0..RANDOM_SNIPPETS {
        let src = random_snippet(&mut rng);
        let p = parse_program(&src).map_err(|e| format!("generated snippet {k}: {e}\n{src}"))?;
        ensure(p.len() <= MAX_SNIPPET_LEN, "snippet too long")?;
        programs.push((format!("random-{k}"), p, snippet_space(), MemoryLayout::default(), CheckConfig::default()));
    }
    let (mut passes, mut holds, mut conservative) = (0, 0, 0);
    for (name, p, space, layout, cfg) in &programs {
        let verdict = sta::analyze(p, &policy, layout).map_err(|e| format!("{name}: {e}"))?;
        let oracle = ni::check_relative_ni(p, SHM_SEQ, SHM_STL, space, layout, *cfg).map_err(|e| format!("{name}: {e}"))?;
        if verdict.passed() {
            passes += 1;
            ensure(oracle.holds, format!("{name}: analyzer passes but the oracle is violated"))?;
        }
        if oracle.holds {
            holds += 1;
            if !verdict.passed() {
                conservative += 1;
            }
        }
    }
    let rate = if holds == 0 { 0.0 } else { 100.0 * conservative as f64 / holds as f64 };
    Ok(format!(
        "{} programs, {passes} pass, 0 unsound; conservative fails {conservative}/{holds} oracle-safe ({rate:.1}%)",
        programs.len()
    ))
}

fn criterion_7() -> Outcome {
    let g = Geometry::default();
    ensure((g.total_sets, g.ways, g.line_bytes) == (1024, 16, 64), "geometry")?;
    let table = reference_table(&g).map_err(|e| e.to_string())?;
    let mut llc = Llc::new(g, PartitionTable::new()).map_err(|e| e.to_string())?;
    llc.configure(table.clone(), 0).map_err(|e| format!("layout rejected: {e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    for _ in 0..1000 {
        let a = rng.gen_range(0..REGIONS);
        let b = (a + rng.gen_range(1..REGIONS)) % REGIONS;
        let base = rng.gen_range(0..1000);
        let t = PartitionTable::new()
            .with(a, base, rng.gen_range(1..=(1024 - base).min(24)))
            .and_then(|t| {
                let ea = t.entry(a).unwrap();
                let inside = rng.gen_range(ea.base..ea.base + ea.size);
                let start = inside.saturating_sub(rng.gen_range(0..3));
                t.with(b, start, (inside - start + 1).max(1))
            })
            .map_err(|e| e.to_string())?;
        ensure(t.validate(&g).is_err(), format!("overlap accepted: {t:?}"))?;
    }

    let mut flushed = 0;
    for (r, e) in table.configured() {
        let mut c = Llc::new(g, table.clone()).unwrap();
        for k in 0..(g.total_sets * g.ways) as u64 {
            c.access(r as u64 * REGION_BYTES + k * g.line_bytes).unwrap();
        }
        ensure(c.region_lines(r) == e.size * g.ways, format!("region {r} not full before flush"))?;
        let set = c.eviction_set(r).unwrap();
        ensure(set.len() == e.size * g.ways, format!("region {r}: eviction set {}", set.len()))?;
        let mut short = c.clone();
        for a in &set[..set.len() - 1] {
            short.access(*a).unwrap();
        }
        ensure(short.region_lines(r) > 0, format!("region {r}: a smaller eviction set sufficed"))?;
        let st = c.flush_region(r).unwrap();
        ensure(st.accesses == e.size * g.ways && c.region_lines(r) == 0, format!("region {r}: {st:?}"))?;
        flushed += 1;
    }

    let mut total = 0;
    for _ in 0..LLC_SEQUENCES {
        let mut c = Llc::new(g, table.clone()).unwrap();
        for _ in 0..rng.gen_range(1..64) {
            let region = rng.gen_range(0..REGIONS) as u64;
            let zero = if rng.gen_bool(0.1) { DRAM_BYTES } else { 0 };
            let addr = zero + region * REGION_BYTES + rng.gen_range(0..1u64 << 16) * g.line_bytes;
            let o = c.access(addr).unwrap();
            if let Some(v) = o.evicted {
                ensure(v.region == region as usize, format!("access to region {region} evicted a line of region {}", v.region))?;
            }
            total += 1;
        }
        ensure(c.check_invariants(), "a line sits outside its region's sets")?;
    }
    Ok(format!(
        "layout uses {} sets; 1000 overlapping tables rejected; {flushed} regions flushed with size x ways accesses (minimal); {LLC_SEQUENCES} sequences / {total} accesses isolated",
        table.total_sets_used()
    ))
}

fn criterion_8() -> Outcome {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..");
    let run = || {
        Command::new(env!("CARGO_BIN_EXE_rmi")).args(["--json", "corpus-verify"]).current_dir(&root).output().unwrap()
    };
    let (a, b) = (run(), run());
    ensure(a.status.success() && b.status.success(), "corpus-verify failed")?;
    ensure(a.stdout == b.stdout, "outputs differ")?;
    Ok(format!("two runs, {} identical bytes", a.stdout.len()))
}

fn main() {
    let corpus = load_corpus().expect("corpus loads");
    let criteria: Vec<Criterion> = vec![
        ("memcpy analyzer verdicts", Box::new(|| criterion_1(&corpus))),
        ("universal read gadget", Box::new(|| criterion_2(&corpus))),
        ("safe mode satisfies shm-seq", Box::new(|| criterion_3(&corpus))),
        ("burst containment and composition", Box::new(|| criterion_4(&corpus))),
        ("contract lattice", Box::new(|| criterion_5(&corpus))),
        ("analyzer soundness", Box::new(|| criterion_6(&corpus))),
        ("LLC partitioning and flush", Box::new(criterion_7)),
        ("deterministic corpus-verify", Box::new(criterion_8)),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(msg) => println!("criterion {} PASS {name}: {msg}", k + 1),
            Err(msg) => {
                failed += 1;
                println!("criterion {} FAIL {name}: {msg}", k + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
