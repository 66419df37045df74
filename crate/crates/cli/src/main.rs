use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::debug;
use serde::Serialize;

use rmi_core::asm::{parse_program, Program};
use rmi_core::contract::{Contract, Observation, ObservationTrace, DEFAULT_ENUMERATION_CAP};
use rmi_core::corpus::{self, CorpusEntry};
use rmi_core::hw::{self, HwMode};
use rmi_core::llc::{Geometry, Llc, PartitionTable, REGION_BYTES};
use rmi_core::machine::{ArchState, MemoryLayout};
use rmi_core::ni::{self, Case, CheckConfig, NiVerdict, Observer, Policy, Sampling, StateSpace, DEFAULT_PAIR_CAP};
use rmi_core::sta::{self, Declassify, StaConfig};

const EXIT_USAGE: u8 = 64;
const EXIT_VIOLATED: u8 = 1;
const EXIT_STA_FAIL: u8 = 2;
const EXIT_ERROR: u8 = 3;

/// Check programs for speculative leaks into shared memory.
#[derive(Parser)]
#[command(name = "rmi", version)]
struct Cli {
    /// Seed for sampled pair selection.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Emit JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the observation traces of one run.
    Trace(TraceArgs),
    /// Check direct or relative non-interference of a program.
    Ni(NiArgs),
    /// Check that a hardware mode satisfies a contract over programs.
    HwCheck(HwCheckArgs),
    /// Run the static analyzer on a program's Burst regions.
    Sta(StaArgs),
    /// Validate an LLC partition table and report flush costs.
    Cache(CacheArgs),
    /// Re-run every corpus entry's expected verdicts.
    CorpusVerify(CorpusArgs),
}

#[derive(Args)]
struct Inputs {
    /// Assembly file. A `.json` sidecar next to it supplies defaults.
    program: PathBuf,
    /// Memory layout JSON.
    #[arg(long)]
    layout: Option<PathBuf>,
    /// Policy JSON.
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Step budget per run.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    fuel: Option<u64>,
}

#[derive(Args)]
struct TraceArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Initial state JSON; all zero when omitted.
    #[arg(long)]
    state: Option<PathBuf>,
    /// Contract such as `shm-spec`.
    #[arg(long, conflicts_with = "mode")]
    contract: Option<Contract>,
    /// Hardware mode instead of a contract.
    #[arg(long)]
    mode: Option<HwMode>,
    /// Cap on enumerated traces.
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP, value_parser = positive)]
    cap: usize,
}

#[derive(Args)]
struct NiArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// State space JSON.
    #[arg(long)]
    space: Option<PathBuf>,
    /// Concluding observer: a contract or a hardware mode.
    #[arg(long)]
    observer: Observer,
    /// Premise observer; makes the check relative.
    #[arg(long)]
    premise: Option<Observer>,
    /// Check this many random pairs instead of all.
    #[arg(long, value_parser = positive)]
    sample: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_PAIR_CAP, value_parser = positive)]
    pair_cap: usize,
}

#[derive(Args)]
struct HwCheckArgs {
    #[arg(long)]
    mode: HwMode,
    #[arg(long)]
    contract: Contract,
    /// Corpus directory; the built-in corpus when omitted.
    #[arg(long)]
    corpus: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DeclassifyArg {
    Shared,
    Any,
}

#[derive(Args)]
struct StaArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long, value_enum, default_value = "shared")]
    declassify: DeclassifyArg,
    #[arg(long, value_parser = positive)]
    spec_depth: Option<usize>,
}

#[derive(Args)]
struct CacheArgs {
    /// Partition table JSON: {"<region>": {"base": b, "size": s}}.
    #[arg(long)]
    table: PathBuf,
    #[arg(long)]
    show_flush_cost: bool,
    /// Fill each region, flush it, and count what remains.
    #[arg(long)]
    verify_flush: bool,
    #[arg(long, default_value_t = 1 << 20, value_parser = positive_u64)]
    cache_bytes: u64,
    #[arg(long, default_value_t = 16, value_parser = positive)]
    ways: usize,
    #[arg(long, default_value_t = 64, value_parser = positive_u64)]
    line_bytes: u64,
}

#[derive(Args)]
struct CorpusArgs {
    /// Corpus directory; the built-in corpus when omitted.
    #[arg(long)]
    dir: Option<PathBuf>,
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be positive".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

fn positive_u64(s: &str) -> Result<u64, String> {
    positive(s).map(|n| n as u64)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn run(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Trace(a) => trace(cli, a),
        Command::Ni(a) => ni_cmd(cli, a),
        Command::HwCheck(a) => hw_check(cli, a),
        Command::Sta(a) => sta_cmd(cli, a),
        Command::Cache(a) => cache(cli, a),
        Command::CorpusVerify(a) => corpus_verify(cli, a),
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn print_json(v: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

/// A program with everything the commands need, defaults filled from its sidecar.
struct Loaded {
    name: String,
    program: Program,
    layout: MemoryLayout,
    policy: Policy,
    space: Option<StateSpace>,
    fuel: Option<usize>,
}

fn load(inputs: &Inputs) -> Result<Loaded> {
    let source = read(&inputs.program)?;
    let stem = inputs.program.file_stem().and_then(|s| s.to_str()).unwrap_or("program").to_string();
    let sidecar = inputs.program.with_extension("json");
    let entry: Option<CorpusEntry> = if sidecar.is_file() {
        debug!("using sidecar {}", sidecar.display());
        Some(corpus::parse_entry(&stem, &source, &read(&sidecar)?)?)
    } else {
        None
    };
    let program = match &entry {
        Some(e) => e.program.clone(),
        None => parse_program(&source).map_err(|e| anyhow::anyhow!("{}:{e}", inputs.program.display()))?,
    };
    let layout = match &inputs.layout {
        Some(p) => read_json(p)?,
        None => entry.as_ref().map(|e| e.layout).unwrap_or_default(),
    };
    let policy = match &inputs.policy {
        Some(p) => read_json(p)?,
        None => entry.as_ref().map(|e| e.policy.clone()).unwrap_or_default(),
    };
    Ok(Loaded {
        name: entry.as_ref().map(|e| e.name.clone()).unwrap_or(stem),
        program,
        layout,
        policy,
        space: entry.as_ref().map(|e| e.space.clone()),
        fuel: inputs.fuel.map(|f| f as usize).or(entry.and_then(|e| e.fuel)),
    })
}

fn fmt_trace(t: &ObservationTrace) -> String {
    if t.is_empty() {
        return "(empty)".into();
    }
    t.events()
        .iter()
        .map(|o| match o {
            Observation::Pc { index } => format!("pc {index}"),
            Observation::Addr { addr, domain } => format!("{domain} {addr:#x}"),
            Observation::Val { value } => format!("val {value:#x}"),
            Observation::Rollback => "rollback".into(),
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn trace(cli: &Cli, a: &TraceArgs) -> Result<u8> {
    let l = load(&a.inputs)?;
    let state: ArchState = match &a.state {
        Some(p) => read_json(p)?,
        None => ArchState::new(),
    };
    let fuel = l.fuel.unwrap_or(CheckConfig::default().fuel);
    let (label, traces, diagnostics) = match (a.contract, a.mode) {
        (Some(c), _) => (c.to_string(), rmi_core::contract::contract_trace_set(&l.program, &state, &l.layout, c, fuel, a.cap)?, Vec::new()),
        (None, Some(m)) => {
            let t = hw::hw_trace_set(&l.program, &state, &l.layout, m, fuel, a.cap)?;
            (m.to_string(), t.traces, t.diagnostics)
        }
        (None, None) => bail!("give --contract or --mode"),
    };
    if cli.json {
        print_json(&serde_json::json!({ "program": l.name, "observer": label, "traces": traces, "diagnostics": diagnostics }))?;
    } else {
        println!("{} under {label}: {} trace(s)", l.name, traces.len());
        for t in &traces {
            println!("  {}", fmt_trace(t));
        }
        for d in &diagnostics {
            println!("  diagnostic: {}", serde_json::to_string(d)?);
        }
    }
    Ok(0)
}

fn check_config(cli: &Cli, fuel: Option<usize>, sample: Option<usize>, pair_cap: usize) -> CheckConfig {
    let base = CheckConfig::default();
    CheckConfig {
        fuel: fuel.unwrap_or(base.fuel),
        pair_cap,
        sampling: sample.map(|pairs| Sampling { pairs, seed: cli.seed }),
        ..base
    }
}

fn print_verdict(v: &NiVerdict, name: &str, label: &str) {
    println!("{name}: {label} {}", if v.holds { "holds" } else { "violated" });
    println!("  {} states, {} excluded (fault or fuel)", v.states, v.excluded);
    if let Some(w) = &v.witness {
        for (side, s, t) in [("left", &w.left, &w.left_traces), ("right", &w.right, &w.right_traces)] {
            println!("  {side}:  {}", serde_json::to_string(s).unwrap_or_default());
            for tr in t {
                println!("    {}", fmt_trace(tr));
            }
        }
    }
}

fn ni_cmd(cli: &Cli, a: &NiArgs) -> Result<u8> {
    let l = load(&a.inputs)?;
    let space = match (&a.space, l.space) {
        (Some(p), _) => read_json(p)?,
        (None, Some(s)) => s,
        (None, None) => bail!("no state space: give --space or a sidecar"),
    };
    let config = check_config(cli, l.fuel, a.sample, a.pair_cap);
    let (v, label) = match a.premise {
        Some(p) => (ni::check_relative(&l.program, p, a.observer, &space, &l.layout, config)?, format!("{p} => {}", a.observer)),
        None => (ni::check_direct(&l.program, a.observer, &l.policy, &space, &l.layout, config)?, a.observer.to_string()),
    };
    if cli.json {
        print_json(&v.report(&l.name, &label))?;
    } else {
        print_verdict(&v, &l.name, &label);
    }
    Ok(if v.holds { 0 } else { EXIT_VIOLATED })
}

fn load_corpus_from(dir: Option<&Path>) -> Result<Vec<CorpusEntry>> {
    Ok(match dir {
        Some(d) => corpus::load_dir(d)?,
        None => corpus::load_corpus()?,
    })
}

fn hw_check(cli: &Cli, a: &HwCheckArgs) -> Result<u8> {
    let entries = load_corpus_from(a.corpus.as_deref())?;
    let mut results = Vec::new();
    for e in &entries {
        let case = Case { name: &e.name, program: &e.program, space: &e.space };
        let config = e.config(check_config(cli, None, None, DEFAULT_PAIR_CAP));
        let s = ni::check_hw_satisfies(a.mode, a.contract, &[case], &e.layout, config)?;
        results.extend(s.programs);
    }
    let holds = results.iter().all(|(_, v)| v.holds);
    if cli.json {
        let programs: Vec<_> = results.iter().map(|(n, v)| v.report(n, format!("{} => {}", a.contract, a.mode))).collect();
        print_json(&serde_json::json!({
            "mode": a.mode, "contract": a.contract, "verdict": if holds { "holds" } else { "violated" }, "programs": programs
        }))?;
    } else {
        for (n, v) in &results {
            print_verdict(v, n, &format!("{} => {}", a.contract, a.mode));
        }
        println!("{} {} {}", a.mode, if holds { "satisfies" } else { "does not satisfy" }, a.contract);
    }
    Ok(if holds { 0 } else { EXIT_VIOLATED })
}

fn sta_cmd(cli: &Cli, a: &StaArgs) -> Result<u8> {
    let l = load(&a.inputs)?;
    let base = StaConfig::default();
    let config = StaConfig {
        spec_depth: a.spec_depth.unwrap_or(base.spec_depth),
        declassify: match a.declassify {
            DeclassifyArg::Shared => Declassify::SharedOnly,
            DeclassifyArg::Any => Declassify::AnyAccess,
        },
        ..base
    };
    let report = sta::analyze_with(&l.program, &l.policy, &l.layout, config)?;
    if cli.json {
        print_json(&report)?;
    } else {
        println!("{}: {}", l.name, if report.passed() { "pass" } else { "fail" });
        print!("{}", sta::explain(&report));
    }
    Ok(if report.passed() { 0 } else { EXIT_STA_FAIL })
}

#[derive(Serialize)]
struct RegionRow {
    region: usize,
    base: usize,
    size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    flush_cost: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    remaining_after_flush: Option<usize>,
}

fn cache(cli: &Cli, a: &CacheArgs) -> Result<u8> {
    let geometry = Geometry::from_capacity(a.cache_bytes, a.ways, a.line_bytes)?;
    let table: PartitionTable = read_json(&a.table)?;
    let llc = match Llc::new(geometry, table.clone()) {
        Ok(l) => l,
        Err(e) => {
            if cli.json {
                print_json(&serde_json::json!({ "valid": false, "error": e.to_string() }))?;
            } else {
                println!("invalid table: {e}");
            }
            return Ok(EXIT_VIOLATED);
        }
    };
    let mut rows = Vec::new();
    for (r, e) in table.configured() {
        let remaining = if a.verify_flush { Some(fill_and_flush(&llc, r)?) } else { None };
        rows.push(RegionRow {
            region: r,
            base: e.base,
            size: e.size,
            flush_cost: a.show_flush_cost.then(|| llc.flush_cost(r)).transpose()?,
            remaining_after_flush: remaining,
        });
    }
    if cli.json {
        print_json(&serde_json::json!({
            "valid": true, "geometry": geometry, "sets_used": table.total_sets_used(), "regions": rows
        }))?;
    } else {
        println!(
            "{} sets x {} ways x {}B lines; {} of {} sets assigned",
            geometry.total_sets,
            geometry.ways,
            geometry.line_bytes,
            table.total_sets_used(),
            geometry.total_sets
        );
        for row in &rows {
            print!("region {:>2}: sets {:>4}..{:<4}", row.region, row.base, row.base + row.size);
            if let Some(c) = row.flush_cost {
                print!("  flush {c:>5} accesses");
            }
            if let Some(n) = row.remaining_after_flush {
                print!("  {n} lines left after flush");
            }
            println!();
        }
    }
    Ok(0)
}

/// Fill every way of the region's sets with DRAM lines, flush, and count survivors.
fn fill_and_flush(llc: &Llc, region: usize) -> Result<usize> {
    let mut c = llc.clone();
    let g = *c.geometry();
    let start = region as u64 * REGION_BYTES;
    // every original index `ways` times covers each way of each set
    for k in 0..(g.total_sets * g.ways) as u64 {
        c.access(start + k * g.line_bytes)?;
    }
    c.flush_region(region)?;
    Ok(c.region_lines(region))
}

fn corpus_verify(cli: &Cli, a: &CorpusArgs) -> Result<u8> {
    let entries = load_corpus_from(a.dir.as_deref())?;
    let report = corpus::verify_all(&entries, check_config(cli, None, None, DEFAULT_PAIR_CAP));
    if cli.json {
        print_json(&report)?;
    } else {
        println!("{report}");
    }
    Ok(if report.ok { 0 } else { EXIT_VIOLATED })
}
