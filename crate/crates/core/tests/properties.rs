use proptest::prelude::*;

use rmi_core::asm::{parse_program, Reg};
use rmi_core::contract::{
    choice_points, committed_state, contract_trace, Contract, ExecModel, LeakageModel, Prediction, PredictorChoice,
};
use rmi_core::llc::{reference_table, Geometry, Llc, DRAM_BYTES, REGIONS, REGION_BYTES};
use rmi_core::machine::{run_seq, ArchState, MemoryLayout};
use rmi_core::ni::Policy;
use rmi_core::sta::{self, Declassify, StaConfig};

const REGS: [&str; 6] = ["a0", "a1", "a2", "t0", "t1", "x0"];

fn reg() -> impl Strategy<Value = &'static str> {
    prop::sample::select(&REGS[..])
}

/// One body line; `i` is its position and `n` the body length.
fn line(i: usize, n: usize) -> BoxedStrategy<String> {
    let mut arms: Vec<BoxedStrategy<String>> = vec![
        (reg(), 0..2i64, reg()).prop_map(|(d, o, b)| format!("lbu {d}, {o}({b})")).boxed(),
        (reg(), reg()).prop_map(|(s, b)| format!("sb {s}, 0({b})")).boxed(),
        (reg(), reg(), reg()).prop_map(|(d, a, b)| format!("add {d}, {a}, {b}")).boxed(),
        (reg(), reg(), prop::sample::select(vec![1i64, -1, 16])).prop_map(|(d, a, k)| format!("addi {d}, {a}, {k}")).boxed(),
        (reg(), prop::sample::select(vec!["0", "1", "0x8000"])).prop_map(|(d, v)| format!("li {d}, {v}")).boxed(),
        (reg(), reg()).prop_map(|(d, s)| format!("mv {d}, {s}")).boxed(),
    ];
    if i < n {
        arms.push(
            (prop::sample::select(vec!["beq", "bne", "blt", "bgeu"]), reg(), reg(), (i + 1)..=n)
                .prop_map(|(op, a, b, t)| format!("{op} {a}, {b}, L{t}"))
                .boxed(),
        );
    }
    prop::strategy::Union::new(arms).boxed()
}

/// Forward-branching snippet, optionally wrapped in a Burst region.
fn snippet() -> impl Strategy<Value = String> {
    (1usize..10, any::<bool>()).prop_flat_map(|(n, wrap)| {
        let lines: Vec<_> = (0..n).map(|i| line(i, n)).collect();
        lines.prop_map(move |ls| {
            let mut s = String::new();
            if wrap {
                s.push_str("  csrwi MSPEC, BURST_ON\n");
            }
            for (i, l) in ls.iter().enumerate() {
                s.push_str(&format!("L{i}:\n  {l}\n"));
            }
            s.push_str(&format!("L{n}:\n"));
            if wrap {
                s.push_str("  csrwi MSPEC, BURST_OFF\n");
            }
            s
        })
    })
}

fn state() -> impl Strategy<Value = ArchState> {
    let v = prop::sample::select(vec![0u64, 1, 2, 0x8000, 0x8001, 0x1000]);
    (v.clone(), v.clone(), v, any::<u8>(), any::<u8>()).prop_map(|(a0, a1, a2, m0, m1)| {
        let layout = MemoryLayout::default();
        let mut s = ArchState::new();
        for (r, x) in [("a0", a0), ("a1", a1), ("a2", a2)] {
            s.set_reg(Reg::parse(r).unwrap(), x);
        }
        s.poke(&layout, 0x8000, m0).unwrap();
        s.poke(&layout, 0x1000, m1).unwrap();
        s
    })
}

fn choice(points: &[(usize, Vec<usize>)], picks: &[usize]) -> PredictorChoice {
    PredictorChoice(
        points
            .iter()
            .zip(picks.iter().chain(std::iter::repeat(&0)))
            .map(|((_, alts), k)| if alts.is_empty() || k % 2 == 0 { Prediction::Correct } else { Prediction::Mispredict(alts[k / 2 % alts.len()]) })
            .collect(),
    )
}

proptest! {
    #[test]
    fn parser_never_panics(text in "\\PC{0,200}") {
        let _ = parse_program(&text);
    }

    #[test]
    fn parser_never_panics_on_near_misses(lines in prop::collection::vec("[a-z]{1,5} [a-z0-9x,() -]{0,20}", 0..8)) {
        let _ = parse_program(&lines.join("\n"));
    }

    #[test]
    fn display_round_trips(src in snippet()) {
        let p = parse_program(&src).unwrap();
        let q = parse_program(&p.to_string()).unwrap();
        prop_assert!(p.same_code(&q), "{}\n---\n{}", src, p);
    }

    #[test]
    fn x0_stays_zero(src in snippet(), s in state()) {
        let p = parse_program(&src).unwrap();
        let layout = MemoryLayout::default();
        if let Ok(run) = run_seq(&p, &s, &layout, 64) {
            prop_assert_eq!(run.final_state.reg(Reg::parse("x0").unwrap()), 0);
            for e in &run.effects {
                prop_assert!(e.reg_writes.iter().all(|(r, _)| !r.is_zero()));
            }
        }
    }

    #[test]
    fn wrong_paths_leave_no_trace_in_state(src in snippet(), s in state(), picks in prop::collection::vec(0usize..8, 0..12)) {
        let p = parse_program(&src).unwrap();
        let layout = MemoryLayout::default();
        let Ok(seq) = run_seq(&p, &s, &layout, 64) else { return Ok(()) };
        for exec in [ExecModel::stl(), ExecModel::spec()] {
            let pts = choice_points(&p, &s, &layout, exec, 64).unwrap();
            let c = choice(&pts, &picks);
            let fin = committed_state(&p, &s, &layout, exec, &c, 64).unwrap();
            prop_assert_eq!(&fin, &seq.final_state);
        }
    }

    #[test]
    fn one_rollback_per_misprediction(src in snippet(), s in state(), picks in prop::collection::vec(0usize..8, 0..12)) {
        let p = parse_program(&src).unwrap();
        let layout = MemoryLayout::default();
        if run_seq(&p, &s, &layout, 64).is_err() {
            return Ok(());
        }
        for exec in [ExecModel::seq(), ExecModel::stl(), ExecModel::spec()] {
            let pts = choice_points(&p, &s, &layout, exec, 64).unwrap();
            let c = choice(&pts, &picks);
            let mispredicted = c.0.iter().filter(|x| matches!(x, Prediction::Mispredict(_))).count();
            for leak in LeakageModel::ALL {
                let t = contract_trace(&p, &s, &layout, Contract::new(leak, exec), &c, 64).unwrap();
                prop_assert_eq!(t.rollbacks(), mispredicted);
                prop_assert_eq!(t.view(LeakageModel::Shm).rollbacks(), 0);
            }
        }
    }

    #[test]
    fn publishing_a_register_never_breaks_a_pass(src in snippet(), r in reg()) {
        let p = parse_program(&src).unwrap();
        let layout = MemoryLayout::default();
        let secret = sta::analyze(&p, &Policy::all_secret(), &layout).unwrap();
        let public = sta::analyze(&p, &Policy::with_public_regs([Reg::parse(r).unwrap()]), &layout).unwrap();
        prop_assert!(!secret.passed() || public.passed());
    }

    #[test]
    fn more_declassification_never_breaks_a_pass(src in snippet()) {
        let p = parse_program(&src).unwrap();
        let layout = MemoryLayout::default();
        let policy = Policy::all_secret();
        let narrow = sta::analyze_with(&p, &policy, &layout, StaConfig::default()).unwrap();
        let wide = sta::analyze_with(&p, &policy, &layout, StaConfig { declassify: Declassify::AnyAccess, ..StaConfig::default() }).unwrap();
        prop_assert!(!narrow.passed() || wide.passed());
        prop_assert!(narrow.leaked_set().is_superset(&wide.leaked_set()));
    }

    #[test]
    fn regions_never_evict_each_other(ops in prop::collection::vec((0..REGIONS as u64, any::<bool>(), 0u64..1 << 14), 1..200)) {
        let g = Geometry::default();
        let mut llc = Llc::new(g, reference_table(&g).unwrap()).unwrap();
        let mut resident = [0usize; REGIONS];
        for (region, zero, line) in ops {
            let addr = if zero { DRAM_BYTES } else { 0 } + region * REGION_BYTES + line * g.line_bytes;
            let o = llc.access(addr).unwrap();
            if !o.hit {
                resident[region as usize] += 1;
            }
            if let Some(v) = o.evicted {
                prop_assert_eq!(v.region as u64, region);
                resident[v.region] -= 1;
            }
        }
        let mut actual = [0usize; REGIONS];
        for (_, l) in llc.lines() {
            actual[l.region] += 1;
        }
        prop_assert_eq!(actual, resident);
        prop_assert!(llc.check_invariants());
    }
}
