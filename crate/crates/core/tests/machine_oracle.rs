//! Hand-traced runs of the memcpy listings.

use rmi_core::asm::{parse_program, Reg};
use rmi_core::machine::{run_seq, AccessKind, ArchState, Domain, MemoryLayout, RunOutcome};

fn reg(n: &str) -> Reg {
    Reg::parse(n).unwrap()
}

const FIXED: &str = "  add a2,a0,a2\n  bgeu a0,a2,.end\n.loop:\n  lbu a4,0(a1)\n  add a1,a1,1\n  add a0,a0,1\n  sb a4,-1(a0)\n  bne a0,a2,.loop\n.end:\n";

#[test]
fn copy_three_bytes() {
    let layout = MemoryLayout::default();
    let p = parse_program(FIXED).unwrap();
    let mut s = ArchState::new();
    s.set_reg(reg("a0"), 0x8010);
    s.set_reg(reg("a1"), 0x8000);
    s.set_reg(reg("a2"), 3);
    for (i, v) in [5u8, 6, 7].into_iter().enumerate() {
        s.poke(&layout, 0x8000 + i as u64, v).unwrap();
    }
    let run = run_seq(&p, &s, &layout, 100).unwrap();
    assert_eq!(run.outcome, RunOutcome::Halted);

    // add, bgeu, then three iterations of lbu, add, add, sb, bne
    assert_eq!(run.effects.len(), 2 + 3 * 5);
    let pcs: Vec<usize> = std::iter::once(0).chain(run.effects.iter().map(|e| e.next_pc)).collect();
    assert_eq!(&pcs[..8], &[0, 1, 2, 3, 4, 5, 6, 2]);
    assert_eq!(*pcs.last().unwrap(), 7);

    let mem: Vec<(AccessKind, u64, u64)> =
        run.effects.iter().filter_map(|e| e.mem_event).map(|m| (m.kind, m.addr, m.value)).collect();
    let want = vec![
        (AccessKind::Load, 0x8000, 5),
        (AccessKind::Store, 0x8010, 5),
        (AccessKind::Load, 0x8001, 6),
        (AccessKind::Store, 0x8011, 6),
        (AccessKind::Load, 0x8002, 7),
        (AccessKind::Store, 0x8012, 7),
    ];
    assert_eq!(mem, want);
    assert!(run.effects.iter().filter_map(|e| e.mem_event).all(|m| m.domain == Domain::Shared && m.width == 1));

    let f = &run.final_state;
    assert_eq!((f.reg(reg("a0")), f.reg(reg("a1")), f.reg(reg("a2")), f.reg(reg("a4"))), (0x8013, 0x8003, 0x8013, 7));
    assert_eq!([0x8010, 0x8011, 0x8012].map(|a| f.byte(Domain::Shared, a)), [5, 6, 7]);
}

#[test]
fn verbatim_listing_stops_on_src() {
    let layout = MemoryLayout::default();
    let src = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../corpus/memcpy_right.s")).unwrap();
    let p = parse_program(&src).unwrap();
    let mut s = ArchState::new();
    s.set_reg(reg("a0"), 0x8000);
    s.set_reg(reg("a1"), 0x8000);
    s.set_reg(reg("a2"), 3);
    let run = run_seq(&p, &s, &layout, 100).unwrap();
    assert_eq!(run.outcome, RunOutcome::Halted);
    // the loop exits when src reaches dest + len
    assert_eq!(run.final_state.reg(reg("a1")), 0x8003);
    assert_eq!(run.effects.iter().filter(|e| e.mem_event.is_some()).count(), 6);

    // src below dest + len: runs until src catches up, 0x13 iterations
    s.set_reg(reg("a0"), 0x8010);
    let run = run_seq(&p, &s, &layout, 200).unwrap();
    assert_eq!(run.outcome, RunOutcome::Halted);
    // add, bgeu and both markers around the iterations
    assert_eq!(run.effects.len(), 4 + 0x13 * 5);

    // src above dest + len: walks off the shared range
    s.set_reg(reg("a0"), 0x8000);
    s.set_reg(reg("a1"), 0x8010);
    assert!(run_seq(&p, &s, &layout, 100_000).is_err());
}

#[test]
fn zero_length_copy_touches_nothing() {
    let layout = MemoryLayout::default();
    let p = parse_program(FIXED).unwrap();
    let mut s = ArchState::new();
    s.set_reg(reg("a0"), 0x8010);
    s.set_reg(reg("a1"), 0x8000);
    let run = run_seq(&p, &s, &layout, 100).unwrap();
    assert_eq!(run.effects.len(), 2);
    assert!(run.effects.iter().all(|e| e.mem_event.is_none()));
}
