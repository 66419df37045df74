//! Models and checkers for enclaves that share memory with untrusted code.
//!
//! * [`asm`] parses a small RISC-V dialect with Burst region markers.
//! * [`machine`] runs it sequentially over private and shared memory.
//! * [`contract`] enumerates observation traces under speculation.
//! * [`hw`] describes each hardware defense mode by its traces.
//! * [`ni`] brute-forces direct and relative non-interference.
//! * [`sta`] decides whether a Burst region is safe to speculate.
//! * [`llc`] models a set-partitioned last-level cache and its flush.
//! * [`corpus`] bundles reference snippets with expected verdicts.

pub mod asm;
pub mod contract;
pub mod corpus;
pub mod hw;
pub mod llc;
pub mod machine;
pub mod ni;
pub mod sta;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/programs.md")]
    mod programs {}
    #[doc = include_str!("../../../book/src/contracts.md")]
    mod contracts {}
    #[doc = include_str!("../../../book/src/hardware.md")]
    mod hardware {}
    #[doc = include_str!("../../../book/src/ni.md")]
    mod ni {}
    #[doc = include_str!("../../../book/src/analyzer.md")]
    mod analyzer {}
    #[doc = include_str!("../../../book/src/cache.md")]
    mod cache {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
