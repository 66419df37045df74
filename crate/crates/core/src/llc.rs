//! Last-level cache with per-region set partitioning and a zero-device flush.
//!
//! Physical memory is cut into 64 regions of 32MB. Each region owns a
//! contiguous range of sets; an address's set is its ordinary set index
//! folded into that range. Tags keep the whole line address, so addresses
//! that collide in a one-set range stay distinguishable.
//!
//! A zero device mirrors DRAM above it. Its addresses fall into the same
//! regions and sets as the DRAM they alias but never share a tag with
//! them, so touching enough of them evicts a region's lines.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const REGIONS: usize = 64;
pub const REGION_BYTES: u64 = 32 << 20;
pub const DRAM_BYTES: u64 = REGIONS as u64 * REGION_BYTES;
/// First zero-device address; the device spans as many bytes as DRAM.
pub const ZERO_BASE: u64 = DRAM_BYTES;

const BASE_BITS: u32 = 10;
const SIZE_BITS: u32 = 9;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlcError {
    #[error("regions {0} and {1} have overlapping set ranges")]
    OverlappingRanges(usize, usize),
    #[error("region {0}'s set range does not fit in the cache")]
    ExceedsCapacity(usize),
    #[error("region {0}'s base or size does not fit its table field")]
    FieldOverflow(usize),
    #[error("{0} enclaves are running; the cache cannot be repartitioned")]
    EnclavesRunning(usize),
    #[error("region {0} is reserved for the security monitor and cannot change")]
    SmRegionModified(usize),
    #[error("address {0:#x} is outside the modeled physical space")]
    RegionOutOfRange(u64),
    #[error("region {0} has no set range")]
    RegionUnconfigured(usize),
    #[error("region id {0} is not below {REGIONS}")]
    BadRegionId(usize),
    #[error("invalid geometry: {0}")]
    Geometry(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub total_sets: usize,
    pub ways: usize,
    pub line_bytes: u64,
}

impl Default for Geometry {
    /// 1MB, 16 ways, 64-byte lines.
    fn default() -> Self {
        Geometry::from_capacity(1 << 20, 16, 64).unwrap()
    }
}

impl Geometry {
    pub fn from_capacity(bytes: u64, ways: usize, line_bytes: u64) -> Result<Self, LlcError> {
        if ways == 0 || line_bytes == 0 || !line_bytes.is_power_of_two() {
            return Err(LlcError::Geometry("ways and line size must be positive, line size a power of two".into()));
        }
        let per_set = ways as u64 * line_bytes;
        if bytes == 0 || !bytes.is_multiple_of(per_set) {
            return Err(LlcError::Geometry(format!("{bytes} bytes is not a whole number of {per_set}-byte sets")));
        }
        Ok(Geometry { total_sets: (bytes / per_set) as usize, ways, line_bytes })
    }

    /// Sets needed to hold `bytes`, rounded up.
    pub fn sets_for(&self, bytes: u64) -> usize {
        let per_set = self.ways as u64 * self.line_bytes;
        bytes.div_ceil(per_set) as usize
    }

    pub fn original_index(&self, addr: u64) -> usize {
        ((addr / self.line_bytes) % self.total_sets as u64) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub base: usize,
    pub size: usize,
}

impl Entry {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.base..self.base + self.size
    }
}

/// Set range per region. Loaded from JSON `{"<region>": {"base": b, "size": s}}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionTable {
    entries: [Option<Entry>; REGIONS],
}

impl Default for PartitionTable {
    fn default() -> Self {
        PartitionTable { entries: [None; REGIONS] }
    }
}

impl PartitionTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, region: usize, entry: Option<Entry>) -> Result<(), LlcError> {
        *self.entries.get_mut(region).ok_or(LlcError::BadRegionId(region))? = entry;
        Ok(())
    }

    pub fn with(mut self, region: usize, base: usize, size: usize) -> Result<Self, LlcError> {
        self.set(region, Some(Entry { base, size }))?;
        Ok(self)
    }

    pub fn entry(&self, region: usize) -> Option<Entry> {
        self.entries.get(region).copied().flatten()
    }

    pub fn configured(&self) -> impl Iterator<Item = (usize, Entry)> + '_ {
        self.entries.iter().enumerate().filter_map(|(i, e)| e.map(|e| (i, e)))
    }

    /// Field widths, bounds, and pairwise disjointness.
    pub fn validate(&self, geometry: &Geometry) -> Result<(), LlcError> {
        for (r, e) in self.configured() {
            if e.size == 0 || e.size >= 1 << SIZE_BITS || e.base >= 1 << BASE_BITS {
                return Err(LlcError::FieldOverflow(r));
            }
            if e.base + e.size > geometry.total_sets {
                return Err(LlcError::ExceedsCapacity(r));
            }
        }
        let mut by_base: Vec<(usize, Entry)> = self.configured().collect();
        by_base.sort_by_key(|(r, e)| (e.base, *r));
        for w in by_base.windows(2) {
            let ((ra, a), (rb, b)) = (w[0], w[1]);
            if b.base < a.base + a.size {
                return Err(LlcError::OverlappingRanges(ra.min(rb), ra.max(rb)));
            }
        }
        Ok(())
    }

    pub fn total_sets_used(&self) -> usize {
        self.configured().map(|(_, e)| e.size).sum()
    }
}

impl Serialize for PartitionTable {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let m: BTreeMap<usize, Entry> = self.configured().collect();
        m.serialize(s)
    }
}

impl<'de> Deserialize<'de> for PartitionTable {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let m = BTreeMap::<usize, Entry>::deserialize(d)?;
        let mut t = PartitionTable::new();
        for (r, e) in m {
            t.set(r, Some(e)).map_err(serde::de::Error::custom)?;
        }
        Ok(t)
    }
}

/// Where an address lives: its region and whether it is a zero-device alias.
pub fn region_of(addr: u64) -> Result<(usize, bool), LlcError> {
    if addr < DRAM_BYTES {
        Ok(((addr / REGION_BYTES) as usize, false))
    } else if addr < ZERO_BASE + DRAM_BYTES {
        Ok((((addr - ZERO_BASE) / REGION_BYTES) as usize, true))
    } else {
        Err(LlcError::RegionOutOfRange(addr))
    }
}

/// Region and partitioned set index of `addr`.
pub fn remap_set_index(addr: u64, table: &PartitionTable, geometry: &Geometry) -> Result<(usize, usize), LlcError> {
    let (region, _) = region_of(addr)?;
    let e = table.entry(region).ok_or(LlcError::RegionUnconfigured(region))?;
    Ok((region, e.base + geometry.original_index(addr) % e.size))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Line {
    /// Full line address: original index plus every upper bit.
    pub tag: u64,
    pub region: usize,
    pub zero: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessOutcome {
    pub set: usize,
    pub hit: bool,
    pub evicted: Option<Line>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FlushStats {
    pub region: usize,
    pub accesses: usize,
    /// Non-zero lines of the region evicted by the flush.
    pub evicted: usize,
}

/// Cache contents under a partition table, with LRU replacement.
#[derive(Debug, Clone)]
pub struct Llc {
    geometry: Geometry,
    table: PartitionTable,
    protected: BTreeSet<usize>,
    /// Per set, most recently used first.
    sets: Vec<Vec<Line>>,
}

impl Llc {
    pub fn new(geometry: Geometry, table: PartitionTable) -> Result<Self, LlcError> {
        table.validate(&geometry)?;
        Ok(Llc { geometry, table, protected: BTreeSet::new(), sets: vec![Vec::new(); geometry.total_sets] })
    }

    /// Regions whose entries later reconfigurations may not change.
    pub fn protect(&mut self, regions: impl IntoIterator<Item = usize>) {
        self.protected.extend(regions);
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn table(&self) -> &PartitionTable {
        &self.table
    }

    pub fn set_lines(&self, set: usize) -> &[Line] {
        &self.sets[set]
    }

    pub fn lines(&self) -> impl Iterator<Item = (usize, &Line)> {
        self.sets.iter().enumerate().flat_map(|(s, ls)| ls.iter().map(move |l| (s, l)))
    }

    /// Resident lines of `region` that came from DRAM.
    pub fn region_lines(&self, region: usize) -> usize {
        self.lines().filter(|(_, l)| l.region == region && !l.zero).count()
    }

    pub fn access(&mut self, addr: u64) -> Result<AccessOutcome, LlcError> {
        let (region, set) = remap_set_index(addr, &self.table, &self.geometry)?;
        let zero = region_of(addr)?.1;
        let tag = addr / self.geometry.line_bytes;
        let lines = &mut self.sets[set];
        if let Some(pos) = lines.iter().position(|l| l.tag == tag) {
            let l = lines.remove(pos);
            lines.insert(0, l);
            return Ok(AccessOutcome { set, hit: true, evicted: None });
        }
        let evicted = if lines.len() == self.geometry.ways { lines.pop() } else { None };
        lines.insert(0, Line { tag, region, zero });
        Ok(AccessOutcome { set, hit: false, evicted })
    }

    /// Zero-device addresses covering every way of every set in the
    /// region's range, in the order they are accessed.
    pub fn eviction_set(&self, region: usize) -> Result<Vec<u64>, LlcError> {
        let e = self.table.entry(region).ok_or(LlcError::RegionUnconfigured(region))?;
        let g = &self.geometry;
        let total = g.total_sets as u64;
        let start = ZERO_BASE + region as u64 * REGION_BYTES;
        let origin = g.original_index(start) as u64;
        let mut out = Vec::with_capacity(e.size * g.ways);
        for w in 0..g.ways as u64 {
            for s in 0..e.size as u64 {
                let line = (s + total - origin) % total + w * total;
                out.push(start + line * g.line_bytes);
            }
        }
        Ok(out)
    }

    /// Flush by touching the region's eviction set.
    pub fn flush_region(&mut self, region: usize) -> Result<FlushStats, LlcError> {
        let set = self.eviction_set(region)?;
        let mut evicted = 0;
        for a in &set {
            if let Some(l) = self.access(*a)?.evicted {
                if l.region == region && !l.zero {
                    evicted += 1;
                }
            }
        }
        Ok(FlushStats { region, accesses: set.len(), evicted })
    }

    /// Eviction-set size for a region: its sets times the associativity.
    pub fn flush_cost(&self, region: usize) -> Result<usize, LlcError> {
        let e = self.table.entry(region).ok_or(LlcError::RegionUnconfigured(region))?;
        Ok(e.size * self.geometry.ways)
    }

    /// Install a new table. Regions whose range changes are flushed under
    /// the old table first. Returns the flushed regions.
    pub fn configure(&mut self, new: PartitionTable, running_enclaves: usize) -> Result<Vec<usize>, LlcError> {
        if running_enclaves > 0 {
            return Err(LlcError::EnclavesRunning(running_enclaves));
        }
        new.validate(&self.geometry)?;
        for &r in &self.protected {
            if self.table.entry(r) != new.entry(r) {
                return Err(LlcError::SmRegionModified(r));
            }
        }
        let changed: Vec<usize> = (0..REGIONS)
            .filter(|r| self.table.entry(*r).is_some() && self.table.entry(*r) != new.entry(*r))
            .collect();
        for &r in &changed {
            self.flush_region(r)?;
            let range = self.table.entry(r).unwrap().range();
            for s in range {
                self.sets[s].clear();
            }
        }
        self.table = new;
        Ok(changed)
    }

    /// Every resident line sits inside its region's set range.
    pub fn check_invariants(&self) -> bool {
        self.lines().all(|(s, l)| self.table.entry(l.region).is_some_and(|e| e.range().contains(&s)))
            && self.sets.iter().all(|ls| ls.len() <= self.geometry.ways)
    }
}

/// Role names of the regions in the reference layout.
pub const REFERENCE_ROLES: [(usize, &str); 5] = [(0, "sm"), (1, "os"), (2, "enclave"), (3, "shared"), (4, "page-tables")];

/// The non-uniform split of a 1MB cache: 16KB for the monitor, 128KB for
/// the OS, 256KB for the enclave, 128KB each for shared memory and page
/// tables, 1KB for every other region.
pub fn reference_table(geometry: &Geometry) -> Result<PartitionTable, LlcError> {
    let kb = |k: u64| geometry.sets_for(k * 1024);
    let sizes = [kb(16), kb(128), kb(256), kb(128), kb(128)];
    let mut t = PartitionTable::new();
    let mut base = 0;
    for r in 0..REGIONS {
        let size = sizes.get(r).copied().unwrap_or_else(|| kb(1));
        t.set(r, Some(Entry { base, size }))?;
        base += size;
    }
    Ok(t)
}

impl fmt::Display for PartitionTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (r, e) in self.configured() {
            writeln!(f, "region {r:>2}: sets {:>4}..{:<4} ({} sets)", e.base, e.base + e.size, e.size)?;
        }
        Ok(())
    }
}
