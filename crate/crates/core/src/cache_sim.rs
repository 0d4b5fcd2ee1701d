//! Multi-core set-associative cache model with write-invalidate coherence.
//!
//! Every simulated thread owns a private cache (one core per thread id). Each
//! core keeps an LRU set-associative array and, for miss labelling, a
//! fully-associative LRU shadow of equal capacity. A miss is labelled in
//! priority order Coherence > Compulsory > Conflict > Capacity:
//!
//! 1. Coherence: the line was resident in this core and a remote store
//!    invalidated it since.
//! 2. Compulsory: no core has ever touched the line.
//! 3. Conflict: the set-associative array missed but the shadow hit.
//! 4. Capacity: both missed.
//!
//! A store invalidates the line in every other core's array and shadow.

use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::AccessKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheConfig {
    pub line_size: u32,
    pub num_sets: u32,
    pub associativity: u32,
    pub num_cores: u32,
}

/// 64 KiB, 8-way, 64-byte lines, 16 cores.
impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            line_size: 64,
            num_sets: 128,
            associativity: 8,
            num_cores: 16,
        }
    }
}

/// Upper bound on cores; sharer sets are tracked as a 64-bit mask.
pub const MAX_CORES: u32 = 64;

impl CacheConfig {
    pub fn new(line_size: u32, num_sets: u32, associativity: u32, num_cores: u32) -> Self {
        Self {
            line_size,
            num_sets,
            associativity,
            num_cores,
        }
    }

    pub fn validate(&self) -> Result<(), CacheError> {
        if self.line_size < 8 || !self.line_size.is_power_of_two() {
            return Err(CacheError::InvalidConfig(format!(
                "line_size must be a power of two >= 8, got {}",
                self.line_size
            )));
        }
        if self.num_sets == 0 || !self.num_sets.is_power_of_two() {
            return Err(CacheError::InvalidConfig(format!(
                "sets must be a power of two >= 1, got {}",
                self.num_sets
            )));
        }
        if self.associativity == 0 {
            return Err(CacheError::InvalidConfig("assoc must be >= 1".into()));
        }
        if self.num_cores == 0 || self.num_cores > MAX_CORES {
            return Err(CacheError::InvalidConfig(format!(
                "cores must be in 1..={MAX_CORES}, got {}",
                self.num_cores
            )));
        }
        Ok(())
    }

    /// Bytes per core.
    pub fn capacity_bytes(&self) -> u64 {
        self.line_size as u64 * self.num_sets as u64 * self.associativity as u64
    }

    pub fn capacity_lines(&self) -> usize {
        self.num_sets as usize * self.associativity as usize
    }

    pub fn set_index(&self, addr: u64) -> u32 {
        ((addr / self.line_size as u64) % self.num_sets as u64) as u32
    }

    pub fn line_addr(&self, addr: u64) -> u64 {
        addr & !(self.line_size as u64 - 1)
    }

    /// Byte distance between consecutive lines that map to the same set.
    pub fn set_stride(&self) -> u64 {
        self.line_size as u64 * self.num_sets as u64
    }
}

/// `(addr / line_size) mod num_sets`.
pub fn set_index(addr: u64, cfg: &CacheConfig) -> u32 {
    cfg.set_index(addr)
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum CacheError {
    #[error("invalid cache config: {0}")]
    InvalidConfig(String),
    #[error("unknown core id {core} (cache has {cores} cores)")]
    UnknownCore { core: u32, cores: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OracleKind {
    Hit,
    Compulsory,
    Capacity,
    Conflict,
    Coherence,
}

impl OracleKind {
    pub const MISS_KINDS: [OracleKind; 4] = [
        OracleKind::Compulsory,
        OracleKind::Capacity,
        OracleKind::Conflict,
        OracleKind::Coherence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OracleKind::Hit => "hit",
            OracleKind::Compulsory => "compulsory",
            OracleKind::Capacity => "capacity",
            OracleKind::Conflict => "conflict",
            OracleKind::Coherence => "coherence",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessOutcome {
    pub hit: bool,
    pub oracle_kind: OracleKind,
    pub set_index: u32,
    pub line_addr: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreStats {
    pub accesses: u64,
    pub loads: u64,
    pub stores: u64,
    pub hits: u64,
    pub load_misses: u64,
    pub store_misses: u64,
    pub compulsory: u64,
    pub capacity: u64,
    pub conflict: u64,
    pub coherence: u64,
    pub set_misses: Vec<u64>,
}

impl CoreStats {
    fn new(num_sets: u32) -> Self {
        Self {
            set_misses: vec![0; num_sets as usize],
            ..Self::default()
        }
    }

    pub fn misses(&self) -> u64 {
        self.compulsory + self.capacity + self.conflict + self.coherence
    }

    pub fn kind_count(&self, kind: OracleKind) -> u64 {
        match kind {
            OracleKind::Hit => self.hits,
            OracleKind::Compulsory => self.compulsory,
            OracleKind::Capacity => self.capacity,
            OracleKind::Conflict => self.conflict,
            OracleKind::Coherence => self.coherence,
        }
    }

    pub fn merge(&mut self, other: &CoreStats) {
        self.accesses += other.accesses;
        self.loads += other.loads;
        self.stores += other.stores;
        self.hits += other.hits;
        self.load_misses += other.load_misses;
        self.store_misses += other.store_misses;
        self.compulsory += other.compulsory;
        self.capacity += other.capacity;
        self.conflict += other.conflict;
        self.coherence += other.coherence;
        if self.set_misses.len() < other.set_misses.len() {
            self.set_misses.resize(other.set_misses.len(), 0);
        }
        for (a, b) in self.set_misses.iter_mut().zip(&other.set_misses) {
            *a += b;
        }
    }

    fn record(&mut self, kind: AccessKind, label: OracleKind, set: u32) {
        self.accesses += 1;
        match kind {
            AccessKind::Load => self.loads += 1,
            AccessKind::Store => self.stores += 1,
        }
        match label {
            OracleKind::Hit => {
                self.hits += 1;
                return;
            }
            OracleKind::Compulsory => self.compulsory += 1,
            OracleKind::Capacity => self.capacity += 1,
            OracleKind::Conflict => self.conflict += 1,
            OracleKind::Coherence => self.coherence += 1,
        }
        match kind {
            AccessKind::Load => self.load_misses += 1,
            AccessKind::Store => self.store_misses += 1,
        }
        self.set_misses[set as usize] += 1;
    }
}

const INVALID: u64 = u64::MAX;
const NIL: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
struct Way {
    line: u64,
    stamp: u64,
    /// No other core holds the line (array or shadow); stores need not
    /// consult the sharer directory. `false` is always safe.
    exclusive: bool,
}

impl Way {
    const EMPTY: Way = Way {
        line: INVALID,
        stamp: 0,
        exclusive: false,
    };
}

#[derive(Debug, Clone, Copy)]
struct Node {
    line: u64,
    prev: u32,
    next: u32,
}

/// Fully-associative LRU over line addresses: hash index into an intrusive
/// doubly-linked list (head = most recent).
#[derive(Debug, Clone)]
struct ShadowLru {
    cap: usize,
    index: FxHashMap<u64, u32>,
    nodes: Vec<Node>,
    free: Vec<u32>,
    head: u32,
    tail: u32,
}

impl ShadowLru {
    fn new(cap: usize) -> Self {
        Self {
            cap,
            index: FxHashMap::default(),
            nodes: Vec::with_capacity(cap),
            free: Vec::new(),
            head: NIL,
            tail: NIL,
        }
    }

    fn contains(&self, line: u64) -> bool {
        self.index.contains_key(&line)
    }

    fn len(&self) -> usize {
        self.index.len()
    }

    fn unlink(&mut self, slot: u32) {
        let Node { prev, next, .. } = self.nodes[slot as usize];
        if prev == NIL {
            self.head = next;
        } else {
            self.nodes[prev as usize].next = next;
        }
        if next == NIL {
            self.tail = prev;
        } else {
            self.nodes[next as usize].prev = prev;
        }
    }

    fn push_front(&mut self, slot: u32) {
        self.nodes[slot as usize].prev = NIL;
        self.nodes[slot as usize].next = self.head;
        if self.head != NIL {
            self.nodes[self.head as usize].prev = slot;
        }
        self.head = slot;
        if self.tail == NIL {
            self.tail = slot;
        }
    }

    /// Marks `line` most recently used, inserting it if absent. Returns the
    /// line evicted to make room, if any.
    fn touch(&mut self, line: u64) -> Option<u64> {
        if let Some(&slot) = self.index.get(&line) {
            if slot != self.head {
                self.unlink(slot);
                self.push_front(slot);
            }
            return None;
        }
        let mut evicted = None;
        if self.index.len() >= self.cap {
            let victim = self.tail;
            self.unlink(victim);
            let old = self.nodes[victim as usize].line;
            self.index.remove(&old);
            self.free.push(victim);
            evicted = Some(old);
        }
        let node = Node {
            line,
            prev: NIL,
            next: NIL,
        };
        let slot = match self.free.pop() {
            Some(s) => {
                self.nodes[s as usize] = node;
                s
            }
            None => {
                self.nodes.push(node);
                (self.nodes.len() - 1) as u32
            }
        };
        self.push_front(slot);
        self.index.insert(line, slot);
        evicted
    }

    fn remove(&mut self, line: u64) -> bool {
        match self.index.remove(&line) {
            Some(slot) => {
                self.unlink(slot);
                self.free.push(slot);
                true
            }
            None => false,
        }
    }
}

#[derive(Debug, Clone)]
struct CoreCache {
    ways: Vec<Way>,
    shadow: ShadowLru,
    invalidated: FxHashSet<u64>,
    clock: u64,
    last_line: u64,
    last_way: usize,
    stats: CoreStats,
}

impl CoreCache {
    fn new(cfg: &CacheConfig) -> Self {
        Self {
            ways: vec![Way::EMPTY; cfg.capacity_lines()],
            shadow: ShadowLru::new(cfg.capacity_lines()),
            invalidated: FxHashSet::default(),
            clock: 0,
            last_line: INVALID,
            last_way: 0,
            stats: CoreStats::new(cfg.num_sets),
        }
    }

    fn find_way(&self, base: usize, assoc: usize, line: u64) -> Option<usize> {
        (base..base + assoc).find(|&w| self.ways[w].line == line)
    }
}

/// The simulated memory hierarchy: one private cache per core.
#[derive(Debug, Clone)]
pub struct CacheSim {
    cfg: CacheConfig,
    line_shift: u32,
    set_mask: u64,
    cores: Vec<CoreCache>,
    touched: FxHashSet<u64>,
    sharers: FxHashMap<u64, u64>,
    line_misses: FxHashMap<u64, u64>,
}

impl CacheSim {
    pub fn new(cfg: CacheConfig) -> Result<Self, CacheError> {
        cfg.validate()?;
        let cores = (0..cfg.num_cores).map(|_| CoreCache::new(&cfg)).collect();
        Ok(Self {
            line_shift: cfg.line_size.trailing_zeros(),
            set_mask: cfg.num_sets as u64 - 1,
            cfg,
            cores,
            touched: FxHashSet::default(),
            sharers: FxHashMap::default(),
            line_misses: FxHashMap::default(),
        })
    }

    pub fn config(&self) -> &CacheConfig {
        &self.cfg
    }

    pub fn access(&mut self, core: u32, addr: u64, kind: AccessKind) -> Result<AccessOutcome, CacheError> {
        let c = core as usize;
        if c >= self.cores.len() {
            return Err(CacheError::UnknownCore {
                core,
                cores: self.cfg.num_cores,
            });
        }
        let line = addr & !((1u64 << self.line_shift) - 1);
        let set = ((addr >> self.line_shift) & self.set_mask) as u32;

        // Re-touching the line this core accessed last: it is already MRU in
        // both the set and the shadow, so only counters change.
        let cc = &mut self.cores[c];
        if cc.last_line == line && (kind == AccessKind::Load || cc.ways[cc.last_way].exclusive) {
            cc.stats.record(kind, OracleKind::Hit, set);
            return Ok(AccessOutcome {
                hit: true,
                oracle_kind: OracleKind::Hit,
                set_index: set,
                line_addr: line,
            });
        }
        Ok(self.access_slow(c, line, set, kind))
    }

    fn access_slow(&mut self, c: usize, line: u64, set: u32, kind: AccessKind) -> AccessOutcome {
        let assoc = self.cfg.associativity as usize;
        let base = set as usize * assoc;
        let bit = 1u64 << c;
        let (line_shift, set_mask) = (self.line_shift, self.set_mask);
        let Self {
            cores,
            touched,
            sharers,
            line_misses,
            ..
        } = self;

        let cc = &mut cores[c];
        cc.clock += 1;
        let clock = cc.clock;
        let (label, way, victim) = match cc.find_way(base, assoc, line) {
            Some(w) => {
                cc.ways[w].stamp = clock;
                (OracleKind::Hit, w, INVALID)
            }
            None => {
                let label = if cc.invalidated.remove(&line) {
                    OracleKind::Coherence
                } else if touched.insert(line) {
                    OracleKind::Compulsory
                } else if cc.shadow.contains(line) {
                    OracleKind::Conflict
                } else {
                    OracleKind::Capacity
                };
                let w = (base..base + assoc)
                    .find(|&w| cc.ways[w].line == INVALID)
                    .unwrap_or_else(|| {
                        (base..base + assoc)
                            .min_by_key(|&w| cc.ways[w].stamp)
                            .expect("associativity >= 1")
                    });
                let victim = cc.ways[w].line;
                cc.ways[w] = Way {
                    line,
                    stamp: clock,
                    exclusive: false,
                };
                (label, w, victim)
            }
        };
        let shadow_victim = cc.shadow.touch(line);

        // Drop this core from the sharer set of lines it no longer holds
        // anywhere.
        if victim != INVALID && !cc.shadow.contains(victim) {
            clear_sharer(sharers, victim, bit);
        }
        if let Some(v) = shadow_victim {
            let vbase = ((v >> line_shift) & set_mask) as usize * assoc;
            if cc.find_way(vbase, assoc, v).is_none() {
                clear_sharer(sharers, v, bit);
            }
        }

        let entry = sharers.entry(line).or_insert(0);
        let others = *entry & !bit;
        *entry |= bit;

        match kind {
            AccessKind::Store => {
                if !cc.ways[way].exclusive {
                    if others != 0 {
                        invalidate_remote(cores, others, line, base, assoc);
                        *sharers.get_mut(&line).expect("entry inserted above") = bit;
                    }
                    cores[c].ways[way].exclusive = true;
                }
            }
            AccessKind::Load => {
                if label != OracleKind::Hit {
                    if others == 0 {
                        cc.ways[way].exclusive = true;
                    } else {
                        for d in iter_bits(others) {
                            let dc = &mut cores[d];
                            if let Some(w) = dc.find_way(base, assoc, line) {
                                dc.ways[w].exclusive = false;
                            }
                        }
                    }
                }
            }
        }

        let cc = &mut cores[c];
        cc.last_line = line;
        cc.last_way = way;
        cc.stats.record(kind, label, set);
        if label != OracleKind::Hit {
            *line_misses.entry(line).or_insert(0) += 1;
        }
        AccessOutcome {
            hit: label == OracleKind::Hit,
            oracle_kind: label,
            set_index: set,
            line_addr: line,
        }
    }

    pub fn stats(&self, core: u32) -> Option<&CoreStats> {
        self.cores.get(core as usize).map(|c| &c.stats)
    }

    /// Counters summed over all cores.
    pub fn total_stats(&self) -> CoreStats {
        let mut total = CoreStats::new(self.cfg.num_sets);
        for c in &self.cores {
            total.merge(&c.stats);
        }
        total
    }

    pub fn per_core_stats(&self) -> impl Iterator<Item = &CoreStats> {
        self.cores.iter().map(|c| &c.stats)
    }

    /// Miss count per line address, all cores, sorted by address.
    pub fn line_misses(&self) -> Vec<(u64, u64)> {
        let mut v: Vec<_> = self.line_misses.iter().map(|(&l, &m)| (l, m)).collect();
        v.sort_unstable();
        v
    }

    /// Lines currently resident in `core`'s set-associative array, in no
    /// particular order.
    pub fn resident_lines(&self, core: u32) -> Vec<u64> {
        self.cores[core as usize]
            .ways
            .iter()
            .filter(|w| w.line != INVALID)
            .map(|w| w.line)
            .collect()
    }

    pub fn shadow_len(&self, core: u32) -> usize {
        self.cores[core as usize].shadow.len()
    }

    pub fn shadow_contains(&self, core: u32, line: u64) -> bool {
        self.cores[core as usize].shadow.contains(line)
    }
}

fn clear_sharer(sharers: &mut FxHashMap<u64, u64>, line: u64, bit: u64) {
    if let Some(mask) = sharers.get_mut(&line) {
        *mask &= !bit;
        if *mask == 0 {
            sharers.remove(&line);
        }
    }
}

fn invalidate_remote(cores: &mut [CoreCache], mask: u64, line: u64, base: usize, assoc: usize) {
    for d in iter_bits(mask) {
        let dc = &mut cores[d];
        let mut resident = false;
        if let Some(w) = dc.find_way(base, assoc, line) {
            dc.ways[w] = Way::EMPTY;
            resident = true;
        }
        if dc.shadow.remove(line) {
            resident = true;
        }
        if resident {
            dc.invalidated.insert(line);
        }
        if dc.last_line == line {
            dc.last_line = INVALID;
        }
    }
}

fn iter_bits(mut mask: u64) -> impl Iterator<Item = usize> {
    std::iter::from_fn(move || {
        if mask == 0 {
            None
        } else {
            let i = mask.trailing_zeros() as usize;
            mask &= mask - 1;
            Some(i)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use AccessKind::{Load, Store};

    fn small(sets: u32, assoc: u32, cores: u32) -> CacheSim {
        CacheSim::new(CacheConfig::new(64, sets, assoc, cores)).unwrap()
    }

    #[test]
    fn set_index_examples() {
        let c64 = CacheConfig::new(64, 64, 8, 1);
        assert_eq!(set_index(0x0, &c64), 0);
        assert_eq!(set_index(0x1040, &c64), 1);
        let c128 = CacheConfig::new(64, 128, 8, 1);
        // 0xFFC0 / 64 = 1023; 1023 mod 128 = 127.
        assert_eq!(set_index(0xFFC0, &c128), 127);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(CacheConfig::new(48, 64, 8, 1).validate().is_err());
        assert!(CacheConfig::new(4, 64, 8, 1).validate().is_err());
        assert!(CacheConfig::new(64, 96, 8, 1).validate().is_err());
        assert!(CacheConfig::new(64, 64, 0, 1).validate().is_err());
        assert!(CacheConfig::new(64, 64, 8, 0).validate().is_err());
        assert!(CacheConfig::new(64, 64, 8, 65).validate().is_err());
        assert!(CacheConfig::default().validate().is_ok());
        assert_eq!(CacheConfig::default().capacity_bytes(), 64 * 1024);
    }

    #[test]
    fn unknown_core_rejected() {
        let mut sim = small(4, 2, 2);
        assert_eq!(
            sim.access(2, 0, Load),
            Err(CacheError::UnknownCore { core: 2, cores: 2 })
        );
    }

    #[test]
    fn first_touch_is_compulsory() {
        let mut sim = small(4, 2, 1);
        let out = sim.access(0, 0x1000, Load).unwrap();
        assert!(!out.hit);
        assert_eq!(out.oracle_kind, OracleKind::Compulsory);
        assert_eq!(out.line_addr, 0x1000);
        assert!(sim.access(0, 0x1008, Load).unwrap().hit);
    }

    #[test]
    fn remote_store_causes_coherence_miss() {
        let mut sim = small(4, 2, 2);
        sim.access(0, 0x40, Load).unwrap();
        sim.access(1, 0x40, Store).unwrap();
        let out = sim.access(0, 0x48, Load).unwrap();
        assert_eq!(out.oracle_kind, OracleKind::Coherence);
    }

    #[test]
    fn same_set_overflow_is_conflict() {
        // 2-way, 4 sets: lines 0, 4*64, 8*64 all map to set 0.
        let mut sim = small(4, 2, 1);
        for a in [0u64, 256, 512] {
            assert_eq!(sim.access(0, a, Load).unwrap().oracle_kind, OracleKind::Compulsory);
        }
        let out = sim.access(0, 0, Load).unwrap();
        assert_eq!(out.oracle_kind, OracleKind::Conflict);
    }

    #[test]
    fn footprint_over_capacity_is_capacity() {
        // 1 set, 2 ways => capacity 2 lines; cycle over 3 lines.
        let mut sim = small(1, 2, 1);
        for a in [0u64, 64, 128] {
            sim.access(0, a, Load).unwrap();
        }
        assert_eq!(sim.access(0, 0, Load).unwrap().oracle_kind, OracleKind::Capacity);
    }

    #[test]
    fn empty_run_counts_are_zero() {
        let sim = small(4, 2, 2);
        let t = sim.total_stats();
        assert_eq!(t.accesses, 0);
        assert_eq!(t.misses(), 0);
        assert!(t.set_misses.iter().all(|&m| m == 0));
    }

    #[test]
    fn counters_are_conserved() {
        let mut sim = small(4, 2, 3);
        let mut x = 12345u64;
        for _ in 0..2000 {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let core = (x >> 60) as u32 % 3;
            let addr = (x >> 20) % 4096;
            let kind = if x & 1 == 0 { Load } else { Store };
            sim.access(core, addr, kind).unwrap();
        }
        for s in sim.per_core_stats() {
            assert_eq!(s.hits + s.misses(), s.accesses);
            assert_eq!(s.set_misses.iter().sum::<u64>(), s.misses());
            assert_eq!(s.load_misses + s.store_misses, s.misses());
        }
        let t = sim.total_stats();
        assert_eq!(sim.line_misses().iter().map(|p| p.1).sum::<u64>(), t.misses());
    }

    #[test]
    fn sets_and_shadow_respect_capacity() {
        let mut sim = small(2, 2, 1);
        for i in 0..100u64 {
            sim.access(0, i * 64, Load).unwrap();
            assert!(sim.resident_lines(0).len() <= 4);
            assert!(sim.shadow_len(0) <= 4);
        }
    }

    #[test]
    fn store_invalidates_shadow_too() {
        let mut sim = small(4, 2, 2);
        sim.access(0, 0, Load).unwrap();
        sim.access(1, 0, Store).unwrap();
        assert!(!sim.shadow_contains(0, 0));
        assert!(sim.resident_lines(0).is_empty());
    }
}
