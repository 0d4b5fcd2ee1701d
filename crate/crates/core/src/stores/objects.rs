//! Heap object index in three mutually exclusive levels, probed in order:
//!
//! * page table: objects inside a single 4 KiB page, keyed by `addr >> 12`
//! * chunk table: objects spanning pages but inside one 1 MiB chunk,
//!   keyed by `addr >> 20`
//! * huge list: everything else, one sorted list
//!
//! Each entry is a start-sorted array searched by binary search.

use std::collections::BTreeMap;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{AllocEvent, FreeEvent, GlobalRegion};

pub type ObjectId = u32;

pub const PAGE_SHIFT: u32 = 12;
pub const CHUNK_SHIFT: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub start: u64,
    pub size: u64,
    pub callsite: u64,
    pub alloc_tid: u32,
    pub live: bool,
}

impl ObjectRecord {
    pub fn end(&self) -> u64 {
        self.start.saturating_add(self.size)
    }

    pub fn contains(&self, addr: u64) -> bool {
        addr >= self.start && addr < self.end()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Level {
    Page,
    Chunk,
    Huge,
}

/// Level an object of `size` bytes at `start` belongs to.
pub fn placement(start: u64, size: u64) -> Level {
    let last = start.saturating_add(size.max(1) - 1);
    if start >> PAGE_SHIFT == last >> PAGE_SHIFT {
        Level::Page
    } else if start >> CHUNK_SHIFT == last >> CHUNK_SHIFT {
        Level::Chunk
    } else {
        Level::Huge
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectStoreConfig {
    /// Attributed sampled accesses before a callsite may be skipped.
    pub skip_min_samples: u64,
    /// Skip when the callsite's miss ratio is below this fraction of the
    /// global sampled miss ratio.
    pub skip_fraction: f64,
}

impl Default for ObjectStoreConfig {
    fn default() -> Self {
        Self {
            skip_min_samples: 1000,
            skip_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallsiteStats {
    pub allocs: u64,
    /// Allocations made after the callsite was skipped (never indexed).
    pub unindexed_allocs: u64,
    pub accesses: u64,
    pub misses: u64,
    pub skipped: bool,
}

/// The skip predicate on raw counters.
pub fn skip_rule(accesses: u64, misses: u64, global_ratio: f64, cfg: &ObjectStoreConfig) -> bool {
    if accesses == 0 || accesses < cfg.skip_min_samples {
        return false;
    }
    (misses as f64 / accesses as f64) < cfg.skip_fraction * global_ratio
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ObjectError {
    #[error("allocation [0x{start:x}, 0x{end:x}) overlaps live object [0x{live_start:x}, 0x{live_end:x})")]
    Overlap {
        start: u64,
        end: u64,
        live_start: u64,
        live_end: u64,
    },
    #[error("unmatched free of 0x{addr:x}")]
    UnmatchedFree { addr: u64 },
    #[error("allocation at 0x{addr:x} has zero size")]
    ZeroSize { addr: u64 },
}

/// What owns an address: a heap object or a declared global region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Owner {
    Heap(ObjectId),
    Global(u32),
}

#[derive(Debug, Clone, Default)]
pub struct ObjectStore {
    cfg: ObjectStoreConfig,
    records: Vec<ObjectRecord>,
    indexed: Vec<bool>,
    /// Every live object, indexed or not, by start address.
    live: BTreeMap<u64, ObjectId>,
    pages: FxHashMap<u64, Vec<ObjectId>>,
    chunks: FxHashMap<u64, Vec<ObjectId>>,
    huge: Vec<ObjectId>,
    callsites: BTreeMap<u64, CallsiteStats>,
    globals: Vec<GlobalRegion>,
    sampled: u64,
    sampled_misses: u64,
}

impl ObjectStore {
    pub fn new(cfg: ObjectStoreConfig) -> Self {
        Self {
            cfg,
            ..Self::default()
        }
    }

    pub fn with_globals(cfg: ObjectStoreConfig, globals: &[GlobalRegion]) -> Self {
        let mut s = Self::new(cfg);
        s.globals = globals.to_vec();
        s.globals.sort_by_key(|g| g.start);
        s
    }

    pub fn record(&self, id: ObjectId) -> &ObjectRecord {
        &self.records[id as usize]
    }

    pub fn global(&self, idx: u32) -> &GlobalRegion {
        &self.globals[idx as usize]
    }

    pub fn live_count(&self) -> usize {
        self.live.len()
    }

    pub fn callsites(&self) -> &BTreeMap<u64, CallsiteStats> {
        &self.callsites
    }

    pub fn insert(&mut self, ev: &AllocEvent) -> Result<ObjectId, ObjectError> {
        if ev.size == 0 {
            return Err(ObjectError::ZeroSize { addr: ev.addr });
        }
        let end = ev.addr.saturating_add(ev.size);
        if let Some((_, &id)) = self.live.range(..end).next_back() {
            let r = &self.records[id as usize];
            if r.end() > ev.addr {
                return Err(ObjectError::Overlap {
                    start: ev.addr,
                    end,
                    live_start: r.start,
                    live_end: r.end(),
                });
            }
        }
        let id = self.records.len() as ObjectId;
        self.records.push(ObjectRecord {
            start: ev.addr,
            size: ev.size,
            callsite: ev.callsite,
            alloc_tid: ev.tid,
            live: true,
        });
        self.live.insert(ev.addr, id);
        let cs = self.callsites.entry(ev.callsite).or_default();
        cs.allocs += 1;
        let index = !cs.skipped;
        if !index {
            cs.unindexed_allocs += 1;
        }
        self.indexed.push(index);
        if index {
            let level = placement(ev.addr, ev.size);
            let records = &self.records;
            let v = match level {
                Level::Page => self.pages.entry(ev.addr >> PAGE_SHIFT).or_default(),
                Level::Chunk => self.chunks.entry(ev.addr >> CHUNK_SHIFT).or_default(),
                Level::Huge => &mut self.huge,
            };
            let pos = v.partition_point(|&o| records[o as usize].start < ev.addr);
            v.insert(pos, id);
        }
        Ok(id)
    }

    pub fn free(&mut self, ev: &FreeEvent) -> Result<ObjectId, ObjectError> {
        let id = self
            .live
            .remove(&ev.addr)
            .ok_or(ObjectError::UnmatchedFree { addr: ev.addr })?;
        self.records[id as usize].live = false;
        if self.indexed[id as usize] {
            let r = self.records[id as usize];
            let level = placement(r.start, r.size);
            let records = &self.records;
            let key = match level {
                Level::Page => Some(r.start >> PAGE_SHIFT),
                Level::Chunk => Some(r.start >> CHUNK_SHIFT),
                Level::Huge => None,
            };
            let v = match level {
                Level::Page => self.pages.get_mut(&key.unwrap()),
                Level::Chunk => self.chunks.get_mut(&key.unwrap()),
                Level::Huge => Some(&mut self.huge),
            }
            .expect("indexed object has a level entry");
            let pos = v.partition_point(|&o| records[o as usize].start < r.start);
            debug_assert_eq!(v.get(pos), Some(&id));
            v.remove(pos);
            if v.is_empty() {
                match level {
                    Level::Page => {
                        self.pages.remove(&key.unwrap());
                    }
                    Level::Chunk => {
                        self.chunks.remove(&key.unwrap());
                    }
                    Level::Huge => {}
                }
            }
        }
        Ok(id)
    }

    fn search(records: &[ObjectRecord], v: &[ObjectId], addr: u64) -> Option<ObjectId> {
        let pos = v.partition_point(|&o| records[o as usize].start <= addr);
        let id = *v.get(pos.checked_sub(1)?)?;
        records[id as usize].contains(addr).then_some(id)
    }

    /// Live, indexed heap object containing `addr`, and the level it was
    /// found in.
    pub fn lookup_level(&self, addr: u64) -> Option<(ObjectId, Level)> {
        let r = &self.records;
        if let Some(v) = self.pages.get(&(addr >> PAGE_SHIFT)) {
            if let Some(id) = Self::search(r, v, addr) {
                return Some((id, Level::Page));
            }
        }
        if let Some(v) = self.chunks.get(&(addr >> CHUNK_SHIFT)) {
            if let Some(id) = Self::search(r, v, addr) {
                return Some((id, Level::Chunk));
            }
        }
        Self::search(r, &self.huge, addr).map(|id| (id, Level::Huge))
    }

    pub fn lookup(&self, addr: u64) -> Option<ObjectId> {
        self.lookup_level(addr).map(|(id, _)| id)
    }

    pub fn global_lookup(&self, addr: u64) -> Option<u32> {
        let pos = self.globals.partition_point(|g| g.start <= addr);
        let i = pos.checked_sub(1)?;
        (addr < self.globals[i].end()).then_some(i as u32)
    }

    /// Globals are consulted before the heap.
    pub fn owner(&self, addr: u64) -> Option<Owner> {
        if let Some(g) = self.global_lookup(addr) {
            return Some(Owner::Global(g));
        }
        self.lookup(addr).map(Owner::Heap)
    }

    /// Live, indexed heap objects overlapping `[start, end)`, ascending.
    pub fn overlapping(&self, start: u64, end: u64) -> Vec<ObjectId> {
        let mut out = Vec::new();
        for (_, &id) in self.live.range(..end).rev() {
            let r = &self.records[id as usize];
            if r.end() <= start {
                break;
            }
            if self.indexed[id as usize] {
                out.push(id);
            }
        }
        out.reverse();
        out
    }

    /// Global regions overlapping `[start, end)`.
    pub fn overlapping_globals(&self, start: u64, end: u64) -> Vec<u32> {
        (0..self.globals.len() as u32)
            .filter(|&i| {
                let g = &self.globals[i as usize];
                g.start < end && g.end() > start
            })
            .collect()
    }

    /// Credits one sampled access to its callsite and re-evaluates the skip
    /// rule for that callsite.
    pub fn attribute(&mut self, addr: u64, miss: bool) -> Option<ObjectId> {
        self.sampled += 1;
        self.sampled_misses += miss as u64;
        let id = self.lookup(addr)?;
        let callsite = self.records[id as usize].callsite;
        let global_ratio = self.sampled_misses as f64 / self.sampled as f64;
        let cfg = self.cfg;
        let cs = self.callsites.get_mut(&callsite).expect("callsite of a live object");
        cs.accesses += 1;
        cs.misses += miss as u64;
        if !cs.skipped && skip_rule(cs.accesses, cs.misses, global_ratio, &cfg) {
            cs.skipped = true;
        }
        Some(id)
    }

    pub fn callsite_skip(&self, callsite: u64) -> bool {
        self.callsites.get(&callsite).is_some_and(|c| c.skipped)
    }

    /// Verifies that every live indexed object sits in exactly the level its
    /// placement rule names, and that every level array is sorted.
    pub fn check_partition(&self) -> Result<(), String> {
        let mut seen = 0usize;
        let mut check = |name: &str, key: Option<u64>, v: &[ObjectId], want: Level| -> Result<(), String> {
            if v.is_empty() {
                return Err(format!("{name} entry {key:?} is empty"));
            }
            for (i, &id) in v.iter().enumerate() {
                let r = &self.records[id as usize];
                if !r.live || !self.indexed[id as usize] {
                    return Err(format!("{name} holds dead or unindexed object 0x{:x}", r.start));
                }
                if placement(r.start, r.size) != want {
                    return Err(format!("object 0x{:x} is in the {name} but belongs elsewhere", r.start));
                }
                let k = match want {
                    Level::Page => Some(r.start >> PAGE_SHIFT),
                    Level::Chunk => Some(r.start >> CHUNK_SHIFT),
                    Level::Huge => None,
                };
                if k != key {
                    return Err(format!("object 0x{:x} filed under the wrong {name} key", r.start));
                }
                if i > 0 && self.records[v[i - 1] as usize].start >= r.start {
                    return Err(format!("{name} entry {key:?} is not sorted"));
                }
            }
            seen += v.len();
            Ok(())
        };
        for (k, v) in &self.pages {
            check("page table", Some(*k), v, Level::Page)?;
        }
        for (k, v) in &self.chunks {
            check("chunk table", Some(*k), v, Level::Chunk)?;
        }
        if !self.huge.is_empty() {
            check("huge list", None, &self.huge, Level::Huge)?;
        }
        let expected = self.live.values().filter(|&&id| self.indexed[id as usize]).count();
        if seen != expected {
            return Err(format!("{seen} indexed entries for {expected} live indexed objects"));
        }
        Ok(())
    }

    pub fn page_entry_len(&self, page: u64) -> usize {
        self.pages.get(&page).map_or(0, Vec::len)
    }

    pub fn chunk_entry_len(&self, chunk: u64) -> usize {
        self.chunks.get(&chunk).map_or(0, Vec::len)
    }

    pub fn huge_len(&self) -> usize {
        self.huge.len()
    }
}
