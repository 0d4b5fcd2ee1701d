use std::collections::BTreeMap;

use rustc_hash::FxHashMap;

use super::objects::Owner;
use crate::profiler::{FinePattern, SampledRecord};
use crate::trace::AccessKind;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstructionStats {
    pub ip: u64,
    /// All sampled accesses of this ip, hit or miss.
    pub accesses: u64,
    /// Flushed misses.
    pub load_misses: u64,
    pub store_misses: u64,
    pub set_histogram: Vec<u64>,
    /// Current run of consecutive sampled misses.
    pub consecutive_misses: u32,
    batch_epoch: u64,
    batch_sets: Vec<(u32, u32)>,
    /// Flushed misses by owning object or global.
    pub owner_misses: BTreeMap<Owner, u64>,
    pub pattern: Option<FinePattern>,
}

impl InstructionStats {
    fn new(ip: u64, num_sets: usize) -> Self {
        Self {
            ip,
            accesses: 0,
            load_misses: 0,
            store_misses: 0,
            set_histogram: vec![0; num_sets],
            consecutive_misses: 0,
            batch_epoch: 0,
            batch_sets: Vec::new(),
            owner_misses: BTreeMap::new(),
            pattern: None,
        }
    }

    pub fn misses(&self) -> u64 {
        self.load_misses + self.store_misses
    }

    /// Largest per-set miss count inside flush `epoch`.
    pub fn batch_max_set(&self, epoch: u64) -> u32 {
        if self.batch_epoch != epoch {
            return 0;
        }
        self.batch_sets.iter().map(|(_, n)| *n).max().unwrap_or(0)
    }

    /// (set, misses) of the set holding most of this ip's misses; ties go to
    /// the lower set.
    pub fn top_set(&self) -> Option<(u32, u64)> {
        self.set_histogram
            .iter()
            .enumerate()
            .filter(|(_, n)| **n > 0)
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(s, n)| (s as u32, *n))
    }
}

/// Per-instruction aggregates keyed by ip.
#[derive(Debug, Clone)]
pub struct InstructionStore {
    num_sets: usize,
    map: FxHashMap<u64, InstructionStats>,
    epoch: u64,
}

impl InstructionStore {
    pub fn new(num_sets: u32) -> Self {
        Self {
            num_sets: num_sets as usize,
            map: FxHashMap::default(),
            epoch: 0,
        }
    }

    fn entry(&mut self, ip: u64) -> &mut InstructionStats {
        let n = self.num_sets;
        self.map.entry(ip).or_insert_with(|| InstructionStats::new(ip, n))
    }

    pub fn record_sample(&mut self, rec: &SampledRecord) {
        let e = self.entry(rec.ip);
        e.accesses += 1;
        if rec.miss {
            e.consecutive_misses += 1;
        } else {
            e.consecutive_misses = 0;
        }
    }

    /// Starts a new flush epoch; per-set batch counts restart from zero.
    pub fn begin_batch(&mut self) -> u64 {
        self.epoch += 1;
        self.epoch
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn record_miss(&mut self, rec: &SampledRecord, owner: Option<Owner>) {
        let epoch = self.epoch;
        let e = self.entry(rec.ip);
        match rec.kind {
            AccessKind::Load => e.load_misses += 1,
            AccessKind::Store => e.store_misses += 1,
        }
        e.set_histogram[rec.set as usize] += 1;
        if e.batch_epoch != epoch {
            e.batch_epoch = epoch;
            e.batch_sets.clear();
        }
        match e.batch_sets.iter_mut().find(|(s, _)| *s == rec.set) {
            Some((_, n)) => *n += 1,
            None => e.batch_sets.push((rec.set, 1)),
        }
        if let Some(o) = owner {
            *e.owner_misses.entry(o).or_default() += 1;
        }
    }

    /// A conclusive pattern is never replaced by an inconclusive one.
    pub fn attach_pattern(&mut self, p: FinePattern) {
        let e = self.entry(p.ip);
        let keep_old = e.pattern.as_ref().is_some_and(|old| old.is_conclusive() && !p.is_conclusive());
        if !keep_old {
            e.pattern = Some(p);
        }
    }

    pub fn get(&self, ip: u64) -> Option<&InstructionStats> {
        self.map.get(&ip)
    }

    /// All instructions in ascending ip order.
    pub fn sorted(&self) -> Vec<&InstructionStats> {
        let mut v: Vec<&InstructionStats> = self.map.values().collect();
        v.sort_unstable_by_key(|s| s.ip);
        v
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(ip: u64, miss: bool, set: u32) -> SampledRecord {
        SampledRecord {
            seq: 0,
            tid: 0,
            ip,
            addr: set as u64 * 64,
            kind: AccessKind::Load,
            miss,
            set,
            line: set as u64 * 64,
        }
    }

    #[test]
    fn histogram_counts_flushed_misses() {
        let mut s = InstructionStore::new(128);
        s.begin_batch();
        for _ in 0..3 {
            s.record_miss(&rec(0xA, true, 5), None);
        }
        let a = s.get(0xA).unwrap();
        assert_eq!(a.set_histogram[5], 3);
        assert_eq!(a.misses(), 3);
        assert_eq!(a.batch_max_set(s.epoch()), 3);
        assert_eq!(a.top_set(), Some((5, 3)));
    }

    #[test]
    fn consecutive_run_resets_on_hit() {
        let mut s = InstructionStore::new(4);
        let mut runs = Vec::new();
        for i in 0..6 {
            s.record_sample(&rec(0xA, i % 2 == 0, 0));
            runs.push(s.get(0xA).unwrap().consecutive_misses);
        }
        assert_eq!(runs, [1, 0, 1, 0, 1, 0]);
        for _ in 0..4 {
            s.record_sample(&rec(0xA, true, 0));
        }
        assert_eq!(s.get(0xA).unwrap().consecutive_misses, 4);
        assert_eq!(s.get(0xA).unwrap().accesses, 10);
    }

    #[test]
    fn batch_counts_restart_each_epoch() {
        let mut s = InstructionStore::new(4);
        s.begin_batch();
        s.record_miss(&rec(0xA, true, 1), None);
        s.record_miss(&rec(0xA, true, 1), None);
        let e = s.begin_batch();
        assert_eq!(s.get(0xA).unwrap().batch_max_set(e), 0);
        s.record_miss(&rec(0xA, true, 1), None);
        assert_eq!(s.get(0xA).unwrap().batch_max_set(e), 1);
    }
}
