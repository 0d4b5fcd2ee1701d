use std::collections::BTreeMap;

use rustc_hash::FxHashMap;

use crate::profiler::SampledRecord;
use crate::trace::AccessKind;

pub const WORD_SIZE: u64 = 8;
/// Distinct thread ids tracked per word before saturating to "many".
pub const TRACK_CAP: usize = 8;

/// Threads that touched one word, exact up to `TRACK_CAP` ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WordTrack {
    tids: Vec<u32>,
    many: bool,
}

impl WordTrack {
    pub fn insert(&mut self, tid: u32) {
        if self.many || self.tids.contains(&tid) {
            return;
        }
        if self.tids.len() == TRACK_CAP {
            self.many = true;
            self.tids.clear();
        } else {
            self.tids.push(tid);
        }
    }

    pub fn is_many(&self) -> bool {
        self.many
    }

    pub fn tids(&self) -> &[u32] {
        &self.tids
    }

    /// Lower bound on distinct threads.
    pub fn count(&self) -> usize {
        if self.many {
            TRACK_CAP + 1
        } else {
            self.tids.len()
        }
    }

    pub fn is_empty(&self) -> bool {
        !self.many && self.tids.is_empty()
    }

    fn merged(&self, other: &WordTrack) -> WordTrack {
        let mut m = self.clone();
        if other.many {
            m.many = true;
            m.tids.clear();
        }
        for &t in &other.tids {
            m.insert(t);
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SharingSignature {
    /// Two threads touched the same word.
    True,
    /// Two threads touched different words, never the same one.
    False,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineEntry {
    pub set: u32,
    pub misses: u64,
    pub load_words: Vec<WordTrack>,
    pub store_words: Vec<WordTrack>,
    /// Flushed misses per contributing ip.
    pub ip_misses: BTreeMap<u64, u64>,
}

impl LineEntry {
    fn new(set: u32, words: usize) -> Self {
        Self {
            set,
            misses: 0,
            load_words: vec![WordTrack::default(); words],
            store_words: vec![WordTrack::default(); words],
            ip_misses: BTreeMap::new(),
        }
    }

    /// Loads and stores combined, per word.
    pub fn word_threads(&self, word: usize) -> WordTrack {
        self.load_words[word].merged(&self.store_words[word])
    }

    pub fn signature(&self) -> Option<SharingSignature> {
        let words: Vec<WordTrack> = (0..self.load_words.len()).map(|w| self.word_threads(w)).collect();
        if words.iter().any(|w| w.count() >= 2) {
            return Some(SharingSignature::True);
        }
        // every word now has at most one thread
        let mut first: Option<u32> = None;
        for w in &words {
            if let Some(&t) = w.tids().first() {
                match first {
                    None => first = Some(t),
                    Some(f) if f != t => return Some(SharingSignature::False),
                    _ => {}
                }
            }
        }
        None
    }
}

/// Per-set miss counters plus per-line detail, fed by flushed misses only.
#[derive(Debug, Clone)]
pub struct MissStore {
    line_size: u64,
    set_misses: Vec<u64>,
    lines: FxHashMap<u64, LineEntry>,
    total: u64,
}

impl MissStore {
    pub fn new(line_size: u32, num_sets: u32) -> Self {
        Self {
            line_size: line_size as u64,
            set_misses: vec![0; num_sets as usize],
            lines: FxHashMap::default(),
            total: 0,
        }
    }

    pub fn update(&mut self, rec: &SampledRecord) {
        debug_assert!(rec.miss);
        self.total += 1;
        self.set_misses[rec.set as usize] += 1;
        let words = (self.line_size / WORD_SIZE).max(1) as usize;
        let e = self
            .lines
            .entry(rec.line)
            .or_insert_with(|| LineEntry::new(rec.set, words));
        e.misses += 1;
        *e.ip_misses.entry(rec.ip).or_default() += 1;
        let word = ((rec.addr % self.line_size) / WORD_SIZE) as usize;
        let track = match rec.kind {
            AccessKind::Load => &mut e.load_words[word],
            AccessKind::Store => &mut e.store_words[word],
        };
        track.insert(rec.tid);
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn set_misses(&self) -> &[u64] {
        &self.set_misses
    }

    pub fn line(&self, line: u64) -> Option<&LineEntry> {
        self.lines.get(&line)
    }

    /// Lines in ascending address order.
    pub fn lines_sorted(&self) -> Vec<(u64, &LineEntry)> {
        let mut v: Vec<(u64, &LineEntry)> = self.lines.iter().map(|(k, v)| (*k, v)).collect();
        v.sort_unstable_by_key(|(k, _)| *k);
        v
    }

    pub fn line_count(&self) -> usize {
        self.lines.len()
    }
}
