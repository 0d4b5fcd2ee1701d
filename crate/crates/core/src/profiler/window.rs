use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::SampledRecord;
use crate::trace::AccessKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    /// Records kept per (thread, kind) buffer.
    pub size: usize,
    /// Flush when misses / buffered exceeds this (strictly).
    pub ratio: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            size: 1000,
            ratio: 0.005,
        }
    }
}

/// Misses released by one flush, all from one (thread, kind) buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlushBatch {
    pub tid: u32,
    pub kind: AccessKind,
    pub records: Vec<SampledRecord>,
}

#[derive(Debug, Clone, Default)]
struct Buffer {
    recs: VecDeque<(SampledRecord, bool)>,
    misses: usize,
}

/// Miss-ratio checker. Sporadic misses age out of the circular buffers
/// unreported; a burst that lifts a buffer's ratio over the threshold
/// releases every not-yet-released miss in that buffer.
#[derive(Debug, Clone)]
pub struct MissWindow {
    cfg: WindowConfig,
    bufs: Vec<[Buffer; 2]>,
}

impl MissWindow {
    pub fn new(cfg: WindowConfig) -> Self {
        Self {
            cfg,
            bufs: Vec::new(),
        }
    }

    pub fn update(&mut self, rec: SampledRecord) -> Option<FlushBatch> {
        while self.bufs.len() <= rec.tid as usize {
            self.bufs.push(Default::default());
        }
        let cap = self.cfg.size.max(1);
        let b = &mut self.bufs[rec.tid as usize][rec.kind as usize];
        if b.recs.len() == cap {
            if let Some((old, _)) = b.recs.pop_front() {
                if old.miss {
                    b.misses -= 1;
                }
            }
        }
        b.recs.push_back((rec, false));
        if rec.miss {
            b.misses += 1;
        }
        let ratio = b.misses as f64 / b.recs.len() as f64;
        if b.misses == 0 || ratio <= self.cfg.ratio {
            return None;
        }
        let mut out = Vec::new();
        for (r, consumed) in b.recs.iter_mut() {
            if r.miss && !*consumed {
                *consumed = true;
                out.push(*r);
            }
        }
        if out.is_empty() {
            return None;
        }
        Some(FlushBatch {
            tid: rec.tid,
            kind: rec.kind,
            records: out,
        })
    }

    /// (buffered records, buffered misses) for one buffer.
    pub fn occupancy(&self, tid: u32, kind: AccessKind) -> (usize, usize) {
        self.bufs
            .get(tid as usize)
            .map(|b| {
                let b = &b[kind as usize];
                (b.recs.len(), b.misses)
            })
            .unwrap_or((0, 0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(seq: u64, miss: bool) -> SampledRecord {
        SampledRecord {
            seq,
            tid: 0,
            ip: 0x10,
            addr: 0x40 * seq,
            kind: AccessKind::Load,
            miss,
            set: 0,
            line: 0x40 * seq,
        }
    }

    /// Fills a fresh window with `hits` hits then `misses` misses, returning
    /// the batches emitted along the way.
    fn fill(w: &mut MissWindow, hits: u64, misses: u64) -> Vec<FlushBatch> {
        let mut out = Vec::new();
        for i in 0..hits {
            assert!(w.update(rec(i, false)).is_none());
        }
        for i in hits..hits + misses {
            out.extend(w.update(rec(i, true)));
        }
        out
    }

    #[test]
    fn ratio_at_threshold_does_not_flush() {
        let mut w = MissWindow::new(WindowConfig::default());
        assert!(fill(&mut w, 995, 5).is_empty());
        assert_eq!(w.occupancy(0, AccessKind::Load), (1000, 5));
    }

    #[test]
    fn ratio_above_threshold_flushes_all_buffered_misses() {
        let mut w = MissWindow::new(WindowConfig::default());
        assert!(fill(&mut w, 995, 5).is_empty());
        // evicts a hit, adds a sixth miss: 6 / 1000
        let b = w.update(rec(1000, true)).unwrap();
        let seqs: Vec<u64> = b.records.iter().map(|r| r.seq).collect();
        assert_eq!(seqs, [995, 996, 997, 998, 999, 1000]);
        // already released misses are not delivered again
        let b = w.update(rec(1001, true)).unwrap();
        assert_eq!(b.records.len(), 1);
        assert_eq!(b.records[0].seq, 1001);
    }

    #[test]
    fn all_hits_never_flush() {
        let mut w = MissWindow::new(WindowConfig::default());
        assert!(fill(&mut w, 5000, 0).is_empty());
    }

    #[test]
    fn buffer_never_exceeds_capacity() {
        let mut w = MissWindow::new(WindowConfig { size: 10, ratio: 0.5 });
        for i in 0..100 {
            w.update(rec(i, i % 3 == 0));
            let (n, m) = w.occupancy(0, AccessKind::Load);
            assert!(n <= 10 && m <= n);
        }
    }
}
