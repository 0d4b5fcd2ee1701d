use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SampledRecord;
use crate::cache_sim::AccessOutcome;
use crate::trace::{AccessEvent, AccessKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub load_period: u64,
    pub store_period: u64,
    /// Each reset draws uniformly from period * [1 - jitter, 1 + jitter].
    pub period_jitter: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            load_period: 20_000,
            store_period: 50_000,
            period_jitter: 0.10,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.load_period == 0 || self.store_period == 0 {
            return Err("sampling periods must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.period_jitter) {
            return Err(format!("period_jitter must be in [0, 1), got {}", self.period_jitter));
        }
        Ok(())
    }

    /// Inclusive bounds of a countdown draw for `period`.
    pub fn bounds(&self, period: u64) -> (u64, u64) {
        let p = period as f64;
        let lo = ((p * (1.0 - self.period_jitter)).ceil() as u64).max(1);
        let hi = ((p * (1.0 + self.period_jitter)).floor() as u64).max(lo);
        (lo, hi)
    }
}

#[derive(Debug, Clone)]
struct Lane {
    remaining: u64,
    lo: u64,
    hi: u64,
    rng: ChaCha8Rng,
}

impl Lane {
    fn new(cfg: &SamplerConfig, period: u64, stream: u64) -> Self {
        let (lo, hi) = cfg.bounds(period);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(stream);
        let mut lane = Self {
            remaining: 0,
            lo,
            hi,
            rng,
        };
        lane.remaining = lane.draw();
        lane
    }

    fn draw(&mut self) -> u64 {
        if self.lo == self.hi {
            self.lo
        } else {
            self.rng.gen_range(self.lo..=self.hi)
        }
    }
}

/// PMU-style sampler: one countdown per (thread, access kind), each with its
/// own RNG stream so threads never sample in lockstep.
#[derive(Debug, Clone)]
pub struct Sampler {
    cfg: SamplerConfig,
    lanes: Vec<[Lane; 2]>,
}

impl Sampler {
    pub fn new(cfg: SamplerConfig) -> Self {
        Self { cfg, lanes: Vec::new() }
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    fn lanes_for(&mut self, tid: u32) -> &mut [Lane; 2] {
        while self.lanes.len() <= tid as usize {
            let t = self.lanes.len() as u64;
            self.lanes.push([
                Lane::new(&self.cfg, self.cfg.load_period, 2 * t),
                Lane::new(&self.cfg, self.cfg.store_period, 2 * t + 1),
            ]);
        }
        &mut self.lanes[tid as usize]
    }

    #[inline]
    pub fn step(&mut self, ev: &AccessEvent, out: &AccessOutcome) -> Option<SampledRecord> {
        let lane = &mut self.lanes_for(ev.tid)[ev.kind as usize];
        lane.remaining -= 1;
        if lane.remaining > 0 {
            return None;
        }
        lane.remaining = lane.draw();
        Some(SampledRecord {
            seq: ev.seq,
            tid: ev.tid,
            ip: ev.ip,
            addr: ev.addr,
            kind: ev.kind,
            miss: !out.hit,
            set: out.set_index,
            line: out.line_addr,
        })
    }

    /// Accesses left before the next sample on this lane.
    pub fn remaining(&mut self, tid: u32, kind: AccessKind) -> u64 {
        self.lanes_for(tid)[kind as usize].remaining
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache_sim::OracleKind;

    fn ev(seq: u64, tid: u32, kind: AccessKind) -> AccessEvent {
        AccessEvent {
            seq,
            tid,
            ip: 0x10,
            addr: 0x1000,
            kind,
        }
    }

    fn hit() -> AccessOutcome {
        AccessOutcome {
            hit: true,
            oracle_kind: OracleKind::Hit,
            set_index: 0,
            line_addr: 0x1000,
        }
    }

    #[test]
    fn zero_jitter_samples_every_period() {
        let mut s = Sampler::new(SamplerConfig {
            load_period: 3,
            store_period: 3,
            period_jitter: 0.0,
            seed: 1,
        });
        let hits: Vec<u64> = (1..=9)
            .filter_map(|i| s.step(&ev(i, 0, AccessKind::Load), &hit()))
            .map(|r| r.seq)
            .collect();
        assert_eq!(hits, [3, 6, 9]);
    }

    #[test]
    fn default_first_load_sample_within_jitter() {
        for seed in 0..20 {
            let mut s = Sampler::new(SamplerConfig {
                seed,
                ..SamplerConfig::default()
            });
            let first = (1..=30_000u64)
                .find(|&i| s.step(&ev(i, 0, AccessKind::Load), &hit()).is_some())
                .unwrap();
            assert!((18_000..=22_000).contains(&first), "seed {seed}: {first}");
        }
    }

    #[test]
    fn threads_draw_from_separate_lanes() {
        let mut s = Sampler::new(SamplerConfig::default());
        let draws = |s: &mut Sampler, tid| {
            let mut v = Vec::new();
            let mut n = 0;
            for i in 0..200_000u64 {
                n += 1;
                if s.step(&ev(i, tid, AccessKind::Load), &hit()).is_some() {
                    v.push(n);
                    n = 0;
                }
            }
            v
        };
        let a = draws(&mut s, 0);
        let b = draws(&mut s, 1);
        assert_ne!(a, b);
    }

    #[test]
    fn kinds_count_separately() {
        let mut s = Sampler::new(SamplerConfig {
            load_period: 2,
            store_period: 5,
            period_jitter: 0.0,
            seed: 0,
        });
        for i in 0..4 {
            s.step(&ev(i, 0, AccessKind::Store), &hit());
        }
        assert_eq!(s.remaining(0, AccessKind::Store), 1);
        assert_eq!(s.remaining(0, AccessKind::Load), 2);
    }
}
