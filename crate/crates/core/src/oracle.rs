//! Exact miss breakdown from the simulator, with no sampling involved.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cache_sim::{CacheConfig, CacheSim, CoreStats, OracleKind};
use crate::trace::{Event, TraceDigest, TraceError, TraceHeader};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindTotals {
    pub hit: u64,
    pub compulsory: u64,
    pub capacity: u64,
    pub conflict: u64,
    pub coherence: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreSummary {
    pub core: u32,
    pub accesses: u64,
    pub loads: u64,
    pub stores: u64,
    pub load_misses: u64,
    pub store_misses: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub trace_id: String,
    pub cache: CacheConfig,
    pub ground_truth: BTreeMap<String, String>,
    pub accesses: u64,
    pub loads: u64,
    pub stores: u64,
    pub kinds: KindTotals,
    pub load_miss_ratio: f64,
    pub store_miss_ratio: f64,
    /// Most frequent miss kind other than compulsory, if any.
    pub dominant_kind: Option<OracleKind>,
    pub per_core: Vec<CoreSummary>,
    pub set_misses: Vec<u64>,
    /// (line address as hex, misses), ascending by address.
    pub line_misses: Vec<(String, u64)>,
}

impl OracleReport {
    pub fn from_sim(sim: &CacheSim, header: &TraceHeader, trace_id: String) -> Self {
        let t = sim.total_stats();
        let kinds = KindTotals {
            hit: t.hits,
            compulsory: t.compulsory,
            capacity: t.capacity,
            conflict: t.conflict,
            coherence: t.coherence,
        };
        let ratio = |m: u64, n: u64| if n == 0 { 0.0 } else { m as f64 / n as f64 };
        let per_core = sim
            .per_core_stats()
            .enumerate()
            .filter(|(_, s)| s.accesses > 0)
            .map(|(i, s): (usize, &CoreStats)| CoreSummary {
                core: i as u32,
                accesses: s.accesses,
                loads: s.loads,
                stores: s.stores,
                load_misses: s.load_misses,
                store_misses: s.store_misses,
            })
            .collect();
        Self {
            trace_id,
            cache: *sim.config(),
            ground_truth: header.ground_truth.iter().cloned().collect(),
            accesses: t.accesses,
            loads: t.loads,
            stores: t.stores,
            load_miss_ratio: ratio(t.load_misses, t.loads),
            store_miss_ratio: ratio(t.store_misses, t.stores),
            dominant_kind: dominant_kind(&t),
            kinds,
            per_core,
            set_misses: t.set_misses.clone(),
            line_misses: sim
                .line_misses()
                .into_iter()
                .map(|(l, m)| (format!("0x{l:x}"), m))
                .collect(),
        }
    }

    pub fn count(&self, kind: OracleKind) -> u64 {
        let k = &self.kinds;
        match kind {
            OracleKind::Hit => k.hit,
            OracleKind::Compulsory => k.compulsory,
            OracleKind::Capacity => k.capacity,
            OracleKind::Conflict => k.conflict,
            OracleKind::Coherence => k.coherence,
        }
    }
}

/// Ties go to the higher-priority kind (coherence, conflict, capacity).
pub fn dominant_kind(t: &CoreStats) -> Option<OracleKind> {
    [OracleKind::Coherence, OracleKind::Conflict, OracleKind::Capacity]
        .into_iter()
        .map(|k| (k, t.kind_count(k)))
        .filter(|(_, n)| *n > 0)
        .fold(None, |best: Option<(OracleKind, u64)>, (k, n)| match best {
            Some((_, m)) if m >= n => best,
            _ => Some((k, n)),
        })
        .map(|(k, _)| k)
}

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Cache(#[from] crate::cache_sim::CacheError),
}

/// Runs the simulator alone over a trace.
pub fn run_oracle<I>(header: &TraceHeader, events: I) -> Result<OracleReport, OracleError>
where
    I: IntoIterator<Item = Result<Event, TraceError>>,
{
    let mut sim = CacheSim::new(header.cache)?;
    let mut digest = TraceDigest::default();
    digest.update_header(header);
    for ev in events {
        let ev = ev?;
        digest.update_event(&ev);
        if let Event::Access(a) = ev {
            sim.access(a.tid, a.addr, a.kind)?;
        }
    }
    Ok(OracleReport::from_sim(&sim, header, digest.finish()))
}
