//! Single streaming pass over a trace: simulate, sample, window, breakpoint,
//! and fill the stores the classifier reads.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache_sim::{CacheError, CacheSim};
use crate::classifier::{classify, Classification, ClassifierInput, FilterThresholds, Totals};
use crate::config::RunConfig;
use crate::oracle::OracleReport;
use crate::profiler::{
    select_breakpoint_target, Breakpoint, BreakpointLogEntry, FinePattern, MissWindow, PatternOutcome, Sampler,
};
use crate::stores::{InstructionStore, MissStore, ObjectError, ObjectStore};
use crate::trace::{Event, TraceDigest, TraceError, TraceHeader};
use crate::workloads::GroundTruth;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("event {seq}: {source}")]
    Object {
        seq: u64,
        #[source]
        source: ObjectError,
    },
    #[error("bad ground truth in trace header: {0}")]
    GroundTruth(String),
}

/// Counters accumulated over one run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunTotals {
    pub events: u64,
    pub accesses: u64,
    pub allocs: u64,
    pub frees: u64,
    pub sampled_loads: u64,
    pub sampled_stores: u64,
    pub sampled_load_misses: u64,
    pub sampled_store_misses: u64,
    pub flush_batches: u64,
    pub flushed_misses: u64,
    pub breakpoints_installed: u64,
    pub patterns: BTreeMap<String, u64>,
}

impl RunTotals {
    pub fn classifier_totals(&self) -> Totals {
        Totals {
            sampled_loads: self.sampled_loads,
            sampled_stores: self.sampled_stores,
            sampled_load_misses: self.sampled_load_misses,
            sampled_store_misses: self.sampled_store_misses,
            flushed_misses: self.flushed_misses,
        }
    }
}

fn outcome_name(o: PatternOutcome) -> &'static str {
    match o {
        PatternOutcome::SameSetConflict => "same_set_conflict",
        PatternOutcome::MultiSetCapacity => "multi_set_capacity",
        PatternOutcome::Inconclusive => "inconclusive",
    }
}

/// Incremental profiler. Feed events in order, then call [`Profiler::finish`].
pub struct Profiler {
    header: TraceHeader,
    config: RunConfig,
    digest: TraceDigest,
    sim: CacheSim,
    sampler: Sampler,
    window: MissWindow,
    bp: Breakpoint,
    objects: ObjectStore,
    misses: MissStore,
    instrs: InstructionStore,
    totals: RunTotals,
    last_seq: u64,
    batch_ips: Vec<u64>,
}

impl Profiler {
    /// The cache geometry comes from the trace header; `config.cache` is
    /// only used when generating traces.
    pub fn new(header: TraceHeader, mut config: RunConfig) -> Result<Self, ProfileError> {
        header.validate()?;
        config.cache = header.cache;
        let cache = header.cache;
        let mut digest = TraceDigest::default();
        digest.update_header(&header);
        Ok(Self {
            digest,
            sim: CacheSim::new(cache)?,
            sampler: Sampler::new(config.sampler),
            window: MissWindow::new(config.window()),
            bp: Breakpoint::new(config.breakpoint),
            objects: ObjectStore::with_globals(config.objects, &header.globals),
            misses: MissStore::new(cache.line_size, cache.num_sets),
            instrs: InstructionStore::new(cache.num_sets),
            totals: RunTotals::default(),
            last_seq: 0,
            batch_ips: Vec::new(),
            header,
            config,
        })
    }

    fn store_pattern(&mut self, p: FinePattern) {
        *self.totals.patterns.entry(outcome_name(p.outcome).into()).or_default() += 1;
        self.instrs.attach_pattern(p);
    }

    pub fn push(&mut self, ev: &Event) -> Result<(), ProfileError> {
        self.digest.update_event(ev);
        self.totals.events += 1;
        let seq = ev.seq();
        self.last_seq = seq;
        match ev {
            Event::Access(a) => {
                self.totals.accesses += 1;
                let out = self.sim.access(a.tid, a.addr, a.kind)?;
                let objects = &self.objects;
                if let Some(p) = self.bp.observe(a, &out, |addr| objects.lookup(addr)) {
                    self.store_pattern(p);
                }
                let Some(rec) = self.sampler.step(a, &out) else {
                    return Ok(());
                };
                let t = &mut self.totals;
                match (a.kind, rec.miss) {
                    (crate::trace::AccessKind::Load, m) => {
                        t.sampled_loads += 1;
                        t.sampled_load_misses += m as u64;
                    }
                    (crate::trace::AccessKind::Store, m) => {
                        t.sampled_stores += 1;
                        t.sampled_store_misses += m as u64;
                    }
                }
                self.instrs.record_sample(&rec);
                self.objects.attribute(rec.addr, rec.miss);
                if let Some(batch) = self.window.update(rec) {
                    self.totals.flush_batches += 1;
                    self.instrs.begin_batch();
                    self.batch_ips.clear();
                    for r in &batch.records {
                        self.totals.flushed_misses += 1;
                        self.misses.update(r);
                        let owner = self.objects.owner(r.addr);
                        self.instrs.record_miss(r, owner);
                        if !self.batch_ips.contains(&r.ip) {
                            self.batch_ips.push(r.ip);
                        }
                    }
                    let sel = select_breakpoint_target(&self.instrs, &self.batch_ips, &mut self.bp, seq);
                    if let Some(p) = sel.expired {
                        self.store_pattern(p);
                    }
                    if sel.installed.is_some() {
                        self.totals.breakpoints_installed += 1;
                    }
                }
            }
            Event::Alloc(m) => {
                self.totals.allocs += 1;
                self.objects
                    .insert(m)
                    .map_err(|source| ProfileError::Object { seq, source })?;
                if let Some(p) = self.bp.tick(seq) {
                    self.store_pattern(p);
                }
            }
            Event::Free(f) => {
                self.totals.frees += 1;
                self.objects
                    .free(f)
                    .map_err(|source| ProfileError::Object { seq, source })?;
                if let Some(p) = self.bp.tick(seq) {
                    self.store_pattern(p);
                }
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<ProfileRun, ProfileError> {
        if let Some(p) = self.bp.finish(self.last_seq) {
            self.store_pattern(p);
        }
        let trace_id = self.digest.finish();
        let ground_truth = GroundTruth::from_header(&self.header).map_err(ProfileError::GroundTruth)?;
        let oracle = OracleReport::from_sim(&self.sim, &self.header, trace_id.clone());
        Ok(ProfileRun {
            trace_id,
            config: self.config,
            totals: self.totals,
            objects: self.objects,
            misses: self.misses,
            instrs: self.instrs,
            breakpoint_log: self.bp.log().to_vec(),
            oracle,
            ground_truth,
            header: self.header,
        })
    }
}

/// Everything one profiling pass produced.
#[derive(Debug, Clone)]
pub struct ProfileRun {
    pub header: TraceHeader,
    pub trace_id: String,
    pub config: RunConfig,
    pub totals: RunTotals,
    pub objects: ObjectStore,
    pub misses: MissStore,
    pub instrs: InstructionStore,
    pub breakpoint_log: Vec<BreakpointLogEntry>,
    pub oracle: OracleReport,
    pub ground_truth: Option<GroundTruth>,
}

impl ProfileRun {
    /// Classifies the stores with `th`. The stores are not modified, so the
    /// same run can be classified under several thresholds.
    pub fn classify(&self, th: &FilterThresholds) -> Classification {
        let input = ClassifierInput {
            cache: &self.header.cache,
            objects: &self.objects,
            misses: &self.misses,
            instrs: &self.instrs,
            symbols: &self.header.symbols,
            totals: self.totals.classifier_totals(),
            miss_penalty: self.config.miss_penalty,
        };
        classify(&input, th)
    }
}

/// Profiles a whole event stream in one pass.
pub fn run_profile<I>(header: TraceHeader, config: RunConfig, events: I) -> Result<ProfileRun, ProfileError>
where
    I: IntoIterator<Item = Result<Event, TraceError>>,
{
    let mut p = Profiler::new(header, config)?;
    for ev in events {
        p.push(&ev?)?;
    }
    p.finish()
}
