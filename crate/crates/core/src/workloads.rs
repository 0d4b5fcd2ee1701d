//! Synthetic trace generators, one per bug class, plus a clean baseline and a
//! sub-threshold issue. Each generator embeds its ground truth in the header
//! as `# GT key=value` lines and streams its body lazily, so multi-hundred
//! million event traces never materialize in memory.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache_sim::{CacheConfig, OracleKind};
use crate::classifier::{MissType, Origin};
use crate::trace::{AccessEvent, AccessKind, AllocEvent, Event, FreeEvent, GlobalRegion, TraceHeader};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WorkloadKind {
    FalseSharing,
    TrueSharing,
    ConflictStride,
    CapacityLoops,
    AllocFalseSharing,
    AllocConflict,
    Baseline,
    MinorIssue,
}

impl WorkloadKind {
    pub const ALL: [WorkloadKind; 8] = [
        WorkloadKind::FalseSharing,
        WorkloadKind::TrueSharing,
        WorkloadKind::ConflictStride,
        WorkloadKind::CapacityLoops,
        WorkloadKind::AllocFalseSharing,
        WorkloadKind::AllocConflict,
        WorkloadKind::Baseline,
        WorkloadKind::MinorIssue,
    ];

    /// The six bug classes exercised by the acceptance batch.
    pub const SUITE: [WorkloadKind; 6] = [
        WorkloadKind::FalseSharing,
        WorkloadKind::TrueSharing,
        WorkloadKind::ConflictStride,
        WorkloadKind::CapacityLoops,
        WorkloadKind::AllocFalseSharing,
        WorkloadKind::AllocConflict,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WorkloadKind::FalseSharing => "FalseSharing",
            WorkloadKind::TrueSharing => "TrueSharing",
            WorkloadKind::ConflictStride => "ConflictStride",
            WorkloadKind::CapacityLoops => "CapacityLoops",
            WorkloadKind::AllocFalseSharing => "AllocFalseSharing",
            WorkloadKind::AllocConflict => "AllocConflict",
            WorkloadKind::Baseline => "Baseline",
            WorkloadKind::MinorIssue => "MinorIssue",
        }
    }

    pub fn cli_name(self) -> &'static str {
        match self {
            WorkloadKind::FalseSharing => "false-sharing",
            WorkloadKind::TrueSharing => "true-sharing",
            WorkloadKind::ConflictStride => "conflict-stride",
            WorkloadKind::CapacityLoops => "capacity",
            WorkloadKind::AllocFalseSharing => "alloc-false-sharing",
            WorkloadKind::AllocConflict => "alloc-conflict",
            WorkloadKind::Baseline => "baseline",
            WorkloadKind::MinorIssue => "minor-issue",
        }
    }
}

impl fmt::Display for WorkloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WorkloadKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        let kind = match norm.as_str() {
            "falsesharing" => WorkloadKind::FalseSharing,
            "truesharing" => WorkloadKind::TrueSharing,
            "conflictstride" | "conflict" => WorkloadKind::ConflictStride,
            "capacityloops" | "capacity" => WorkloadKind::CapacityLoops,
            "allocfalsesharing" => WorkloadKind::AllocFalseSharing,
            "allocconflict" => WorkloadKind::AllocConflict,
            "baseline" => WorkloadKind::Baseline,
            "minorissue" | "minor" => WorkloadKind::MinorIssue,
            _ => return Err(format!("unknown workload kind {s:?}")),
        };
        Ok(kind)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WorkloadError {
    #[error("invalid workload: {0}")]
    Invalid(String),
    #[error("invalid cache config: {0}")]
    Cache(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub threads: u32,
    /// Outer loop count; the unit is kind-specific (see `WorkloadSpec::new`).
    pub iterations: u64,
    pub seed: u64,
    /// CapacityLoops: each array is `scale` times the cache capacity.
    pub scale: u32,
    /// ConflictStride: distinct lines per set (default associativity + 1).
    pub lines: Option<u32>,
    /// ConflictStride: passes over one set's lines before moving on.
    pub passes: u32,
    /// AllocConflict: number of small objects.
    pub objects: u32,
    /// AllocConflict: object size in bytes.
    pub object_size: u64,
}

impl WorkloadSpec {
    /// Defaults sized so every class gathers a few hundred samples at the
    /// default sampling periods.
    pub fn new(kind: WorkloadKind, seed: u64) -> Self {
        let (threads, iterations) = match kind {
            // passes over both arrays
            WorkloadKind::CapacityLoops => (1, 64),
            // rotations over every set
            WorkloadKind::ConflictStride => (1, 220),
            // iterations per thread
            WorkloadKind::FalseSharing | WorkloadKind::TrueSharing | WorkloadKind::AllocFalseSharing => {
                (2, 300_000)
            }
            // passes over all objects
            WorkloadKind::AllocConflict => (1, 100_000),
            // passes over each private buffer
            WorkloadKind::Baseline => (2, 4_000),
            // background loads per thread
            WorkloadKind::MinorIssue => (2, 220_000_000),
        };
        Self {
            kind,
            threads,
            iterations,
            seed,
            scale: 4,
            lines: None,
            passes: 16,
            objects: 40,
            object_size: 48,
        }
    }

    pub fn validate(&self, cfg: &CacheConfig) -> Result<(), WorkloadError> {
        cfg.validate().map_err(|e| WorkloadError::Cache(e.to_string()))?;
        let bad = |m: String| Err(WorkloadError::Invalid(m));
        if self.threads == 0 {
            return bad("threads must be >= 1".into());
        }
        if self.iterations == 0 {
            return bad("iterations must be >= 1".into());
        }
        if self.threads > cfg.num_cores {
            return bad(format!(
                "{} threads need {} cores but the cache has {}",
                self.threads, self.threads, cfg.num_cores
            ));
        }
        match self.kind {
            WorkloadKind::CapacityLoops => {
                if self.scale < 2 {
                    return bad("capacity loops need scale >= 2 to exceed the cache".into());
                }
            }
            WorkloadKind::ConflictStride => {
                let lines = self.lines.unwrap_or(cfg.associativity + 1);
                if lines <= cfg.associativity {
                    return bad(format!(
                        "conflict stride needs more distinct lines per set ({lines}) than ways ({})",
                        cfg.associativity
                    ));
                }
                if lines as usize > cfg.capacity_lines() {
                    return bad(format!(
                        "conflict stride lines ({lines}) must fit in a fully-associative cache of {} lines",
                        cfg.capacity_lines()
                    ));
                }
                if self.passes < 2 {
                    return bad("conflict stride needs passes >= 2".into());
                }
            }
            WorkloadKind::AllocConflict => {
                if self.objects <= cfg.associativity {
                    return bad(format!(
                        "alloc conflict needs more objects ({}) than ways ({})",
                        self.objects, cfg.associativity
                    ));
                }
                if self.objects as usize > cfg.capacity_lines() {
                    return bad(format!(
                        "alloc conflict objects ({}) must fit in a fully-associative cache of {} lines",
                        self.objects,
                        cfg.capacity_lines()
                    ));
                }
                if self.object_size == 0 || self.object_size > cfg.line_size as u64 {
                    return bad(format!(
                        "alloc conflict object size must be in 1..={}",
                        cfg.line_size
                    ));
                }
            }
            WorkloadKind::FalseSharing
            | WorkloadKind::TrueSharing
            | WorkloadKind::AllocFalseSharing
            | WorkloadKind::MinorIssue => {
                if self.threads < 2 {
                    return bad(format!("{} needs at least 2 threads", self.kind));
                }
                if self.kind == WorkloadKind::MinorIssue && self.threads != 2 {
                    return bad("minor issue is defined for exactly 2 threads".into());
                }
                if self.kind == WorkloadKind::AllocFalseSharing && cfg.line_size < 64 {
                    return bad("alloc false sharing places 32-byte objects and needs lines >= 64".into());
                }
                if self.kind == WorkloadKind::MinorIssue && cfg.line_size < 64 {
                    return bad("minor issue needs lines >= 64".into());
                }
            }
            WorkloadKind::Baseline => {}
        }
        Ok(())
    }
}

/// Intended outcome of a generated workload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    pub workload: WorkloadKind,
    pub label: Option<MissType>,
    pub guilty_ips: Vec<u64>,
    pub guilty_callsites: Vec<u64>,
    /// False when the profiler is expected to stay silent.
    pub expect_report: bool,
    pub seed: u64,
}

impl GroundTruth {
    pub fn origin(&self) -> Option<Origin> {
        self.label.map(MissType::origin)
    }

    pub fn category(&self) -> Option<OracleKind> {
        self.label.map(MissType::oracle_kind)
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let join = |v: &[u64], hex: bool| {
            v.iter()
                .map(|x| if hex { format!("0x{x:x}") } else { x.to_string() })
                .collect::<Vec<_>>()
                .join(",")
        };
        vec![
            ("workload".into(), self.workload.name().into()),
            ("label".into(), self.label.map_or("none", MissType::name).into()),
            ("origin".into(), self.origin().map_or("none", Origin::name).into()),
            ("category".into(), self.category().map_or("none", OracleKind::name).into()),
            ("ips".into(), join(&self.guilty_ips, true)),
            ("callsites".into(), join(&self.guilty_callsites, false)),
            ("expect_report".into(), self.expect_report.to_string()),
            ("seed".into(), self.seed.to_string()),
        ]
    }

    /// Ok(None) when the header carries no ground truth at all.
    pub fn from_header(h: &TraceHeader) -> Result<Option<GroundTruth>, String> {
        if h.ground_truth.is_empty() {
            return Ok(None);
        }
        Self::from_pairs(&h.ground_truth).map(Some)
    }

    pub fn from_pairs<K: AsRef<str>, V: AsRef<str>>(pairs: &[(K, V)]) -> Result<GroundTruth, String> {
        let get = |k: &str| {
            pairs
                .iter()
                .find(|(key, _)| key.as_ref() == k)
                .map(|(_, v)| v.as_ref())
                .ok_or_else(|| format!("ground truth is missing key {k:?}"))
        };
        let list = |k: &str, hex: bool| -> Result<Vec<u64>, String> {
            let v = get(k)?;
            if v.is_empty() {
                return Ok(Vec::new());
            }
            v.split(',')
                .map(|x| {
                    let r = if hex {
                        x.strip_prefix("0x").map(|d| u64::from_str_radix(d, 16))
                    } else {
                        Some(x.parse())
                    };
                    match r {
                        Some(Ok(n)) => Ok(n),
                        _ => Err(format!("bad {k} entry {x:?}")),
                    }
                })
                .collect()
        };
        let label = match get("label")? {
            "none" => None,
            s => Some(s.parse::<MissType>()?),
        };
        Ok(GroundTruth {
            workload: get("workload")?.parse()?,
            label,
            guilty_ips: list("ips", true)?,
            guilty_callsites: list("callsites", false)?,
            expect_report: get("expect_report")?
                .parse()
                .map_err(|_| "bad expect_report".to_string())?,
            seed: get("seed")?.parse().map_err(|_| "bad seed".to_string())?,
        })
    }
}

type FillFn = Box<dyn FnMut(&mut Vec<Event>) + Send>;

/// Lazily generated event body. The fill closure appends a batch of events
/// (seq left at zero) and appends nothing once the workload is finished;
/// the stream numbers events from 1.
pub struct EventStream {
    buf: Vec<Event>,
    pos: usize,
    next_seq: u64,
    done: bool,
    fill: FillFn,
}

impl EventStream {
    fn new(fill: FillFn) -> Self {
        Self {
            buf: Vec::new(),
            pos: 0,
            next_seq: 1,
            done: false,
            fill,
        }
    }
}

impl Iterator for EventStream {
    type Item = Event;

    #[inline]
    fn next(&mut self) -> Option<Event> {
        if self.pos == self.buf.len() {
            if self.done {
                return None;
            }
            self.buf.clear();
            self.pos = 0;
            (self.fill)(&mut self.buf);
            if self.buf.is_empty() {
                self.done = true;
                return None;
            }
        }
        let mut ev = self.buf[self.pos];
        self.pos += 1;
        ev.set_seq(self.next_seq);
        self.next_seq += 1;
        Some(ev)
    }
}

pub struct Workload {
    pub header: TraceHeader,
    pub ground_truth: GroundTruth,
    pub events: EventStream,
}

// Instruction ids and callsites. The background ip is shared by the filler
// work that keeps hot loops from being 100% misses.
pub const BACKGROUND_IP: u64 = 0x401000;
pub const BACKGROUND_STORE_IP: u64 = 0x401004;
const BACKGROUND_CALLSITE: u64 = 9;
const BACKGROUND_BASE: u64 = 0x7000_0000;
const BACKGROUND_BYTES: u64 = 1024;

const CAP_IP_ALPHA: u64 = 0x401100;
const CAP_IP_BETA: u64 = 0x401200;
const CONFLICT_IP: u64 = 0x401300;
const FS_LD_SX: u64 = 0x401410;
const FS_ST_SX: u64 = 0x401414;
const FS_LD_SY: u64 = 0x401420;
const FS_ST_SY: u64 = 0x401424;
const TS_LD: u64 = 0x401500;
const TS_ST: u64 = 0x401504;
const AFS_LD: u64 = 0x401600;
const AFS_ST: u64 = 0x401604;
const AC_LD: u64 = 0x401700;
const MINOR_ST: u64 = 0x401800;
const BASE_LD: u64 = 0x401900;
const BASE_ST: u64 = 0x401904;

fn load(tid: u32, ip: u64, addr: u64) -> Event {
    Event::Access(AccessEvent {
        seq: 0,
        tid,
        ip,
        addr,
        kind: AccessKind::Load,
    })
}

fn store(tid: u32, ip: u64, addr: u64) -> Event {
    Event::Access(AccessEvent {
        seq: 0,
        tid,
        ip,
        addr,
        kind: AccessKind::Store,
    })
}

fn alloc(tid: u32, callsite: u64, addr: u64, size: u64) -> Event {
    Event::Alloc(AllocEvent {
        seq: 0,
        tid,
        callsite,
        addr,
        size,
    })
}

fn free(tid: u32, addr: u64) -> Event {
    Event::Free(FreeEvent { seq: 0, tid, addr })
}

fn align_up(x: u64, a: u64) -> u64 {
    x.div_ceil(a) * a
}

fn background_base(tid: u32) -> u64 {
    BACKGROUND_BASE + tid as u64 * 0x10000
}

/// Deterministic body generator for `spec` against cache `cfg`.
pub fn generate(spec: &WorkloadSpec, cfg: &CacheConfig) -> Result<Workload, WorkloadError> {
    spec.validate(cfg)?;
    let mut header = TraceHeader::new(*cfg);
    let mut gt = GroundTruth {
        workload: spec.kind,
        label: None,
        guilty_ips: Vec::new(),
        guilty_callsites: Vec::new(),
        expect_report: true,
        seed: spec.seed,
    };
    let sym = |h: &mut TraceHeader, ip: u64, s: &str| {
        h.symbols.insert(ip, s.to_string());
    };
    sym(&mut header, BACKGROUND_IP, "main.c:20");
    sym(&mut header, BACKGROUND_STORE_IP, "main.c:21");

    let fill: FillFn = match spec.kind {
        WorkloadKind::CapacityLoops => {
            sym(&mut header, CAP_IP_ALPHA, "loops.c:5");
            sym(&mut header, CAP_IP_BETA, "loops.c:8");
            gt.label = Some(MissType::AppCapacity);
            gt.guilty_ips = vec![CAP_IP_ALPHA, CAP_IP_BETA];
            gt.guilty_callsites = vec![1, 2];
            capacity_loops(spec, cfg)
        }
        WorkloadKind::ConflictStride => {
            sym(&mut header, CONFLICT_IP, "Grid.cpp:262");
            gt.label = Some(MissType::AppConflict);
            gt.guilty_ips = vec![CONFLICT_IP];
            gt.guilty_callsites = vec![3];
            conflict_stride(spec, cfg)
        }
        WorkloadKind::FalseSharing => {
            sym(&mut header, FS_LD_SX, "linear_regression.c:94");
            sym(&mut header, FS_ST_SX, "linear_regression.c:94");
            sym(&mut header, FS_LD_SY, "linear_regression.c:97");
            sym(&mut header, FS_ST_SY, "linear_regression.c:97");
            gt.label = Some(MissType::AppFalseSharing);
            gt.guilty_ips = vec![FS_LD_SX, FS_ST_SX, FS_LD_SY, FS_ST_SY];
            gt.guilty_callsites = vec![4];
            false_sharing(spec)
        }
        WorkloadKind::TrueSharing => {
            let counter = GlobalRegion {
                name: "shared_counter".into(),
                start: 0x600000,
                size: 8,
            };
            sym(&mut header, TS_LD, "counter.c:12");
            sym(&mut header, TS_ST, "counter.c:12");
            gt.label = Some(MissType::TrueSharing);
            gt.guilty_ips = vec![TS_LD, TS_ST];
            let addr = counter.start;
            header.globals.push(counter);
            true_sharing(spec, addr)
        }
        WorkloadKind::AllocFalseSharing => {
            sym(&mut header, AFS_LD, "worker.c:31");
            sym(&mut header, AFS_ST, "worker.c:31");
            gt.label = Some(MissType::AllocatorFalseSharing);
            gt.guilty_ips = vec![AFS_LD, AFS_ST];
            gt.guilty_callsites = vec![6];
            alloc_false_sharing(spec)
        }
        WorkloadKind::AllocConflict => {
            sym(&mut header, AC_LD, "scene.c:140");
            gt.label = Some(MissType::AllocatorConflict);
            gt.guilty_ips = vec![AC_LD];
            gt.guilty_callsites = vec![7];
            alloc_conflict(spec, cfg)
        }
        WorkloadKind::Baseline => {
            sym(&mut header, BASE_LD, "baseline.c:10");
            sym(&mut header, BASE_ST, "baseline.c:11");
            gt.expect_report = false;
            baseline(spec)
        }
        WorkloadKind::MinorIssue => {
            sym(&mut header, MINOR_ST, "streamcluster.cpp:1050");
            gt.label = Some(MissType::AppFalseSharing);
            gt.guilty_ips = vec![MINOR_ST];
            gt.guilty_callsites = vec![8];
            gt.expect_report = false;
            minor_issue(spec)
        }
    };
    header.ground_truth = gt.to_pairs();
    header
        .validate()
        .map_err(|e| WorkloadError::Invalid(e.to_string()))?;
    Ok(Workload {
        header,
        ground_truth: gt,
        events: EventStream::new(fill),
    })
}

/// Two arrays of `scale` x cache capacity, read sequentially as 4-byte ints,
/// one after the other.
fn capacity_loops(spec: &WorkloadSpec, cfg: &CacheConfig) -> FillFn {
    let bytes = spec.scale as u64 * cfg.capacity_bytes();
    let alpha = 0x1000_0000u64;
    let beta = alpha + align_up(bytes, 1 << 20);
    let mut setup = Some(vec![alloc(0, 1, alpha, bytes), alloc(0, 2, beta, bytes)]);
    let iterations = spec.iterations;
    let mut iter = 0u64;
    let mut second = false;
    Box::new(move |buf| {
        if let Some(s) = setup.take() {
            buf.extend(s);
            return;
        }
        if iter == iterations {
            return;
        }
        let (ip, base) = if second { (CAP_IP_BETA, beta) } else { (CAP_IP_ALPHA, alpha) };
        buf.extend((0..bytes / 4).map(|i| load(0, ip, base + 4 * i)));
        if second {
            iter += 1;
        }
        second = !second;
    })
}

/// `lines` lines that all map to set s, swept `passes` times, then the same
/// for set s+1, and so on; every set sees the same pattern.
fn conflict_stride(spec: &WorkloadSpec, cfg: &CacheConfig) -> FillFn {
    let lines = spec.lines.unwrap_or(cfg.associativity + 1) as u64;
    let stride = cfg.set_stride();
    let line = cfg.line_size as u64;
    let sets = cfg.num_sets as u64;
    let base = 0x2000_0000u64;
    let mut setup = Some(vec![alloc(0, 3, base, lines * stride)]);
    let (rotations, passes) = (spec.iterations, spec.passes);
    let mut rot = 0u64;
    Box::new(move |buf| {
        if let Some(s) = setup.take() {
            buf.extend(s);
            return;
        }
        if rot == rotations {
            return;
        }
        for s in 0..sets {
            for _ in 0..passes {
                for k in 0..lines {
                    buf.push(load(0, CONFLICT_IP, base + k * stride + s * line));
                }
            }
        }
        rot += 1;
    })
}

/// Round-robin interleaving of per-thread iterations. A thread occasionally
/// runs two iterations back to back, driven by the workload seed.
struct Interleaver {
    threads: u32,
    iterations: u64,
    done: Vec<u64>,
    rng: ChaCha8Rng,
}

impl Interleaver {
    fn new(threads: u32, iterations: u64, seed: u64) -> Self {
        Self {
            threads,
            iterations,
            done: vec![0; threads as usize],
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Runs up to `rounds` rounds, calling `body(tid, buf)` once per
    /// iteration. Returns false once every thread has finished.
    fn rounds(&mut self, rounds: usize, buf: &mut Vec<Event>, mut body: impl FnMut(u32, &mut Vec<Event>)) -> bool {
        for _ in 0..rounds {
            let mut any = false;
            for t in 0..self.threads {
                let reps = if self.rng.gen_ratio(1, 16) { 2 } else { 1 };
                for _ in 0..reps {
                    if self.done[t as usize] < self.iterations {
                        body(t, buf);
                        self.done[t as usize] += 1;
                        any = true;
                    }
                }
            }
            if !any {
                return false;
            }
        }
        true
    }
}

/// Per-thread private scratch buffer read by the background ip; always hits
/// once warm.
struct Background {
    cursor: Vec<u64>,
    per_iter: u32,
}

impl Background {
    fn new(threads: u32, per_iter: u32) -> Self {
        Self {
            cursor: vec![0; threads as usize],
            per_iter,
        }
    }

    fn allocs(threads: u32) -> Vec<Event> {
        (0..threads)
            .map(|t| alloc(t, BACKGROUND_CALLSITE, background_base(t), BACKGROUND_BYTES))
            .collect()
    }

    fn emit(&mut self, tid: u32, buf: &mut Vec<Event>) {
        let c = &mut self.cursor[tid as usize];
        for _ in 0..self.per_iter {
            buf.push(load(tid, BACKGROUND_IP, background_base(tid) + (*c % (BACKGROUND_BYTES / 8)) * 8));
            *c += 1;
        }
    }
}

/// Shared skeleton of the three coherence workloads: setup events, then
/// interleaved iterations of `ops(tid)` followed by background loads.
fn sharing(spec: &WorkloadSpec, mut setup: Vec<Event>, ops: impl Fn(u32, &mut Vec<Event>) + Send + 'static) -> FillFn {
    setup.extend(Background::allocs(spec.threads));
    let mut setup = Some(setup);
    let mut bg = Background::new(spec.threads, 6);
    let mut sched = Interleaver::new(spec.threads, spec.iterations, spec.seed);
    Box::new(move |buf| {
        if let Some(s) = setup.take() {
            buf.extend(s);
            return;
        }
        sched.rounds(512, buf, |t, buf| {
            ops(t, buf);
            bg.emit(t, buf);
        });
    })
}

/// Array of 52-byte structs, one per thread, allocated together by thread 0.
/// Neighbouring threads' fields share a cache line.
fn false_sharing(spec: &WorkloadSpec) -> FillFn {
    let base = 0x4000_0000u64;
    let setup = vec![alloc(0, 4, base, 52 * spec.threads as u64)];
    sharing(spec, setup, move |t, buf| {
        let sx = base + 52 * t as u64;
        let sy = sx + 4;
        buf.push(load(t, FS_LD_SX, sx));
        buf.push(store(t, FS_ST_SX, sx));
        buf.push(load(t, FS_LD_SY, sy));
        buf.push(store(t, FS_ST_SY, sy));
    })
}

fn true_sharing(spec: &WorkloadSpec, counter: u64) -> FillFn {
    sharing(spec, Vec::new(), move |t, buf| {
        buf.push(load(t, TS_LD, counter));
        buf.push(store(t, TS_ST, counter));
    })
}

/// Each thread allocates its own 32-byte object; the allocator packs them
/// into shared lines.
fn alloc_false_sharing(spec: &WorkloadSpec) -> FillFn {
    let base = 0x5000_0000u64;
    let setup = (0..spec.threads)
        .map(|t| alloc(t, 6, base + 32 * t as u64, 32))
        .collect();
    sharing(spec, setup, move |t, buf| {
        let obj = base + 32 * t as u64;
        buf.push(load(t, AFS_LD, obj));
        buf.push(store(t, AFS_ST, obj));
    })
}

/// Many small objects placed exactly one set-stride apart, so they all land
/// in the same cache set.
fn alloc_conflict(spec: &WorkloadSpec, cfg: &CacheConfig) -> FillFn {
    let base = 0x3000_0000u64;
    let stride = cfg.set_stride();
    let objects = spec.objects as u64;
    let mut setup = Some(
        (0..objects)
            .map(|i| alloc(0, 7, base + i * stride, spec.object_size))
            .collect::<Vec<_>>(),
    );
    let iterations = spec.iterations;
    let mut iter = 0u64;
    Box::new(move |buf| {
        if let Some(s) = setup.take() {
            buf.extend(s);
            return;
        }
        let mut n = 0;
        while iter < iterations && n < 256 {
            for i in 0..objects {
                buf.push(load(0, AC_LD, base + i * stride));
            }
            iter += 1;
            n += 1;
        }
    })
}

/// Private 4 KiB buffers swept with loads and stores, plus a short-lived
/// scratch object that is freed and reallocated periodically.
fn baseline(spec: &WorkloadSpec) -> FillFn {
    const BYTES: u64 = 4096;
    let base = |t: u32| 0x6000_0000u64 + t as u64 * 0x100000;
    let scratch = move |t: u32| base(t) + 0x10000;
    let mut setup = Some(
        (0..spec.threads)
            .flat_map(|t| [alloc(t, 10, base(t), BYTES), alloc(t, 11, scratch(t), 256)])
            .collect::<Vec<_>>(),
    );
    let mut sched = Interleaver::new(spec.threads, spec.iterations, spec.seed);
    let mut count = vec![0u64; spec.threads as usize];
    Box::new(move |buf| {
        if let Some(s) = setup.take() {
            buf.extend(s);
            return;
        }
        sched.rounds(16, buf, |t, buf| {
            for i in 0..BYTES / 8 {
                let a = base(t) + i * 8;
                buf.push(load(t, BASE_LD, a));
                if i % 4 == 0 {
                    buf.push(store(t, BASE_ST, a));
                }
            }
            count[t as usize] += 1;
            if count[t as usize] % 100 == 0 {
                buf.push(free(t, scratch(t)));
                buf.push(alloc(t, 11, scratch(t), 256));
            }
        });
    })
}

/// A real false-sharing bug whose instruction is far too rare to matter:
/// a short burst of alternating stores to one shared line, drowned in
/// private same-line work.
///
/// Store counts are placed so that, at the default 50000 (+-10%) store
/// period, each thread's first and only store sample falls inside the burst.
fn minor_issue(spec: &WorkloadSpec) -> FillFn {
    const BG_STORES: u64 = 44_999;
    const BURST: u64 = 10_001;
    let work_mem = 0x4800_0000u64;
    let private = |t: u32| background_base(t);
    let setup = vec![
        alloc(0, 8, work_mem, 64),
        alloc(0, BACKGROUND_CALLSITE, private(0), 64),
        alloc(1, BACKGROUND_CALLSITE, private(1), 64),
    ];
    let loads = spec.iterations;
    let mut phase = 0u8;
    let mut done = [0u64; 2];
    Box::new(move |buf| match phase {
        0 => {
            buf.extend(setup.iter().copied());
            phase = 1;
        }
        1 => {
            for t in 0..2 {
                buf.extend((0..BG_STORES).map(|i| store(t, BACKGROUND_STORE_IP, private(t) + (i % 8) * 8)));
            }
            phase = 2;
        }
        2 => {
            for _ in 0..BURST {
                buf.push(store(0, MINOR_ST, work_mem));
                buf.push(store(1, MINOR_ST, work_mem + 48));
            }
            phase = 3;
        }
        _ => {
            for t in 0..2u32 {
                let d = &mut done[t as usize];
                let n = (loads - *d).min(8192);
                buf.extend((0..n).map(|i| load(t, BACKGROUND_IP, private(t) + ((*d + i) % 8) * 8)));
                *d += n;
            }
        }
    })
}
