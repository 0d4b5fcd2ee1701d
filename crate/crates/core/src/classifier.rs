//! Turns store snapshots into classified issue reports.
//!
//! Order of work: a global gate on the sampled miss ratios, a coherence pass
//! over hot cache lines (true sharing, application or allocator false
//! sharing), then a pass over the remaining instructions that uses each
//! ip's fine-grained pattern to tell conflict from capacity. Reports that
//! share a source statement are merged.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cache_sim::{CacheConfig, OracleKind};
use crate::profiler::PatternOutcome;
use crate::stores::{InstructionStats, InstructionStore, LineEntry, MissStore, ObjectStore, Owner, SharingSignature};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MissType {
    TrueSharing,
    AppFalseSharing,
    AllocatorFalseSharing,
    AppConflict,
    AllocatorConflict,
    AppCapacity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Application,
    Allocator,
}

impl MissType {
    pub const ALL: [MissType; 6] = [
        MissType::TrueSharing,
        MissType::AppFalseSharing,
        MissType::AllocatorFalseSharing,
        MissType::AppConflict,
        MissType::AllocatorConflict,
        MissType::AppCapacity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MissType::TrueSharing => "TrueSharing",
            MissType::AppFalseSharing => "AppFalseSharing",
            MissType::AllocatorFalseSharing => "AllocatorFalseSharing",
            MissType::AppConflict => "AppConflict",
            MissType::AllocatorConflict => "AllocatorConflict",
            MissType::AppCapacity => "AppCapacity",
        }
    }

    pub fn origin(self) -> Origin {
        match self {
            MissType::AllocatorFalseSharing | MissType::AllocatorConflict => Origin::Allocator,
            _ => Origin::Application,
        }
    }

    /// The oracle miss kind this label corresponds to.
    pub fn oracle_kind(self) -> OracleKind {
        match self {
            MissType::TrueSharing | MissType::AppFalseSharing | MissType::AllocatorFalseSharing => {
                OracleKind::Coherence
            }
            MissType::AppConflict | MissType::AllocatorConflict => OracleKind::Conflict,
            MissType::AppCapacity => OracleKind::Capacity,
        }
    }
}

impl fmt::Display for MissType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MissType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MissType::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown miss type {s:?}"))
    }
}

impl Origin {
    pub fn name(self) -> &'static str {
        match self {
            Origin::Application => "application",
            Origin::Allocator => "allocator",
        }
    }
}

/// Ratio thresholds used by the filters; all fractions in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterThresholds {
    pub global_load_gate: f64,
    pub global_store_gate: f64,
    pub instr_access_floor: f64,
    pub instr_miss_floor: f64,
    pub line_set_miss_floor: f64,
    pub window_ratio: f64,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        Self {
            global_load_gate: 0.03,
            global_store_gate: 0.01,
            instr_access_floor: 0.0001,
            instr_miss_floor: 0.01,
            line_set_miss_floor: 0.01,
            window_ratio: 0.005,
        }
    }
}

impl FilterThresholds {
    pub fn validate(&self) -> Result<(), String> {
        let all = [
            ("global_load_gate", self.global_load_gate),
            ("global_store_gate", self.global_store_gate),
            ("instr_access_floor", self.instr_access_floor),
            ("instr_miss_floor", self.instr_miss_floor),
            ("line_set_miss_floor", self.line_set_miss_floor),
            ("window_ratio", self.window_ratio),
        ];
        for (k, v) in all {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{k} must be in [0, 1], got {v}"));
            }
        }
        Ok(())
    }
}

/// A line or set is a pile-up candidate once it holds this share of all
/// flushed misses. Fixed rather than tied to `line_set_miss_floor` so that
/// which lines count as coherence lines never depends on the thresholds.
pub const PILEUP_SHARE: f64 = 0.01;
/// Share of an ip's misses that must fall on coherence lines for the ip to
/// be treated as a sharing instruction.
pub const CHECKED_SHARE: f64 = 0.5;
/// Sampled-histogram fallback for ips without a conclusive fine pattern.
pub const FALLBACK_SET_MISSES: u64 = 8;
pub const FALLBACK_SET_SHARE: f64 = 0.5;
/// Objects listed on an instruction report.
const MAX_LISTED_OBJECTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Severity {
    pub access_ratio: f64,
    pub miss_ratio: f64,
    pub projected_slowdown_bound: f64,
}

/// Slowdown bound when `access_ratio` of accesses pay `penalty` times the
/// cost of a hit.
pub fn severity(access_ratio: f64, miss_ratio: f64, penalty: f64) -> Severity {
    Severity {
        access_ratio,
        miss_ratio,
        projected_slowdown_bound: access_ratio * penalty + (1.0 - access_ratio),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IssueReport {
    pub miss_type: MissType,
    pub origin: Origin,
    pub ips: Vec<u64>,
    pub statement: Option<String>,
    pub lines: Vec<u64>,
    pub sets: Vec<u32>,
    pub objects: Vec<Owner>,
    pub severity: Severity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub gate_passed: bool,
    pub issues: Vec<IssueReport>,
    pub checked_ips: BTreeSet<u64>,
}

/// Sampled totals the filters are relative to.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Totals {
    pub sampled_loads: u64,
    pub sampled_stores: u64,
    pub sampled_load_misses: u64,
    pub sampled_store_misses: u64,
    pub flushed_misses: u64,
}

impl Totals {
    pub fn sampled(&self) -> u64 {
        self.sampled_loads + self.sampled_stores
    }
}

/// Store snapshots the classifier works from.
pub struct ClassifierInput<'a> {
    pub cache: &'a CacheConfig,
    pub objects: &'a ObjectStore,
    pub misses: &'a MissStore,
    pub instrs: &'a InstructionStore,
    pub symbols: &'a BTreeMap<u64, String>,
    pub totals: Totals,
    pub miss_penalty: f64,
}

/// False (report nothing) iff both the load and the store miss ratios are
/// under their gates, or nothing was sampled.
pub fn global_gate(t: &Totals, th: &FilterThresholds) -> bool {
    if t.sampled() == 0 {
        return false;
    }
    let ratio = |m: u64, n: u64| if n == 0 { 0.0 } else { m as f64 / n as f64 };
    let load = ratio(t.sampled_load_misses, t.sampled_loads);
    let store = ratio(t.sampled_store_misses, t.sampled_stores);
    !(load < th.global_load_gate && store < th.global_store_gate)
}

fn passes_instr_filters(st: &InstructionStats, t: &Totals, th: &FilterThresholds) -> bool {
    let misses = st.misses();
    misses >= 1
        && st.accesses as f64 >= th.instr_access_floor * t.sampled() as f64
        && misses as f64 >= th.instr_miss_floor * t.flushed_misses as f64
}

fn ratio(n: u64, d: u64) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

/// Coherence pass over the miss store.
///
/// Lines whose flushed misses show two threads on one line are coherence
/// lines, except where the line is one of several hot lines piled onto the
/// same hot set (that shape is a conflict, not sharing). An ip is checked
/// when at least half of its misses fall on coherence lines; checked ips
/// are left out of the instruction pass. A coherence line is reported when
/// it clears the line floor and at least one checked ip on it clears the
/// instruction filters.
pub fn classify_lines(input: &ClassifierInput<'_>, th: &FilterThresholds) -> (Vec<IssueReport>, BTreeSet<u64>) {
    let total = input.misses.total();
    let hot = |m: u64| total > 0 && m as f64 >= PILEUP_SHARE * total as f64;
    let lines = input.misses.lines_sorted();
    let mut hot_lines_in_set: BTreeMap<u32, u32> = BTreeMap::new();
    for (_, e) in &lines {
        if hot(e.misses) {
            *hot_lines_in_set.entry(e.set).or_default() += 1;
        }
    }
    let set_misses = input.misses.set_misses();
    let piled = |e: &LineEntry| {
        hot(set_misses[e.set as usize]) && hot_lines_in_set.get(&e.set).copied().unwrap_or(0) >= 2
    };
    let coherent: Vec<(u64, &LineEntry, SharingSignature)> = lines
        .iter()
        .filter(|(_, e)| !piled(e))
        .filter_map(|(l, e)| e.signature().map(|s| (*l, *e, s)))
        .collect();

    let mut on_coherent: BTreeMap<u64, u64> = BTreeMap::new();
    for (_, e, _) in &coherent {
        for (ip, n) in &e.ip_misses {
            *on_coherent.entry(*ip).or_default() += n;
        }
    }
    let checked: BTreeSet<u64> = on_coherent
        .iter()
        .filter(|(ip, n)| {
            let all = input.instrs.get(**ip).map_or(0, InstructionStats::misses);
            all > 0 && **n as f64 >= CHECKED_SHARE * all as f64
        })
        .map(|(ip, _)| *ip)
        .collect();

    let line_size = input.cache.line_size as u64;
    let mut reports = Vec::new();
    for (line, e, sig) in coherent {
        if (e.misses as f64) < th.line_set_miss_floor * total as f64 {
            continue;
        }
        let mut ips: Vec<(u64, u64)> = e
            .ip_misses
            .iter()
            .filter(|(ip, _)| checked.contains(ip))
            .filter(|(ip, _)| {
                input
                    .instrs
                    .get(**ip)
                    .is_some_and(|st| passes_instr_filters(st, &input.totals, th))
            })
            .map(|(ip, n)| (*ip, *n))
            .collect();
        if ips.is_empty() {
            continue;
        }
        ips.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let heap = input.objects.overlapping(line, line + line_size);
        let globals = input.objects.overlapping_globals(line, line + line_size);
        let miss_type = match sig {
            SharingSignature::True => MissType::TrueSharing,
            SharingSignature::False => {
                let tids: BTreeSet<u32> = heap.iter().map(|&id| input.objects.record(id).alloc_tid).collect();
                if heap.len() >= 2 && tids.len() >= 2 {
                    MissType::AllocatorFalseSharing
                } else {
                    MissType::AppFalseSharing
                }
            }
        };
        let accesses: u64 = ips
            .iter()
            .filter_map(|(ip, _)| input.instrs.get(*ip))
            .map(|s| s.accesses)
            .sum();
        let mut objects: Vec<Owner> = globals.into_iter().map(Owner::Global).collect();
        objects.extend(heap.into_iter().map(Owner::Heap));
        reports.push(IssueReport {
            miss_type,
            origin: miss_type.origin(),
            ips: ips.into_iter().map(|(ip, _)| ip).collect(),
            statement: None,
            lines: vec![line],
            sets: vec![e.set],
            objects,
            severity: severity(
                ratio(accesses, input.totals.sampled()),
                ratio(e.misses, total),
                input.miss_penalty,
            ),
        });
    }
    (reports, checked)
}

/// Conflict/capacity pass over unchecked instructions.
pub fn classify_instructions(
    input: &ClassifierInput<'_>,
    checked: &BTreeSet<u64>,
    th: &FilterThresholds,
) -> Vec<IssueReport> {
    let mut reports = Vec::new();
    for st in input.instrs.sorted() {
        if checked.contains(&st.ip) || !passes_instr_filters(st, &input.totals, th) {
            continue;
        }
        let heap_by_misses = || {
            let mut v: Vec<(Owner, u64)> = st.owner_misses.iter().map(|(o, n)| (*o, *n)).collect();
            v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            v.into_iter().map(|(o, _)| o).collect::<Vec<_>>()
        };
        let (miss_type, sets, objects) = match st.pattern.as_ref().map(|p| (p.outcome, p)) {
            Some((PatternOutcome::SameSetConflict, p)) => {
                let t = if p.objects.len() >= 2 {
                    MissType::AllocatorConflict
                } else {
                    MissType::AppConflict
                };
                let objs = p.objects.iter().map(|&id| Owner::Heap(id)).collect();
                (t, p.dominant_set.into_iter().collect(), objs)
            }
            Some((PatternOutcome::MultiSetCapacity, _)) => (MissType::AppCapacity, Vec::new(), heap_by_misses()),
            _ => match st.top_set() {
                Some((set, n)) if n >= FALLBACK_SET_MISSES && n as f64 >= FALLBACK_SET_SHARE * st.misses() as f64 => {
                    let owners = heap_by_misses();
                    let heap = owners.iter().filter(|o| matches!(o, Owner::Heap(_))).count();
                    let t = if heap >= 2 {
                        MissType::AllocatorConflict
                    } else {
                        MissType::AppConflict
                    };
                    (t, vec![set], owners)
                }
                _ => (MissType::AppCapacity, Vec::new(), heap_by_misses()),
            },
        };
        let mut objects: Vec<Owner> = objects;
        if miss_type != MissType::AllocatorConflict {
            objects.truncate(MAX_LISTED_OBJECTS);
        }
        reports.push(IssueReport {
            miss_type,
            origin: miss_type.origin(),
            ips: vec![st.ip],
            statement: None,
            lines: Vec::new(),
            sets,
            objects,
            severity: severity(
                ratio(st.accesses, input.totals.sampled()),
                ratio(st.misses(), input.totals.flushed_misses),
                input.miss_penalty,
            ),
        });
    }
    reports
}

fn sort_reports(reports: &mut [IssueReport]) {
    reports.sort_by(|a, b| {
        b.severity
            .miss_ratio
            .total_cmp(&a.severity.miss_ratio)
            .then(a.ips.first().cmp(&b.ips.first()))
            .then(a.miss_type.cmp(&b.miss_type))
    });
}

fn push_unique<T: PartialEq + Copy>(dst: &mut Vec<T>, src: &[T]) {
    for x in src {
        if !dst.contains(x) {
            dst.push(*x);
        }
    }
}

/// Merges reports of the same type whose leading ip maps to the same
/// `file:line`, summing their ratios. Unsymbolized reports pass through.
pub fn summarize_statements(
    reports: Vec<IssueReport>,
    symbols: &BTreeMap<u64, String>,
    penalty: f64,
) -> Vec<IssueReport> {
    let mut out: Vec<IssueReport> = Vec::new();
    let mut index: BTreeMap<(MissType, String), usize> = BTreeMap::new();
    for mut r in reports {
        let stmt = r.ips.first().and_then(|ip| symbols.get(ip)).cloned();
        let Some(stmt) = stmt else {
            out.push(r);
            continue;
        };
        match index.get(&(r.miss_type, stmt.clone())) {
            Some(&i) => {
                let m = &mut out[i];
                push_unique(&mut m.ips, &r.ips);
                push_unique(&mut m.lines, &r.lines);
                push_unique(&mut m.sets, &r.sets);
                push_unique(&mut m.objects, &r.objects);
                let access = m.severity.access_ratio + r.severity.access_ratio;
                let miss = m.severity.miss_ratio + r.severity.miss_ratio;
                m.severity = severity(access, miss, penalty);
            }
            None => {
                r.statement = Some(stmt.clone());
                index.insert((r.miss_type, stmt), out.len());
                out.push(r);
            }
        }
    }
    sort_reports(&mut out);
    out
}

/// Full classification: gate, coherence lines, instructions, grouping.
pub fn classify(input: &ClassifierInput<'_>, th: &FilterThresholds) -> Classification {
    if !global_gate(&input.totals, th) {
        return Classification {
            gate_passed: false,
            issues: Vec::new(),
            checked_ips: BTreeSet::new(),
        };
    }
    let (mut issues, checked) = classify_lines(input, th);
    issues.extend(classify_instructions(input, &checked, th));
    sort_reports(&mut issues);
    let issues = summarize_statements(issues, input.symbols, input.miss_penalty);
    Classification {
        gate_passed: true,
        issues,
        checked_ips: checked,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiler::{FinalizeReason, FinePattern, SampledRecord};
    use crate::stores::ObjectStoreConfig;
    use crate::trace::{AccessKind, AllocEvent};

    struct Fx {
        cache: CacheConfig,
        objects: ObjectStore,
        misses: MissStore,
        instrs: InstructionStore,
        symbols: BTreeMap<u64, String>,
        totals: Totals,
    }

    impl Fx {
        fn new() -> Self {
            let cache = CacheConfig::default();
            Self {
                objects: ObjectStore::new(ObjectStoreConfig::default()),
                misses: MissStore::new(cache.line_size, cache.num_sets),
                instrs: InstructionStore::new(cache.num_sets),
                symbols: BTreeMap::new(),
                totals: Totals::default(),
                cache,
            }
        }

        fn alloc(&mut self, tid: u32, callsite: u64, addr: u64, size: u64) {
            let ev = AllocEvent {
                seq: 0,
                tid,
                callsite,
                addr,
                size,
            };
            self.objects.insert(&ev).unwrap();
        }

        fn rec(&self, tid: u32, ip: u64, addr: u64, kind: AccessKind, miss: bool) -> SampledRecord {
            SampledRecord {
                seq: 0,
                tid,
                ip,
                addr,
                kind,
                miss,
                set: self.cache.set_index(addr),
                line: self.cache.line_addr(addr),
            }
        }

        /// A sampled access; misses are also flushed into the stores.
        fn sample(&mut self, tid: u32, ip: u64, addr: u64, kind: AccessKind, miss: bool) {
            let r = self.rec(tid, ip, addr, kind, miss);
            self.instrs.record_sample(&r);
            match kind {
                AccessKind::Load => {
                    self.totals.sampled_loads += 1;
                    self.totals.sampled_load_misses += miss as u64;
                }
                AccessKind::Store => {
                    self.totals.sampled_stores += 1;
                    self.totals.sampled_store_misses += miss as u64;
                }
            }
            if miss {
                self.instrs.begin_batch();
                self.totals.flushed_misses += 1;
                self.misses.update(&r);
                let owner = self.objects.owner(addr);
                self.instrs.record_miss(&r, owner);
            }
        }

        fn pattern(&mut self, ip: u64, outcome: PatternOutcome, objects: Vec<u32>) {
            self.instrs.attach_pattern(FinePattern {
                ip,
                outcome,
                dominant_set: (outcome == PatternOutcome::SameSetConflict).then_some(0),
                reason: FinalizeReason::Full,
                install_seq: 0,
                finalize_seq: 0,
                accesses: Vec::new(),
                objects,
            });
        }

        fn run(&self, th: &FilterThresholds) -> Classification {
            let input = ClassifierInput {
                cache: &self.cache,
                objects: &self.objects,
                misses: &self.misses,
                instrs: &self.instrs,
                symbols: &self.symbols,
                totals: self.totals,
                miss_penalty: 200.0,
            };
            classify(&input, th)
        }
    }

    fn types(c: &Classification) -> Vec<MissType> {
        c.issues.iter().map(|r| r.miss_type).collect()
    }

    fn totals(loads: u64, lm: u64, stores: u64, sm: u64) -> Totals {
        Totals {
            sampled_loads: loads,
            sampled_stores: stores,
            sampled_load_misses: lm,
            sampled_store_misses: sm,
            flushed_misses: lm + sm,
        }
    }

    #[test]
    fn gate_examples() {
        let th = FilterThresholds::default();
        assert!(global_gate(&totals(1_000_000, 40_000, 0, 0), &th));
        assert!(global_gate(&totals(1_000_000, 40_000, 500, 500), &th));
        assert!(!global_gate(&totals(1000, 20, 1000, 5), &th));
        assert!(!global_gate(&Totals::default(), &th));
        // store side alone can open the gate
        assert!(global_gate(&totals(1000, 0, 1000, 10), &th));
    }

    #[test]
    fn severity_examples() {
        let s = severity(0.0001, 0.0, 200.0);
        assert!((s.projected_slowdown_bound - 1.0199).abs() < 1e-12);
        assert_eq!(severity(0.0, 0.0, 200.0).projected_slowdown_bound, 1.0);
        assert_eq!(severity(1.0, 1.0, 200.0).projected_slowdown_bound, 200.0);
    }

    fn two_writer_line(fx: &mut Fx, word_a: u64, word_b: u64) {
        for _ in 0..20 {
            fx.sample(1, 0xA0, 0x1000 + word_a * 8, AccessKind::Store, true);
            fx.sample(2, 0xA0, 0x1000 + word_b * 8, AccessKind::Store, true);
            fx.sample(1, 0xA0, 0x1000 + word_a * 8, AccessKind::Store, false);
        }
    }

    #[test]
    fn false_sharing_one_object_is_application() {
        let mut fx = Fx::new();
        fx.alloc(1, 4, 0x1000, 104);
        two_writer_line(&mut fx, 0, 6);
        let c = fx.run(&FilterThresholds::default());
        assert_eq!(types(&c), [MissType::AppFalseSharing]);
        assert_eq!(c.issues[0].lines, [0x1000]);
        assert_eq!(c.issues[0].ips, [0xA0]);
        assert!(c.checked_ips.contains(&0xA0));
    }

    #[test]
    fn false_sharing_two_threads_objects_is_allocator() {
        let mut fx = Fx::new();
        fx.alloc(1, 6, 0x1000, 32);
        fx.alloc(2, 6, 0x1020, 32);
        two_writer_line(&mut fx, 0, 6);
        let c = fx.run(&FilterThresholds::default());
        assert_eq!(types(&c), [MissType::AllocatorFalseSharing]);
        assert_eq!(c.issues[0].objects.len(), 2);
        assert_eq!(c.issues[0].origin, Origin::Allocator);
    }

    #[test]
    fn two_objects_same_thread_stay_application() {
        let mut fx = Fx::new();
        fx.alloc(1, 6, 0x1000, 32);
        fx.alloc(1, 6, 0x1020, 32);
        two_writer_line(&mut fx, 0, 6);
        let c = fx.run(&FilterThresholds::default());
        assert_eq!(types(&c), [MissType::AppFalseSharing]);
    }

    #[test]
    fn shared_word_is_true_sharing() {
        let mut fx = Fx::new();
        two_writer_line(&mut fx, 3, 3);
        let c = fx.run(&FilterThresholds::default());
        assert_eq!(types(&c), [MissType::TrueSharing]);
    }

    #[test]
    fn same_set_pileup_is_not_sharing() {
        let mut fx = Fx::new();
        let stride = fx.cache.set_stride();
        // two hot lines in set 0, each written by two threads on different words
        for i in 0..20 {
            for line in [0x10_0000u64, 0x10_0000 + stride] {
                fx.sample(1, 0xB0, line, AccessKind::Store, true);
                fx.sample(2, 0xB0, line + 48, AccessKind::Store, true);
            }
            fx.sample(1, 0xB0, 0x10_0000 + (i % 4) * 64, AccessKind::Store, false);
        }
        let c = fx.run(&FilterThresholds::default());
        assert!(c.checked_ips.is_empty());
        assert_eq!(types(&c), [MissType::AppConflict]);
    }

    fn conflict_ip(fx: &mut Fx, ip: u64, base: u64, n: u64) {
        let stride = fx.cache.set_stride();
        for i in 0..40 {
            fx.sample(0, ip, base + (i % n) * stride, AccessKind::Load, true);
        }
    }

    #[test]
    fn same_set_pattern_one_object_is_app_conflict() {
        let mut fx = Fx::new();
        fx.alloc(0, 3, 0x2000_0000, 1 << 20);
        conflict_ip(&mut fx, 0xC0, 0x2000_0000, 9);
        fx.pattern(0xC0, PatternOutcome::SameSetConflict, vec![0]);
        let c = fx.run(&FilterThresholds::default());
        assert_eq!(types(&c), [MissType::AppConflict]);
        assert_eq!(c.issues[0].sets, [0]);
    }

    #[test]
    fn same_set_pattern_many_objects_is_allocator_conflict() {
        let mut fx = Fx::new();
        let stride = fx.cache.set_stride();
        for i in 0..40 {
            fx.alloc(0, 7, 0x3000_0000 + i * stride, 48);
        }
        conflict_ip(&mut fx, 0xD0, 0x3000_0000, 40);
        fx.pattern(0xD0, PatternOutcome::SameSetConflict, (0..40).collect());
        let c = fx.run(&FilterThresholds::default());
        assert_eq!(types(&c), [MissType::AllocatorConflict]);
        assert_eq!(c.issues[0].objects.len(), 40);
    }

    #[test]
    fn multi_set_pattern_is_capacity() {
        let mut fx = Fx::new();
        conflict_ip(&mut fx, 0xE0, 0x4000_0000, 9);
        fx.pattern(0xE0, PatternOutcome::MultiSetCapacity, vec![]);
        let c = fx.run(&FilterThresholds::default());
        assert_eq!(types(&c), [MissType::AppCapacity]);
    }

    #[test]
    fn fallback_uses_sampled_histogram() {
        let mut fx = Fx::new();
        conflict_ip(&mut fx, 0xF0, 0x5000_0000, 9);
        for i in 0..40u64 {
            fx.sample(0, 0xF1, 0x6000_0000 + i * 64, AccessKind::Load, true);
        }
        fx.pattern(0xF1, PatternOutcome::Inconclusive, vec![]);
        let c = fx.run(&FilterThresholds::default());
        let by_ip: BTreeMap<u64, MissType> = c.issues.iter().map(|r| (r.ips[0], r.miss_type)).collect();
        assert_eq!(by_ip[&0xF0], MissType::AppConflict);
        assert_eq!(by_ip[&0xF1], MissType::AppCapacity);
    }

    #[test]
    fn conclusive_pattern_survives_inconclusive() {
        let mut fx = Fx::new();
        conflict_ip(&mut fx, 0xC0, 0x2000_0000, 9);
        fx.pattern(0xC0, PatternOutcome::MultiSetCapacity, vec![]);
        fx.pattern(0xC0, PatternOutcome::Inconclusive, vec![]);
        let c = fx.run(&FilterThresholds::default());
        assert_eq!(types(&c), [MissType::AppCapacity]);
    }

    #[test]
    fn instruction_floors() {
        let mut fx = Fx::new();
        for _ in 0..5 {
            conflict_ip(&mut fx, 0xC0, 0x2000_0000, 9);
        }
        // one miss out of 201 is under the 1% miss floor
        fx.sample(0, 0xC1, 0x7000_0000, AccessKind::Load, true);
        for _ in 0..1000 {
            fx.sample(0, 0xC2, 0x7100_0000, AccessKind::Load, false);
        }
        let th = FilterThresholds::default();
        let c = fx.run(&th);
        let ips: Vec<u64> = c.issues.iter().map(|r| r.ips[0]).collect();
        assert_eq!(ips, [0xC0]);
        let loose = FilterThresholds {
            instr_access_floor: 0.0,
            instr_miss_floor: 0.0,
            ..th
        };
        let ips: Vec<u64> = fx.run(&loose).issues.iter().map(|r| r.ips[0]).collect();
        assert_eq!(ips, [0xC0, 0xC1]);
    }

    #[test]
    fn closed_gate_reports_nothing() {
        let mut fx = Fx::new();
        conflict_ip(&mut fx, 0xC0, 0x2000_0000, 9);
        for _ in 0..100_000 {
            fx.sample(0, 0xC2, 0x7100_0000, AccessKind::Load, false);
        }
        let c = fx.run(&FilterThresholds::default());
        assert!(!c.gate_passed);
        assert!(c.issues.is_empty());
    }

    fn bare(ip: u64, t: MissType, miss: f64) -> IssueReport {
        IssueReport {
            miss_type: t,
            origin: t.origin(),
            ips: vec![ip],
            statement: None,
            lines: vec![],
            sets: vec![],
            objects: vec![],
            severity: severity(0.1, miss, 200.0),
        }
    }

    #[test]
    fn statements_merge_and_sum() {
        let syms: BTreeMap<u64, String> = [(1, "a.c:5".to_string()), (2, "a.c:5".into()), (3, "b.c:9".into())].into();
        let r = vec![
            bare(1, MissType::AppCapacity, 0.25),
            bare(2, MissType::AppCapacity, 0.25),
            bare(3, MissType::AppCapacity, 0.125),
        ];
        let out = summarize_statements(r.clone(), &syms, 200.0);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].ips, [1, 2]);
        assert_eq!(out[0].statement.as_deref(), Some("a.c:5"));
        assert!((out[0].severity.miss_ratio - 0.5).abs() < 1e-12);
        assert!((out[0].severity.access_ratio - 0.2).abs() < 1e-12);

        let two: BTreeMap<u64, String> = [(1, "a.c:5".to_string()), (2, "a.c:5".into())].into();
        assert_eq!(summarize_statements(r[..2].to_vec(), &two, 200.0).len(), 1);

        let plain = summarize_statements(r.clone(), &BTreeMap::new(), 200.0);
        assert_eq!(plain, r);
    }

    #[test]
    fn different_types_on_one_statement_stay_apart() {
        let syms: BTreeMap<u64, String> = [(1, "a.c:5".to_string()), (2, "a.c:5".into())].into();
        let r = vec![bare(1, MissType::AppCapacity, 0.5), bare(2, MissType::AppConflict, 0.5)];
        assert_eq!(summarize_statements(r, &syms, 200.0).len(), 2);
    }

    #[test]
    fn names_round_trip() {
        for t in MissType::ALL {
            assert_eq!(t.name().parse::<MissType>().unwrap(), t);
        }
    }
}
