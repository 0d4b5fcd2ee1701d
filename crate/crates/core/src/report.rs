//! Structured (JSON) and text renderings of a classified run.
//!
//! Field names in [`ProfileReport`] are part of the output format; keep
//! them stable.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cache_sim::CacheConfig;
use crate::classifier::{Classification, IssueReport, MissType, Origin, Severity};
use crate::config::RunConfig;
use crate::pipeline::{ProfileRun, RunTotals};
use crate::stores::Owner;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ReportObject {
    Heap {
        id: u32,
        start: String,
        size: u64,
        callsite: u64,
        alloc_tid: u32,
    },
    Global {
        name: String,
        start: String,
        size: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportIssue {
    pub miss_type: MissType,
    pub origin: Origin,
    pub statement: Option<String>,
    pub ips: Vec<String>,
    pub lines: Vec<String>,
    pub sets: Vec<u32>,
    pub objects: Vec<ReportObject>,
    pub severity: Severity,
}

impl ReportIssue {
    pub fn ip_values(&self) -> Vec<u64> {
        self.ips.iter().filter_map(|s| parse_hex(s)).collect()
    }

    /// Callsites of the heap objects listed on this issue.
    pub fn callsites(&self) -> Vec<u64> {
        self.objects
            .iter()
            .filter_map(|o| match o {
                ReportObject::Heap { callsite, .. } => Some(*callsite),
                ReportObject::Global { .. } => None,
            })
            .collect()
    }

    pub fn heap_objects(&self) -> usize {
        self.objects
            .iter()
            .filter(|o| matches!(o, ReportObject::Heap { .. }))
            .count()
    }
}

pub fn parse_hex(s: &str) -> Option<u64> {
    u64::from_str_radix(s.strip_prefix("0x")?, 16).ok()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub trace_id: String,
    pub config: RunConfig,
    pub cache: CacheConfig,
    pub ground_truth: BTreeMap<String, String>,
    pub totals: RunTotals,
    pub gate_passed: bool,
    pub issues: Vec<ReportIssue>,
}

fn hex(v: u64) -> String {
    format!("0x{v:x}")
}

fn render_issue(run: &ProfileRun, r: &IssueReport) -> ReportIssue {
    let objects = r
        .objects
        .iter()
        .map(|o| match *o {
            Owner::Heap(id) => {
                let rec = run.objects.record(id);
                ReportObject::Heap {
                    id,
                    start: hex(rec.start),
                    size: rec.size,
                    callsite: rec.callsite,
                    alloc_tid: rec.alloc_tid,
                }
            }
            Owner::Global(idx) => {
                let g = run.objects.global(idx);
                ReportObject::Global {
                    name: g.name.clone(),
                    start: hex(g.start),
                    size: g.size,
                }
            }
        })
        .collect();
    ReportIssue {
        miss_type: r.miss_type,
        origin: r.origin,
        statement: r.statement.clone(),
        ips: r.ips.iter().map(|&ip| hex(ip)).collect(),
        lines: r.lines.iter().map(|&l| hex(l)).collect(),
        sets: r.sets.clone(),
        objects,
        severity: r.severity,
    }
}

impl ProfileReport {
    pub fn new(run: &ProfileRun, c: &Classification) -> Self {
        Self {
            trace_id: run.trace_id.clone(),
            config: run.config.clone(),
            cache: run.header.cache,
            ground_truth: run.header.ground_truth.iter().cloned().collect(),
            totals: run.totals.clone(),
            gate_passed: c.gate_passed,
            issues: c.issues.iter().map(|r| render_issue(run, r)).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }

    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let c = &self.cache;
        let t = &self.totals;
        let _ = writeln!(
            o,
            "trace {}  cache {}B lines, {} sets x {} ways, {} cores",
            self.trace_id, c.line_size, c.num_sets, c.associativity, c.num_cores
        );
        let _ = writeln!(
            o,
            "{} events, {} sampled ({} loads, {} stores), {} misses in {} flushes",
            t.events,
            t.sampled_loads + t.sampled_stores,
            t.sampled_loads,
            t.sampled_stores,
            t.flushed_misses,
            t.flush_batches
        );
        if self.issues.is_empty() {
            o.push_str("\nno significant issues\n");
            return o;
        }
        for (i, r) in self.issues.iter().enumerate() {
            let _ = writeln!(o, "\n[{}] {} ({})", i + 1, r.miss_type, r.origin.name());
            if let Some(s) = &r.statement {
                let _ = writeln!(o, "    statement  {s}");
            }
            let _ = writeln!(o, "    ips        {}", r.ips.join(", "));
            if !r.lines.is_empty() {
                let _ = writeln!(o, "    lines      {}", r.lines.join(", "));
            }
            if !r.sets.is_empty() {
                let sets: Vec<String> = r.sets.iter().map(u32::to_string).collect();
                let _ = writeln!(o, "    sets       {}", sets.join(", "));
            }
            for (j, obj) in r.objects.iter().enumerate() {
                let label = if j == 0 { "objects" } else { "" };
                match obj {
                    ReportObject::Heap {
                        id,
                        start,
                        size,
                        callsite,
                        alloc_tid,
                    } => {
                        let _ = writeln!(
                            o,
                            "    {label:<10} heap #{id} at {start}, {size} bytes, callsite {callsite}, thread {alloc_tid}"
                        );
                    }
                    ReportObject::Global { name, start, size } => {
                        let _ = writeln!(o, "    {label:<10} global {name} at {start}, {size} bytes");
                    }
                }
            }
            let s = &r.severity;
            let _ = writeln!(
                o,
                "    severity   {:.2}% of accesses, {:.2}% of misses, slowdown bound {:.2}x",
                s.access_ratio * 100.0,
                s.miss_ratio * 100.0,
                s.projected_slowdown_bound
            );
        }
        o
    }
}
