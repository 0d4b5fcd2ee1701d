//! Checks profiler reports against the generator's ground truth and the
//! oracle's exact miss breakdown.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::MissType;
use crate::oracle::OracleReport;
use crate::report::ProfileReport;
use crate::workloads::GroundTruth;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CompareError {
    #[error("trace id mismatch: report {report}, oracle {oracle}")]
    TraceMismatch { report: String, oracle: String },
    #[error("report carries no ground truth")]
    NoGroundTruth,
    #[error("{0}")]
    BadGroundTruth(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub workload: String,
    pub seed: u64,
    pub trace_id: String,
    pub expected: Option<MissType>,
    pub reported: Vec<MissType>,
    #[serde(rename = "match")]
    pub matched: bool,
    /// Why the row failed; empty when it matched.
    pub reasons: Vec<String>,
}

fn label_name(l: Option<MissType>) -> &'static str {
    l.map_or("none", MissType::name)
}

/// Compares one run. `oracle` must describe the same trace.
pub fn compare_run(report: &ProfileReport, oracle: &OracleReport) -> Result<ComparisonRow, CompareError> {
    if report.trace_id != oracle.trace_id {
        return Err(CompareError::TraceMismatch {
            report: report.trace_id.clone(),
            oracle: oracle.trace_id.clone(),
        });
    }
    if report.ground_truth.is_empty() {
        return Err(CompareError::NoGroundTruth);
    }
    let pairs: Vec<(&String, &String)> = report.ground_truth.iter().collect();
    let gt = GroundTruth::from_pairs(&pairs).map_err(CompareError::BadGroundTruth)?;
    let mut reasons = Vec::new();

    let guilty = |ips: &[u64]| ips.iter().any(|ip| gt.guilty_ips.contains(ip));
    let (relevant, other): (Vec<_>, Vec<_>) = report.issues.iter().partition(|r| guilty(&r.ip_values()));
    let mut reported: Vec<MissType> = relevant.iter().map(|r| r.miss_type).collect();
    reported.dedup();

    if !gt.expect_report {
        if !report.issues.is_empty() {
            let types: Vec<&str> = report.issues.iter().map(|r| r.miss_type.name()).collect();
            reasons.push(format!("spurious report: {}", types.join(", ")));
        }
        reported = report.issues.iter().map(|r| r.miss_type).collect();
        reported.dedup();
    } else if let Some(want) = gt.label {
        if relevant.is_empty() {
            reasons.push(format!("missed issue: no {} report for the guilty ips", want.name()));
        }
        for r in &relevant {
            if r.miss_type != want {
                reasons.push(format!("mislabeled: expected {}, reported {}", want.name(), r.miss_type.name()));
                continue;
            }
            if want.origin() == crate::classifier::Origin::Allocator {
                if r.heap_objects() < 2 {
                    reasons.push(format!("{} report lists {} heap objects, need 2", want.name(), r.heap_objects()));
                }
                if let Some(cs) = r.callsites().iter().find(|c| !gt.guilty_callsites.contains(c)) {
                    reasons.push(format!("{} report names unexpected callsite {cs}", want.name()));
                }
            }
        }
        for r in &other {
            reasons.push(format!("unexpected {} report at {}", r.miss_type.name(), r.ips.join(",")));
        }
        if let Some(cat) = gt.category() {
            if oracle.dominant_kind != Some(cat) {
                reasons.push(format!(
                    "oracle disagrees with ground truth: dominant kind {:?}, expected {}",
                    oracle.dominant_kind.map(|k| k.name()),
                    cat.name()
                ));
            }
        }
    }

    Ok(ComparisonRow {
        workload: gt.workload.name().into(),
        seed: gt.seed,
        trace_id: report.trace_id.clone(),
        expected: gt.label.filter(|_| gt.expect_report),
        reported,
        matched: reasons.is_empty(),
        reasons,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    /// expected label -> reported label -> count. "none" stands for no label.
    pub confusion: BTreeMap<String, BTreeMap<String, u64>>,
    pub matched: usize,
    pub total: usize,
}

impl Comparison {
    pub fn from_rows(rows: Vec<ComparisonRow>) -> Self {
        let mut confusion: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
        for r in &rows {
            let row = confusion.entry(label_name(r.expected).into()).or_default();
            if r.reported.is_empty() {
                *row.entry("none".into()).or_default() += 1;
            }
            for t in &r.reported {
                *row.entry(t.name().into()).or_default() += 1;
            }
        }
        Self {
            matched: rows.iter().filter(|r| r.matched).count(),
            total: rows.len(),
            confusion,
            rows,
        }
    }

    pub fn all_matched(&self) -> bool {
        self.matched == self.total
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("comparison serializes");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let mut o = String::new();
        for r in &self.rows {
            let reported: Vec<&str> = r.reported.iter().map(|t| t.name()).collect();
            let reported = if reported.is_empty() { "none".to_string() } else { reported.join(",") };
            o.push_str(&format!(
                "{:<5} {:<18} seed {:<4} expected {:<22} reported {}\n",
                if r.matched { "ok" } else { "FAIL" },
                r.workload,
                r.seed,
                label_name(r.expected),
                reported
            ));
            for why in &r.reasons {
                o.push_str(&format!("      {why}\n"));
            }
        }
        o.push_str("\nconfusion (expected -> reported)\n");
        for (exp, row) in &self.confusion {
            let cells: Vec<String> = row.iter().map(|(k, n)| format!("{k}={n}")).collect();
            o.push_str(&format!("  {exp:<22} {}\n", cells.join(" ")));
        }
        o.push_str(&format!("\n{}/{} matched\n", self.matched, self.total));
        o
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::pipeline::run_profile;
    use crate::workloads::{generate, WorkloadKind, WorkloadSpec};

    fn run(kind: WorkloadKind) -> (ProfileReport, OracleReport) {
        let mut cfg = RunConfig::default();
        cfg.sampler.seed = 1;
        let w = generate(&WorkloadSpec::new(kind, 1), &cfg.cache).unwrap();
        let r = run_profile(w.header, cfg, w.events.map(Ok)).unwrap();
        let c = r.classify(&r.config.thresholds);
        (ProfileReport::new(&r, &c), r.oracle)
    }

    #[test]
    fn correct_report_matches() {
        let (rep, orc) = run(WorkloadKind::TrueSharing);
        let row = compare_run(&rep, &orc).unwrap();
        assert!(row.matched, "{:?}", row.reasons);
        assert_eq!(row.expected, Some(MissType::TrueSharing));
    }

    #[test]
    fn mislabel_and_miss_are_named() {
        let (rep, orc) = run(WorkloadKind::ConflictStride);
        let mut wrong = rep.clone();
        wrong.issues[0].miss_type = MissType::AppCapacity;
        let row = compare_run(&wrong, &orc).unwrap();
        assert!(!row.matched);
        assert!(row.reasons[0].starts_with("mislabeled"));
        let cmp = Comparison::from_rows(vec![row]);
        assert!(cmp.to_text().contains("ConflictStride"));
        assert_eq!(cmp.confusion["AppConflict"]["AppCapacity"], 1);

        let mut none = rep.clone();
        none.issues.clear();
        let row = compare_run(&none, &orc).unwrap();
        assert!(row.reasons[0].starts_with("missed issue"));
    }

    #[test]
    fn unexpected_extra_report_fails() {
        let (mut rep, orc) = run(WorkloadKind::ConflictStride);
        let mut extra = rep.issues[0].clone();
        extra.ips = vec!["0x999".into()];
        rep.issues.push(extra);
        let row = compare_run(&rep, &orc).unwrap();
        assert!(!row.matched);
        assert!(row.reasons.iter().any(|r| r.starts_with("unexpected")));
    }

    #[test]
    fn allocator_needs_two_objects() {
        let (mut rep, orc) = run(WorkloadKind::AllocFalseSharing);
        assert!(compare_run(&rep, &orc).unwrap().matched);
        rep.issues[0].objects.truncate(1);
        let row = compare_run(&rep, &orc).unwrap();
        assert!(row.reasons.iter().any(|r| r.contains("heap objects")));
    }

    #[test]
    fn silent_workload_must_stay_silent() {
        let (rep, orc) = run(WorkloadKind::Baseline);
        assert!(compare_run(&rep, &orc).unwrap().matched);
        let (other, _) = run(WorkloadKind::TrueSharing);
        let mut noisy = rep.clone();
        noisy.issues = other.issues;
        let row = compare_run(&noisy, &orc).unwrap();
        assert!(row.reasons[0].starts_with("spurious report"));
    }

    #[test]
    fn trace_ids_must_agree() {
        let (rep, _) = run(WorkloadKind::TrueSharing);
        let (_, orc) = run(WorkloadKind::Baseline);
        assert!(matches!(compare_run(&rep, &orc), Err(CompareError::TraceMismatch { .. })));
    }
}
