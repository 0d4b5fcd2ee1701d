use serde::{Deserialize, Serialize};

use crate::cache_sim::AccessOutcome;
use crate::stores::{InstructionStore, ObjectId};
use crate::trace::AccessEvent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BreakpointConfig {
    /// Accesses collected before a verdict is forced.
    pub max_accesses: usize,
    /// Distinct lines in one set that make a conflict verdict.
    pub same_set: usize,
    /// Events after install at which the breakpoint expires.
    pub expiry_events: u64,
    /// Consecutive sampled misses that make an ip a candidate.
    pub k_consec: u32,
    /// Misses on one set within one flush that make an ip a candidate.
    pub t_set: u32,
}

impl Default for BreakpointConfig {
    fn default() -> Self {
        Self {
            max_accesses: 64,
            same_set: 8,
            expiry_events: 100_000,
            k_consec: 4,
            t_set: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PatternOutcome {
    SameSetConflict,
    MultiSetCapacity,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FinalizeReason {
    SameSetRun,
    Full,
    Expired,
    EndOfTrace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FineAccess {
    pub seq: u64,
    pub tid: u32,
    pub addr: u64,
    pub set: u32,
    pub line: u64,
    /// Heap object containing `addr` at access time.
    pub object: Option<ObjectId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinePattern {
    pub ip: u64,
    pub outcome: PatternOutcome,
    pub dominant_set: Option<u32>,
    pub reason: FinalizeReason,
    pub install_seq: u64,
    pub finalize_seq: u64,
    pub accesses: Vec<FineAccess>,
    /// Distinct heap objects touched, ascending.
    pub objects: Vec<ObjectId>,
}

impl FinePattern {
    pub fn is_conclusive(&self) -> bool {
        self.outcome != PatternOutcome::Inconclusive
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BreakpointLogKind {
    Installed,
    Finalized(PatternOutcome),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BreakpointLogEntry {
    pub seq: u64,
    pub ip: u64,
    pub kind: BreakpointLogKind,
}

#[derive(Debug, Clone)]
struct Active {
    ip: u64,
    install_seq: u64,
    accesses: Vec<FineAccess>,
    /// Distinct lines seen per set.
    set_lines: Vec<(u32, Vec<u64>)>,
    /// Current run of consecutive accesses to one set, as distinct lines.
    run_set: Option<u32>,
    run_lines: Vec<u64>,
}

impl Active {
    fn busiest_set(&self) -> Option<(u32, usize)> {
        self.set_lines
            .iter()
            .map(|(s, l)| (*s, l.len()))
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
    }
}

/// The single emulated hardware breakpoint shared by all threads.
///
/// Once installed on an ip it watches every access of that ip in the trace,
/// not just sampled ones, and turns them into a [`FinePattern`].
#[derive(Debug, Clone)]
pub struct Breakpoint {
    cfg: BreakpointConfig,
    active: Option<Active>,
    log: Vec<BreakpointLogEntry>,
}

impl Breakpoint {
    pub fn new(cfg: BreakpointConfig) -> Self {
        Self {
            cfg,
            active: None,
            log: Vec::new(),
        }
    }

    pub fn config(&self) -> &BreakpointConfig {
        &self.cfg
    }

    pub fn target(&self) -> Option<u64> {
        self.active.as_ref().map(|a| a.ip)
    }

    pub fn is_expired(&self, now: u64) -> bool {
        self.active
            .as_ref()
            .is_some_and(|a| now.saturating_sub(a.install_seq) >= self.cfg.expiry_events)
    }

    pub fn log(&self) -> &[BreakpointLogEntry] {
        &self.log
    }

    /// Installs on `ip` unless a breakpoint is already active.
    pub fn install(&mut self, ip: u64, now: u64) -> bool {
        if self.active.is_some() {
            return false;
        }
        self.active = Some(Active {
            ip,
            install_seq: now,
            accesses: Vec::with_capacity(self.cfg.max_accesses),
            set_lines: Vec::new(),
            run_set: None,
            run_lines: Vec::new(),
        });
        self.log.push(BreakpointLogEntry {
            seq: now,
            ip,
            kind: BreakpointLogKind::Installed,
        });
        true
    }

    /// Feeds one trace access. `lookup` resolves the containing heap object
    /// and is only called for accesses of the target ip.
    #[inline]
    pub fn observe(
        &mut self,
        ev: &AccessEvent,
        out: &AccessOutcome,
        lookup: impl FnOnce(u64) -> Option<ObjectId>,
    ) -> Option<FinePattern> {
        let active = self.active.as_mut()?;
        if ev.seq.saturating_sub(active.install_seq) >= self.cfg.expiry_events {
            return self.finalize(ev.seq, FinalizeReason::Expired);
        }
        if ev.ip != active.ip {
            return None;
        }
        let (set, line) = (out.set_index, out.line_addr);
        active.accesses.push(FineAccess {
            seq: ev.seq,
            tid: ev.tid,
            addr: ev.addr,
            set,
            line,
            object: lookup(ev.addr),
        });
        match active.set_lines.iter_mut().find(|(s, _)| *s == set) {
            Some((_, lines)) => {
                if !lines.contains(&line) {
                    lines.push(line);
                }
            }
            None => active.set_lines.push((set, vec![line])),
        }
        if active.run_set == Some(set) {
            if !active.run_lines.contains(&line) {
                active.run_lines.push(line);
            }
        } else {
            active.run_set = Some(set);
            active.run_lines.clear();
            active.run_lines.push(line);
        }
        if active.run_lines.len() >= self.cfg.same_set {
            return self.finalize(ev.seq, FinalizeReason::SameSetRun);
        }
        if active.accesses.len() >= self.cfg.max_accesses {
            return self.finalize(ev.seq, FinalizeReason::Full);
        }
        None
    }

    /// Expiry check for events that are not accesses.
    pub fn tick(&mut self, now: u64) -> Option<FinePattern> {
        if self.is_expired(now) {
            self.finalize(now, FinalizeReason::Expired)
        } else {
            None
        }
    }

    /// Forces a verdict on whatever was collected (end of trace).
    pub fn finish(&mut self, now: u64) -> Option<FinePattern> {
        self.active.as_ref()?;
        self.finalize(now, FinalizeReason::EndOfTrace)
    }

    fn finalize(&mut self, now: u64, reason: FinalizeReason) -> Option<FinePattern> {
        let a = self.active.take()?;
        let busiest = a.busiest_set();
        let (outcome, dominant_set) = match reason {
            FinalizeReason::SameSetRun => (PatternOutcome::SameSetConflict, a.run_set),
            FinalizeReason::Expired | FinalizeReason::EndOfTrace if a.accesses.len() < self.cfg.same_set => {
                (PatternOutcome::Inconclusive, None)
            }
            _ => match busiest {
                Some((s, n)) if n >= self.cfg.same_set => (PatternOutcome::SameSetConflict, Some(s)),
                _ => (PatternOutcome::MultiSetCapacity, None),
            },
        };
        let mut objects: Vec<ObjectId> = a.accesses.iter().filter_map(|x| x.object).collect();
        objects.sort_unstable();
        objects.dedup();
        self.log.push(BreakpointLogEntry {
            seq: now,
            ip: a.ip,
            kind: BreakpointLogKind::Finalized(outcome),
        });
        Some(FinePattern {
            ip: a.ip,
            outcome,
            dominant_set,
            reason,
            install_seq: a.install_seq,
            finalize_seq: now,
            accesses: a.accesses,
            objects,
        })
    }
}

/// Checks a breakpoint log for the one-active-at-a-time protocol: installs
/// and finalizations alternate, each finalization closes the preceding
/// install of the same ip, and nothing is left open.
pub fn check_breakpoint_log(log: &[BreakpointLogEntry]) -> Result<(), String> {
    let mut open: Option<BreakpointLogEntry> = None;
    for e in log {
        match (e.kind, open) {
            (BreakpointLogKind::Installed, None) => open = Some(*e),
            (BreakpointLogKind::Installed, Some(o)) => {
                return Err(format!(
                    "breakpoint on 0x{:x} installed at {} while 0x{:x} (installed at {}) is active",
                    e.ip, e.seq, o.ip, o.seq
                ))
            }
            (BreakpointLogKind::Finalized(_), Some(o)) if o.ip == e.ip && e.seq >= o.seq => open = None,
            (BreakpointLogKind::Finalized(_), _) => {
                return Err(format!("finalization of 0x{:x} at {} without a matching install", e.ip, e.seq))
            }
        }
    }
    match open {
        Some(o) => Err(format!("breakpoint on 0x{:x} installed at {} never finalized", o.ip, o.seq)),
        None => Ok(()),
    }
}

/// Result of a selection round.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Selection {
    /// A target that had expired and was finalized to make room.
    pub expired: Option<FinePattern>,
    pub installed: Option<u64>,
}

/// Picks and installs a breakpoint target among the ips of the latest flush.
///
/// Candidates are ips with at least `k_consec` consecutive sampled misses,
/// or failing that ips with at least `t_set` misses on one set within the
/// latest flush. Ties go to the ip with more misses, then the lower ip. Ips
/// that already have a conclusive pattern are not re-targeted.
pub fn select_breakpoint_target(
    instrs: &InstructionStore,
    batch_ips: &[u64],
    bp: &mut Breakpoint,
    now: u64,
) -> Selection {
    let mut sel = Selection::default();
    if bp.target().is_some() {
        if !bp.is_expired(now) {
            return sel;
        }
        sel.expired = bp.tick(now);
    }
    let cfg = *bp.config();
    let epoch = instrs.epoch();
    // (priority class, misses, ip); class 0 beats class 1
    let mut best: Option<(u8, u64, u64)> = None;
    for &ip in batch_ips {
        let Some(st) = instrs.get(ip) else { continue };
        if st.pattern.as_ref().is_some_and(FinePattern::is_conclusive) {
            continue;
        }
        let class = if st.consecutive_misses >= cfg.k_consec {
            0
        } else if st.batch_max_set(epoch) >= cfg.t_set {
            1
        } else {
            continue;
        };
        let key = (class, st.misses(), ip);
        let better = match best {
            None => true,
            Some((c, m, i)) => class < c || (class == c && (key.1 > m || (key.1 == m && ip < i))),
        };
        if better {
            best = Some(key);
        }
    }
    if let Some((_, _, ip)) = best {
        if bp.install(ip, now) {
            sel.installed = Some(ip);
        }
    }
    sel
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache_sim::{CacheConfig, OracleKind};
    use crate::trace::AccessKind;

    fn cfg() -> CacheConfig {
        CacheConfig::default()
    }

    fn feed(bp: &mut Breakpoint, seq: u64, ip: u64, addr: u64) -> Option<FinePattern> {
        let c = cfg();
        let ev = AccessEvent {
            seq,
            tid: 0,
            ip,
            addr,
            kind: AccessKind::Load,
        };
        let out = AccessOutcome {
            hit: false,
            oracle_kind: OracleKind::Capacity,
            set_index: c.set_index(addr),
            line_addr: c.line_addr(addr),
        };
        bp.observe(&ev, &out, |_| None)
    }

    #[test]
    fn eight_same_set_lines_exit_early() {
        let mut bp = Breakpoint::new(BreakpointConfig::default());
        assert!(bp.install(0x10, 0));
        let stride = cfg().set_stride();
        for i in 0..7 {
            assert!(feed(&mut bp, 1 + i, 0x10, i * stride).is_none());
        }
        let p = feed(&mut bp, 8, 0x10, 7 * stride).unwrap();
        assert_eq!(p.outcome, PatternOutcome::SameSetConflict);
        assert_eq!(p.dominant_set, Some(0));
        assert_eq!(p.accesses.len(), 8);
        assert_eq!(p.reason, FinalizeReason::SameSetRun);
        assert!(bp.target().is_none());
    }

    #[test]
    fn sequential_lines_hit_the_cap_as_capacity() {
        let mut bp = Breakpoint::new(BreakpointConfig::default());
        bp.install(0x10, 0);
        let mut last = None;
        for i in 0..64u64 {
            last = feed(&mut bp, 1 + i, 0x10, 0x10000 + i * 64);
            if i < 63 {
                assert!(last.is_none());
            }
        }
        let p = last.unwrap();
        assert_eq!(p.outcome, PatternOutcome::MultiSetCapacity);
        assert_eq!(p.reason, FinalizeReason::Full);
    }

    #[test]
    fn sparse_target_expires_inconclusive() {
        let mut bp = Breakpoint::new(BreakpointConfig::default());
        bp.install(0x10, 100);
        for i in 0..3 {
            assert!(feed(&mut bp, 101 + i, 0x10, 0x40 * i).is_none());
        }
        assert!(feed(&mut bp, 100_099, 0x99, 0).is_none());
        let p = feed(&mut bp, 100_100, 0x99, 0).unwrap();
        assert_eq!(p.outcome, PatternOutcome::Inconclusive);
        assert_eq!(p.accesses.len(), 3);
        assert_eq!(p.reason, FinalizeReason::Expired);
    }

    #[test]
    fn repeated_line_does_not_count_as_conflict() {
        let mut bp = Breakpoint::new(BreakpointConfig::default());
        bp.install(0x10, 0);
        let mut last = None;
        for i in 0..64u64 {
            last = feed(&mut bp, 1 + i, 0x10, 0x1000 + (i % 16) * 4);
        }
        assert_eq!(last.unwrap().outcome, PatternOutcome::MultiSetCapacity);
    }

    #[test]
    fn second_install_refused_while_active() {
        let mut bp = Breakpoint::new(BreakpointConfig::default());
        assert!(bp.install(0x10, 0));
        assert!(!bp.install(0x20, 1));
        assert_eq!(bp.target(), Some(0x10));
        bp.finish(5).unwrap();
        assert!(check_breakpoint_log(bp.log()).is_ok());
    }

    #[test]
    fn log_checker_flags_overlap() {
        let log = [
            BreakpointLogEntry {
                seq: 1,
                ip: 1,
                kind: BreakpointLogKind::Installed,
            },
            BreakpointLogEntry {
                seq: 2,
                ip: 2,
                kind: BreakpointLogKind::Installed,
            },
        ];
        assert!(check_breakpoint_log(&log).is_err());
        assert!(check_breakpoint_log(&log[..1]).is_err());
    }
}
