//! Hybrid sampling engine: periodic access sampling, the windowed miss-ratio
//! checker, and the emulated single hardware breakpoint.

pub mod breakpoint;
pub mod sampler;
pub mod window;

pub use breakpoint::{
    check_breakpoint_log, select_breakpoint_target, Breakpoint, BreakpointConfig, BreakpointLogEntry,
    BreakpointLogKind, FinalizeReason, FineAccess, FinePattern, PatternOutcome, Selection,
};
pub use sampler::{Sampler, SamplerConfig};
pub use window::{FlushBatch, MissWindow, WindowConfig};

use crate::trace::AccessKind;

/// One sampled access: the trace event plus the simulator's hit verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampledRecord {
    pub seq: u64,
    pub tid: u32,
    pub ip: u64,
    pub addr: u64,
    pub kind: AccessKind,
    pub miss: bool,
    pub set: u32,
    pub line: u64,
}
