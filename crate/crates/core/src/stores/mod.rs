//! Object, miss and instruction stores filled by the profiler.

pub mod instr_store;
pub mod miss_store;
pub mod objects;

pub use instr_store::{InstructionStats, InstructionStore};
pub use miss_store::{LineEntry, MissStore, SharingSignature, WordTrack, WORD_SIZE};
pub use objects::{
    placement, skip_rule, CallsiteStats, Level, ObjectError, ObjectId, ObjectRecord, ObjectStore, ObjectStoreConfig,
    Owner,
};
