pub mod cache_sim;
pub mod classifier;
pub mod compare;
pub mod config;
pub mod oracle;
pub mod pipeline;
pub mod profiler;
pub mod report;
pub mod stores;
pub mod suite;
pub mod trace;
pub mod workloads;
