//! Profile a process's CPU, memory and storage consumption into a portable
//! time-series profile, then replay that profile anywhere with tunable
//! resource-consuming atoms.

pub mod cli;
pub mod emulator;
pub mod host;
pub mod model;
pub mod perf;
pub mod profiler;
pub mod store;
