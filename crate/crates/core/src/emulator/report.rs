//! What an emulation consumed, and when.

use serde::{Deserialize, Serialize};

use crate::model::{CounterSource, Profile, Tags};

use super::{AtomConfig, CalibrationEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resource {
    Compute,
    Memory,
    Storage,
}

/// Wall-clock interval of one atom task, in seconds since replay start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub resource: Resource,
    pub start: f64,
    pub end: f64,
}

impl TaskRecord {
    pub fn overlaps(&self, other: &TaskRecord) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub index: u64,
    pub start: f64,
    pub end: f64,
    pub tasks: Vec<TaskRecord>,
    pub cycles_target: u64,
    pub cycles_consumed: u64,
    /// False when consumed cycles are a CPU-time estimate.
    pub cycles_measured: bool,
    pub instructions: u64,
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub read_requests: u64,
    pub write_requests: u64,
    pub mem_allocated: u64,
    pub mem_freed: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportTotals {
    pub cycles_target: u64,
    pub cycles_consumed: u64,
    pub instructions: u64,
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub read_requests: u64,
    pub write_requests: u64,
    pub mem_allocated: u64,
    pub mem_freed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmulationReport {
    pub command: String,
    pub tags: Tags,
    /// Runtime of the profiled application.
    pub profile_runtime: f64,
    pub profile_counter_source: CounterSource,
    pub config: AtomConfig,
    pub kernel: Option<String>,
    pub calibration: Option<CalibrationEntry>,
    /// How consumed cycles were measured, when any compute ran.
    pub cycles_source: Option<CounterSource>,
    /// Seconds spent before the first sample (calibration, scratch files,
    /// workers).
    pub setup_time: f64,
    /// End of the last sample minus start of the first.
    pub tx: f64,
    pub totals: ReportTotals,
    pub samples: Vec<SampleReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl EmulationReport {
    pub(super) fn new(
        profile: &Profile,
        config: &AtomConfig,
        setup_time: f64,
        samples: Vec<SampleReport>,
        warnings: Vec<String>,
    ) -> Self {
        let tx = match (samples.first(), samples.last()) {
            (Some(f), Some(l)) => l.end - f.start,
            _ => 0.0,
        };
        let mut totals = ReportTotals::default();
        for s in &samples {
            totals.cycles_target += s.cycles_target;
            totals.cycles_consumed += s.cycles_consumed;
            totals.instructions += s.instructions;
            totals.bytes_read += s.bytes_read;
            totals.bytes_written += s.bytes_written;
            totals.read_requests += s.read_requests;
            totals.write_requests += s.write_requests;
            totals.mem_allocated += s.mem_allocated;
            totals.mem_freed += s.mem_freed;
        }
        EmulationReport {
            command: profile.command.clone(),
            tags: profile.tags.clone(),
            profile_runtime: profile.runtime,
            profile_counter_source: profile.counter_source,
            config: config.clone(),
            kernel: None,
            calibration: None,
            cycles_source: None,
            setup_time,
            tx,
            totals,
            samples,
            warnings,
        }
    }

    /// For all samples i < j: every task of i ends before any task of j
    /// starts.
    pub fn ordering_holds(&self) -> bool {
        let mut latest_end = f64::NEG_INFINITY;
        for s in &self.samples {
            if s.tasks.iter().any(|t| t.start < latest_end) {
                return false;
            }
            latest_end = s.tasks.iter().map(|t| t.end).fold(latest_end, f64::max);
        }
        true
    }

    /// Every sample with several tasks has pairwise-overlapping tasks.
    pub fn overlap_holds(&self) -> bool {
        self.samples
            .iter()
            .all(|s| s.tasks.iter().enumerate().all(|(i, a)| s.tasks[i + 1..].iter().all(|b| a.overlaps(b))))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    /// Human-readable summary table.
    pub fn summary(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(s, "command            {}", self.command);
        for (k, v) in &self.tags {
            let _ = writeln!(s, "tag                {k}={v}");
        }
        let kernel = self.kernel.as_deref().unwrap_or("-");
        let _ = writeln!(
            s,
            "kernel             {kernel} ({} worker(s), {:?})",
            self.config.compute_workers, self.config.worker_mode
        );
        let _ = writeln!(
            s,
            "blocks             read {} B, write {} B, memory {} B",
            self.config.io_block_size_read, self.config.io_block_size_write, self.config.mem_block_size
        );
        let _ = writeln!(s, "samples            {}", self.samples.len());
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<16} {:>20} {:>20}", "resource", "profile", "emulated");
        let t = &self.totals;
        let rows = [
            ("cycles", t.cycles_target, t.cycles_consumed),
            ("bytes_read", t.bytes_read, t.bytes_read),
            ("bytes_written", t.bytes_written, t.bytes_written),
            ("mem_allocated", t.mem_allocated, t.mem_allocated),
            ("mem_freed", t.mem_freed, t.mem_freed),
        ];
        for (name, want, got) in rows {
            let _ = writeln!(s, "{name:<16} {want:>20} {got:>20}");
        }
        let _ = writeln!(s, "{:<16} {:>20} {:>20}", "instructions", "-", t.instructions);
        let _ = writeln!(s, "{:<16} {:>20.3} {:>20.3}", "Tx [s]", self.profile_runtime, self.tx);
        let _ = writeln!(s, "{:<16} {:>20} {:>20.3}", "setup [s]", "-", self.setup_time);
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }
}
