//! The built-in CPU, memory and storage watchers.

use std::fs;

use crate::host;
use crate::model::{CpuSample, MemSample, SampleFlags, StorageSample};
use crate::perf::{Counter, HwEvent, Target};

use super::process::Pid;
use super::watcher::{RawResults, SeriesData, WatchContext, Watcher, WatcherOutput};

pub const CPU: &str = "cpu";
pub const MEM: &str = "mem";
pub const STORAGE: &str = "storage";

struct TrackedCounter {
    counter: Counter,
    prev: u64,
}

enum CpuSource {
    Hardware(Vec<TrackedCounter>),
    Estimated { freq: u64, prev_time: f64 },
}

/// Samples instructions, cycles and stalled cycles from hardware counters, or
/// estimates cycles from CPU time when counters are unavailable.
pub struct CpuWatcher {
    pid: Pid,
    source: CpuSource,
    samples: Vec<CpuSample>,
    notes: Vec<String>,
}

impl CpuWatcher {
    /// Attaches counters to a paused child. Fails only when no cycle counter
    /// can be opened; other events are optional.
    pub fn hardware(pid: Pid) -> std::io::Result<Self> {
        let cycles = Counter::open(HwEvent::Cycles, Target::PausedChild(pid))?;
        let mut counters = vec![TrackedCounter { counter: cycles, prev: 0 }];
        let mut notes = Vec::new();
        for ev in [HwEvent::Instructions, HwEvent::StalledFrontend, HwEvent::StalledBackend] {
            match Counter::open(ev, Target::PausedChild(pid)) {
                Ok(counter) => counters.push(TrackedCounter { counter, prev: 0 }),
                Err(e) => notes.push(format!("counter {} unavailable ({e}); recorded as 0", ev.name())),
            }
        }
        Ok(CpuWatcher { pid, source: CpuSource::Hardware(counters), samples: Vec::new(), notes })
    }

    /// Cycles estimated as consumed CPU time × `freq`; no instruction or
    /// stall counts.
    pub fn estimated(pid: Pid, freq: u64) -> Self {
        CpuWatcher {
            pid,
            source: CpuSource::Estimated { freq, prev_time: 0.0 },
            samples: Vec::new(),
            notes: vec![format!("cycles estimated from CPU time at {freq} Hz")],
        }
    }

    fn gap(t: f64) -> CpuSample {
        CpuSample { t, flags: SampleFlags::GAP, ..Default::default() }
    }
}

/// Clamped delta between two cumulative readings.
fn delta(cur: u64, prev: u64, flags: &mut SampleFlags) -> u64 {
    if cur < prev {
        flags.insert(SampleFlags::CLAMPED);
        0
    } else {
        cur - prev
    }
}

impl Watcher for CpuWatcher {
    fn name(&self) -> &'static str {
        CPU
    }

    fn pre_process(&mut self, _ctx: &WatchContext) -> Result<(), String> {
        Ok(())
    }

    fn sample(&mut self, now: f64) {
        let sample = match &mut self.source {
            CpuSource::Hardware(counters) => {
                let readings: std::io::Result<Vec<_>> = counters.iter().map(|c| c.counter.read()).collect();
                match readings {
                    Err(_) => Self::gap(now),
                    Ok(readings) => {
                        let mut s = CpuSample { t: now, ..Default::default() };
                        for (c, r) in counters.iter_mut().zip(readings) {
                            let (value, scaled) = r.scaled();
                            if scaled {
                                s.flags.insert(SampleFlags::SCALED);
                            }
                            let d = delta(value, c.prev, &mut s.flags);
                            c.prev = c.prev.max(value);
                            match c.counter.event() {
                                HwEvent::Cycles => s.cycles_used = d,
                                HwEvent::Instructions => s.instructions = d,
                                HwEvent::StalledFrontend => s.cycles_stalled_frontend = d,
                                HwEvent::StalledBackend => s.cycles_stalled_backend = d,
                            }
                        }
                        s
                    }
                }
            }
            CpuSource::Estimated { freq, prev_time } => match host::process_cpu_time(self.pid) {
                None => Self::gap(now),
                Some(cpu) => {
                    let mut s = CpuSample { t: now, ..Default::default() };
                    if cpu < *prev_time {
                        s.flags.insert(SampleFlags::CLAMPED);
                    } else {
                        s.cycles_used = ((cpu - *prev_time) * *freq as f64).round() as u64;
                        *prev_time = cpu;
                    }
                    s
                }
            },
        };
        self.samples.push(sample);
    }

    fn record_gap(&mut self, now: f64) {
        self.samples.push(Self::gap(now));
    }

    fn post_process(&mut self) {
        let scaled = self.samples.iter().filter(|s| s.flags.contains(SampleFlags::SCALED)).count();
        if scaled > 0 {
            self.notes.push(format!("{scaled} cpu samples scaled for counter multiplexing"));
        }
        let gaps = self.samples.iter().filter(|s| s.flags.contains(SampleFlags::GAP)).count();
        if gaps > 0 {
            self.notes.push(format!("{gaps} cpu samples are gaps"));
        }
    }

    fn output(&self) -> WatcherOutput {
        WatcherOutput { name: CPU, data: SeriesData::Cpu(self.samples.clone()), notes: self.notes.clone() }
    }

    fn sample_count(&self) -> usize {
        self.samples.len()
    }
}

/// Samples resident and peak memory from `/proc/<pid>/status`.
pub struct MemWatcher {
    pid: Pid,
    prev_rss: u64,
    peak: u64,
    samples: Vec<MemSample>,
    notes: Vec<String>,
}

impl MemWatcher {
    pub fn new(pid: Pid) -> Self {
        MemWatcher { pid, prev_rss: 0, peak: 0, samples: Vec::new(), notes: Vec::new() }
    }
}

/// (VmRSS, VmHWM) in bytes; `None` once the address space is gone.
pub fn read_status_memory(pid: Pid) -> Option<(u64, u64)> {
    let s = fs::read_to_string(format!("/proc/{pid}/status")).ok()?;
    let rss = host::kib_field(&s, "VmRSS:")?;
    let hwm = host::kib_field(&s, "VmHWM:").unwrap_or(rss);
    Some((rss, hwm))
}

impl Watcher for MemWatcher {
    fn name(&self) -> &'static str {
        MEM
    }

    fn pre_process(&mut self, _ctx: &WatchContext) -> Result<(), String> {
        Ok(())
    }

    fn sample(&mut self, now: f64) {
        // A missing reading means the process has exited: drop the sample.
        if let Some((rss, hwm)) = read_status_memory(self.pid) {
            self.peak = self.peak.max(hwm).max(rss);
            self.samples.push(MemSample::from_rss(now, rss, self.peak, self.prev_rss));
            self.prev_rss = rss;
        }
    }

    fn record_gap(&mut self, now: f64) {
        self.samples.push(MemSample {
            t: now,
            rss: self.prev_rss,
            peak: self.peak,
            flags: SampleFlags::GAP,
            ..Default::default()
        });
    }

    fn finalize(&mut self, raw: &RawResults<'_>) {
        // The accounting high-water mark also covers spikes between samples.
        if let Some(last) = self.samples.last_mut() {
            if raw.exit.max_rss > last.peak {
                last.peak = raw.exit.max_rss;
                self.notes.push("final peak raised to the process accounting maximum".into());
            }
        }
    }

    fn output(&self) -> WatcherOutput {
        WatcherOutput { name: MEM, data: SeriesData::Mem(self.samples.clone()), notes: self.notes.clone() }
    }

    fn sample_count(&self) -> usize {
        self.samples.len()
    }
}

/// Samples storage-layer bytes read and written from `/proc/<pid>/io`.
pub struct StorageWatcher {
    pid: Pid,
    prev: (u64, u64),
    samples: Vec<StorageSample>,
    notes: Vec<String>,
}

impl StorageWatcher {
    pub fn new(pid: Pid) -> Self {
        StorageWatcher { pid, prev: (0, 0), samples: Vec::new(), notes: Vec::new() }
    }
}

/// (read_bytes, write_bytes) from a `/proc/<pid>/io` body.
pub fn parse_proc_io(text: &str) -> Option<(u64, u64)> {
    let field = |name: &str| -> Option<u64> { text.lines().find_map(|l| l.strip_prefix(name)?.trim().parse().ok()) };
    Some((field("read_bytes:")?, field("write_bytes:")?))
}

fn read_proc_io(pid: Pid) -> std::io::Result<(u64, u64)> {
    let s = fs::read_to_string(format!("/proc/{pid}/io"))?;
    parse_proc_io(&s).ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidData, "malformed io accounting"))
}

impl Watcher for StorageWatcher {
    fn name(&self) -> &'static str {
        STORAGE
    }

    fn pre_process(&mut self, _ctx: &WatchContext) -> Result<(), String> {
        read_proc_io(self.pid).map(|_| ()).map_err(|e| format!("per-process I/O accounting unreadable: {e}"))
    }

    fn sample(&mut self, now: f64) {
        let s = match read_proc_io(self.pid) {
            Ok((r, w)) => {
                let mut flags = SampleFlags::empty();
                let s = StorageSample {
                    t: now,
                    bytes_read: delta(r, self.prev.0, &mut flags),
                    bytes_written: delta(w, self.prev.1, &mut flags),
                    flags,
                };
                self.prev = (self.prev.0.max(r), self.prev.1.max(w));
                s
            }
            Err(_) => StorageSample { t: now, flags: SampleFlags::GAP, ..Default::default() },
        };
        self.samples.push(s);
    }

    fn record_gap(&mut self, now: f64) {
        self.samples.push(StorageSample { t: now, flags: SampleFlags::GAP, ..Default::default() });
    }

    fn output(&self) -> WatcherOutput {
        WatcherOutput { name: STORAGE, data: SeriesData::Storage(self.samples.clone()), notes: self.notes.clone() }
    }

    fn sample_count(&self) -> usize {
        self.samples.len()
    }
}
