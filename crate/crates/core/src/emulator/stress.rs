//! Background CPU, memory and disk load, in the spirit of `stress(1)`.

use std::io::{Seek, SeekFrom, Write};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

/// Duty-cycle period of the CPU load.
const DUTY_PERIOD: Duration = Duration::from_millis(100);
/// Disk load is issued in this many slices per second.
const DISK_TICKS_PER_SECOND: u32 = 10;
/// The disk-load file is rewound once it reaches this size.
const DISK_FILE_MAX: u64 = 64 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StressConfig {
    /// Busy fraction of each loaded core, in [0, 1].
    pub cpu_fraction: f64,
    /// Cores to load; `None` loads every core.
    pub cores: Option<usize>,
    /// Memory held and touched for the duration.
    pub mem_bytes: u64,
    /// Sustained write rate in bytes per second.
    pub disk_rate: u64,
    /// `None` runs until cancelled.
    pub duration: Option<f64>,
    /// Directory for the disk-load file.
    pub dir: PathBuf,
}

impl Default for StressConfig {
    fn default() -> Self {
        StressConfig {
            cpu_fraction: 0.0,
            cores: None,
            mem_bytes: 0,
            disk_rate: 0,
            duration: None,
            dir: std::env::temp_dir(),
        }
    }
}

/// Running background load; cancelled on [`StressHandle::stop`] or drop.
#[derive(Debug)]
pub struct StressHandle {
    cancel: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

fn sleep_until(deadline: Instant, cancel: &AtomicBool) -> bool {
    while !cancel.load(Ordering::Relaxed) {
        let now = Instant::now();
        if now >= deadline {
            return true;
        }
        std::thread::sleep((deadline - now).min(Duration::from_millis(20)));
    }
    false
}

fn cpu_load(fraction: f64, end: Option<Instant>, cancel: Arc<AtomicBool>) {
    let busy = DUTY_PERIOD.mul_f64(fraction);
    let mut period_start = Instant::now();
    let mut x = 1u64;
    while !cancel.load(Ordering::Relaxed) && end.is_none_or(|e| Instant::now() < e) {
        while period_start.elapsed() < busy {
            for _ in 0..1000 {
                x = std::hint::black_box(x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407));
            }
        }
        period_start += DUTY_PERIOD;
        if !sleep_until(period_start, &cancel) {
            break;
        }
        if period_start.elapsed() > DUTY_PERIOD {
            period_start = Instant::now();
        }
    }
}

fn mem_load(bytes: u64, end: Option<Instant>, cancel: Arc<AtomicBool>) {
    let mut held: Vec<u8> = Vec::new();
    if held.try_reserve_exact(bytes as usize).is_err() {
        log::warn!("stress: cannot reserve {bytes} bytes of memory");
        return;
    }
    held.resize(bytes as usize, 1);
    std::hint::black_box(&held);
    loop {
        let tick = Instant::now() + Duration::from_secs(1);
        let deadline = end.map_or(tick, |e| e.min(tick));
        if !sleep_until(deadline, &cancel) || end.is_some_and(|e| Instant::now() >= e) {
            break;
        }
    }
    drop(held);
}

fn disk_load(rate: u64, dir: PathBuf, end: Option<Instant>, cancel: Arc<AtomicBool>) {
    let path = dir.join(format!("synmirror-stress-{}.dat", std::process::id()));
    let mut f = match std::fs::File::create(&path) {
        Ok(f) => f,
        Err(e) => {
            log::warn!("stress: cannot create {}: {e}", path.display());
            return;
        }
    };
    let slice = (rate / DISK_TICKS_PER_SECOND as u64).max(1) as usize;
    let buf = vec![0xeeu8; slice];
    let tick = Duration::from_secs(1) / DISK_TICKS_PER_SECOND;
    let mut next = Instant::now();
    let mut pos = 0u64;
    while !cancel.load(Ordering::Relaxed) && end.is_none_or(|e| Instant::now() < e) {
        if pos >= DISK_FILE_MAX {
            let _ = f.seek(SeekFrom::Start(0));
            pos = 0;
        }
        if f.write_all(&buf).and_then(|_| f.sync_data()).is_err() {
            log::warn!("stress: disk writes failing; stopping disk load");
            break;
        }
        pos += slice as u64;
        next += tick;
        if !sleep_until(next, &cancel) {
            break;
        }
    }
    drop(f);
    let _ = std::fs::remove_file(&path);
}

impl StressHandle {
    /// Starts the configured load in background threads. Best effort:
    /// failing components are logged and skipped.
    pub fn start(config: &StressConfig) -> StressHandle {
        let cancel = Arc::new(AtomicBool::new(false));
        let end = config.duration.map(|d| Instant::now() + Duration::from_secs_f64(d.max(0.0)));
        let mut threads = Vec::new();
        let fraction = config.cpu_fraction.clamp(0.0, 1.0);
        if fraction > 0.0 {
            let cores = config.cores.unwrap_or_else(|| crate::host::core_count() as usize).max(1);
            for _ in 0..cores {
                let c = cancel.clone();
                threads.push(std::thread::spawn(move || cpu_load(fraction, end, c)));
            }
        }
        if config.mem_bytes > 0 {
            let (c, bytes) = (cancel.clone(), config.mem_bytes);
            threads.push(std::thread::spawn(move || mem_load(bytes, end, c)));
        }
        if config.disk_rate > 0 {
            let (c, rate, dir) = (cancel.clone(), config.disk_rate, config.dir.clone());
            threads.push(std::thread::spawn(move || disk_load(rate, dir, end, c)));
        }
        StressHandle { cancel, threads }
    }

    /// Cancels the load and waits for it to wind down.
    pub fn stop(mut self) {
        self.shutdown();
    }

    /// Waits for a finite-duration load to end by itself.
    pub fn join(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    fn shutdown(&mut self) {
        self.cancel.store(true, Ordering::SeqCst);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for StressHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Runs the load in the foreground until it ends.
pub fn stress(config: &StressConfig) {
    StressHandle::start(config).join();
}
