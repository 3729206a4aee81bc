//! Host-specific calibration of compute kernels: cycles per iteration.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::CounterSource;

use super::compute::CycleMeter;
use super::kernels::Kernel;

/// Shortest rung of the ladder, in seconds of work.
const BASE_SECONDS: f64 = 0.002;
/// Number of rungs; each doubles the iteration count.
const RUNGS: u32 = 8;
/// Rungs short enough to be measured several times, keeping the minimum.
const SHORT_RUNGS: u32 = 4;
const SHORT_RUNG_REPEATS: usize = 3;
/// A rung may not measure fewer cycles than this fraction of the previous one.
const MONOTONE_TOLERANCE: f64 = 0.9;
const ATTEMPTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationEntry {
    pub kernel: String,
    /// Least-squares slope through the origin of cycles vs iterations.
    pub cycles_per_iteration: f64,
    /// Sample standard deviation of the per-rung cycles/iteration ratios.
    pub cycles_per_iteration_std: f64,
    pub instructions_per_iteration: f64,
    pub flops_per_iteration: u64,
    pub counter_source: CounterSource,
    /// Seconds since the Unix epoch.
    pub calibrated_at: f64,
    /// (iterations, cycles) per rung.
    pub ladder: Vec<(u64, u64)>,
}

impl CalibrationEntry {
    /// Instructions per cycle of the kernel, when instructions were counted.
    pub fn ipc(&self) -> Option<f64> {
        (self.instructions_per_iteration > 0.0).then(|| self.instructions_per_iteration / self.cycles_per_iteration)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub host_id: String,
    pub entries: BTreeMap<String, CalibrationEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum CalibrationError {
    #[error("calibration table belongs to host {table_host:?}, not {host:?}; recalibrate on this host")]
    Stale { table_host: String, host: String },
    #[error("no calibration for kernel {0:?}")]
    Missing(String),
    #[error("calibration of {kernel} failed: measurements not monotone ({detail}); the host is too noisy")]
    Noisy { kernel: String, detail: String },
    #[error("calibration table I/O on {path}: {message}")]
    Io { path: String, message: String },
}

impl CalibrationTable {
    pub fn new(host_id: &str) -> Self {
        CalibrationTable { host_id: host_id.to_string(), entries: BTreeMap::new() }
    }

    /// Reads a table; a missing file is `Ok(None)`.
    pub fn load(path: &Path) -> Result<Option<Self>, CalibrationError> {
        let io = |message: String| CalibrationError::Io { path: path.display().to_string(), message };
        match std::fs::read(path) {
            Ok(text) => serde_json::from_slice(&text).map(Some).map_err(|e| io(e.to_string())),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io(e.to_string())),
        }
    }

    /// Writes the table atomically.
    pub fn save(&self, path: &Path) -> Result<(), CalibrationError> {
        let io = |e: std::io::Error| CalibrationError::Io { path: path.display().to_string(), message: e.to_string() };
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        let tmp = path.with_extension(format!("tmp-{}", std::process::id()));
        let body = serde_json::to_vec_pretty(self).expect("tables serialize");
        std::fs::write(&tmp, body).map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }

    /// The entry for `kernel`, valid only when the table was made on `host`.
    pub fn entry(&self, kernel: &str, host: &str) -> Result<&CalibrationEntry, CalibrationError> {
        if self.host_id != host {
            return Err(CalibrationError::Stale { table_host: self.host_id.clone(), host: host.to_string() });
        }
        self.entries.get(kernel).ok_or_else(|| CalibrationError::Missing(kernel.to_string()))
    }

    pub fn insert(&mut self, entry: CalibrationEntry) {
        self.entries.insert(entry.kernel.clone(), entry);
    }
}

fn measure(kernel: &dyn Kernel, meter: &CycleMeter, iterations: u64) -> (u64, u64) {
    let (c0, i0) = meter.read();
    std::hint::black_box(kernel.run(iterations));
    let (c1, i1) = meter.read();
    (c1.saturating_sub(c0), i1.saturating_sub(i0))
}

/// Slope through the origin minimizing squared error of `y ≈ slope·x`.
pub fn fit_through_origin(points: &[(u64, u64)]) -> f64 {
    let (sxy, sxx) = points.iter().fold((0.0, 0.0), |(sxy, sxx), &(x, y)| {
        let (x, y) = (x as f64, y as f64);
        (sxy + x * y, sxx + x * x)
    });
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

fn try_calibrate(kernel: &dyn Kernel, meter: &CycleMeter, freq: u64) -> Result<CalibrationEntry, String> {
    // Warm up caches, page tables and the frequency governor.
    measure(kernel, meter, 1);
    let base_cycles = (freq as f64 * BASE_SECONDS) as u64;
    let mut n = 1u64;
    loop {
        let (c, _) = measure(kernel, meter, n);
        if c >= base_cycles || n >= 1 << 40 {
            break;
        }
        n = if c == 0 { n * 8 } else { (n as f64 * base_cycles as f64 / c as f64).ceil().max(n as f64 * 2.0) as u64 };
    }
    let mut ladder = Vec::with_capacity(RUNGS as usize);
    let mut instructions = 0u64;
    for k in 0..RUNGS {
        let iters = n << k;
        // Short rungs are sensitive to a single preemption; keep the best of
        // a few repeats.
        let repeats = if k < SHORT_RUNGS { SHORT_RUNG_REPEATS } else { 1 };
        let (c, i) =
            (0..repeats).map(|_| measure(kernel, meter, iters)).min_by_key(|&(c, _)| c).expect("at least one repeat");
        if let Some(&(_, prev)) = ladder.last() {
            if (c as f64) < prev as f64 * MONOTONE_TOLERANCE {
                return Err(format!("{iters} iterations took {c} cycles, fewer than {prev} for half as many"));
            }
        }
        ladder.push((iters, c));
        instructions += i;
    }
    let cpi = fit_through_origin(&ladder);
    if cpi <= 0.0 {
        return Err("no cycles measured".into());
    }
    let ratios: Vec<f64> = ladder.iter().map(|&(n, c)| c as f64 / n as f64).collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (ratios.len() - 1) as f64;
    let total_iters: u64 = ladder.iter().map(|&(n, _)| n).sum();
    Ok(CalibrationEntry {
        kernel: kernel.name().to_string(),
        cycles_per_iteration: cpi,
        cycles_per_iteration_std: var.sqrt(),
        instructions_per_iteration: instructions as f64 / total_iters as f64,
        flops_per_iteration: kernel.flops_per_iteration(),
        counter_source: if meter.is_hardware() { CounterSource::Hardware } else { CounterSource::Estimated },
        calibrated_at: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0),
        ladder,
    })
}

/// Runs `kernel` over a geometric ladder of iteration counts (about 0.5 s in
/// total) and fits cycles per iteration. Retries noisy ladders a few times.
pub fn calibrate(kernel: &dyn Kernel, meter: &CycleMeter, freq: u64) -> Result<CalibrationEntry, CalibrationError> {
    let mut last = String::new();
    for _ in 0..ATTEMPTS {
        match try_calibrate(kernel, meter, freq) {
            Ok(e) => return Ok(e),
            Err(e) => {
                log::warn!("calibration of {} retrying: {e}", kernel.name());
                last = e;
            }
        }
    }
    Err(CalibrationError::Noisy { kernel: kernel.name().to_string(), detail: last })
}
