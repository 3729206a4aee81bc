//! Replays a profile: every merged sample, in order, is handed to concurrent
//! resource-consuming atoms, and the next sample starts only when all of the
//! current sample's work is done.
//!
//! Profile timestamps are ignored; only quantities and their order replay.

pub mod calibration;
pub mod compute;
pub mod kernels;
pub mod memory;
pub mod network;
pub mod storage;
pub mod stress;

mod report;

use std::path::{Path, PathBuf};
use std::sync::{Arc, Barrier};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use calibration::{calibrate, CalibrationEntry, CalibrationError, CalibrationTable};
pub use compute::{
    consume_cycles, consume_shared, ComputeOutcome, ComputeTimeout, CycleMeter, WorkerError, WorkerPool,
};
pub use kernels::{kernel_by_name, Kernel, KernelError, CACHE_EXCEEDING, CACHE_RESIDENT};
pub use memory::{MemoryAtom, MemoryError};
pub use network::{EchoSink, EchoSinkHandle, NetworkError, NetworkOutcome};
pub use report::{EmulationReport, ReportTotals, Resource, SampleReport, TaskRecord};
pub use storage::{StorageAtom, StorageError, StorageOutcome};
pub use stress::{StressConfig, StressHandle};

use crate::host;
use crate::model::{merge_series, CounterSource, MergedSample, Profile};

/// How compute work is split across workers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkerMode {
    /// Threads in the emulator process.
    SharedMemory,
    /// Child worker processes.
    SeparateProcess,
}

impl std::str::FromStr for WorkerMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "shared_memory" => Ok(WorkerMode::SharedMemory),
            "separate_process" => Ok(WorkerMode::SeparateProcess),
            _ => Err(format!("unknown worker mode {s:?} (shared_memory or separate_process)")),
        }
    }
}

/// Atom tuning. None of it comes from the profile. Missing fields
/// deserialize to their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AtomConfig {
    /// `cache_resident`, `cache_exceeding` or a plugin name.
    pub compute_kernel: String,
    pub compute_workers: usize,
    pub worker_mode: WorkerMode,
    pub io_block_size_read: usize,
    pub io_block_size_write: usize,
    /// Scratch files go to `<fs_target>/<run id>/`.
    pub fs_target: PathBuf,
    pub mem_block_size: usize,
    /// Checked for reachability before replay; profiles carry no network
    /// quantities, so replay itself never uses it.
    pub network_endpoint: Option<String>,
    /// Where plugin kernels are looked up.
    pub plugin_dir: Option<PathBuf>,
    /// Calibration table file.
    pub calibration_path: Option<PathBuf>,
    /// Executable used for separate-process workers.
    pub worker_exe: Option<PathBuf>,
    /// Background load applied for the whole replay.
    pub stress: Option<StressConfig>,
}

impl Default for AtomConfig {
    fn default() -> Self {
        AtomConfig {
            compute_kernel: CACHE_RESIDENT.into(),
            compute_workers: 1,
            worker_mode: WorkerMode::SharedMemory,
            io_block_size_read: 64 << 10,
            io_block_size_write: 64 << 10,
            fs_target: std::env::temp_dir(),
            mem_block_size: 64 << 20,
            network_endpoint: None,
            plugin_dir: None,
            calibration_path: None,
            worker_exe: None,
            stress: None,
        }
    }
}

impl AtomConfig {
    pub fn validate(&self) -> Result<(), EmulationError> {
        let bad = |m: &str| Err(EmulationError::Config(m.to_string()));
        if self.compute_workers < 1 {
            return bad("compute_workers must be at least 1");
        }
        if self.io_block_size_read < 1 || self.io_block_size_write < 1 || self.mem_block_size < 1 {
            return bad("block sizes must be at least 1 byte");
        }
        if self.compute_kernel.trim().is_empty() {
            return bad("compute_kernel must not be empty");
        }
        Ok(())
    }

    pub fn calibration_file(&self) -> PathBuf {
        self.calibration_path.clone().unwrap_or_else(default_calibration_path)
    }
}

/// `<data dir>/calibration.json`.
pub fn default_calibration_path() -> PathBuf {
    crate::store::default_dir().join("calibration.json")
}

#[derive(Debug, thiserror::Error)]
pub enum EmulationError {
    #[error("invalid emulation configuration: {0}")]
    Config(String),
    #[error("fs_target {path} is not writable: {source}")]
    FsTarget { path: String, source: std::io::Error },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error("cannot start compute workers: {0}")]
    Workers(String),
    #[error("sample {index}: {source}")]
    Memory { index: u64, source: MemoryError },
    #[error("sample {index}: storage {source}")]
    Storage { index: u64, source: StorageError },
    #[error("sample {index}: {source}")]
    Compute { index: u64, source: WorkerError },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Loads the calibration for `kernel` on this host, calibrating and storing
/// it when missing or made on another host.
pub fn ensure_calibration(
    kernel: &dyn Kernel,
    path: &Path,
    freq: u64,
    warnings: &mut Vec<String>,
) -> Result<CalibrationEntry, EmulationError> {
    let host_id = host::host_id();
    let table = match CalibrationTable::load(path) {
        Ok(t) => t,
        Err(e) => {
            warnings.push(format!("ignoring unreadable calibration table: {e}"));
            None
        }
    };
    let mut table = match table {
        Some(t) => match t.entry(kernel.name(), &host_id) {
            Ok(entry) => return Ok(entry.clone()),
            Err(CalibrationError::Stale { .. }) => {
                warnings.push(format!("calibration table was made on host {:?}; recalibrating", t.host_id));
                CalibrationTable::new(&host_id)
            }
            Err(_) => t,
        },
        None => CalibrationTable::new(&host_id),
    };
    let meter = CycleMeter::for_current_thread(freq);
    let entry = calibrate(kernel, &meter, freq)?;
    log::info!("calibrated {}: {:.1} cycles/iteration", entry.kernel, entry.cycles_per_iteration);
    table.insert(entry.clone());
    if let Err(e) = table.save(path) {
        warnings.push(format!("calibration not persisted: {e}"));
    }
    Ok(entry)
}

struct ComputeSetup {
    kernel: Arc<dyn Kernel>,
    entry: CalibrationEntry,
    pool: Option<WorkerPool>,
}

fn run_id() -> String {
    let nanos = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or(0);
    format!("synmirror-{}-{nanos}", std::process::id())
}

/// Per-sample wall-clock cap: max(60 s, 100 × sample period).
pub fn sample_cap(sample_period: f64) -> Duration {
    Duration::from_secs_f64((100.0 * sample_period).max(60.0))
}

/// Replays `profile` with `config` and reports what was consumed when.
pub fn emulate(profile: &Profile, config: &AtomConfig) -> Result<EmulationReport, EmulationError> {
    let setup_start = Instant::now();
    config.validate()?;
    let mut warnings = Vec::new();
    if profile.counter_source == CounterSource::Estimated {
        warnings.push("profile cycles were estimated from CPU time, not counted".into());
    }

    let scratch = config.fs_target.join(run_id());
    std::fs::create_dir_all(&scratch)
        .and_then(|_| std::fs::write(scratch.join(".probe"), b""))
        .map_err(|source| EmulationError::FsTarget { path: config.fs_target.display().to_string(), source })?;
    let _ = std::fs::remove_file(scratch.join(".probe"));

    let result = (|| {
        let samples = merge_series(profile);
        let freq = host::max_cpu_freq();
        let total_cycles: u64 = samples.iter().map(|s| s.cycles_used).sum();
        let total_read: u64 = samples.iter().map(|s| s.bytes_read).sum();

        let mut compute = None;
        if total_cycles > 0 {
            let plugin_dir = config.plugin_dir.clone().unwrap_or_else(kernels::default_plugin_dir);
            let kernel = kernel_by_name(&config.compute_kernel, &plugin_dir)?;
            let entry = ensure_calibration(kernel.as_ref(), &config.calibration_file(), freq, &mut warnings)?;
            let pool = match config.worker_mode {
                WorkerMode::SharedMemory => None,
                WorkerMode::SeparateProcess => {
                    let exe = compute::resolve_worker_exe(config.worker_exe.as_deref())
                        .ok_or_else(|| EmulationError::Workers("synmirror executable for workers not found".into()))?;
                    Some(
                        WorkerPool::spawn(&exe, config.compute_workers)
                            .map_err(|e| EmulationError::Workers(e.to_string()))?,
                    )
                }
            };
            compute = Some(ComputeSetup { kernel, entry, pool });
        }

        let mut storage = StorageAtom::new(&scratch, config.io_block_size_read, config.io_block_size_write);
        if total_read > 0 {
            storage.prepare_read_source(total_read).map_err(|source| EmulationError::Storage { index: 0, source })?;
        }
        let mut memory = MemoryAtom::new(config.mem_block_size);
        if let Some(ep) = &config.network_endpoint {
            network::consume(0, 0, 1, ep)?;
        }
        let stress = config.stress.as_ref().map(StressHandle::start);

        let t0 = Instant::now();
        let setup_time = t0.duration_since(setup_start).as_secs_f64();
        let cap = sample_cap(profile.sample_period);
        let mut reports = Vec::with_capacity(samples.len());
        for s in &samples {
            reports.push(run_sample(s, t0, cap, compute.as_mut(), &mut memory, &mut storage, config, freq)?);
        }
        drop(stress);
        memory.release_all();

        let mut report = EmulationReport::new(profile, config, setup_time, reports, warnings);
        if let Some(c) = &compute {
            report.kernel = Some(c.kernel.name().to_string());
            report.calibration = Some(c.entry.clone());
            report.cycles_source = Some(
                if c.entry.counter_source == CounterSource::Hardware && report.samples.iter().all(|s| s.cycles_measured)
                {
                    CounterSource::Hardware
                } else {
                    CounterSource::Estimated
                },
            );
        }
        Ok(report)
    })();

    match &result {
        Ok(_) => {
            let _ = std::fs::remove_dir_all(&scratch);
        }
        Err(e) => log::warn!("emulation failed ({e}); scratch files left in {}", scratch.display()),
    }
    result
}

#[allow(clippy::too_many_arguments)]
fn run_sample(
    s: &MergedSample,
    t0: Instant,
    cap: Duration,
    compute: Option<&mut ComputeSetup>,
    memory: &mut MemoryAtom,
    storage: &mut StorageAtom,
    config: &AtomConfig,
    freq: u64,
) -> Result<SampleReport, EmulationError> {
    let index = s.index;
    let now = || t0.elapsed().as_secs_f64();
    let mut rep = SampleReport { index, cycles_target: s.cycles_used, cycles_measured: true, ..Default::default() };
    let want_compute = s.cycles_used > 0;
    let want_memory = s.mem_allocated > 0 || s.mem_freed > 0;
    let want_storage = s.bytes_read > 0 || s.bytes_written > 0;
    let tasks = usize::from(want_compute) + usize::from(want_memory) + usize::from(want_storage);
    if tasks == 0 {
        rep.start = now();
        rep.end = rep.start;
        return Ok(rep);
    }
    let deadline = Instant::now() + cap;
    // Every task records its start, then waits at the gate, so all starts
    // precede all ends: the tasks of one sample overlap by construction.
    let gate = Barrier::new(tasks);
    let gate = &gate;

    let (c, m, st) = std::thread::scope(|scope| {
        let c = want_compute.then(|| {
            let setup = compute.expect("compute set up when the profile has cycles");
            scope.spawn(move || {
                let start = now();
                gate.wait();
                let r = match &mut setup.pool {
                    Some(pool) => pool.consume(
                        setup.kernel.as_ref(),
                        setup.entry.cycles_per_iteration,
                        freq,
                        s.cycles_used,
                        Some(cap),
                    ),
                    None => consume_shared(
                        &setup.kernel,
                        setup.entry.cycles_per_iteration,
                        freq,
                        s.cycles_used,
                        config.compute_workers,
                        Some(deadline),
                    )
                    .map_err(WorkerError::Timeout),
                };
                (start, now(), r)
            })
        });
        let m = want_memory.then(|| {
            scope.spawn(move || {
                let start = now();
                gate.wait();
                let r = memory.consume(s.mem_allocated, s.mem_freed);
                (start, now(), r)
            })
        });
        let st = want_storage.then(|| {
            scope.spawn(move || {
                let start = now();
                gate.wait();
                let r = storage.consume(s.bytes_read, s.bytes_written, Some(deadline));
                (start, now(), r)
            })
        });
        fn join<T>(h: std::thread::ScopedJoinHandle<'_, T>) -> T {
            h.join().expect("atom task panicked")
        }
        (c.map(join), m.map(join), st.map(join))
    });

    if let Some((start, end, r)) = c {
        rep.tasks.push(TaskRecord { resource: Resource::Compute, start, end });
        let o = r.map_err(|source| EmulationError::Compute { index, source })?;
        rep.cycles_consumed = o.consumed;
        rep.instructions = o.instructions;
        rep.cycles_measured = o.measured;
    }
    if let Some((start, end, r)) = m {
        rep.tasks.push(TaskRecord { resource: Resource::Memory, start, end });
        let o = r.map_err(|source| EmulationError::Memory { index, source })?;
        rep.mem_allocated = o.allocated;
        rep.mem_freed = o.freed;
    }
    if let Some((start, end, r)) = st {
        rep.tasks.push(TaskRecord { resource: Resource::Storage, start, end });
        let o = r.map_err(|source| EmulationError::Storage { index, source })?;
        rep.bytes_read = o.bytes_read;
        rep.bytes_written = o.bytes_written;
        rep.read_requests = o.read_requests;
        rep.write_requests = o.write_requests;
    }
    rep.start = rep.tasks.iter().map(|t| t.start).fold(f64::INFINITY, f64::min);
    rep.end = rep.tasks.iter().map(|t| t.end).fold(0.0, f64::max);
    Ok(rep)
}
