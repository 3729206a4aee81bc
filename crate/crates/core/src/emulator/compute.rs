//! Compute atom: burns a target number of CPU cycles with a kernel.
//!
//! The loop is closed: iterations are issued in chunks of roughly 100 ms of
//! work sized from the calibrated cycles-per-iteration, and the consumed
//! cycles are re-measured after every chunk, refining the estimate.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::host;
use crate::perf::ThreadCounters;

use super::kernels::{kernel_from_spec, Kernel};

/// Target amount of work per chunk.
pub const CHUNK_SECONDS: f64 = 0.1;

/// Measures cycles consumed by the calling thread.
#[derive(Debug)]
pub enum CycleMeter {
    Hardware(ThreadCounters),
    /// Thread CPU time × nominal frequency; no instruction counts.
    Estimated {
        freq: u64,
    },
}

impl CycleMeter {
    /// Hardware counters on this thread, or the CPU-time estimate.
    pub fn for_current_thread(freq: u64) -> Self {
        match ThreadCounters::open() {
            Ok(c) => CycleMeter::Hardware(c),
            Err(_) => CycleMeter::Estimated { freq },
        }
    }

    pub fn estimated(freq: u64) -> Self {
        CycleMeter::Estimated { freq }
    }

    pub fn is_hardware(&self) -> bool {
        matches!(self, CycleMeter::Hardware(_))
    }

    /// Cumulative (cycles, instructions) of this thread.
    pub fn read(&self) -> (u64, u64) {
        match self {
            CycleMeter::Hardware(c) => c.read().unwrap_or((0, 0)),
            CycleMeter::Estimated { freq } => ((host::thread_cpu_time() * *freq as f64) as u64, 0),
        }
    }
}

/// Result of one compute consumption.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ComputeOutcome {
    pub target: u64,
    pub consumed: u64,
    pub instructions: u64,
    pub iterations: u64,
    /// True when `consumed` was measured by hardware counters.
    pub measured: bool,
}

impl ComputeOutcome {
    fn add(&mut self, o: &ComputeOutcome) {
        self.target += o.target;
        self.consumed += o.consumed;
        self.instructions += o.instructions;
        self.iterations += o.iterations;
        self.measured &= o.measured;
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
#[error("compute target of {target} cycles not reached before the deadline ({consumed} consumed)")]
pub struct ComputeTimeout {
    pub target: u64,
    pub consumed: u64,
}

/// Consumes `target` cycles on the calling thread.
///
/// `cycles_per_iteration` seeds the chunk sizing and is then replaced by the
/// measured average; `freq` converts the chunk duration into cycles. Stops once the remaining cycles are below half an
/// iteration, or fails at `deadline`.
pub fn consume_cycles(
    kernel: &dyn Kernel,
    cycles_per_iteration: f64,
    freq: u64,
    target: u64,
    meter: &CycleMeter,
    deadline: Option<Instant>,
) -> Result<ComputeOutcome, ComputeTimeout> {
    let mut out = ComputeOutcome { target, measured: meter.is_hardware(), ..Default::default() };
    if target == 0 {
        return Ok(out);
    }
    let full_chunk = (freq as f64 * CHUNK_SECONDS).max(1.0);
    // Start with a short probe and grow to full chunks, so a poor seed
    // estimate cannot overshoot by a whole chunk.
    let mut chunk_cycles = full_chunk / 8.0;
    let mut cpi = cycles_per_iteration.max(1e-9);
    let (c0, i0) = meter.read();
    loop {
        let remaining = target.saturating_sub(out.consumed) as f64;
        if remaining < cpi / 2.0 {
            break;
        }
        if deadline.is_some_and(|d| Instant::now() >= d) {
            return Err(ComputeTimeout { target, consumed: out.consumed });
        }
        let iters = (remaining.min(chunk_cycles) / cpi).round().max(1.0) as u64;
        std::hint::black_box(kernel.run(iters));
        let (c, i) = meter.read();
        out.consumed = c.saturating_sub(c0);
        out.instructions = i.saturating_sub(i0);
        out.iterations += iters;
        if out.consumed > 0 {
            cpi = out.consumed as f64 / out.iterations as f64;
        }
        chunk_cycles = (chunk_cycles * 4.0).min(full_chunk);
    }
    Ok(out)
}

/// Splits `total` into `parts` near-equal shares.
pub fn split_even(total: u64, parts: usize) -> Vec<u64> {
    let parts = parts.max(1) as u64;
    (0..parts).map(|i| total / parts + u64::from(i < total % parts)).collect()
}

/// Runs `workers` threads, each consuming an equal share of `target`.
pub fn consume_shared(
    kernel: &Arc<dyn Kernel>,
    cycles_per_iteration: f64,
    freq: u64,
    target: u64,
    workers: usize,
    deadline: Option<Instant>,
) -> Result<ComputeOutcome, ComputeTimeout> {
    if workers <= 1 {
        let meter = CycleMeter::for_current_thread(freq);
        return consume_cycles(kernel.as_ref(), cycles_per_iteration, freq, target, &meter, deadline);
    }
    let results: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = split_even(target, workers)
            .into_iter()
            .map(|share| {
                s.spawn(move || {
                    let meter = CycleMeter::for_current_thread(freq);
                    consume_cycles(kernel.as_ref(), cycles_per_iteration, freq, share, &meter, deadline)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("compute worker panicked")).collect()
    });
    let mut total = ComputeOutcome { measured: true, ..Default::default() };
    let mut timed_out = false;
    for r in results {
        match r {
            Ok(o) => total.add(&o),
            Err(t) => {
                timed_out = true;
                total.target += t.target;
                total.consumed += t.consumed;
            }
        }
    }
    if timed_out {
        return Err(ComputeTimeout { target: total.target, consumed: total.consumed });
    }
    Ok(total)
}

/// Environment variable naming the executable used for worker processes.
pub const ENV_WORKER: &str = "SYNMIRROR_WORKER";
/// Hidden CLI subcommand run by worker processes.
pub const WORKER_SUBCOMMAND: &str = "__compute-worker";

/// Finds the `synmirror` executable for worker processes: `explicit`, then
/// `SYNMIRROR_WORKER`, then the running executable if it is the CLI, then a
/// `synmirror` next to it or one directory up (test binaries live in `deps/`).
pub fn resolve_worker_exe(explicit: Option<&Path>) -> Option<PathBuf> {
    if let Some(p) = explicit {
        return Some(p.to_path_buf());
    }
    if let Some(p) = std::env::var_os(ENV_WORKER).filter(|s| !s.is_empty()) {
        return Some(PathBuf::from(p));
    }
    let exe = std::env::current_exe().ok()?;
    if exe.file_name().is_some_and(|n| n == "synmirror") {
        return Some(exe);
    }
    let dir = exe.parent()?;
    [dir.join("synmirror"), dir.parent()?.join("synmirror")].into_iter().find(|p| p.is_file())
}

/// A pool of `synmirror __compute-worker` child processes driven over
/// line-oriented stdin/stdout messages.
#[derive(Debug)]
pub struct WorkerPool {
    workers: Vec<(Child, ChildStdin, BufReader<ChildStdout>)>,
}

impl WorkerPool {
    pub fn spawn(exe: &Path, count: usize) -> std::io::Result<Self> {
        let mut workers = Vec::with_capacity(count);
        for _ in 0..count.max(1) {
            let mut child =
                Command::new(exe).arg(WORKER_SUBCOMMAND).stdin(Stdio::piped()).stdout(Stdio::piped()).spawn()?;
            let stdin = child.stdin.take().expect("piped stdin");
            let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
            workers.push((child, stdin, stdout));
        }
        let mut pool = WorkerPool { workers };
        for (_, stdin, stdout) in &mut pool.workers {
            writeln!(stdin, "PING")?;
            let mut line = String::new();
            stdout.read_line(&mut line)?;
            if line.trim() != "READY" {
                return Err(std::io::Error::other(format!("worker handshake failed: {line:?}")));
            }
        }
        Ok(pool)
    }

    pub fn len(&self) -> usize {
        self.workers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.workers.is_empty()
    }

    /// Splits `target` across the workers, starts them all, then waits for
    /// every reply.
    pub fn consume(
        &mut self,
        kernel: &dyn Kernel,
        cycles_per_iteration: f64,
        freq: u64,
        target: u64,
        timeout: Option<Duration>,
    ) -> Result<ComputeOutcome, WorkerError> {
        let shares = split_even(target, self.workers.len());
        let timeout_ms = timeout.map_or(0, |t| t.as_millis() as u64);
        for ((_, stdin, _), share) in self.workers.iter_mut().zip(&shares) {
            writeln!(stdin, "RUN {} {share} {cycles_per_iteration:e} {freq} {timeout_ms}", kernel.spec())
                .and_then(|_| stdin.flush())
                .map_err(|e| WorkerError::Io(e.to_string()))?;
        }
        let mut total = ComputeOutcome { measured: true, ..Default::default() };
        let mut timeout_err = None;
        for (_, _, stdout) in &mut self.workers {
            let mut line = String::new();
            stdout.read_line(&mut line).map_err(|e| WorkerError::Io(e.to_string()))?;
            let f: Vec<&str> = line.split_whitespace().collect();
            let num = |i: usize| f.get(i).and_then(|s| s.parse::<u64>().ok());
            match f.first().copied() {
                Some("DONE") | Some("TIMEOUT") => {
                    let o = ComputeOutcome {
                        target: num(1).unwrap_or(0),
                        consumed: num(2).unwrap_or(0),
                        instructions: num(3).unwrap_or(0),
                        iterations: num(4).unwrap_or(0),
                        measured: num(5) == Some(1),
                    };
                    total.add(&o);
                    if f[0] == "TIMEOUT" {
                        timeout_err = Some(());
                    }
                }
                _ => return Err(WorkerError::Protocol(line.trim().to_string())),
            }
        }
        if timeout_err.is_some() {
            return Err(WorkerError::Timeout(ComputeTimeout { target: total.target, consumed: total.consumed }));
        }
        Ok(total)
    }
}

impl Drop for WorkerPool {
    fn drop(&mut self) {
        for (child, stdin, _) in &mut self.workers {
            let _ = writeln!(stdin, "EXIT");
            let _ = stdin.flush();
            let _ = child.wait();
        }
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum WorkerError {
    #[error("worker I/O failed: {0}")]
    Io(String),
    #[error("worker protocol error: {0:?}")]
    Protocol(String),
    #[error(transparent)]
    Timeout(ComputeTimeout),
}

/// Body of the worker process: serves `RUN` requests on stdin until `EXIT`
/// or end of input. Returns the process exit code.
pub fn worker_main(input: impl BufRead, mut output: impl Write) -> i32 {
    let mut kernels: Vec<(String, Arc<dyn Kernel>)> = Vec::new();
    let mut meter: Option<CycleMeter> = None;
    for line in input.lines() {
        let Ok(line) = line else { return 1 };
        let f: Vec<&str> = line.split_whitespace().collect();
        let reply = match f.as_slice() {
            ["PING"] => "READY".to_string(),
            ["EXIT"] => return 0,
            ["RUN", spec, target, cpi, freq, timeout_ms] => {
                let (Ok(target), Ok(cpi), Ok(freq), Ok(timeout_ms)) =
                    (target.parse::<u64>(), cpi.parse::<f64>(), freq.parse::<u64>(), timeout_ms.parse::<u64>())
                else {
                    let _ = writeln!(output, "ERR bad RUN arguments");
                    continue;
                };
                let kernel = match kernels.iter().find(|(s, _)| s == spec) {
                    Some((_, k)) => k.clone(),
                    None => match kernel_from_spec(spec) {
                        Ok(k) => {
                            kernels.push((spec.to_string(), k.clone()));
                            k
                        }
                        Err(e) => {
                            let _ = writeln!(output, "ERR {e}");
                            let _ = output.flush();
                            continue;
                        }
                    },
                };
                let meter = meter.get_or_insert_with(|| CycleMeter::for_current_thread(freq));
                let deadline = (timeout_ms > 0).then(|| Instant::now() + Duration::from_millis(timeout_ms));
                match consume_cycles(kernel.as_ref(), cpi, freq, target, meter, deadline) {
                    Ok(o) => format!(
                        "DONE {} {} {} {} {}",
                        o.target,
                        o.consumed,
                        o.instructions,
                        o.iterations,
                        u8::from(o.measured)
                    ),
                    Err(t) => format!("TIMEOUT {} {} 0 0 {}", t.target, t.consumed, u8::from(meter.is_hardware())),
                }
            }
            _ => format!("ERR unknown request {line:?}"),
        };
        if writeln!(output, "{reply}").and_then(|_| output.flush()).is_err() {
            return 1;
        }
    }
    0
}
