//! Black-box profiling of a command: launch it, sample it with periodic
//! watchers, and assemble a [`Profile`].

mod process;
mod watcher;
mod watchers;

use std::collections::BTreeSet;
use std::time::{Duration, Instant, UNIX_EPOCH};

pub use process::{resolve_program, LaunchError, Pid};
pub use watcher::{run_watcher_loop, RawResults, SeriesData, StopSignal, WatchContext, Watcher, WatcherOutput};
pub use watchers::{parse_proc_io, read_status_memory, CpuWatcher, MemWatcher, StorageWatcher};

use crate::host;
use crate::model::{CounterSource, Profile, Tags, DEFAULT_SAMPLE_PERIOD, MIN_SAMPLE_PERIOD};

pub const ENV_SAMPLE_PERIOD: &str = "SYNMIRROR_SAMPLE_PERIOD";
pub const ENV_FALLBACK: &str = "SYNMIRROR_FALLBACK";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum WatcherKind {
    Cpu,
    Mem,
    Storage,
}

impl WatcherKind {
    pub const ALL: [WatcherKind; 3] = [WatcherKind::Cpu, WatcherKind::Mem, WatcherKind::Storage];
}

#[derive(Debug, thiserror::Error)]
pub enum ProfileError {
    #[error("invalid profiler configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Launch(#[from] LaunchError),
    #[error("counter source unavailable: {0}")]
    Capability(String),
    #[error("I/O error while supervising the child: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfilerConfig {
    /// Seconds between samples; at least [`MIN_SAMPLE_PERIOD`].
    pub sample_period: f64,
    pub watchers: BTreeSet<WatcherKind>,
    pub tags: Tags,
    /// Estimate cycles from CPU time when hardware counters cannot be opened.
    pub fallback_counters: bool,
    /// Send the command's standard output to standard error, keeping the
    /// profiler's own standard output clean.
    pub stdout_to_stderr: bool,
}

impl Default for ProfilerConfig {
    fn default() -> Self {
        ProfilerConfig {
            sample_period: DEFAULT_SAMPLE_PERIOD,
            watchers: WatcherKind::ALL.into_iter().collect(),
            tags: Tags::new(),
            fallback_counters: false,
            stdout_to_stderr: false,
        }
    }
}

impl ProfilerConfig {
    /// Defaults overridden by `SYNMIRROR_SAMPLE_PERIOD` and
    /// `SYNMIRROR_FALLBACK=1`.
    pub fn from_env() -> Result<Self, ProfileError> {
        let mut c = ProfilerConfig::default();
        if let Ok(p) = std::env::var(ENV_SAMPLE_PERIOD) {
            c.sample_period = p
                .trim()
                .parse()
                .map_err(|_| ProfileError::InvalidConfig(format!("{ENV_SAMPLE_PERIOD}={p:?} is not a number")))?;
        }
        c.fallback_counters = std::env::var(ENV_FALLBACK).map(|v| v.trim() == "1").unwrap_or(false);
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        // Allow for decimal representation noise right at the floor.
        if !(self.sample_period >= MIN_SAMPLE_PERIOD - 1e-12) || !self.sample_period.is_finite() {
            return Err(ProfileError::InvalidConfig(format!(
                "sample period {} s is below the {MIN_SAMPLE_PERIOD} s minimum",
                self.sample_period
            )));
        }
        if self.watchers.is_empty() {
            return Err(ProfileError::InvalidConfig("no watchers enabled".into()));
        }
        Ok(())
    }
}

/// Single-use profiler: [`Profiler::profile`] consumes it.
#[derive(Debug)]
pub struct Profiler {
    config: ProfilerConfig,
}

impl Profiler {
    pub fn new(config: ProfilerConfig) -> Result<Self, ProfileError> {
        config.validate()?;
        Ok(Profiler { config })
    }

    /// Runs `argv` to completion under the watchers and returns its profile.
    ///
    /// Runtime comes from process accounting (release to exit). Sampling stops
    /// at the first sample-period boundary after the child exits.
    pub fn profile(self, argv: &[String]) -> Result<Profile, ProfileError> {
        let cfg = self.config;
        let system = host::detect_system();
        let period = Duration::from_secs_f64(cfg.sample_period);

        let child = process::spawn_paused(argv, cfg.stdout_to_stderr)?;
        let pid = child.pid();
        let mut notes = Vec::new();
        let mut counter_source = CounterSource::Hardware;
        let mut watchers: Vec<Box<dyn Watcher>> = Vec::new();
        for kind in &cfg.watchers {
            match kind {
                WatcherKind::Cpu => match CpuWatcher::hardware(pid) {
                    Ok(w) => watchers.push(Box::new(w)),
                    Err(e) if cfg.fallback_counters => {
                        log::warn!("hardware counters unavailable ({e}); estimating cycles from CPU time");
                        notes.push(format!("hardware counters unavailable ({e}); cycles are estimated"));
                        counter_source = CounterSource::Estimated;
                        watchers.push(Box::new(CpuWatcher::estimated(pid, system.max_cpu_freq)));
                    }
                    Err(e) => {
                        drop(child);
                        return Err(ProfileError::Capability(format!(
                            "cannot open hardware cycle counter: {e} (enable the fallback to estimate cycles)"
                        )));
                    }
                },
                WatcherKind::Mem => watchers.push(Box::new(MemWatcher::new(pid))),
                WatcherKind::Storage => watchers.push(Box::new(StorageWatcher::new(pid))),
            }
        }

        let mut handle = child.release()?;
        let start = handle.started;
        let ctx = WatchContext { pid, sample_period: period, start };
        let stop = StopSignal::new();

        let (exited, finished) = std::thread::scope(|scope| {
            let threads: Vec<_> = watchers
                .into_iter()
                .map(|mut w| {
                    let stop = &stop;
                    scope.spawn(move || {
                        let enabled = match w.pre_process(&ctx) {
                            Ok(()) => true,
                            Err(msg) => {
                                log::warn!("watcher {} disabled: {msg}", w.name());
                                false
                            }
                        };
                        let disabled_note = (!enabled).then(|| format!("watcher {} disabled", w.name()));
                        if enabled {
                            run_watcher_loop(w.as_mut(), start, period, stop);
                        }
                        (w, disabled_note)
                    })
                })
                .collect();

            let exited = handle.wait_exit();
            let exited_at = match &exited {
                Ok(t) => t.duration_since(start).as_secs_f64(),
                Err(_) => start.elapsed().as_secs_f64(),
            };
            if exited.is_ok() {
                let periods = (exited_at / cfg.sample_period).ceil().max(1.0);
                let boundary = start + Duration::from_secs_f64(periods * cfg.sample_period);
                let now = Instant::now();
                if boundary > now {
                    std::thread::sleep(boundary - now);
                }
                stop.stop_with_final_sample(exited_at);
            } else {
                stop.stop();
            }
            let finished: Vec<_> = threads.into_iter().map(|t| t.join().expect("watcher thread panicked")).collect();
            (exited, finished)
        });
        let exit_instant = exited?;
        let exit = handle.reap()?;
        let runtime = exit_instant.duration_since(start).as_secs_f64();

        let mut watchers = Vec::new();
        for (w, disabled) in finished {
            if let Some(n) = disabled {
                notes.push(n);
            } else {
                watchers.push(w);
            }
        }
        let snapshots: Vec<WatcherOutput> = watchers.iter().map(|w| w.output()).collect();
        let raw = RawResults { outputs: &snapshots, exit: &exit, runtime };
        for w in watchers.iter_mut() {
            w.finalize(&raw);
        }

        let mut profile = Profile::new(&argv.join(" "), cfg.tags.clone(), system, cfg.sample_period);
        profile.counter_source = counter_source;
        profile.runtime = runtime;
        profile.start_time = handle.started_wall.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        profile.exit = exit;
        for w in &watchers {
            let out = w.output();
            notes.extend(out.notes);
            match out.data {
                SeriesData::Cpu(s) => profile.series.cpu = s,
                SeriesData::Mem(s) => profile.series.mem = s,
                SeriesData::Storage(s) => profile.series.storage = s,
            }
        }
        if let Some(sig) = exit.signal {
            notes.push(format!("child terminated by signal {sig}"));
        }
        profile.notes = notes;
        profile.recompute();
        Ok(profile)
    }
}

/// Convenience wrapper: `Profiler::new(config)?.profile(argv)`.
pub fn profile(argv: &[String], config: ProfilerConfig) -> Result<Profile, ProfileError> {
    Profiler::new(config)?.profile(argv)
}
