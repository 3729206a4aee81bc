//! Watcher plugin contract and the periodic sampling loop.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use crate::model::{CpuSample, ExitInfo, MemSample, StorageSample};

use super::process::Pid;

/// Passed to [`Watcher::pre_process`].
#[derive(Debug, Clone, Copy)]
pub struct WatchContext {
    pub pid: Pid,
    pub sample_period: Duration,
    /// Instant the target was released; sample timestamps are relative to it.
    pub start: Instant,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SeriesData {
    Cpu(Vec<CpuSample>),
    Mem(Vec<MemSample>),
    Storage(Vec<StorageSample>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WatcherOutput {
    pub name: &'static str,
    pub data: SeriesData,
    pub notes: Vec<String>,
}

/// Read-only view handed to [`Watcher::finalize`].
#[derive(Debug)]
pub struct RawResults<'a> {
    pub outputs: &'a [WatcherOutput],
    pub exit: &'a ExitInfo,
    pub runtime: f64,
}

impl RawResults<'_> {
    pub fn get(&self, name: &str) -> Option<&WatcherOutput> {
        self.outputs.iter().find(|o| o.name == name)
    }
}

/// A pluggable periodic sampler for one resource type.
///
/// Lifecycle: `pre_process` once, `sample` at most once per period,
/// `post_process` once after the last sample, then `finalize` after every
/// watcher has post-processed.
pub trait Watcher: Send {
    fn name(&self) -> &'static str;

    /// Sets up the watcher. An error disables the watcher for this run.
    fn pre_process(&mut self, ctx: &WatchContext) -> Result<(), String>;

    /// Takes one sample at `now` seconds after start. Failures are recorded
    /// as gap samples, never propagated.
    fn sample(&mut self, now: f64);

    /// Records a gap at `now` after `sample` panicked.
    fn record_gap(&mut self, now: f64);

    fn post_process(&mut self) {}

    /// May read other watchers' raw output; must only modify itself.
    fn finalize(&mut self, _raw: &RawResults<'_>) {}

    fn output(&self) -> WatcherOutput;

    fn sample_count(&self) -> usize;
}

#[derive(Debug, Default)]
struct StopState {
    stopped: bool,
    /// Child exit time (seconds since start) when a final sample is requested.
    final_after: Option<f64>,
}

/// Stop request shared between the supervisor and watcher threads.
#[derive(Debug, Default)]
pub struct StopSignal {
    state: Mutex<StopState>,
    cv: Condvar,
}

impl StopSignal {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stops the loops without any further sample.
    pub fn stop(&self) {
        let mut s = self.state.lock().unwrap();
        s.stopped = true;
        self.cv.notify_all();
    }

    /// Stops the loops; each takes one final sample unless it already sampled
    /// after `exited_at` (seconds since start).
    pub fn stop_with_final_sample(&self, exited_at: f64) {
        let mut s = self.state.lock().unwrap();
        s.stopped = true;
        s.final_after = Some(exited_at);
        self.cv.notify_all();
    }

    pub fn is_stopped(&self) -> bool {
        self.state.lock().unwrap().stopped
    }

    /// Sleeps up to `d`; returns the stop state if stopped meanwhile.
    fn wait(&self, d: Duration) -> Option<Option<f64>> {
        let deadline = Instant::now() + d;
        let mut s = self.state.lock().unwrap();
        loop {
            if s.stopped {
                return Some(s.final_after);
            }
            let now = Instant::now();
            if now >= deadline {
                return None;
            }
            s = self.cv.wait_timeout(s, deadline - now).unwrap().0;
        }
    }
}

fn guarded_sample(w: &mut dyn Watcher, now: f64) {
    if catch_unwind(AssertUnwindSafe(|| w.sample(now))).is_err() {
        log::warn!("watcher {} failed while sampling at {now:.3}s", w.name());
        w.record_gap(now);
    }
}

/// Runs the sampling loop of a pre-processed watcher until `stop`, then calls
/// `post_process`.
///
/// Scheduling is fixed-delay: the loop sleeps one full period after each
/// sample completes, so a slow `sample` stretches the spacing.
pub fn run_watcher_loop(w: &mut dyn Watcher, start: Instant, period: Duration, stop: &StopSignal) {
    let mut last_sample: Option<f64> = None;
    if !stop.is_stopped() {
        loop {
            if let Some(final_after) = stop.wait(period) {
                if let Some(exited_at) = final_after {
                    if last_sample.is_none_or(|t| t < exited_at) {
                        guarded_sample(w, start.elapsed().as_secs_f64());
                    }
                }
                break;
            }
            let now = start.elapsed().as_secs_f64();
            guarded_sample(w, now);
            last_sample = Some(now);
        }
    }
    w.post_process();
}
