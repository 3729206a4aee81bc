//! Profiles of the bundled workloads checked against their self-reports.

mod common;

use std::collections::BTreeMap;
use std::process::Command;
use std::sync::Mutex;

use synmirror::model::{merge_series, CounterSource, Profile};
use synmirror::profiler::{self, CpuWatcher, LaunchError, ProfileError, ProfilerConfig, WatchContext, Watcher};

/// Timing-sensitive tests must not compete for the CPU.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn config(period: f64) -> ProfilerConfig {
    ProfilerConfig { sample_period: period, fallback_counters: true, ..Default::default() }
}

fn run(argv: &[&str], period: f64) -> Profile {
    let argv: Vec<String> = argv.iter().map(|s| s.to_string()).collect();
    profiler::profile(&argv, config(period)).unwrap()
}

/// Parses `SELFREPORT kind=<k> a=1 b=2` from a workload's stdout.
fn self_report(argv: &[&str]) -> BTreeMap<String, String> {
    let out = Command::new(argv[0]).args(&argv[1..]).output().unwrap();
    assert!(out.status.success());
    let line = String::from_utf8(out.stdout).unwrap();
    let line = line.lines().find(|l| l.starts_with("SELFREPORT ")).expect("self-report line").to_string();
    line.split_whitespace().skip(1).filter_map(|kv| kv.split_once('=')).map(|(k, v)| (k.into(), v.into())).collect()
}

const SPIN: &str = env!("CARGO_BIN_EXE_synm-spin");
const WRITER: &str = env!("CARGO_BIN_EXE_synm-writer");
const READER: &str = env!("CARGO_BIN_EXE_synm-reader");
const STAIRCASE: &str = env!("CARGO_BIN_EXE_synm-staircase");
const MIXED: &str = env!("CARGO_BIN_EXE_synm-mixed");

fn hardware() -> bool {
    synmirror::perf::hardware_counters_available()
}

#[test]
fn spin_sample_rate_and_instruction_body() {
    let _g = serial();
    let iters = 2_000_000_000u64;
    let p = run(&[SPIN, &iters.to_string()], 0.1);
    assert_eq!(p.exit.code, Some(0));
    // One sample per period, plus at most one final sample.
    let expected = p.runtime / 0.1;
    let n = p.series.cpu.len() as f64;
    assert!(n >= expected - 2.0 && n <= expected + 2.0, "{n} cpu samples for {} s", p.runtime);
    assert!(p.series.cpu.windows(2).all(|w| w[0].t < w[1].t));
    if hardware() && cfg!(target_arch = "x86_64") {
        assert_eq!(p.counter_source, CounterSource::Hardware);
        // The loop body is four instructions.
        let per_iter = p.totals.instructions as f64 / iters as f64;
        assert!((per_iter - 4.0).abs() < 0.04, "{per_iter} instructions per iteration");
        assert!(p.derived.efficiency > 0.9);
        assert!((0.7..1.1).contains(&p.derived.utilization), "utilization {}", p.derived.utilization);
    }
}

#[test]
fn zero_iterations_is_fast() {
    let _g = serial();
    let p = run(&[SPIN, "0"], 0.1);
    assert!(p.runtime < 0.5, "runtime {}", p.runtime);
    assert!(p.series.cpu.len() <= 1);
}

#[test]
fn spin_doubling_doubles_runtime() {
    let _g = serial();
    let a = run(&[SPIN, "1e9"], 0.1);
    let b = run(&[SPIN, "2e9"], 0.1);
    let ratio = b.runtime / a.runtime;
    assert!((1.8..2.2).contains(&ratio), "runtime ratio {ratio}");
}

#[test]
fn writer_bytes_match_self_report() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.dat");
    let path = path.to_str().unwrap();
    let bytes = 64u64 << 20;
    let rep = self_report(&[WRITER, path, &bytes.to_string()]);
    assert_eq!(rep["bytes"], bytes.to_string());
    let p = run(&[WRITER, path, &bytes.to_string()], 0.1);
    let written = p.totals.bytes_written as f64;
    assert!((written / bytes as f64 - 1.0).abs() <= 0.05, "profiled {written} bytes written");
}

#[test]
fn reader_reports_and_fails_on_missing_file() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("in.dat");
    let bytes = 32u64 << 20;
    std::fs::write(&path, vec![7u8; bytes as usize]).unwrap();
    let path = path.to_str().unwrap();
    let rep = self_report(&[READER, path]);
    assert_eq!(rep["bytes"], bytes.to_string());
    let p = run(&[READER, path, "all", "1048576", "--drop-cache"], 0.1);
    assert_eq!(p.exit.code, Some(0));
    let read = p.totals.bytes_read as f64;
    assert!(read <= bytes as f64 * 1.05, "profiled {read} bytes read");

    let missing = dir.path().join("missing");
    let st = Command::new(READER).arg(&missing).output().unwrap().status;
    assert!(!st.success());
}

#[test]
fn staircase_peak_and_shape() {
    let _g = serial();
    let step = 64u64 << 20;
    let p = run(&[STAIRCASE, &step.to_string(), "4", "300"], 0.1);
    let peak = p.totals.peak as f64;
    let expected = 4.0 * step as f64;
    assert!((peak / expected - 1.0).abs() <= 0.25, "peak {peak}");
    // Allocation never decreases before the final release.
    let rss: Vec<u64> = p.series.mem.iter().map(|s| s.rss).collect();
    let top = rss.iter().enumerate().max_by_key(|(_, r)| **r).map(|(i, _)| i).unwrap();
    assert!(rss[..=top].windows(2).all(|w| w[1] >= w[0]), "rss {rss:?}");
    assert!(p.series.mem[..=top].iter().all(|s| s.freed == 0));
}

#[test]
fn compute_then_write_is_ordered() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let p = run(&[MIXED, dir.path().to_str().unwrap(), "cpu:1.5e9", "write:100663296"], 0.1);
    assert_eq!(p.exit.code, Some(0));
    let merged = merge_series(&p);
    let max_cycles = merged.iter().map(|m| m.cycles_used).max().unwrap();
    let compute: Vec<u64> =
        merged.iter().filter(|m| m.bytes_written == 0 && m.cycles_used * 2 >= max_cycles).map(|m| m.index).collect();
    let write: Vec<u64> = merged.iter().filter(|m| m.bytes_written >= 1 << 20).map(|m| m.index).collect();
    assert!(!compute.is_empty() && !write.is_empty(), "{merged:?}");
    assert!(compute.iter().max() < write.iter().min(), "compute {compute:?} write {write:?}");
}

#[test]
fn concurrent_phase_has_mixed_samples() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let p = run(&[MIXED, dir.path().to_str().unwrap(), "both:1.5e9:67108864"], 0.1);
    let merged = merge_series(&p);
    assert!(merged.iter().any(|m| m.cycles_used > 0 && m.bytes_written > 0), "{merged:?}");
}

#[test]
fn quick_command_yields_at_most_one_sample() {
    let p = run(&["true"], 0.1);
    assert!(p.series.cpu.len() <= 1 && p.series.mem.len() <= 1 && p.series.storage.len() <= 1);
    assert!(p.runtime < 0.5);
}

#[test]
fn exit_status_and_signals_are_recorded() {
    let p = run(&["sh", "-c", "exit 3"], 0.1);
    assert_eq!(p.exit.code, Some(3));
    let p = run(&["sh", "-c", "kill -TERM $$"], 0.1);
    assert_eq!(p.exit.signal, Some(15));
    assert!(p.notes.iter().any(|n| n.contains("signal 15")));
}

#[test]
fn launch_failures() {
    let r = profiler::profile(&["/nonexistent/cmd".to_string()], config(0.1));
    assert!(matches!(r, Err(ProfileError::Launch(LaunchError::NotFound(_)))));
    let r = profiler::profile(&[], config(0.1));
    assert!(matches!(r, Err(ProfileError::Launch(LaunchError::Empty))));
    let r = profiler::profile(&["true".to_string()], config(0.05));
    assert!(matches!(r, Err(ProfileError::InvalidConfig(_))));
}

#[test]
fn tags_and_command_are_recorded() {
    let mut c = config(0.1);
    c.tags = common::tags(&[("input", "a")]);
    let p = profiler::profile(&["sh".into(), "-c".into(), "exit   0".into()], c).unwrap();
    assert_eq!(p.command, "sh -c exit 0");
    assert_eq!(p.tags, common::tags(&[("input", "a")]));
    assert!(p.start_time > 1.0e9);
}

#[test]
fn estimated_cycles_track_cpu_time() {
    let _g = serial();
    let mut child = Command::new(SPIN).arg("2e9").stdout(std::process::Stdio::null()).spawn().unwrap();
    let pid = child.id() as i32;
    let freq = 1_000_000_000;
    let mut w = CpuWatcher::estimated(pid, freq);
    let ctx =
        WatchContext { pid, sample_period: std::time::Duration::from_millis(100), start: std::time::Instant::now() };
    w.pre_process(&ctx).unwrap();
    std::thread::sleep(std::time::Duration::from_millis(300));
    w.sample(0.3);
    let _ = child.wait();
    let out = w.output();
    let synmirror::profiler::SeriesData::Cpu(s) = out.data else { panic!() };
    // About 0.3 s of CPU time at the 1 GHz nominal rate.
    assert!((1.5e8..3.5e8).contains(&(s[0].cycles_used as f64)), "{}", s[0].cycles_used);
    assert_eq!(s[0].instructions, 0);
}
