//! The `synmirror` binary, driven as a user would.

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use serde_json::Value;

const SYNMIRROR: &str = env!("CARGO_BIN_EXE_synmirror");
const SPIN: &str = env!("CARGO_BIN_EXE_synm-spin");
const STAIRCASE: &str = env!("CARGO_BIN_EXE_synm-staircase");

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn run(store: &Path, args: &[&str]) -> Output {
    Command::new(SYNMIRROR)
        .arg("--store")
        .arg(store)
        .args(args)
        .env("SYNMIRROR_FALLBACK", "1")
        .env_remove("SYNMIRROR_DB")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout)
        .unwrap_or_else(|e| panic!("invalid JSON ({e}): {}", String::from_utf8_lossy(&o.stdout)))
}

fn profile_ids(store: &Path) -> usize {
    walk(store).into_iter().filter(|p| p.extension().is_some_and(|e| e == "profile")).count()
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    if let Ok(rd) = std::fs::read_dir(dir) {
        for e in rd.flatten() {
            let p = e.path();
            if p.is_dir() {
                out.extend(walk(&p));
            } else {
                out.push(p);
            }
        }
    }
    out
}

#[test]
fn profile_stores_and_prints_totals() {
    let _g = serial();
    let store = tempfile::tempdir().unwrap();
    let o = run(store.path(), &["profile", "--tag", "steps=1", "--", SPIN, "2e9"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.lines().any(|l| l.starts_with("profile ")));
    assert!(out.contains("cycles_used"));
    assert_eq!(profile_ids(store.path()), 1);

    let o = run(store.path(), &["--json", "profile", "--period", "0.2", "--", SPIN, "1e9"]);
    let v = json(&o);
    assert_eq!(v["exit"]["code"], 0);
    let runtime = v["runtime"].as_f64().unwrap();
    let samples = v["samples"].as_u64().unwrap() as f64;
    // Three series at 5 Hz.
    assert!((samples / 3.0 - runtime / 0.2).abs() <= 2.0, "{samples} samples over {runtime} s");
}

#[test]
fn exit_codes() {
    let store = tempfile::tempdir().unwrap();
    let s = store.path();
    assert_eq!(code(&run(s, &["profile", "--", "/nonexistent/cmd"])), 3);
    assert_eq!(profile_ids(s), 0);
    assert_eq!(code(&run(s, &["profile", "--period", "0.01", "--", "true"])), 2);
    assert_eq!(code(&run(s, &["profile"])), 2);
    assert_eq!(code(&run(s, &["bogus-subcommand"])), 2);
    // The child's failure is reported, and the profile is still kept.
    assert_eq!(code(&run(s, &["profile", "--", "sh", "-c", "exit 3"])), 13);
    assert_eq!(profile_ids(s), 1);
    assert_eq!(code(&run(s, &["emulate", "--match", "never run"])), 5);
    assert_eq!(code(&run(s, &["stats", "--match", "never run"])), 5);
    assert_eq!(code(&run(s, &["emulate", "--profile", "/nonexistent.profile"])), 1);
    assert_eq!(code(&run(s, &["emulate", "--match", "sh -c exit 3", "--write-block", "0"])), 2);
}

#[test]
fn emulate_from_file_echoes_config() {
    let _g = serial();
    let store = tempfile::tempdir().unwrap();
    let s = store.path();
    let file = s.join("w.profile");
    let fs = tempfile::tempdir().unwrap();
    let o = run(
        s,
        &[
            "profile",
            "--out",
            file.to_str().unwrap(),
            "--",
            "sh",
            "-c",
            "head -c 4000000 /dev/zero > out.bin; sync out.bin; rm out.bin",
        ],
    );
    assert_eq!(code(&o), 0);
    let o = run(
        s,
        &[
            "--json",
            "emulate",
            "--profile",
            file.to_str().unwrap(),
            "--write-block",
            "4096",
            "--fs",
            fs.path().to_str().unwrap(),
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&o);
    assert_eq!(v["config"]["io_block_size_write"], 4096);
    assert_eq!(v["config"]["fs_target"], fs.path().to_str().unwrap());
    assert!(v["tx"].as_f64().unwrap() >= 0.0);
    // Scratch files are cleaned up.
    assert_eq!(std::fs::read_dir(fs.path()).unwrap().count(), 0);
    // A report file was written next to the store.
    assert!(walk(&s.join("reports")).iter().any(|p| p.extension().is_some_and(|e| e == "report")));
}

#[test]
fn stats_over_repetitions() {
    let _g = serial();
    let store = tempfile::tempdir().unwrap();
    let s = store.path();
    for _ in 0..3 {
        assert_eq!(code(&run(s, &["profile", "--tag", "run=a", "--", SPIN, "2e8"])), 0);
    }
    assert_eq!(code(&run(s, &["profile", "--tag", "run=b", "--", SPIN, "2e8"])), 0);
    let cmd = format!("{SPIN} 2e8");
    let v = json(&run(s, &["--json", "stats", "--match", &cmd, "--tag", "run=a"]));
    assert_eq!(v["n"], 3);

    let single = json(&run(s, &["--json", "stats", "--match", &cmd, "--tag", "run=b"]));
    assert_eq!(single["n"], 1);
    for m in single["metrics"].as_array().unwrap() {
        assert_eq!(m["std"].as_f64(), Some(0.0));
    }

    // The table shows the same numbers as the JSON.
    let table = String::from_utf8(run(s, &["stats", "--match", &cmd, "--tag", "run=a"]).stdout).unwrap();
    for m in v["metrics"].as_array().unwrap() {
        let name = m["metric"].as_str().unwrap();
        let row = table.lines().find(|l| l.split_whitespace().next() == Some(name)).unwrap();
        let cols: Vec<f64> = row.split_whitespace().skip(2).map(|c| c.parse().unwrap()).collect();
        let want: Vec<f64> = ["mean", "std", "min", "max"].iter().map(|k| m[k].as_f64().unwrap()).collect();
        assert_eq!(cols, want, "{name}");
    }
}

#[test]
fn calibration_is_repeatable() {
    let _g = serial();
    let store = tempfile::tempdir().unwrap();
    let cpi = || {
        let o = run(store.path(), &["--json", "calibrate", "--kernel", "cache_resident"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        json(&o)["table"]["entries"]["cache_resident"]["cycles_per_iteration"].as_f64().unwrap()
    };
    let (a, b) = (cpi(), cpi());
    assert!((b / a - 1.0).abs() <= 0.10, "{a} vs {b}");
}

#[test]
fn stress_honours_duration() {
    let _g = serial();
    let store = tempfile::tempdir().unwrap();
    let t = Instant::now();
    let o = run(store.path(), &["--json", "stress", "--cpu", "0.5", "--duration", "2"]);
    let elapsed = t.elapsed().as_secs_f64();
    assert_eq!(code(&o), 0);
    assert!((1.9..3.5).contains(&elapsed), "{elapsed}");
    assert!((json(&o)["elapsed"].as_f64().unwrap() - 2.0).abs() < 0.5);
}

#[test]
fn stressor_load_is_visible_to_the_profiler() {
    let _g = serial();
    let store = tempfile::tempdir().unwrap();
    let o = run(
        store.path(),
        &["--json", "profile", "--", SYNMIRROR, "stress", "--cpu", "0.5", "--mem", "128M", "--duration", "3"],
    );
    let v = json(&o);
    let peak = v["totals"]["peak"].as_u64().unwrap();
    assert!(peak >= 128 << 20, "peak {peak}");
    let busy = v["derived"]["utilization"].as_f64().unwrap();
    assert!((0.4..0.6).contains(&busy), "busy fraction {busy}");
}

#[test]
fn staircase_replay_reaches_the_profiled_peak() {
    let _g = serial();
    let store = tempfile::tempdir().unwrap();
    let s = store.path();
    let step = (64u64 << 20).to_string();
    let o = run(s, &["--json", "profile", "--", STAIRCASE, &step, "4", "300"]);
    let profiled = json(&o)["totals"]["peak"].as_u64().unwrap() as f64;
    let cmd = format!("{STAIRCASE} {step} 4 300");
    let o = run(s, &["--json", "profile", "--", SYNMIRROR, "--store", s.to_str().unwrap(), "emulate", "--match", &cmd]);
    let v = json(&o);
    assert_eq!(v["exit"]["code"], 0);
    let replayed = v["totals"]["peak"].as_u64().unwrap() as f64;
    assert!((replayed / profiled - 1.0).abs() <= 0.25, "replayed {replayed} vs profiled {profiled}");
}

#[test]
fn echo_sink_reports_its_port() {
    let store = tempfile::tempdir().unwrap();
    let mut child = Command::new(SYNMIRROR)
        .arg("--store")
        .arg(store.path())
        .args(["--json", "echo-sink", "--port", "0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let v: Value = serde_json::from_str(&line).unwrap();
    let port = v["port"].as_u64().unwrap();
    assert!(port > 0);
    let addr = format!("127.0.0.1:{port}");
    let out = synmirror::emulator::network::consume(1 << 16, 1 << 12, 4096, &addr).unwrap();
    assert_eq!(out.sent, 1 << 16);
    assert_eq!(out.received, 1 << 12);
    child.kill().unwrap();
    let _ = child.wait();
}

#[test]
fn every_json_output_parses() {
    let store = tempfile::tempdir().unwrap();
    let s = store.path();
    json(&run(s, &["--json", "profile", "--", "true"]));
    json(&run(s, &["--json", "stats", "--match", "true"]));
    let fs = tempfile::tempdir().unwrap();
    json(&run(s, &["--json", "emulate", "--match", "true", "--fs", fs.path().to_str().unwrap()]));
    let t = Instant::now();
    json(&run(s, &["--json", "stress", "--duration", "0.2"]));
    assert!(t.elapsed() < Duration::from_secs(5));
}
