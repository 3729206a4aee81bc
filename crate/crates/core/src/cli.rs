//! Command-line front end.
//!
//! Exit codes:
//!
//! | code   | meaning                                                   |
//! |--------|-----------------------------------------------------------|
//! | 0      | success                                                   |
//! | 1      | other failure (store I/O, unreadable profile file, ...)   |
//! | 2      | bad flags                                                 |
//! | 3      | the target command could not be launched                  |
//! | 4      | hardware counters unavailable and no fallback requested   |
//! | 5      | no stored profile matches                                 |
//! | 6      | emulation error                                           |
//! | 10 + n | profiled command exited with status n (profile is saved)  |
//!
//! A profiled command killed by signal `s` maps to `10 + 128 + s`; codes are
//! capped at 255.

use std::ffi::OsString;
use std::io::{BufReader, Write};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::emulator::{
    self, calibration::CalibrationTable, compute, kernels, AtomConfig, CycleMeter, StressConfig, StressHandle,
    WorkerMode,
};
use crate::model::{aggregate_stats, parse_tag, Profile, ProfileKey, Tags};
use crate::profiler::{self, ProfileError, ProfilerConfig};
use crate::store::{self, Store, StoreLocation};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_LAUNCH: i32 = 3;
pub const EXIT_CAPABILITY: i32 = 4;
pub const EXIT_NO_MATCH: i32 = 5;
pub const EXIT_EMULATION: i32 = 6;
pub const EXIT_CHILD_BASE: i32 = 10;

#[derive(Debug, Parser)]
#[command(name = "synmirror", version, about = "Profile a command once, replay its resource consumption anywhere")]
struct Cli {
    /// Profile store: a directory or a database URL [env: SYNMIRROR_DB, SYNMIRROR_STORE]
    #[arg(long, global = true, value_name = "PATH|URL")]
    store: Option<String>,
    /// More log output on standard error (repeatable)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Print a single JSON document on standard output (a profiled
    /// command's own output then goes to standard error)
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a command under the profiler and store its profile
    Profile(ProfileArgs),
    /// Replay a stored profile with the emulation atoms
    Emulate(EmulateArgs),
    /// Statistics over all stored profiles of a command and tag set
    Stats(StatsArgs),
    /// Measure cycles per iteration of compute kernels on this host
    Calibrate(CalibrateArgs),
    /// Apply background CPU, memory and disk load
    Stress(StressArgs),
    /// Serve as the endpoint of the network atom
    EchoSink(EchoSinkArgs),
}

fn parse_tag_arg(s: &str) -> Result<(String, String), String> {
    parse_tag(s).map_err(|e| e.to_string())
}

/// Parses a byte count such as `4096`, `64K`, `4KiB`, `1.5M` or `2G`
/// (binary multiples).
pub fn parse_bytes(s: &str) -> Result<u64, String> {
    let t = s.trim();
    let split = t.find(|c: char| c.is_ascii_alphabetic()).unwrap_or(t.len());
    let (num, unit) = t.split_at(split);
    let mult: u64 = match unit.to_ascii_lowercase().as_str() {
        "" | "b" => 1,
        "k" | "kb" | "kib" => 1 << 10,
        "m" | "mb" | "mib" => 1 << 20,
        "g" | "gb" | "gib" => 1 << 30,
        "t" | "tb" | "tib" => 1 << 40,
        _ => return Err(format!("unknown size unit in {s:?}")),
    };
    let v: f64 = num.trim().parse().map_err(|_| format!("{s:?} is not a byte count"))?;
    if !(v >= 0.0) || !v.is_finite() {
        return Err(format!("{s:?} is not a byte count"));
    }
    Ok((v * mult as f64).round() as u64)
}

fn parse_block(s: &str) -> Result<usize, String> {
    match parse_bytes(s)? {
        0 => Err("block sizes must be at least 1 byte".into()),
        n => Ok(n as usize),
    }
}

fn parse_fraction(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(f) if (0.0..=1.0).contains(&f) => Ok(f),
        _ => Err(format!("{s:?} is not a fraction in [0, 1]")),
    }
}

fn parse_mode(s: &str) -> Result<WorkerMode, String> {
    match s {
        "shared" => Ok(WorkerMode::SharedMemory),
        "process" => Ok(WorkerMode::SeparateProcess),
        other => other.parse(),
    }
}

#[derive(Debug, Args)]
struct KeyArgs {
    /// Tag as key=value (repeatable)
    #[arg(long = "tag", value_name = "KEY=VALUE", value_parser = parse_tag_arg)]
    tags: Vec<(String, String)>,
}

impl KeyArgs {
    fn tags(&self) -> Tags {
        self.tags.iter().cloned().collect()
    }
}

#[derive(Debug, Args)]
struct ProfileArgs {
    #[command(flatten)]
    key: KeyArgs,
    /// Seconds between samples (minimum 0.1) [env: SYNMIRROR_SAMPLE_PERIOD, default: 1.0]
    #[arg(long, value_name = "SECONDS")]
    period: Option<f64>,
    /// Write the profile to this file instead of the store
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Estimate cycles from CPU time when hardware counters are unavailable [env: SYNMIRROR_FALLBACK=1]
    #[arg(long)]
    fallback_counters: bool,
    /// Command line to profile (after `--`)
    #[arg(last = true, required = true, value_name = "COMMAND")]
    command: Vec<String>,
}

#[derive(Debug, Args)]
struct SelectArgs {
    /// Profile file to replay
    #[arg(long, value_name = "FILE", conflicts_with_all = ["id", "command"])]
    profile: Option<PathBuf>,
    /// Stored profile id
    #[arg(long, value_name = "ID", conflicts_with = "command")]
    id: Option<String>,
    /// Command line whose newest stored profile is replayed
    #[arg(long = "match", value_name = "COMMAND")]
    command: Option<String>,
    #[command(flatten)]
    key: KeyArgs,
}

#[derive(Debug, Args)]
struct EmulateArgs {
    #[command(flatten)]
    select: SelectArgs,
    /// Compute kernel: cache_resident, cache_exceeding or a plugin name
    #[arg(long, default_value = emulator::CACHE_RESIDENT)]
    kernel: String,
    /// Compute workers
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    workers: u32,
    /// Worker mode: shared (threads) or process
    #[arg(long, default_value = "shared", value_parser = parse_mode)]
    mode: WorkerMode,
    /// Read request size
    #[arg(long, default_value = "64K", value_parser = parse_block)]
    read_block: usize,
    /// Write request size
    #[arg(long, default_value = "64K", value_parser = parse_block)]
    write_block: usize,
    /// Memory allocation block size
    #[arg(long, default_value = "64M", value_parser = parse_block)]
    mem_block: usize,
    /// Directory for scratch files
    #[arg(long = "fs", value_name = "PATH")]
    fs_target: Option<PathBuf>,
    /// Network endpoint (host:port) checked before replay
    #[arg(long, value_name = "HOST:PORT")]
    network: Option<String>,
    /// Directory holding plugin kernels [env: SYNMIRROR_PLUGIN_DIR]
    #[arg(long, value_name = "DIR")]
    plugin_dir: Option<PathBuf>,
    /// Background CPU load per core during replay
    #[arg(long, value_name = "FRACTION", value_parser = parse_fraction)]
    stress_cpu: Option<f64>,
    /// Background memory held during replay
    #[arg(long, value_name = "BYTES", value_parser = parse_bytes)]
    stress_mem: Option<u64>,
    /// Background write rate during replay, bytes per second
    #[arg(long, value_name = "BYTES", value_parser = parse_bytes)]
    stress_disk: Option<u64>,
    /// Write the emulation report here
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    /// Command line of the profiles
    #[arg(long = "match", value_name = "COMMAND")]
    command: String,
    #[command(flatten)]
    key: KeyArgs,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    /// Kernel to calibrate (repeatable; default: both built-ins)
    #[arg(long = "kernel")]
    kernels: Vec<String>,
    /// Directory holding plugin kernels
    #[arg(long, value_name = "DIR")]
    plugin_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StressArgs {
    /// Busy fraction of each loaded core
    #[arg(long, default_value_t = 0.0, value_parser = parse_fraction)]
    cpu: f64,
    /// Number of cores to load (default: all)
    #[arg(long)]
    cores: Option<usize>,
    /// Memory to hold
    #[arg(long, default_value = "0", value_parser = parse_bytes)]
    mem: u64,
    /// Sustained write rate, bytes per second
    #[arg(long, default_value = "0", value_parser = parse_bytes)]
    disk_rate: u64,
    /// Seconds to run (default: until interrupted)
    #[arg(long)]
    duration: Option<f64>,
    /// Directory for the disk-load file
    #[arg(long)]
    dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EchoSinkArgs {
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Port to listen on; 0 picks a free one
    #[arg(long, default_value_t = 0)]
    port: u16,
}

/// A failure mapped to an exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl std::fmt::Display) -> Self {
        Failure { code, message: message.to_string() }
    }
}

type CmdResult = Result<i32, Failure>;

struct Ctx {
    store: Option<String>,
    json: bool,
}

impl Ctx {
    fn location(&self) -> StoreLocation {
        match &self.store {
            Some(s) => StoreLocation::parse(s),
            None => StoreLocation::from_env(),
        }
    }

    fn open_store(&self) -> Result<Store, Failure> {
        Store::open(&self.location()).map_err(|e| Failure::new(EXIT_FAILURE, e))
    }

    /// Calibration lives next to the profiles of a directory store.
    fn calibration_path(&self) -> PathBuf {
        match self.location() {
            StoreLocation::Dir(d) => d.join("calibration.json"),
            StoreLocation::Url(_) => emulator::default_calibration_path(),
        }
    }

    fn print_json(&self, v: &serde_json::Value) {
        println!("{}", serde_json::to_string_pretty(v).expect("json values serialize"));
    }
}

static INTERRUPTED: AtomicBool = AtomicBool::new(false);

extern "C" fn on_signal(_: libc::c_int) {
    INTERRUPTED.store(true, Ordering::SeqCst);
}

/// Routes SIGINT and SIGTERM to a flag so long-running commands can clean up.
fn catch_interrupts() {
    // SAFETY: installing an async-signal-safe handler that only stores to an
    // atomic.
    unsafe {
        let mut sa: libc::sigaction = std::mem::zeroed();
        sa.sa_sigaction = on_signal as *const () as usize;
        libc::sigemptyset(&mut sa.sa_mask);
        libc::sigaction(libc::SIGINT, &sa, std::ptr::null_mut());
        libc::sigaction(libc::SIGTERM, &sa, std::ptr::null_mut());
    }
}

fn child_exit_code(p: &Profile) -> i32 {
    match (p.exit.code, p.exit.signal) {
        (Some(0), None) => EXIT_OK,
        (Some(n), _) => (EXIT_CHILD_BASE + n).min(255),
        (None, Some(s)) => (EXIT_CHILD_BASE + 128 + s).min(255),
        (None, None) => EXIT_FAILURE,
    }
}

fn totals_table(p: &Profile) -> String {
    let mut s = format!(
        "command      {}\nruntime      {:.3} s\nsamples      {} (period {} s)\ncounters     {:?}\n",
        p.command,
        p.runtime,
        p.sample_count(),
        p.sample_period,
        p.counter_source
    );
    for (name, v) in p.totals.metrics() {
        s.push_str(&format!("{name:<24} {v:>20}\n"));
    }
    s.push_str(&format!(
        "{:<24} {:>20.4}\n{:<24} {:>20.4}\n",
        "efficiency", p.derived.efficiency, "utilization", p.derived.utilization
    ));
    s
}

fn cmd_profile(ctx: &Ctx, a: ProfileArgs) -> CmdResult {
    let mut config = ProfilerConfig::from_env().map_err(|e| Failure::new(EXIT_USAGE, e))?;
    if let Some(p) = a.period {
        config.sample_period = p;
    }
    config.fallback_counters |= a.fallback_counters;
    config.stdout_to_stderr = ctx.json;
    config.tags = a.key.tags();
    config.validate().map_err(|e| Failure::new(EXIT_USAGE, e))?;

    let profile = profiler::profile(&a.command, config).map_err(|e| match e {
        ProfileError::InvalidConfig(_) => Failure::new(EXIT_USAGE, e),
        ProfileError::Launch(_) => Failure::new(EXIT_LAUNCH, e),
        ProfileError::Capability(_) => Failure::new(EXIT_CAPABILITY, e),
        ProfileError::Io(_) => Failure::new(EXIT_FAILURE, e),
    })?;

    let id = match &a.out {
        Some(path) => {
            std::fs::write(path, store::encode(&profile))
                .map_err(|e| Failure::new(EXIT_FAILURE, format!("{}: {e}", path.display())))?;
            path.display().to_string()
        }
        None => ctx.open_store()?.save(&profile).map_err(|e| Failure::new(EXIT_FAILURE, e))?,
    };
    for n in &profile.notes {
        log::info!("note: {n}");
    }
    if ctx.json {
        ctx.print_json(&json!({
            "id": id,
            "command": profile.command,
            "tags": profile.tags,
            "runtime": profile.runtime,
            "samples": profile.sample_count(),
            "counter_source": profile.counter_source,
            "exit": profile.exit,
            "totals": profile.totals,
            "derived": profile.derived,
            "notes": profile.notes,
        }));
    } else {
        println!("profile {id}");
        print!("{}", totals_table(&profile));
    }
    let code = child_exit_code(&profile);
    if code != EXIT_OK {
        eprintln!("synmirror: profiled command failed; profile saved as {id}");
    }
    Ok(code)
}

fn select_profile(ctx: &Ctx, s: &SelectArgs) -> Result<Profile, Failure> {
    if let Some(path) = &s.profile {
        let text = std::fs::read(path).map_err(|e| Failure::new(EXIT_FAILURE, format!("{}: {e}", path.display())))?;
        return store::decode(&text, &path.display().to_string()).map_err(|e| Failure::new(EXIT_FAILURE, e));
    }
    let store = ctx.open_store()?;
    if let Some(id) = &s.id {
        return store.load(id).map_err(|e| match e {
            store::StoreError::NotFound(_) => Failure::new(EXIT_NO_MATCH, e),
            e => Failure::new(EXIT_FAILURE, e),
        });
    }
    let Some(command) = &s.command else {
        return Err(Failure::new(EXIT_USAGE, "one of --profile, --id or --match is required"));
    };
    let key = ProfileKey::new(command, s.key.tags());
    let found = store.find_with_ids(&key).map_err(|e| Failure::new(EXIT_FAILURE, e))?;
    match found.into_iter().next() {
        Some((id, p)) => {
            log::info!("replaying newest matching profile {id}");
            Ok(p)
        }
        None => Err(Failure::new(EXIT_NO_MATCH, format!("no stored profile matches {key} in {}", ctx.location()))),
    }
}

fn cmd_emulate(ctx: &Ctx, a: EmulateArgs) -> CmdResult {
    let profile = select_profile(ctx, &a.select)?;
    let fs_target = a.fs_target.clone().unwrap_or_else(std::env::temp_dir);
    let stress = (a.stress_cpu.is_some() || a.stress_mem.is_some() || a.stress_disk.is_some()).then(|| StressConfig {
        cpu_fraction: a.stress_cpu.unwrap_or(0.0),
        mem_bytes: a.stress_mem.unwrap_or(0),
        disk_rate: a.stress_disk.unwrap_or(0),
        dir: fs_target.clone(),
        ..Default::default()
    });
    let config = AtomConfig {
        compute_kernel: a.kernel,
        compute_workers: a.workers as usize,
        worker_mode: a.mode,
        io_block_size_read: a.read_block,
        io_block_size_write: a.write_block,
        fs_target,
        mem_block_size: a.mem_block,
        network_endpoint: a.network,
        plugin_dir: a.plugin_dir,
        calibration_path: Some(ctx.calibration_path()),
        worker_exe: None,
        stress,
    };
    let report = emulator::emulate(&profile, &config).map_err(|e| Failure::new(EXIT_EMULATION, e))?;
    if let Some(path) = report_path(ctx, &a.report, &profile) {
        match std::fs::write(&path, report.to_json()) {
            Ok(()) => log::info!("report written to {}", path.display()),
            Err(e) => return Err(Failure::new(EXIT_FAILURE, format!("{}: {e}", path.display()))),
        }
    }
    if ctx.json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.summary());
    }
    Ok(EXIT_OK)
}

/// Explicit path, else `<store dir>/reports/<key hash>-<nanos>.report` for
/// directory stores.
fn report_path(ctx: &Ctx, explicit: &Option<PathBuf>, profile: &Profile) -> Option<PathBuf> {
    if let Some(p) = explicit {
        return Some(p.clone());
    }
    let StoreLocation::Dir(dir) = ctx.location() else { return None };
    let dir = dir.join("reports");
    std::fs::create_dir_all(&dir).ok()?;
    let nanos = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).ok()?.as_nanos();
    Some(dir.join(format!("{}-{nanos}.report", store::key_hash(&profile.key()))))
}

fn cmd_stats(ctx: &Ctx, a: StatsArgs) -> CmdResult {
    let key = ProfileKey::new(&a.command, a.key.tags());
    let profiles = ctx.open_store()?.find(&key).map_err(|e| Failure::new(EXIT_FAILURE, e))?;
    if profiles.is_empty() {
        return Err(Failure::new(EXIT_NO_MATCH, format!("no stored profile matches {key}")));
    }
    let stats = aggregate_stats(&profiles).map_err(|e| Failure::new(EXIT_FAILURE, e))?;
    if ctx.json {
        ctx.print_json(&serde_json::to_value(&stats).expect("stats serialize"));
    } else {
        println!("{key}  n={}", stats.n);
        println!("{:<24} {:>6} {:>24} {:>24} {:>24} {:>24}", "metric", "n", "mean", "std", "min", "max");
        for m in &stats.metrics {
            // Shortest round-trip formatting keeps the table exact.
            println!("{:<24} {:>6} {:>24} {:>24} {:>24} {:>24}", m.metric, stats.n, m.mean, m.std, m.min, m.max);
        }
    }
    Ok(EXIT_OK)
}

fn cmd_calibrate(ctx: &Ctx, a: CalibrateArgs) -> CmdResult {
    let names = if a.kernels.is_empty() {
        vec![emulator::CACHE_RESIDENT.to_string(), emulator::CACHE_EXCEEDING.to_string()]
    } else {
        a.kernels
    };
    let path = ctx.calibration_path();
    let host = crate::host::host_id();
    let mut table = match CalibrationTable::load(&path) {
        Ok(Some(t)) if t.host_id == host => t,
        _ => CalibrationTable::new(&host),
    };
    let freq = crate::host::max_cpu_freq();
    let meter = CycleMeter::for_current_thread(freq);
    let plugin_dir = a.plugin_dir.unwrap_or_else(kernels::default_plugin_dir);
    for name in &names {
        let kernel = kernels::kernel_by_name(name, &plugin_dir).map_err(|e| Failure::new(EXIT_FAILURE, e))?;
        let entry = emulator::calibrate(kernel.as_ref(), &meter, freq).map_err(|e| Failure::new(EXIT_FAILURE, e))?;
        table.insert(entry);
    }
    table.save(&path).map_err(|e| Failure::new(EXIT_FAILURE, e))?;
    if ctx.json {
        ctx.print_json(&json!({ "path": path, "table": table }));
    } else {
        println!("calibration table {} (host {})", path.display(), table.host_id);
        println!("{:<20} {:>16} {:>12} {:>10} {:>12}", "kernel", "cycles/iter", "std", "ipc", "flops/iter");
        for e in table.entries.values() {
            let ipc = e.ipc().map_or("-".to_string(), |v| format!("{v:.3}"));
            println!(
                "{:<20} {:>16.1} {:>12.1} {:>10} {:>12}",
                e.kernel, e.cycles_per_iteration, e.cycles_per_iteration_std, ipc, e.flops_per_iteration
            );
        }
    }
    Ok(EXIT_OK)
}

fn cmd_stress(ctx: &Ctx, a: StressArgs) -> CmdResult {
    if let Some(d) = a.duration {
        if !(d >= 0.0) {
            return Err(Failure::new(EXIT_USAGE, "--duration must be non-negative"));
        }
    }
    let config = StressConfig {
        cpu_fraction: a.cpu,
        cores: a.cores,
        mem_bytes: a.mem,
        disk_rate: a.disk_rate,
        duration: None,
        dir: a.dir.unwrap_or_else(std::env::temp_dir),
    };
    catch_interrupts();
    let start = Instant::now();
    let end = a.duration.map(|d| start + Duration::from_secs_f64(d));
    let handle = StressHandle::start(&config);
    while !INTERRUPTED.load(Ordering::SeqCst) && end.is_none_or(|e| Instant::now() < e) {
        let left = end.map_or(Duration::from_millis(50), |e| e.saturating_duration_since(Instant::now()));
        std::thread::sleep(left.min(Duration::from_millis(50)));
    }
    handle.stop();
    let elapsed = start.elapsed().as_secs_f64();
    if ctx.json {
        ctx.print_json(&json!({ "config": config, "elapsed": elapsed }));
    } else {
        println!("stress ran for {elapsed:.2} s");
    }
    Ok(EXIT_OK)
}

fn cmd_echo_sink(ctx: &Ctx, a: EchoSinkArgs) -> CmdResult {
    let sink =
        emulator::EchoSink::bind(&format!("{}:{}", a.host, a.port)).map_err(|e| Failure::new(EXIT_FAILURE, e))?;
    let addr = sink.local_addr().map_err(|e| Failure::new(EXIT_FAILURE, e))?;
    if ctx.json {
        println!("{}", json!({ "addr": addr.to_string(), "port": addr.port() }));
    } else {
        println!("listening on {addr}");
    }
    let _ = std::io::stdout().flush();
    sink.serve().map_err(|e| Failure::new(EXIT_FAILURE, e))?;
    Ok(EXIT_OK)
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_env("SYNMIRROR_LOG")
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Runs the CLI on `args` (including the program name) and returns the exit
/// code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    if args.get(1).is_some_and(|a| a == compute::WORKER_SUBCOMMAND) {
        let stdin = std::io::stdin();
        return compute::worker_main(BufReader::new(stdin.lock()), std::io::stdout().lock());
    }
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging(cli.verbose);
    let ctx = Ctx { store: cli.store, json: cli.json };
    let result = match cli.command {
        Command::Profile(a) => cmd_profile(&ctx, a),
        Command::Emulate(a) => cmd_emulate(&ctx, a),
        Command::Stats(a) => cmd_stats(&ctx, a),
        Command::Calibrate(a) => cmd_calibrate(&ctx, a),
        Command::Stress(a) => cmd_stress(&ctx, a),
        Command::EchoSink(a) => cmd_echo_sink(&ctx, a),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("synmirror: {}", f.message);
            f.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_sizes() {
        assert_eq!(parse_bytes("4096"), Ok(4096));
        assert_eq!(parse_bytes("4K"), Ok(4096));
        assert_eq!(parse_bytes("4KiB"), Ok(4096));
        assert_eq!(parse_bytes("1.5M"), Ok(3 << 19));
        assert_eq!(parse_bytes("2g"), Ok(2 << 30));
        assert!(parse_bytes("-1").is_err());
        assert!(parse_bytes("12Q").is_err());
        assert!(parse_block("0").is_err());
    }

    #[test]
    fn flags_are_validated() {
        assert_eq!(run(["synmirror", "profile", "--period", "0.01", "--", "true"]), EXIT_USAGE);
        assert_eq!(run(["synmirror", "profile", "true"]), EXIT_USAGE);
        assert_eq!(run(["synmirror", "emulate", "--workers", "0", "--match", "x"]), EXIT_USAGE);
        assert_eq!(run(["synmirror", "stress", "--cpu", "1.5"]), EXIT_USAGE);
        assert_eq!(run(["synmirror", "bogus"]), EXIT_USAGE);
        assert_eq!(run(["synmirror", "--help"]), EXIT_OK);
    }

    #[test]
    fn worker_modes() {
        assert_eq!(parse_mode("shared"), Ok(WorkerMode::SharedMemory));
        assert_eq!(parse_mode("separate_process"), Ok(WorkerMode::SeparateProcess));
        assert!(parse_mode("gpu").is_err());
    }
}
