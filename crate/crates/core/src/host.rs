//! Host facts read from the OS: core count, frequency, memory, caches.

use std::ffi::CStr;
use std::fs;

use crate::model::SystemInfo;

/// Nominal frequency used when neither sysfs nor /proc/cpuinfo report one.
const FALLBACK_FREQ_HZ: u64 = 2_000_000_000;

pub fn detect_system() -> SystemInfo {
    SystemInfo {
        core_count: core_count(),
        max_cpu_freq: max_cpu_freq(),
        total_memory: total_memory().unwrap_or(1),
        host_id: host_id(),
        os_id: os_id(),
    }
}

pub fn core_count() -> u32 {
    std::thread::available_parallelism().map(|n| n.get() as u32).unwrap_or(1)
}

/// Maximum CPU frequency in Hz: cpufreq's `cpuinfo_max_freq` when present;
/// otherwise the larger of the highest `cpu MHz` in /proc/cpuinfo and the
/// cycle rate measured with hardware counters (virtual machines often report
/// a nominal clock below the boost clock the cycle counter runs at).
/// Computed once per process.
pub fn max_cpu_freq() -> u64 {
    static FREQ: std::sync::OnceLock<u64> = std::sync::OnceLock::new();
    *FREQ.get_or_init(|| {
        let sysfs = fs::read_to_string("/sys/devices/system/cpu/cpu0/cpufreq/cpuinfo_max_freq")
            .ok()
            .and_then(|s| s.trim().parse::<u64>().ok())
            .map(|khz| khz * 1000);
        if let Some(hz) = sysfs.filter(|hz| *hz > 0) {
            return hz;
        }
        let reported = fs::read_to_string("/proc/cpuinfo").ok().and_then(|s| parse_cpuinfo_mhz(&s));
        match (reported, measured_cpu_freq()) {
            (Some(r), Some(m)) => r.max(m),
            (r, m) => r.or(m).unwrap_or(FALLBACK_FREQ_HZ),
        }
    })
}

/// Cycles per second of CPU time over a short busy loop, rounded to MHz.
/// `None` without hardware counters.
pub fn measured_cpu_freq() -> Option<u64> {
    let counters = crate::perf::ThreadCounters::open().ok()?;
    let mut best = 0.0f64;
    for _ in 0..3 {
        let (c0, _) = counters.read().ok()?;
        let t0 = thread_cpu_time();
        let mut x = 1u64;
        while thread_cpu_time() - t0 < 0.01 {
            for _ in 0..10_000 {
                x = std::hint::black_box(x.wrapping_mul(6364136223846793005).wrapping_add(1));
            }
        }
        let (c1, _) = counters.read().ok()?;
        let t1 = thread_cpu_time();
        if t1 > t0 {
            best = best.max((c1 - c0) as f64 / (t1 - t0));
        }
    }
    (best > 0.0).then(|| (best / 1e6).round() as u64 * 1_000_000)
}

fn parse_cpuinfo_mhz(cpuinfo: &str) -> Option<u64> {
    cpuinfo
        .lines()
        .filter(|l| l.starts_with("cpu MHz"))
        .filter_map(|l| l.split(':').nth(1)?.trim().parse::<f64>().ok())
        .map(|mhz| (mhz * 1e6).round() as u64)
        .max()
}

pub fn total_memory() -> Option<u64> {
    let s = fs::read_to_string("/proc/meminfo").ok()?;
    kib_field(&s, "MemTotal:")
}

pub fn available_memory() -> Option<u64> {
    let s = fs::read_to_string("/proc/meminfo").ok()?;
    kib_field(&s, "MemAvailable:")
}

/// Parses a `Name:   1234 kB` style line into bytes.
pub(crate) fn kib_field(text: &str, name: &str) -> Option<u64> {
    text.lines().find(|l| l.starts_with(name))?.split_whitespace().nth(1)?.parse::<u64>().ok().map(|kib| kib * 1024)
}

fn uname() -> Option<libc::utsname> {
    // SAFETY: utsname is plain old data and uname fills it.
    unsafe {
        let mut u: libc::utsname = std::mem::zeroed();
        (libc::uname(&mut u) == 0).then_some(u)
    }
}

fn field(chars: &[libc::c_char]) -> String {
    // SAFETY: uname fields are NUL-terminated.
    unsafe { CStr::from_ptr(chars.as_ptr()) }.to_string_lossy().into_owned()
}

pub fn host_id() -> String {
    uname().map(|u| field(&u.nodename)).unwrap_or_else(|| "unknown".into())
}

pub fn os_id() -> String {
    uname()
        .map(|u| format!("{} {} {}", field(&u.sysname), field(&u.release), field(&u.machine)))
        .unwrap_or_else(|| std::env::consts::OS.into())
}

/// Data cache sizes of cpu0 as (level-1 data, last level), in bytes.
pub fn cache_sizes() -> (usize, usize) {
    let mut l1 = 32 * 1024;
    let mut llc = (0u32, 8 * 1024 * 1024);
    let Ok(dir) = fs::read_dir("/sys/devices/system/cpu/cpu0/cache") else {
        return (l1, llc.1);
    };
    for entry in dir.flatten() {
        let p = entry.path();
        let read = |f: &str| fs::read_to_string(p.join(f)).map(|s| s.trim().to_string()).ok();
        let (Some(level), Some(kind), Some(size)) = (read("level"), read("type"), read("size")) else {
            continue;
        };
        let Ok(level) = level.parse::<u32>() else { continue };
        let Some(bytes) = parse_cache_size(&size) else { continue };
        if level == 1 && kind == "Data" {
            l1 = bytes;
        }
        if kind != "Instruction" && level >= llc.0 {
            llc = (level, bytes);
        }
    }
    (l1, llc.1)
}

fn parse_cache_size(s: &str) -> Option<usize> {
    let s = s.trim();
    let (num, mult) = match s.chars().last()? {
        'K' => (&s[..s.len() - 1], 1024),
        'M' => (&s[..s.len() - 1], 1024 * 1024),
        'G' => (&s[..s.len() - 1], 1024 * 1024 * 1024),
        _ => (s, 1),
    };
    num.parse::<usize>().ok().map(|n| n * mult)
}

/// CPU time consumed by the calling thread, in seconds.
pub fn thread_cpu_time() -> f64 {
    clock_seconds(libc::CLOCK_THREAD_CPUTIME_ID).unwrap_or(0.0)
}

pub(crate) fn clock_seconds(clock: libc::clockid_t) -> Option<f64> {
    // SAFETY: ts is a valid out-pointer.
    unsafe {
        let mut ts: libc::timespec = std::mem::zeroed();
        (libc::clock_gettime(clock, &mut ts) == 0).then_some(ts.tv_sec as f64 + ts.tv_nsec as f64 * 1e-9)
    }
}

/// CPU time (user + system) of another process, in seconds.
pub fn process_cpu_time(pid: libc::pid_t) -> Option<f64> {
    let mut clock: libc::clockid_t = 0;
    // SAFETY: clock is a valid out-pointer.
    if unsafe { libc::clock_getcpuclockid(pid, &mut clock) } == 0 {
        if let Some(t) = clock_seconds(clock) {
            return Some(t);
        }
    }
    proc_stat_cpu_time(pid)
}

fn proc_stat_cpu_time(pid: libc::pid_t) -> Option<f64> {
    let stat = fs::read_to_string(format!("/proc/{pid}/stat")).ok()?;
    // Fields after the parenthesised comm; utime and stime are fields 14 and 15.
    let rest = &stat[stat.rfind(')')? + 2..];
    let mut it = rest.split_whitespace().skip(11);
    let utime: f64 = it.next()?.parse().ok()?;
    let stime: f64 = it.next()?.parse().ok()?;
    // SAFETY: sysconf has no preconditions.
    let hz = unsafe { libc::sysconf(libc::_SC_CLK_TCK) }.max(1) as f64;
    Some((utime + stime) / hz)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cpuinfo_mhz() {
        let s = "processor\t: 0\ncpu MHz\t\t: 3295.044\nprocessor\t: 1\ncpu MHz\t\t: 2100.000\n";
        assert_eq!(parse_cpuinfo_mhz(s), Some(3_295_044_000));
        assert_eq!(parse_cpuinfo_mhz("nothing"), None);
    }

    #[test]
    fn cache_size_units() {
        assert_eq!(parse_cache_size("32K"), Some(32 * 1024));
        assert_eq!(parse_cache_size("16M"), Some(16 << 20));
        assert_eq!(parse_cache_size("512"), Some(512));
        assert_eq!(parse_cache_size("x"), None);
    }

    #[test]
    fn kib_fields() {
        let s = "VmHWM:\t  2048 kB\nVmRSS:\t  1024 kB\n";
        assert_eq!(kib_field(s, "VmRSS:"), Some(1024 * 1024));
        assert_eq!(kib_field(s, "VmSwap:"), None);
    }

    #[test]
    fn detected_system_is_sane() {
        let s = detect_system();
        assert!(s.core_count >= 1);
        assert!(s.max_cpu_freq > 0);
        assert!(s.total_memory > 0);
        let (l1, llc) = cache_sizes();
        assert!(l1 > 0 && llc >= l1);
    }

    #[test]
    fn own_cpu_time_is_readable() {
        let pid = std::process::id() as libc::pid_t;
        assert!(process_cpu_time(pid).is_some());
        assert!(proc_stat_cpu_time(pid).is_some());
        assert!(thread_cpu_time() >= 0.0);
    }
}
