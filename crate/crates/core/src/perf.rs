//! Minimal `perf_event_open(2)` counting wrapper.
//!
//! Only counting mode is used: each counter is an individual fd read with
//! `TOTAL_TIME_ENABLED | TOTAL_TIME_RUNNING` so multiplexed values can be
//! scaled.

use std::io;
use std::os::fd::{AsRawFd, FromRawFd, OwnedFd};

const PERF_TYPE_HARDWARE: u32 = 0;

const FLAG_DISABLED: u64 = 1 << 0;
const FLAG_INHERIT: u64 = 1 << 1;
const FLAG_EXCLUDE_KERNEL: u64 = 1 << 5;
const FLAG_EXCLUDE_HV: u64 = 1 << 6;
const FLAG_ENABLE_ON_EXEC: u64 = 1 << 12;

const FORMAT_TOTAL_TIME_ENABLED: u64 = 1 << 0;
const FORMAT_TOTAL_TIME_RUNNING: u64 = 1 << 1;

const PERF_FLAG_FD_CLOEXEC: libc::c_ulong = 1 << 3;

const IOC_ENABLE: libc::c_ulong = 0x2400;
const IOC_DISABLE: libc::c_ulong = 0x2401;
const IOC_RESET: libc::c_ulong = 0x2403;

#[repr(C)]
#[derive(Default)]
struct PerfEventAttr {
    type_: u32,
    size: u32,
    config: u64,
    sample_period: u64,
    sample_type: u64,
    read_format: u64,
    flags: u64,
    wakeup_events: u32,
    bp_type: u32,
    config1: u64,
    config2: u64,
    branch_sample_type: u64,
    sample_regs_user: u64,
    sample_stack_user: u32,
    clockid: i32,
    sample_regs_intr: u64,
    aux_watermark: u32,
    sample_max_stack: u16,
    reserved_2: u16,
    aux_sample_size: u32,
    reserved_3: u32,
    sig_data: u64,
}

const _: () = assert!(std::mem::size_of::<PerfEventAttr>() == 128);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HwEvent {
    Cycles,
    Instructions,
    StalledFrontend,
    StalledBackend,
}

impl HwEvent {
    fn config(self) -> u64 {
        match self {
            HwEvent::Cycles => 0,
            HwEvent::Instructions => 1,
            HwEvent::StalledFrontend => 7,
            HwEvent::StalledBackend => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HwEvent::Cycles => "cycles",
            HwEvent::Instructions => "instructions",
            HwEvent::StalledFrontend => "stalled-cycles-frontend",
            HwEvent::StalledBackend => "stalled-cycles-backend",
        }
    }
}

/// What the counter is attached to.
#[derive(Debug, Clone, Copy)]
pub enum Target {
    /// The calling thread, counting immediately.
    CurrentThread,
    /// A freshly forked process that has not exec'd yet; counting starts at
    /// exec and follows its threads and children.
    PausedChild(libc::pid_t),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RawReading {
    pub value: u64,
    pub time_enabled: u64,
    pub time_running: u64,
}

impl RawReading {
    /// Value extrapolated over the time the counter was enabled, plus
    /// whether extrapolation happened.
    pub fn scaled(&self) -> (u64, bool) {
        if self.time_running == 0 {
            return (0, self.time_enabled > 0);
        }
        if self.time_running >= self.time_enabled {
            return (self.value, false);
        }
        let v = self.value as u128 * self.time_enabled as u128 / self.time_running as u128;
        (v.min(u64::MAX as u128) as u64, true)
    }
}

#[derive(Debug)]
pub struct Counter {
    fd: OwnedFd,
    event: HwEvent,
}

impl Counter {
    /// Opens a counter, first including kernel-mode cycles and falling back to
    /// user-only counting where the kernel forbids it.
    pub fn open(event: HwEvent, target: Target) -> io::Result<Counter> {
        let mut last_err = None;
        for exclude in [0, FLAG_EXCLUDE_HV, FLAG_EXCLUDE_KERNEL | FLAG_EXCLUDE_HV] {
            match Self::open_with(event, target, exclude) {
                Ok(c) => return Ok(c),
                Err(e) if matches!(e.raw_os_error(), Some(libc::EACCES) | Some(libc::EPERM)) => last_err = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last_err.unwrap_or_else(|| io::Error::from_raw_os_error(libc::EACCES)))
    }

    fn open_with(event: HwEvent, target: Target, exclude: u64) -> io::Result<Counter> {
        let mut attr = PerfEventAttr {
            type_: PERF_TYPE_HARDWARE,
            size: std::mem::size_of::<PerfEventAttr>() as u32,
            config: event.config(),
            read_format: FORMAT_TOTAL_TIME_ENABLED | FORMAT_TOTAL_TIME_RUNNING,
            ..Default::default()
        };
        let pid = match target {
            Target::CurrentThread => {
                attr.flags = exclude;
                0
            }
            Target::PausedChild(pid) => {
                attr.flags = FLAG_DISABLED | FLAG_INHERIT | FLAG_ENABLE_ON_EXEC | exclude;
                pid
            }
        };
        // SAFETY: attr is a properly sized, zero-padded perf_event_attr.
        let fd = unsafe {
            libc::syscall(
                libc::SYS_perf_event_open,
                &mut attr as *mut PerfEventAttr,
                pid,
                -1 as libc::c_int,
                -1 as libc::c_int,
                PERF_FLAG_FD_CLOEXEC,
            )
        };
        if fd < 0 {
            return Err(io::Error::last_os_error());
        }
        // SAFETY: the syscall returned a fresh descriptor we now own.
        let fd = unsafe { OwnedFd::from_raw_fd(fd as libc::c_int) };
        Ok(Counter { fd, event })
    }

    pub fn event(&self) -> HwEvent {
        self.event
    }

    pub fn read(&self) -> io::Result<RawReading> {
        let mut buf = [0u64; 3];
        // SAFETY: buf is 24 writable bytes.
        let n = unsafe { libc::read(self.fd.as_raw_fd(), buf.as_mut_ptr().cast(), 24) };
        if n < 0 {
            return Err(io::Error::last_os_error());
        }
        if n != 24 {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "short counter read"));
        }
        Ok(RawReading { value: buf[0], time_enabled: buf[1], time_running: buf[2] })
    }

    fn ioctl(&self, req: libc::c_ulong) -> io::Result<()> {
        // SAFETY: perf ioctls without argument on an owned perf fd.
        if unsafe { libc::ioctl(self.fd.as_raw_fd(), req as _, 0) } < 0 {
            return Err(io::Error::last_os_error());
        }
        Ok(())
    }

    pub fn reset(&self) -> io::Result<()> {
        self.ioctl(IOC_RESET)
    }

    pub fn enable(&self) -> io::Result<()> {
        self.ioctl(IOC_ENABLE)
    }

    pub fn disable(&self) -> io::Result<()> {
        self.ioctl(IOC_DISABLE)
    }
}

/// Cycle and instruction counters on the calling thread.
#[derive(Debug)]
pub struct ThreadCounters {
    cycles: Counter,
    instructions: Option<Counter>,
}

impl ThreadCounters {
    pub fn open() -> io::Result<Self> {
        let cycles = Counter::open(HwEvent::Cycles, Target::CurrentThread)?;
        let instructions = Counter::open(HwEvent::Instructions, Target::CurrentThread).ok();
        Ok(ThreadCounters { cycles, instructions })
    }

    /// Scaled (cycles, instructions) since open.
    pub fn read(&self) -> io::Result<(u64, u64)> {
        let c = self.cycles.read()?.scaled().0;
        let i = match &self.instructions {
            Some(i) => i.read()?.scaled().0,
            None => 0,
        };
        Ok((c, i))
    }
}

/// True when a hardware cycle counter can be opened on this host.
pub fn hardware_counters_available() -> bool {
    Counter::open(HwEvent::Cycles, Target::CurrentThread).is_ok()
}
