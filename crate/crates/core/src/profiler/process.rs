//! Launching the profiled command and reaping it.
//!
//! The child is forked and parked on a pipe before `execv`, so counters can be
//! attached with enable-on-exec before the target runs a single instruction.
//! Between fork and exec the child only makes async-signal-safe calls.

use std::ffi::{CString, OsStr};
use std::io;
use std::os::unix::ffi::OsStrExt;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime};

use crate::model::ExitInfo;

pub type Pid = libc::pid_t;

#[derive(Debug, thiserror::Error)]
pub enum LaunchError {
    #[error("empty command line")]
    Empty,
    #[error("command not found: {0}")]
    NotFound(String),
    #[error("{0} is not executable")]
    NotExecutable(String),
    #[error("argument contains a NUL byte")]
    Nul,
    #[error("failed to exec {command}: {source}")]
    Exec { command: String, source: io::Error },
    #[error("fork failed: {0}")]
    Os(#[from] io::Error),
}

/// Resolves `program` against `PATH` the way a shell would.
pub fn resolve_program(program: &str) -> Result<PathBuf, LaunchError> {
    let check = |p: &Path| -> Result<PathBuf, LaunchError> {
        let meta = std::fs::metadata(p).map_err(|_| LaunchError::NotFound(program.to_string()))?;
        if !meta.is_file() || meta.permissions().mode() & 0o111 == 0 {
            return Err(LaunchError::NotExecutable(p.display().to_string()));
        }
        Ok(p.to_path_buf())
    };
    if program.contains('/') {
        return check(Path::new(program));
    }
    let path = std::env::var_os("PATH").unwrap_or_else(|| "/usr/local/bin:/usr/bin:/bin".into());
    for dir in std::env::split_paths(&path) {
        let candidate = dir.join(program);
        if candidate.is_file() {
            if let Ok(p) = check(&candidate) {
                return Ok(p);
            }
        }
    }
    Err(LaunchError::NotFound(program.to_string()))
}

fn cstring(s: &OsStr) -> Result<CString, LaunchError> {
    CString::new(s.as_bytes()).map_err(|_| LaunchError::Nul)
}

fn pipe() -> io::Result<(libc::c_int, libc::c_int)> {
    let mut fds = [0; 2];
    // SAFETY: fds is a valid two-element array.
    if unsafe { libc::pipe2(fds.as_mut_ptr(), libc::O_CLOEXEC) } < 0 {
        return Err(io::Error::last_os_error());
    }
    Ok((fds[0], fds[1]))
}

fn close(fd: libc::c_int) {
    // SAFETY: closing a descriptor we own.
    unsafe { libc::close(fd) };
}

/// A forked child waiting for [`PausedChild::release`] before it execs.
#[derive(Debug)]
pub struct PausedChild {
    pid: Pid,
    command: String,
    go: libc::c_int,
    exec_err: libc::c_int,
}

/// A running child, owned by exactly one supervisor that reaps it once.
#[derive(Debug)]
pub struct ProcessHandle {
    pub pid: Pid,
    pub started: Instant,
    pub started_wall: SystemTime,
    reaped: bool,
}

/// Forks `argv` into a parked child placed in its own process group. The
/// environment is inherited unchanged. With `stdout_to_stderr` the child's
/// standard output is pointed at the parent's standard error.
pub fn spawn_paused(argv: &[String], stdout_to_stderr: bool) -> Result<PausedChild, LaunchError> {
    let program = argv.first().ok_or(LaunchError::Empty)?;
    let path = cstring(resolve_program(program)?.as_os_str())?;
    let args: Vec<CString> = argv.iter().map(|a| cstring(OsStr::new(a))).collect::<Result<_, _>>()?;
    let mut arg_ptrs: Vec<*const libc::c_char> = args.iter().map(|a| a.as_ptr()).collect();
    arg_ptrs.push(std::ptr::null());

    let (go_r, go_w) = pipe()?;
    let (err_r, err_w) = match pipe() {
        Ok(p) => p,
        Err(e) => {
            close(go_r);
            close(go_w);
            return Err(e.into());
        }
    };

    // SAFETY: the child branch below only calls async-signal-safe functions
    // on memory prepared before the fork.
    let pid = unsafe { libc::fork() };
    if pid < 0 {
        let e = io::Error::last_os_error();
        for fd in [go_r, go_w, err_r, err_w] {
            close(fd);
        }
        return Err(e.into());
    }
    if pid == 0 {
        unsafe {
            libc::close(go_w);
            libc::close(err_r);
            libc::setpgid(0, 0);
            if stdout_to_stderr {
                libc::dup2(2, 1);
            }
            let mut byte = 0u8;
            loop {
                let n = libc::read(go_r, (&mut byte as *mut u8).cast(), 1);
                if n == 1 {
                    break;
                }
                if n == 0 || *libc::__errno_location() != libc::EINTR {
                    libc::_exit(126);
                }
            }
            libc::execv(path.as_ptr(), arg_ptrs.as_ptr());
            let errno: i32 = *libc::__errno_location();
            libc::write(err_w, (&errno as *const i32).cast(), 4);
            libc::_exit(127);
        }
    }
    close(go_r);
    close(err_w);
    Ok(PausedChild { pid, command: argv.join(" "), go: go_w, exec_err: err_r })
}

impl PausedChild {
    pub fn pid(&self) -> Pid {
        self.pid
    }

    /// Lets the child exec. Returns once the exec has happened.
    pub fn release(mut self) -> Result<ProcessHandle, LaunchError> {
        let started = Instant::now();
        let started_wall = SystemTime::now();
        let byte = 1u8;
        // SAFETY: writing one byte from a valid buffer to our pipe end.
        unsafe { libc::write(self.go, (&byte as *const u8).cast(), 1) };
        close(self.go);
        self.go = -1;

        let mut errno = 0i32;
        let n = loop {
            // SAFETY: reading at most 4 bytes into errno.
            let n = unsafe { libc::read(self.exec_err, (&mut errno as *mut i32).cast(), 4) };
            if n >= 0 || io::Error::last_os_error().raw_os_error() != Some(libc::EINTR) {
                break n;
            }
        };
        close(self.exec_err);
        self.exec_err = -1;
        let pid = self.pid;
        self.pid = -1;
        if n == 4 {
            let mut handle = ProcessHandle { pid, started, started_wall, reaped: false };
            let _ = handle.reap();
            return Err(LaunchError::Exec {
                command: self.command.clone(),
                source: io::Error::from_raw_os_error(errno),
            });
        }
        Ok(ProcessHandle { pid, started, started_wall, reaped: false })
    }
}

impl Drop for PausedChild {
    fn drop(&mut self) {
        for fd in [self.go, self.exec_err] {
            if fd >= 0 {
                close(fd);
            }
        }
        if self.pid > 0 {
            // The child sees EOF on the go pipe and exits without exec.
            let mut status = 0;
            // SAFETY: reaping our own child.
            unsafe { libc::waitpid(self.pid, &mut status, 0) };
        }
    }
}

impl ProcessHandle {
    /// Blocks until the child has exited, leaving it unreaped so its /proc
    /// accounting stays readable.
    pub fn wait_exit(&self) -> io::Result<Instant> {
        loop {
            // SAFETY: info is a valid out-pointer.
            let rc = unsafe {
                let mut info: libc::siginfo_t = std::mem::zeroed();
                libc::waitid(libc::P_PID, self.pid as libc::id_t, &mut info, libc::WEXITED | libc::WNOWAIT)
            };
            if rc == 0 {
                return Ok(Instant::now());
            }
            let e = io::Error::last_os_error();
            if e.raw_os_error() != Some(libc::EINTR) {
                return Err(e);
            }
        }
    }

    /// Reaps the child and returns its accounting. Only the first call reaps.
    pub fn reap(&mut self) -> io::Result<ExitInfo> {
        if self.reaped {
            return Err(io::Error::other("process already reaped"));
        }
        let mut status = 0;
        // SAFETY: usage is a valid out-pointer.
        let mut usage: libc::rusage = unsafe { std::mem::zeroed() };
        loop {
            let rc = unsafe { libc::wait4(self.pid, &mut status, 0, &mut usage) };
            if rc == self.pid {
                break;
            }
            let e = io::Error::last_os_error();
            if e.raw_os_error() != Some(libc::EINTR) {
                return Err(e);
            }
        }
        self.reaped = true;
        let tv = |t: libc::timeval| t.tv_sec as f64 + t.tv_usec as f64 * 1e-6;
        let (code, signal) = if libc::WIFEXITED(status) {
            (Some(libc::WEXITSTATUS(status)), None)
        } else if libc::WIFSIGNALED(status) {
            (None, Some(libc::WTERMSIG(status)))
        } else {
            (None, None)
        };
        Ok(ExitInfo {
            code,
            signal,
            user_time: tv(usage.ru_utime),
            system_time: tv(usage.ru_stime),
            max_rss: usage.ru_maxrss.max(0) as u64 * 1024,
        })
    }

    pub fn kill(&self) {
        if !self.reaped {
            // SAFETY: signalling our own unreaped child.
            unsafe { libc::kill(self.pid, libc::SIGKILL) };
        }
    }
}

impl Drop for ProcessHandle {
    fn drop(&mut self) {
        if !self.reaped {
            self.kill();
            let _ = self.reap();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(a: &[&str]) -> Vec<String> {
        a.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn resolves_path_programs() {
        assert!(resolve_program("sh").unwrap().is_absolute());
        assert!(matches!(resolve_program("definitely-not-a-program-xyz"), Err(LaunchError::NotFound(_))));
        assert!(matches!(resolve_program("/nonexistent"), Err(LaunchError::NotFound(_))));
        let dir = tempfile::tempdir().unwrap();
        let plain = dir.path().join("plain");
        std::fs::write(&plain, "x").unwrap();
        std::fs::set_permissions(&plain, std::fs::Permissions::from_mode(0o644)).unwrap();
        assert!(matches!(resolve_program(plain.to_str().unwrap()), Err(LaunchError::NotExecutable(_))));
    }

    #[test]
    fn runs_and_reaps_exit_code() {
        let child = spawn_paused(&argv(&["sh", "-c", "exit 3"]), false).unwrap();
        let mut h = child.release().unwrap();
        h.wait_exit().unwrap();
        let info = h.reap().unwrap();
        assert_eq!(info.code, Some(3));
        assert!(h.reap().is_err());
    }

    #[test]
    fn signal_is_reported() {
        let child = spawn_paused(&argv(&["sh", "-c", "kill -9 $$"]), false).unwrap();
        let mut h = child.release().unwrap();
        let info = h.reap().unwrap();
        assert_eq!(info.signal, Some(9));
        assert!(!info.success());
    }

    #[test]
    fn dropped_paused_child_never_runs() {
        let dir = tempfile::tempdir().unwrap();
        let marker = dir.path().join("ran");
        let child = spawn_paused(&argv(&["sh", "-c", &format!("touch {}", marker.display())]), false).unwrap();
        drop(child);
        assert!(!marker.exists());
    }

    #[test]
    fn exec_failure_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let bogus = dir.path().join("bogus");
        std::fs::write(&bogus, [0u8, 1, 2, 3]).unwrap();
        std::fs::set_permissions(&bogus, std::fs::Permissions::from_mode(0o755)).unwrap();
        let child = spawn_paused(&[bogus.display().to_string()], false).unwrap();
        assert!(matches!(child.release(), Err(LaunchError::Exec { .. })));
    }
}
