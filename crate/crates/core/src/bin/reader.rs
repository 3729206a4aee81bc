//! Sequential reader.
//!
//! Usage: synm-reader PATH [BYTES] [BLOCK] [--drop-cache]
//!
//! Reads BYTES (default: the whole file). `--drop-cache` asks the kernel to
//! evict the file from the page cache first so the reads reach the device.

use std::fs::File;
use std::io::Read;
use std::os::fd::AsRawFd;
use std::process::ExitCode;

fn run(path: &str, limit: Option<u64>, block: usize, drop_cache: bool) -> std::io::Result<u64> {
    let mut f = File::open(path)?;
    if drop_cache {
        // SAFETY: advisory call on an open descriptor.
        unsafe { libc::posix_fadvise(f.as_raw_fd(), 0, 0, libc::POSIX_FADV_DONTNEED) };
    }
    let limit = limit.unwrap_or(u64::MAX);
    let mut buf = vec![0u8; block];
    let mut done = 0u64;
    while done < limit {
        let want = (limit - done).min(block as u64) as usize;
        let n = f.read(&mut buf[..want])?;
        if n == 0 {
            break;
        }
        done += n as u64;
    }
    Ok(done)
}

fn main() -> ExitCode {
    let mut drop_cache = false;
    let mut pos = Vec::new();
    for a in std::env::args().skip(1) {
        if a == "--drop-cache" {
            drop_cache = true;
        } else {
            pos.push(a);
        }
    }
    let Some(path) = pos.first() else {
        eprintln!("usage: synm-reader PATH [BYTES] [BLOCK] [--drop-cache]");
        return ExitCode::from(2);
    };
    let limit = pos.get(1).filter(|s| s.as_str() != "all").map(|s| s.parse::<u64>());
    let block = pos.get(2).map_or(Ok(1 << 20), |s| s.parse::<usize>());
    let (Ok(limit), Ok(block)) = (limit.transpose(), block) else {
        eprintln!("BYTES and BLOCK must be integers");
        return ExitCode::from(2);
    };
    match run(path, limit, block.max(1), drop_cache) {
        Ok(done) => {
            println!("SELFREPORT kind=reader bytes={done} block={block}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("synm-reader: {path}: {e}");
            ExitCode::FAILURE
        }
    }
}
