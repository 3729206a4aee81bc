//! Scripted alternation of compute and I/O phases.
//!
//! Usage: synm-mixed DIR PHASE...
//!
//! Phases run in order:
//!   cpu:ITERATIONS          compute only
//!   write:BYTES             synchronous writes only
//!   both:ITERATIONS:BYTES   compute and writes interleaved in small slices
//!   sleep:MS                idle

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;
use std::time::Duration;

const BLOCK: usize = 1 << 20;
const SLICES: u64 = 64;

enum Phase {
    Cpu(u64),
    Write(u64),
    Both(u64, u64),
    Sleep(u64),
}

fn parse(s: &str) -> Option<Phase> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |i: usize| parts.get(i)?.parse::<f64>().ok().map(|v| v as u64);
    match parts[0] {
        "cpu" => Some(Phase::Cpu(num(1)?)),
        "write" => Some(Phase::Write(num(1)?)),
        "both" => Some(Phase::Both(num(1)?, num(2)?)),
        "sleep" => Some(Phase::Sleep(num(1)?)),
        _ => None,
    }
}

fn compute(iterations: u64) {
    let mut acc = 0u64;
    for n in 0..iterations {
        acc = std::hint::black_box(acc.wrapping_add(n) ^ 0x5a);
    }
}

fn write(f: &mut File, bytes: u64) -> std::io::Result<()> {
    let buf = vec![0x3cu8; BLOCK];
    let mut left = bytes;
    while left > 0 {
        let n = left.min(BLOCK as u64) as usize;
        f.write_all(&buf[..n])?;
        f.sync_data()?;
        left -= n as u64;
    }
    Ok(())
}

fn run(dir: &Path, phases: &[Phase]) -> std::io::Result<(u64, u64)> {
    let path = dir.join(format!("synm-mixed-{}.dat", std::process::id()));
    let mut f = OpenOptions::new().create(true).write(true).truncate(true).open(&path)?;
    let (mut iters, mut bytes) = (0, 0);
    for p in phases {
        match *p {
            Phase::Cpu(n) => {
                compute(n);
                iters += n;
            }
            Phase::Write(b) => {
                write(&mut f, b)?;
                bytes += b;
            }
            Phase::Both(n, b) => {
                for i in 0..SLICES {
                    let lo = |total: u64| total * i / SLICES;
                    let hi = |total: u64| total * (i + 1) / SLICES;
                    compute(hi(n) - lo(n));
                    write(&mut f, hi(b) - lo(b))?;
                }
                iters += n;
                bytes += b;
            }
            Phase::Sleep(ms) => std::thread::sleep(Duration::from_millis(ms)),
        }
    }
    drop(f);
    std::fs::remove_file(&path)?;
    Ok((iters, bytes))
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some((dir, rest)) = args.split_first() else {
        eprintln!("usage: synm-mixed DIR PHASE...");
        return ExitCode::from(2);
    };
    let Some(phases) = rest.iter().map(|s| parse(s)).collect::<Option<Vec<_>>>() else {
        eprintln!("bad phase; expected cpu:N, write:B, both:N:B or sleep:MS");
        return ExitCode::from(2);
    };
    match run(Path::new(dir), &phases) {
        Ok((iters, bytes)) => {
            println!("SELFREPORT kind=mixed iterations={iters} bytes_written={bytes} phases={}", phases.len());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("synm-mixed: {e}");
            ExitCode::FAILURE
        }
    }
}
