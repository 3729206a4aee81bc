//! Pure compute loop with a fixed instruction body.
//!
//! Usage: synm-spin ITERATIONS
//!
//! On x86_64 the body is exactly four instructions per iteration.

use std::process::ExitCode;

#[cfg(target_arch = "x86_64")]
fn spin(iterations: u64) -> u64 {
    let mut acc: u64 = 0;
    if iterations == 0 {
        return acc;
    }
    let mut n = iterations;
    // SAFETY: register-only arithmetic loop.
    unsafe {
        std::arch::asm!(
            "2:",
            "add {acc}, {n}",
            "xor {acc}, 0x5a",
            "sub {n}, 1",
            "jnz 2b",
            acc = inout(reg) acc,
            n = inout(reg) n,
            options(nomem, nostack),
        );
    }
    let _ = n;
    acc
}

#[cfg(not(target_arch = "x86_64"))]
fn spin(iterations: u64) -> u64 {
    let mut acc: u64 = 0;
    for n in (1..=iterations).rev() {
        acc = std::hint::black_box((acc.wrapping_add(n)) ^ 0x5a);
    }
    acc
}

fn main() -> ExitCode {
    let Some(iterations) = std::env::args().nth(1).and_then(|s| s.parse::<f64>().ok()) else {
        eprintln!("usage: synm-spin ITERATIONS");
        return ExitCode::from(2);
    };
    let iterations = iterations as u64;
    let acc = spin(iterations);
    std::hint::black_box(acc);
    println!("SELFREPORT kind=spin iterations={iterations}");
    ExitCode::SUCCESS
}
