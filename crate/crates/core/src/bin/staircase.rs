//! Staircase allocator: allocates and touches STEP bytes every INTERVAL,
//! holds the full amount for one more interval, then frees everything.
//!
//! Usage: synm-staircase STEP_BYTES STEPS INTERVAL_MS

use std::process::ExitCode;
use std::time::Duration;

const PAGE: usize = 4096;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let parsed = (|| -> Option<(usize, usize, u64)> {
        Some((args.get(1)?.parse().ok()?, args.get(2)?.parse().ok()?, args.get(3)?.parse().ok()?))
    })();
    let Some((step, steps, interval_ms)) = parsed else {
        eprintln!("usage: synm-staircase STEP_BYTES STEPS INTERVAL_MS");
        return ExitCode::from(2);
    };
    let interval = Duration::from_millis(interval_ms);
    let mut held: Vec<Vec<u8>> = Vec::with_capacity(steps);
    let mut peak = 0usize;
    for _ in 0..steps {
        let mut region = vec![0u8; step];
        for i in (0..region.len()).step_by(PAGE) {
            region[i] = 1;
        }
        std::hint::black_box(&region);
        held.push(region);
        peak += step;
        std::thread::sleep(interval);
    }
    std::thread::sleep(interval);
    drop(held);
    println!("SELFREPORT kind=staircase_alloc step={step} steps={steps} peak={peak}");
    ExitCode::SUCCESS
}
