//! Sequential writer of an exact byte count.
//!
//! Usage: synm-writer PATH BYTES [BLOCK]

use std::fs::File;
use std::io::Write;
use std::process::ExitCode;

fn run(path: &str, bytes: u64, block: usize) -> std::io::Result<u64> {
    let mut f = File::create(path)?;
    let buf = vec![0xa5u8; block];
    let mut done = 0u64;
    while done < bytes {
        let n = (bytes - done).min(block as u64) as usize;
        f.write_all(&buf[..n])?;
        done += n as u64;
    }
    f.sync_all()?;
    Ok(done)
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    if args.len() < 3 {
        eprintln!("usage: synm-writer PATH BYTES [BLOCK]");
        return ExitCode::from(2);
    }
    let bytes = args[2].parse::<u64>();
    let block = args.get(3).map_or(Ok(1 << 20), |b| b.parse::<usize>());
    let (Ok(bytes), Ok(block)) = (bytes, block) else {
        eprintln!("BYTES and BLOCK must be integers");
        return ExitCode::from(2);
    };
    match run(&args[1], bytes, block.max(1)) {
        Ok(done) => {
            println!("SELFREPORT kind=writer bytes={done} block={block}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("synm-writer: {}: {e}", args[1]);
            ExitCode::FAILURE
        }
    }
}
