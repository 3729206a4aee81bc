//! Memory atom: allocates and touches memory, releasing the oldest regions
//! first, and holds the balance across samples.

use std::collections::VecDeque;

const PAGE: usize = 4096;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MemoryError {
    #[error("cannot allocate {requested} bytes ({available} bytes available)")]
    Insufficient { requested: u64, available: u64 },
}

#[derive(Debug, Default)]
pub struct MemoryAtom {
    block: usize,
    regions: VecDeque<Vec<u8>>,
    held: u64,
}

/// Bytes allocated and released by one consumption.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MemoryOutcome {
    pub allocated: u64,
    pub freed: u64,
}

impl MemoryAtom {
    pub fn new(block: usize) -> Self {
        MemoryAtom { block: block.max(1), regions: VecDeque::new(), held: 0 }
    }

    /// Bytes currently held.
    pub fn held(&self) -> u64 {
        self.held
    }

    pub fn regions(&self) -> usize {
        self.regions.len()
    }

    /// Allocates `alloc` bytes in block-sized, page-touched regions, then
    /// releases up to `free` bytes from the oldest regions. Freed memory goes
    /// back to the allocator; whether the OS sees RSS shrink depends on it.
    pub fn consume(&mut self, alloc: u64, free: u64) -> Result<MemoryOutcome, MemoryError> {
        let mut out = MemoryOutcome::default();
        if alloc > 0 {
            if let Some(available) = crate::host::available_memory() {
                if alloc > available {
                    return Err(MemoryError::Insufficient { requested: alloc, available });
                }
            }
        }
        let mut left = alloc;
        while left > 0 {
            let n = left.min(self.block as u64) as usize;
            let mut region: Vec<u8> = Vec::new();
            if region.try_reserve_exact(n).is_err() {
                return Err(MemoryError::Insufficient {
                    requested: alloc,
                    available: crate::host::available_memory().unwrap_or(0),
                });
            }
            // Writing every page makes the allocation resident.
            region.resize(n, 0);
            for i in (0..n).step_by(PAGE) {
                region[i] = 1;
            }
            std::hint::black_box(&region);
            self.regions.push_back(region);
            self.held += n as u64;
            out.allocated += n as u64;
            left -= n as u64;
        }
        let mut left = free.min(self.held);
        while left > 0 {
            let Some(front) = self.regions.front_mut() else { break };
            let len = front.len() as u64;
            if len <= left {
                self.regions.pop_front();
                left -= len;
                self.held -= len;
                out.freed += len;
            } else {
                front.truncate((len - left) as usize);
                front.shrink_to_fit();
                self.held -= left;
                out.freed += left;
                left = 0;
            }
        }
        Ok(out)
    }

    pub fn release_all(&mut self) {
        self.regions.clear();
        self.held = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rss() -> u64 {
        crate::profiler::read_status_memory(std::process::id() as i32).unwrap().0
    }

    #[test]
    fn one_block_region_grows_rss() {
        let before = rss();
        let mut m = MemoryAtom::new(64 << 20);
        let o = m.consume(64 << 20, 0).unwrap();
        assert_eq!(o.allocated, 64 << 20);
        assert_eq!(m.regions(), 1);
        // Other tests run concurrently, so only a lower bound is meaningful.
        assert!(rss() >= before + (60 << 20), "rss {} -> {}", before, rss());
    }

    #[test]
    fn balance_over_two_samples() {
        let mut m = MemoryAtom::new(16 << 20);
        m.consume(64 << 20, 0).unwrap();
        assert_eq!((m.held(), m.regions()), (64 << 20, 4));
        let o = m.consume(0, 64 << 20).unwrap();
        assert_eq!(o.freed, 64 << 20);
        assert_eq!((m.held(), m.regions()), (0, 0));
    }

    #[test]
    fn frees_oldest_first_with_partial_region() {
        let mut m = MemoryAtom::new(10 * 4096);
        m.consume(25 * 4096, 0).unwrap();
        assert_eq!(m.regions(), 3);
        let o = m.consume(0, 12 * 4096).unwrap();
        assert_eq!(o.freed, 12 * 4096);
        assert_eq!(m.held(), 13 * 4096);
        assert_eq!(m.regions.iter().map(|r| r.len() / 4096).collect::<Vec<_>>(), vec![8, 5]);
        // Freeing more than is held stops at zero.
        assert_eq!(m.consume(0, u64::MAX).unwrap().freed, 13 * 4096);
    }

    #[test]
    fn impossible_allocation_is_refused() {
        let mut m = MemoryAtom::new(1 << 20);
        assert!(matches!(m.consume(u64::MAX / 2, 0), Err(MemoryError::Insufficient { .. })));
        assert_eq!(m.held(), 0);
    }
}
