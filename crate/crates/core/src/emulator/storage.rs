//! Storage atom: block-sized sequential reads and writes on scratch files.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::os::fd::AsRawFd;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// The write scratch file wraps around at this size.
const WRITE_WRAP: u64 = 1 << 30;
/// Upper bound on the pre-created read source.
const READ_SOURCE_MAX: u64 = 256 << 20;

#[derive(Debug, thiserror::Error)]
pub enum StorageError {
    #[error("{op} failed after {completed} bytes: {source}")]
    Io { op: &'static str, completed: u64, source: io::Error },
    #[error("read source is missing")]
    NoReadSource,
    #[error("storage request did not finish before the deadline ({completed} bytes done)")]
    Timeout { completed: u64 },
}

/// Bytes moved and requests issued by one consumption.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StorageOutcome {
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub read_requests: u64,
    pub write_requests: u64,
}

fn drop_cache(f: &File) {
    // SAFETY: advisory call on an open descriptor.
    unsafe { libc::posix_fadvise(f.as_raw_fd(), 0, 0, libc::POSIX_FADV_DONTNEED) };
}

#[derive(Debug)]
pub struct StorageAtom {
    dir: PathBuf,
    block_read: usize,
    block_write: usize,
    writer: Option<File>,
    written_pos: u64,
    reader: Option<(File, u64)>,
    read_pos: u64,
}

impl StorageAtom {
    /// Scratch files live in `dir`, which must exist and be writable.
    pub fn new(dir: &Path, block_read: usize, block_write: usize) -> Self {
        StorageAtom {
            dir: dir.to_path_buf(),
            block_read: block_read.max(1),
            block_write: block_write.max(1),
            writer: None,
            written_pos: 0,
            reader: None,
            read_pos: 0,
        }
    }

    pub fn write_path(&self) -> PathBuf {
        self.dir.join("write.scratch")
    }

    pub fn read_path(&self) -> PathBuf {
        self.dir.join("read.scratch")
    }

    /// Creates the read source so later reads are not served from a hole.
    /// The file holds `min(total_read, 256 MiB)` bytes, at least one block,
    /// and is evicted from the page cache.
    pub fn prepare_read_source(&mut self, total_read: u64) -> Result<(), StorageError> {
        let size = total_read.min(READ_SOURCE_MAX).max(self.block_read as u64);
        let err = |completed, source| StorageError::Io { op: "creating read source", completed, source };
        let mut f = File::create(self.read_path()).map_err(|e| err(0, e))?;
        let buf = vec![0x5au8; (1 << 20).min(size as usize)];
        let mut done = 0;
        while done < size {
            let n = (size - done).min(buf.len() as u64) as usize;
            f.write_all(&buf[..n]).map_err(|e| err(done, e))?;
            done += n as u64;
        }
        f.sync_all().map_err(|e| err(done, e))?;
        drop_cache(&f);
        let f = File::open(self.read_path()).map_err(|e| err(done, e))?;
        self.reader = Some((f, size));
        Ok(())
    }

    /// Writes `write` bytes then reads `read` bytes, in block-sized requests,
    /// syncing written data before returning. The final block may be short.
    pub fn consume(
        &mut self,
        read: u64,
        write: u64,
        deadline: Option<Instant>,
    ) -> Result<StorageOutcome, StorageError> {
        let mut out = StorageOutcome::default();
        if write > 0 {
            self.write(write, deadline, &mut out)?;
        }
        if read > 0 {
            self.read(read, deadline, &mut out)?;
        }
        Ok(out)
    }

    fn write(&mut self, bytes: u64, deadline: Option<Instant>, out: &mut StorageOutcome) -> Result<(), StorageError> {
        let err = |completed, source| StorageError::Io { op: "write", completed, source };
        if self.writer.is_none() {
            let f = OpenOptions::new()
                .create(true)
                .write(true)
                .truncate(true)
                .open(self.write_path())
                .map_err(|e| err(0, e))?;
            self.writer = Some(f);
        }
        let f = self.writer.as_mut().expect("writer opened above");
        let buf = vec![0xc3u8; self.block_write.min(bytes as usize)];
        while out.bytes_written < bytes {
            if deadline.is_some_and(|d| Instant::now() >= d) {
                return Err(StorageError::Timeout { completed: out.bytes_written });
            }
            if self.written_pos >= WRITE_WRAP {
                f.seek(SeekFrom::Start(0)).map_err(|e| err(out.bytes_written, e))?;
                self.written_pos = 0;
            }
            let n = (bytes - out.bytes_written).min(buf.len() as u64) as usize;
            f.write_all(&buf[..n]).map_err(|e| err(out.bytes_written, e))?;
            out.bytes_written += n as u64;
            out.write_requests += 1;
            self.written_pos += n as u64;
        }
        f.sync_data().map_err(|e| err(out.bytes_written, e))
    }

    fn read(&mut self, bytes: u64, deadline: Option<Instant>, out: &mut StorageOutcome) -> Result<(), StorageError> {
        let err = |completed, source| StorageError::Io { op: "read", completed, source };
        let Some((f, size)) = self.reader.as_mut() else { return Err(StorageError::NoReadSource) };
        let mut buf = vec![0u8; self.block_read.min(bytes as usize)];
        while out.bytes_read < bytes {
            if deadline.is_some_and(|d| Instant::now() >= d) {
                return Err(StorageError::Timeout { completed: out.bytes_read });
            }
            if self.read_pos >= *size {
                f.seek(SeekFrom::Start(0)).map_err(|e| err(out.bytes_read, e))?;
                drop_cache(f);
                self.read_pos = 0;
            }
            let want = (bytes - out.bytes_read).min(buf.len() as u64).min(*size - self.read_pos) as usize;
            let n = f.read(&mut buf[..want]).map_err(|e| err(out.bytes_read, e))?;
            if n == 0 {
                return Err(StorageError::NoReadSource);
            }
            out.bytes_read += n as u64;
            out.read_requests += 1;
            self.read_pos += n as u64;
        }
        Ok(())
    }
}
