//! Network atom and its companion echo sink.
//!
//! Wire format (a local convention): every client message is a frame made of
//! an 8-digit decimal payload length followed by the payload, whose first
//! byte is an opcode:
//!
//! * `D<data>` — data to be discarded and counted;
//! * `R<n>` — ask the sink to send back `n` raw bytes;
//! * `Q` — ask for the number of data bytes received on this connection,
//!   answered with a frame `A<n>`.

use std::io::{self, BufReader, Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

const HEADER: usize = 8;
const MAX_PAYLOAD: usize = 99_999_999;

#[derive(Debug, thiserror::Error)]
pub enum NetworkError {
    #[error("cannot connect to {endpoint}: {source}")]
    Connect { endpoint: String, source: io::Error },
    #[error("network transfer failed after {sent} bytes sent and {received} received: {source}")]
    Transfer { sent: u64, received: u64, source: io::Error },
}

/// Bytes moved by one network consumption.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NetworkOutcome {
    pub sent: u64,
    pub received: u64,
    /// Data bytes the sink reports having received, when anything was sent.
    pub acknowledged: Option<u64>,
}

fn write_frame(w: &mut impl Write, payload: &[u8]) -> io::Result<()> {
    debug_assert!(payload.len() <= MAX_PAYLOAD);
    write!(w, "{:08}", payload.len())?;
    w.write_all(payload)
}

/// Reads one frame; `None` on clean end of stream.
fn read_frame(r: &mut impl Read, buf: &mut Vec<u8>) -> io::Result<Option<()>> {
    let mut header = [0u8; HEADER];
    match r.read_exact(&mut header) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len: usize = std::str::from_utf8(&header)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "bad frame header"))?;
    buf.resize(len, 0);
    r.read_exact(buf)?;
    Ok(Some(()))
}

/// Streams `send` bytes to `endpoint` and reads `recv` bytes back, both in
/// `block`-sized requests. With nothing to move the connection is only
/// opened and closed.
pub fn consume(send: u64, recv: u64, block: usize, endpoint: &str) -> Result<NetworkOutcome, NetworkError> {
    let connect_err = |source| NetworkError::Connect { endpoint: endpoint.to_string(), source };
    let addrs: Vec<_> = endpoint.to_socket_addrs().map_err(connect_err)?.collect();
    let mut stream = TcpStream::connect(&addrs[..]).map_err(connect_err)?;
    let _ = stream.set_nodelay(true);
    let mut out = NetworkOutcome::default();
    let block = block.clamp(1, MAX_PAYLOAD - 1);

    let result = (|| -> io::Result<()> {
        if send > 0 {
            let mut payload = vec![0x77u8; 1 + block.min(send as usize)];
            payload[0] = b'D';
            while out.sent < send {
                let n = (send - out.sent).min(block as u64) as usize;
                write_frame(&mut stream, &payload[..1 + n])?;
                out.sent += n as u64;
            }
        }
        if recv > 0 {
            write_frame(&mut stream, format!("R{recv}").as_bytes())?;
            let mut buf = vec![0u8; block.min(recv as usize)];
            while out.received < recv {
                let want = (recv - out.received).min(buf.len() as u64) as usize;
                let n = stream.read(&mut buf[..want])?;
                if n == 0 {
                    return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "sink closed the connection"));
                }
                out.received += n as u64;
            }
        }
        if send > 0 {
            write_frame(&mut stream, b"Q")?;
            let mut reply = Vec::new();
            read_frame(&mut stream, &mut reply)?;
            out.acknowledged = reply.strip_prefix(b"A").and_then(|d| std::str::from_utf8(d).ok()?.parse().ok());
        }
        Ok(())
    })();
    let _ = stream.shutdown(Shutdown::Both);
    result.map_err(|source| NetworkError::Transfer { sent: out.sent, received: out.received, source })?;
    Ok(out)
}

/// Serves one client connection until it closes.
fn serve_connection(stream: TcpStream, total: &AtomicU64) -> io::Result<()> {
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::with_capacity(1 << 16, stream);
    let mut frame = Vec::new();
    let mut received = 0u64;
    while read_frame(&mut reader, &mut frame)?.is_some() {
        match frame.first() {
            Some(b'D') => {
                let n = frame.len() as u64 - 1;
                received += n;
                total.fetch_add(n, Ordering::Relaxed);
            }
            Some(b'R') => {
                let n: u64 = std::str::from_utf8(&frame[1..]).ok().and_then(|s| s.parse().ok()).unwrap_or(0);
                let chunk = vec![0x66u8; (n as usize).min(1 << 16)];
                let mut left = n;
                while left > 0 {
                    let k = left.min(chunk.len() as u64) as usize;
                    writer.write_all(&chunk[..k])?;
                    left -= k as u64;
                }
            }
            Some(b'Q') => write_frame(&mut writer, format!("A{received}").as_bytes())?,
            _ => return Err(io::Error::new(io::ErrorKind::InvalidData, "unknown opcode")),
        }
    }
    Ok(())
}

/// A listening echo sink.
#[derive(Debug)]
pub struct EchoSink {
    listener: TcpListener,
    total: Arc<AtomicU64>,
}

impl EchoSink {
    pub fn bind(addr: &str) -> io::Result<Self> {
        Ok(EchoSink { listener: TcpListener::bind(addr)?, total: Arc::default() })
    }

    pub fn local_addr(&self) -> io::Result<std::net::SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts connections forever, one thread per connection.
    pub fn serve(self) -> io::Result<()> {
        for stream in self.listener.incoming() {
            let stream = stream?;
            let total = self.total.clone();
            std::thread::spawn(move || {
                let peer = stream.peer_addr().ok();
                if let Err(e) = serve_connection(stream, &total) {
                    log::warn!("echo-sink connection {peer:?}: {e}");
                }
                log::info!("echo-sink: {} data bytes received in total", total.load(Ordering::Relaxed));
            });
        }
        Ok(())
    }

    /// Serves in a background thread until the handle is stopped or dropped.
    pub fn spawn(self) -> io::Result<EchoSinkHandle> {
        let addr = self.local_addr()?;
        let total = self.total.clone();
        let stop = Arc::new(AtomicBool::new(false));
        let stop2 = stop.clone();
        let thread = std::thread::spawn(move || {
            for stream in self.listener.incoming() {
                if stop2.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let total = self.total.clone();
                std::thread::spawn(move || {
                    let _ = serve_connection(stream, &total);
                });
            }
        });
        Ok(EchoSinkHandle { addr, total, stop, thread: Some(thread) })
    }
}

#[derive(Debug)]
pub struct EchoSinkHandle {
    addr: std::net::SocketAddr,
    total: Arc<AtomicU64>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl EchoSinkHandle {
    pub fn addr(&self) -> std::net::SocketAddr {
        self.addr
    }

    /// Data bytes received over all connections so far.
    pub fn total_received(&self) -> u64 {
        self.total.load(Ordering::Relaxed)
    }
}

impl Drop for EchoSinkHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the accept loop.
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
