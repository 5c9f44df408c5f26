//! Writer/reader staging pair between the producer and the in-situ side.
//!
//! Both backends move whole frames (the core frame format). A write
//! serializes the payload before anything else happens, so once
//! [`StageWriter::write_step`] returns the caller owns its field again.
//!
//! Socket wire protocol, after connect:
//!
//! ```text
//! writer -> reader   "ISF1" u16 version          hello
//! reader -> writer   "ISF1" u16 version          hello
//! writer -> reader   frame | frame | ... | "ISFE"
//! reader -> writer   0x06 per frame taken        credit return
//! ```
//!
//! The writer keeps at most `capacity` frames unacknowledged; the reader
//! acks a frame as soon as it has pulled it off the socket.

use std::io::{self, Read, Write};
use std::os::unix::net::{UnixListener, UnixStream};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Receiver, RecvError, SendTimeoutError, Sender};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{self, FrameError, StepPayload, HEADER_LEN, MAGIC, VERSION};
use crate::tasks::CodecRegistry;

pub const END_MARKER: [u8; 4] = *b"ISFE";
const ACK: u8 = 0x06;
pub const DEFAULT_CAPACITY: usize = 1;
pub const DEFAULT_WATCHDOG: Duration = Duration::from_secs(30);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StagingError {
    #[error("staging capacity must be >= 1, got {0}")]
    InvalidCapacity(usize),
    #[error("connect failed: {0}")]
    ConnectFailed(String),
    #[error("protocol version mismatch: ours {ours}, peer {theirs}")]
    VersionMismatch { ours: u16, theirs: u16 },
    #[error("reader is gone")]
    ReaderGone,
    #[error("writer terminated without closing the stream")]
    WriterGone,
    #[error("serialization failed: {0}")]
    SerializationFailed(String),
    #[error("bad frame: {0}")]
    Frame(#[from] FrameError),
    #[error("i/o: {0}")]
    Io(String),
}

impl StagingError {
    fn io(e: io::Error) -> Self {
        match e.kind() {
            io::ErrorKind::BrokenPipe | io::ErrorKind::ConnectionReset => StagingError::ReaderGone,
            _ => StagingError::Io(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Backend {
    InProcess,
    LocalSocket { endpoint: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StagingConfig {
    pub capacity: usize,
    /// How long a blocked write waits before logging a diagnostic. The
    /// write keeps waiting afterwards.
    pub watchdog: Duration,
}

impl Default for StagingConfig {
    fn default() -> Self {
        Self {
            capacity: DEFAULT_CAPACITY,
            watchdog: DEFAULT_WATCHDOG,
        }
    }
}

impl StagingConfig {
    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            capacity,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<(), StagingError> {
        if self.capacity == 0 {
            return Err(StagingError::InvalidCapacity(0));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WriterStats {
    pub steps_written: u64,
    pub bytes_written: u64,
    /// Time spent waiting for queue space.
    pub blocked_s: f64,
    pub watchdog_warnings: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReaderStats {
    pub steps_read: u64,
    pub bytes_read: u64,
}

/// Non-fatal events seen by a writer.
#[derive(Debug, Clone, PartialEq)]
pub enum StageDiagnostic {
    BlockedTimeout { step_index: u64, waited_s: f64 },
}

enum Msg {
    Frame(Vec<u8>),
    End,
}

enum WriterInner {
    Channel(Sender<Msg>),
    Socket { stream: UnixStream, in_flight: usize },
}

pub struct StageWriter {
    inner: WriterInner,
    cfg: StagingConfig,
    stats: WriterStats,
    diagnostics: Vec<StageDiagnostic>,
    #[cfg(feature = "fault-injection")]
    corrupt_next: Option<usize>,
}

enum ReaderInner {
    Channel(Receiver<Msg>),
    Socket(UnixStream),
}

pub struct StageReader {
    inner: ReaderInner,
    registry: &'static CodecRegistry,
    stats: ReaderStats,
    ended: bool,
}

/// Opens a connected pair inside this process.
pub fn open_pair(
    backend: &Backend,
    cfg: StagingConfig,
) -> Result<(StageWriter, StageReader), StagingError> {
    cfg.validate()?;
    match backend {
        Backend::InProcess => {
            let (tx, rx) = bounded(cfg.capacity);
            Ok((
                StageWriter::new(WriterInner::Channel(tx), cfg),
                StageReader::new(ReaderInner::Channel(rx)),
            ))
        }
        Backend::LocalSocket { endpoint } => {
            let listener = StageListener::bind(endpoint, cfg)?;
            let client = UnixStream::connect(endpoint)
                .map_err(|e| StagingError::ConnectFailed(format!("{}: {e}", endpoint.display())))?;
            let (server, _) = listener
                .listener
                .accept()
                .map_err(|e| StagingError::ConnectFailed(e.to_string()))?;
            send_hello(&server)?;
            send_hello(&client)?;
            recv_hello(&server)?;
            recv_hello(&client)?;
            Ok((
                StageWriter::new(
                    WriterInner::Socket {
                        stream: server,
                        in_flight: 0,
                    },
                    cfg,
                ),
                StageReader::new(ReaderInner::Socket(client)),
            ))
        }
    }
}

fn send_hello(mut s: &UnixStream) -> Result<(), StagingError> {
    let mut hello = [0u8; 6];
    hello[..4].copy_from_slice(&MAGIC);
    hello[4..].copy_from_slice(&VERSION.to_le_bytes());
    s.write_all(&hello)
        .map_err(|e| StagingError::ConnectFailed(format!("hello: {e}")))
}

fn recv_hello(mut s: &UnixStream) -> Result<(), StagingError> {
    let mut hello = [0u8; 6];
    s.read_exact(&mut hello)
        .map_err(|e| StagingError::ConnectFailed(format!("hello: {e}")))?;
    if hello[..4] != MAGIC {
        return Err(StagingError::ConnectFailed(format!(
            "hello: bad magic {:?}",
            &hello[..4]
        )));
    }
    let theirs = u16::from_le_bytes([hello[4], hello[5]]);
    if theirs != VERSION {
        return Err(StagingError::VersionMismatch {
            ours: VERSION,
            theirs,
        });
    }
    Ok(())
}

/// Writer-side endpoint for a reader in another process.
pub struct StageListener {
    listener: UnixListener,
    path: PathBuf,
    cfg: StagingConfig,
}

impl StageListener {
    /// Binds `path`, replacing a stale socket file if one is there.
    pub fn bind(path: &Path, cfg: StagingConfig) -> Result<Self, StagingError> {
        cfg.validate()?;
        if path.exists() {
            std::fs::remove_file(path)
                .map_err(|e| StagingError::ConnectFailed(format!("{}: {e}", path.display())))?;
        }
        let listener = UnixListener::bind(path)
            .map_err(|e| StagingError::ConnectFailed(format!("{}: {e}", path.display())))?;
        Ok(Self {
            listener,
            path: path.to_path_buf(),
            cfg,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Waits up to `timeout` for one reader and completes the handshake.
    pub fn accept(&self, timeout: Duration) -> Result<StageWriter, StagingError> {
        self.listener
            .set_nonblocking(true)
            .map_err(|e| StagingError::Io(e.to_string()))?;
        let deadline = Instant::now() + timeout;
        let stream = loop {
            match self.listener.accept() {
                Ok((s, _)) => break s,
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    if Instant::now() >= deadline {
                        return Err(StagingError::ConnectFailed(format!(
                            "no reader connected to {} within {:?}",
                            self.path.display(),
                            timeout
                        )));
                    }
                    std::thread::sleep(Duration::from_millis(2));
                }
                Err(e) => return Err(StagingError::ConnectFailed(e.to_string())),
            }
        };
        stream
            .set_nonblocking(false)
            .map_err(|e| StagingError::Io(e.to_string()))?;
        send_hello(&stream)?;
        recv_hello(&stream)?;
        Ok(StageWriter::new(
            WriterInner::Socket {
                stream,
                in_flight: 0,
            },
            self.cfg,
        ))
    }
}

impl Drop for StageListener {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

impl StageWriter {
    fn new(inner: WriterInner, cfg: StagingConfig) -> Self {
        Self {
            inner,
            cfg,
            stats: WriterStats::default(),
            diagnostics: Vec::new(),
            #[cfg(feature = "fault-injection")]
            corrupt_next: None,
        }
    }

    pub fn capacity(&self) -> usize {
        self.cfg.capacity
    }

    pub fn stats(&self) -> WriterStats {
        self.stats
    }

    pub fn diagnostics(&self) -> &[StageDiagnostic] {
        &self.diagnostics
    }

    /// Flips one payload byte of the next frame after its checksum has
    /// been computed.
    #[cfg(feature = "fault-injection")]
    pub fn corrupt_next_frame(&mut self, payload_offset: usize) {
        self.corrupt_next = Some(payload_offset);
    }

    /// Stages `p`. Returns the handoff time: copy plus any wait for queue
    /// space. On return the caller may mutate its data freely.
    pub fn write_step(&mut self, p: &StepPayload) -> Result<f64, StagingError> {
        let start = Instant::now();
        #[allow(unused_mut)]
        let mut bytes = frame::serialize_payload(p);
        #[cfg(feature = "fault-injection")]
        if let Some(off) = self.corrupt_next.take() {
            let i = (HEADER_LEN + off).min(bytes.len() - frame::CRC_LEN - 1);
            bytes[i] ^= 0x01;
        }
        let len = bytes.len() as u64;
        let blocked = self.push(Msg::Frame(bytes), p.step_index())?;
        self.stats.steps_written += 1;
        self.stats.bytes_written += len;
        self.stats.blocked_s += blocked;
        Ok(start.elapsed().as_secs_f64())
    }

    /// Signals end of stream. The reader drains what is queued first.
    pub fn close(mut self) -> Result<WriterStats, StagingError> {
        self.push(Msg::End, u64::MAX)?;
        if let WriterInner::Socket { stream, .. } = &self.inner {
            let _ = stream.shutdown(std::net::Shutdown::Write);
        }
        Ok(self.stats)
    }

    fn warn_blocked(&mut self, step_index: u64, waited: Duration) {
        log::warn!(
            "staging writer blocked for {:.3} s on step {step_index}; reader is slow or stalled",
            waited.as_secs_f64()
        );
        self.stats.watchdog_warnings += 1;
        self.diagnostics.push(StageDiagnostic::BlockedTimeout {
            step_index,
            waited_s: waited.as_secs_f64(),
        });
    }

    /// Enqueues `msg`; returns seconds spent waiting for space.
    fn push(&mut self, msg: Msg, step_index: u64) -> Result<f64, StagingError> {
        let start = Instant::now();
        let watchdog = self.cfg.watchdog;
        match &mut self.inner {
            WriterInner::Channel(tx) => {
                let tx = tx.clone();
                let mut msg = msg;
                loop {
                    match tx.send_timeout(msg, watchdog) {
                        Ok(()) => break,
                        Err(SendTimeoutError::Timeout(m)) => {
                            msg = m;
                            self.warn_blocked(step_index, start.elapsed());
                        }
                        Err(SendTimeoutError::Disconnected(_)) => return Err(StagingError::ReaderGone),
                    }
                }
                Ok(start.elapsed().as_secs_f64())
            }
            WriterInner::Socket { .. } => {
                if let Msg::Frame(_) = msg {
                    self.wait_for_credit(step_index)?;
                }
                let blocked = start.elapsed().as_secs_f64();
                let WriterInner::Socket { stream, in_flight } = &mut self.inner else {
                    unreachable!()
                };
                match msg {
                    Msg::Frame(bytes) => {
                        stream.write_all(&bytes).map_err(StagingError::io)?;
                        *in_flight += 1;
                    }
                    Msg::End => stream.write_all(&END_MARKER).map_err(StagingError::io)?,
                }
                Ok(blocked)
            }
        }
    }

    fn wait_for_credit(&mut self, step_index: u64) -> Result<(), StagingError> {
        let capacity = self.cfg.capacity;
        let watchdog = self.cfg.watchdog;
        let start = Instant::now();
        loop {
            let WriterInner::Socket { stream, in_flight } = &mut self.inner else {
                unreachable!()
            };
            if *in_flight < capacity {
                return Ok(());
            }
            stream
                .set_read_timeout(Some(watchdog))
                .map_err(|e| StagingError::Io(e.to_string()))?;
            let mut ack = [0u8; 1];
            match stream.read(&mut ack) {
                Ok(0) => return Err(StagingError::ReaderGone),
                Ok(_) => *in_flight -= 1,
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                    self.warn_blocked(step_index, start.elapsed());
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(StagingError::io(e)),
            }
        }
    }
}

impl StageReader {
    fn new(inner: ReaderInner) -> Self {
        Self {
            inner,
            registry: CodecRegistry::builtin(),
            stats: ReaderStats::default(),
            ended: false,
        }
    }

    /// Connects to a writer listening at `path`, retrying until `timeout`.
    pub fn connect(path: &Path, timeout: Duration) -> Result<Self, StagingError> {
        let deadline = Instant::now() + timeout;
        let stream = loop {
            match UnixStream::connect(path) {
                Ok(s) => break s,
                Err(e) if Instant::now() >= deadline => {
                    return Err(StagingError::ConnectFailed(format!("{}: {e}", path.display())))
                }
                Err(_) => std::thread::sleep(Duration::from_millis(2)),
            }
        };
        send_hello(&stream)?;
        recv_hello(&stream)?;
        Ok(Self::new(ReaderInner::Socket(stream)))
    }

    pub fn stats(&self) -> ReaderStats {
        self.stats
    }

    /// Next payload in write order, or `None` once the writer has closed
    /// and everything queued has been read. Blocks while the queue is
    /// empty.
    pub fn read_step(&mut self) -> Result<Option<StepPayload>, StagingError> {
        if self.ended {
            return Ok(None);
        }
        let bytes = match &mut self.inner {
            ReaderInner::Channel(rx) => match rx.recv() {
                Ok(Msg::Frame(b)) => b,
                Ok(Msg::End) => {
                    self.ended = true;
                    return Ok(None);
                }
                Err(RecvError) => return Err(StagingError::WriterGone),
            },
            ReaderInner::Socket(stream) => match read_socket_frame(stream)? {
                Some(b) => b,
                None => {
                    self.ended = true;
                    return Ok(None);
                }
            },
        };
        self.stats.steps_read += 1;
        self.stats.bytes_read += bytes.len() as u64;
        Ok(Some(frame::deserialize_payload_with(&bytes, self.registry)?))
    }
}

/// Reads one frame and returns the credit for it; `None` on end marker.
fn read_socket_frame(stream: &mut UnixStream) -> Result<Option<Vec<u8>>, StagingError> {
    let mut head = vec![0u8; HEADER_LEN];
    let got = read_full(stream, &mut head[..4])?;
    if got == 0 {
        return Err(StagingError::WriterGone);
    }
    if got < 4 {
        return Err(StagingError::WriterGone);
    }
    if head[..4] == END_MARKER {
        return Ok(None);
    }
    if read_full(stream, &mut head[4..])? < HEADER_LEN - 4 {
        return Err(StagingError::WriterGone);
    }
    let total = frame::declared_frame_len(&head)?;
    let mut bytes = head;
    bytes.resize(total, 0);
    if read_full(stream, &mut bytes[HEADER_LEN..])? < total - HEADER_LEN {
        return Err(StagingError::WriterGone);
    }
    // A vanished writer no longer needs credit; ignore failures here.
    let _ = stream.write_all(&[ACK]);
    Ok(Some(bytes))
}

/// Like `read_exact`, but reports how much arrived before EOF.
fn read_full(stream: &mut UnixStream, buf: &mut [u8]) -> Result<usize, StagingError> {
    let mut n = 0;
    while n < buf.len() {
        match stream.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) if e.kind() == io::ErrorKind::ConnectionReset => return Err(StagingError::WriterGone),
            Err(e) => return Err(StagingError::Io(e.to_string())),
        }
    }
    Ok(n)
}
