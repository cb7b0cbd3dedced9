//! Append-only storage for audit records.
//!
//! On-disk layout, one record after another, all integers big-endian:
//!
//! ```text
//! u32  body_len
//! body:
//!   u64        seq
//!   u16 + [u8] timestamp_utc (UTF-8)
//!   u16 + [u8] location      (UTF-8)
//!   u16 + [u8] actor         (UTF-8)
//!   u16 + [u8] kind          (UTF-8)
//!   u32 + [u8] payload       (canonical JSON)
//!   [u8; 32]   payload_digest
//!   [u8; 32]   prev_hash
//!   [u8; 32]   hash
//! ```
//!
//! A record decodes only if its body is consumed exactly.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use thiserror::Error;

use super::{AuditEvent, EventKind};
use crate::digest::Digest32;

pub trait Storage: Send {
    /// Persists one encoded record. Must not return before the bytes are durable.
    fn append(&mut self, record: &[u8]) -> io::Result<()>;
    fn read_all(&self) -> io::Result<Vec<u8>>;
}

pub struct FileStorage {
    path: PathBuf,
    file: File,
}

impl FileStorage {
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Storage for FileStorage {
    fn append(&mut self, record: &[u8]) -> io::Result<()> {
        self.file.write_all(record)?;
        self.file.sync_data()
    }

    fn read_all(&self) -> io::Result<Vec<u8>> {
        let mut buf = Vec::new();
        File::open(&self.path)?.read_to_end(&mut buf)?;
        Ok(buf)
    }
}

/// In-memory storage. Clones share the same buffer, so a test can keep a
/// handle to inspect bytes or inject write failures.
#[derive(Clone, Default)]
pub struct MemoryStorage {
    bytes: Arc<Mutex<Vec<u8>>>,
    fail: Arc<AtomicBool>,
}

impl MemoryStorage {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Self {
            bytes: Arc::new(Mutex::new(bytes)),
            fail: Arc::default(),
        }
    }

    pub fn snapshot(&self) -> Vec<u8> {
        self.bytes.lock().clone()
    }

    /// While set, every append fails.
    pub fn set_failing(&self, failing: bool) {
        self.fail.store(failing, Ordering::SeqCst);
    }
}

impl Storage for MemoryStorage {
    fn append(&mut self, record: &[u8]) -> io::Result<()> {
        if self.fail.load(Ordering::SeqCst) {
            return Err(io::Error::other("injected storage failure"));
        }
        self.bytes.lock().extend_from_slice(record);
        Ok(())
    }

    fn read_all(&self) -> io::Result<Vec<u8>> {
        Ok(self.snapshot())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("record {index} is corrupt: {reason}")]
pub struct DecodeError {
    /// Zero-based position of the first undecodable record.
    pub index: u64,
    pub reason: String,
}

fn put_str16(out: &mut Vec<u8>, s: &str) {
    let len = u16::try_from(s.len()).expect("short field exceeds 64 KiB");
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(s.as_bytes());
}

/// Encodes one framed record.
pub fn encode_record(e: &AuditEvent) -> Vec<u8> {
    let mut body = Vec::with_capacity(160 + e.payload.len());
    body.extend_from_slice(&e.seq.to_be_bytes());
    put_str16(&mut body, &e.timestamp_utc);
    put_str16(&mut body, &e.location);
    put_str16(&mut body, &e.actor);
    put_str16(&mut body, e.kind.as_str());
    let plen = u32::try_from(e.payload.len()).expect("payload exceeds 4 GiB");
    body.extend_from_slice(&plen.to_be_bytes());
    body.extend_from_slice(&e.payload);
    body.extend_from_slice(&e.payload_digest.0);
    body.extend_from_slice(&e.prev_hash.0);
    body.extend_from_slice(&e.hash.0);

    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<usize, String> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()) as usize)
    }

    fn u32(&mut self) -> Result<usize, String> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn str16(&mut self) -> Result<String, String> {
        let n = self.u16()?;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| "invalid UTF-8".to_string())
    }

    fn digest(&mut self) -> Result<Digest32, String> {
        Ok(Digest32(self.take(32)?.try_into().unwrap()))
    }
}

fn decode_body(body: &[u8]) -> Result<AuditEvent, String> {
    let mut c = Cursor { buf: body, pos: 0 };
    let seq = u64::from_be_bytes(c.take(8)?.try_into().unwrap());
    let timestamp_utc = c.str16()?;
    let location = c.str16()?;
    let actor = c.str16()?;
    let kind_str = c.str16()?;
    let kind = EventKind::parse(&kind_str).ok_or_else(|| format!("unknown kind `{kind_str}`"))?;
    let plen = c.u32()?;
    let payload = c.take(plen)?.to_vec();
    let payload_digest = c.digest()?;
    let prev_hash = c.digest()?;
    let hash = c.digest()?;
    if c.pos != body.len() {
        return Err(format!("{} trailing bytes", body.len() - c.pos));
    }
    Ok(AuditEvent {
        seq,
        timestamp_utc,
        location,
        actor,
        kind,
        payload,
        payload_digest,
        prev_hash,
        hash,
    })
}

/// Decodes records until the first corrupt one. Returns the clean prefix and
/// the error, if any, that stopped decoding.
pub fn decode_records(bytes: &[u8]) -> (Vec<AuditEvent>, Option<DecodeError>) {
    let mut events = Vec::new();
    let mut c = Cursor { buf: bytes, pos: 0 };
    while c.pos < bytes.len() {
        let index = events.len() as u64;
        let fail = |reason: String| Some(DecodeError { index, reason });
        let body = match c.u32().and_then(|n| c.take(n)) {
            Ok(b) => b,
            Err(reason) => return (events, fail(reason)),
        };
        match decode_body(body) {
            Ok(e) => events.push(e),
            Err(reason) => return (events, fail(reason)),
        }
    }
    (events, None)
}
