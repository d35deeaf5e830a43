//! File-drop exchange channel.
//!
//! Each message is one file `<root>/<session_id>/<name>.bin` plus an empty
//! completion marker `<name>.done`. The writer stages the payload under a
//! temporary name, fsyncs, renames it into place and only then creates the
//! marker, so a reader that sees the marker always sees a complete payload.
//! The reader verifies, then deletes both files.
//!
//! # Envelope
//!
//! All integers are big-endian.
//!
//! | offset | size | field |
//! |---|---|---|
//! | 0 | 8 | magic `PPREBAT1` |
//! | 8 | 2 | format version (1) |
//! | 10 | 1 | direction (1 = P1→P2, 2 = P2→P1) |
//! | 11 | 1 | reserved, zero |
//! | 12 | 2 | session id length `s` |
//! | 14 | s | session id, UTF-8 |
//! | 14+s | 2 | message name length `m` |
//! | 16+s | m | message name, UTF-8 |
//! | 16+s+m | 8 | record count |
//! | 24+s+m | 8 | payload length in bytes |
//! | 32+s+m | … | records, each a 4-byte length then that many bytes |
//! | end−32 | 32 | SHA-256 of every preceding byte |

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"PPREBAT1";
pub const FORMAT_VERSION: u16 = 1;
pub const DEFAULT_POLL_INTERVAL: Duration = Duration::from_millis(20);

const DIGEST_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("message `{0}` already present in the channel")]
    ChannelBusy(String),
    #[error("timed out after {waited:?} waiting for `{name}`")]
    Timeout { name: String, waited: Duration },
    #[error("integrity digest of `{0}` does not verify")]
    DigestMismatch(String),
    #[error("malformed envelope: {0}")]
    Malformed(String),
    #[error("envelope addressed to session `{found}`, expected `{expected}`")]
    SessionMismatch { expected: String, found: String },
    #[error("envelope `{name}` travels in the wrong direction")]
    DirectionMismatch { name: String },
    #[error("invalid channel identifier `{0}`")]
    InvalidName(String),
    #[error("channel I/O: {0}")]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    P1ToP2 = 1,
    P2ToP1 = 2,
}

impl Direction {
    fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(Direction::P1ToP2),
            2 => Some(Direction::P2ToP1),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchEnvelope {
    pub session_id: String,
    pub name: String,
    pub direction: Direction,
    pub records: Vec<Vec<u8>>,
}

impl BatchEnvelope {
    pub fn encode(&self) -> Vec<u8> {
        let payload_len: usize = self.records.iter().map(|r| 4 + r.len()).sum();
        let mut out = Vec::with_capacity(64 + self.session_id.len() + self.name.len() + payload_len);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_be_bytes());
        out.push(self.direction as u8);
        out.push(0);
        out.extend_from_slice(&(self.session_id.len() as u16).to_be_bytes());
        out.extend_from_slice(self.session_id.as_bytes());
        out.extend_from_slice(&(self.name.len() as u16).to_be_bytes());
        out.extend_from_slice(self.name.as_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_be_bytes());
        out.extend_from_slice(&(payload_len as u64).to_be_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.len() as u32).to_be_bytes());
            out.extend_from_slice(r);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, TransportError> {
        let bad = |m: &str| TransportError::Malformed(m.to_string());
        if bytes.len() < MAGIC.len() + 4 + DIGEST_LEN {
            return Err(bad("truncated envelope"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(TransportError::DigestMismatch(String::new()));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(TransportError::Malformed(format!("unsupported version {version}")));
        }
        let direction = Direction::from_byte(r.take(1)?[0]).ok_or_else(|| bad("bad direction"))?;
        r.take(1)?;
        let sid_len = r.u16()? as usize;
        let session_id = String::from_utf8(r.take(sid_len)?.to_vec()).map_err(|_| bad("session id is not UTF-8"))?;
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| bad("name is not UTF-8"))?;
        let count = r.u64()?;
        let payload_len = r.u64()?;
        if payload_len != (body.len() - r.pos) as u64 {
            return Err(bad("payload length does not match"));
        }
        let mut records = Vec::with_capacity(count.min(1 << 24) as usize);
        while r.pos < body.len() {
            let len = r.u32()? as usize;
            records.push(r.take(len)?.to_vec());
        }
        if records.len() as u64 != count {
            return Err(bad("record count does not match payload"));
        }
        Ok(BatchEnvelope { session_id, name, direction, records })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TransportError> {
        if self.buf.len() - self.pos < n {
            return Err(TransportError::Malformed("truncated envelope".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16, TransportError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32, TransportError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, TransportError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn validate_ident(s: &str) -> Result<(), TransportError> {
    let ok = !s.is_empty()
        && s.len() <= 128
        && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-');
    if ok {
        Ok(())
    } else {
        Err(TransportError::InvalidName(s.to_string()))
    }
}

/// One session's directory, shared by both parties.
#[derive(Debug)]
pub struct Channel {
    dir: PathBuf,
    session_id: String,
    poll_interval: Duration,
    tap: Option<PathBuf>,
    tap_seq: AtomicU64,
}

impl Channel {
    /// Opens (creating if needed) `<root>/<session_id>`.
    pub fn open(root: impl AsRef<Path>, session_id: &str) -> Result<Self, TransportError> {
        validate_ident(session_id)?;
        let dir = root.as_ref().join(session_id);
        fs::create_dir_all(&dir)?;
        Ok(Channel {
            dir,
            session_id: session_id.to_string(),
            poll_interval: DEFAULT_POLL_INTERVAL,
            tap: None,
            tap_seq: AtomicU64::new(0),
        })
    }

    pub fn with_poll_interval(mut self, interval: Duration) -> Self {
        self.poll_interval = interval;
        self
    }

    /// Copies every envelope sent through this handle into `dir`, for
    /// offline inspection of the transcript.
    pub fn with_tap(mut self, dir: impl Into<PathBuf>) -> Result<Self, TransportError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        self.tap = Some(dir);
        Ok(self)
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn payload_path(&self, name: &str) -> PathBuf {
        self.dir.join(format!("{name}.bin"))
    }

    fn marker_path(&self, name: &str) -> PathBuf {
        self.dir.join(format!("{name}.done"))
    }

    pub fn send_batch(&self, direction: Direction, name: &str, records: Vec<Vec<u8>>) -> Result<(), TransportError> {
        validate_ident(name)?;
        let payload = self.payload_path(name);
        let marker = self.marker_path(name);
        if payload.exists() || marker.exists() {
            return Err(TransportError::ChannelBusy(name.to_string()));
        }
        let envelope = BatchEnvelope { session_id: self.session_id.clone(), name: name.to_string(), direction, records };
        let bytes = envelope.encode();

        let tmp = self.dir.join(format!(".{name}.{}.tmp", std::process::id()));
        let mut f = OpenOptions::new().write(true).create_new(true).open(&tmp).map_err(|e| {
            if e.kind() == io::ErrorKind::AlreadyExists {
                TransportError::ChannelBusy(name.to_string())
            } else {
                e.into()
            }
        })?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        drop(f);
        fs::rename(&tmp, &payload)?;
        let m = OpenOptions::new().write(true).create_new(true).open(&marker)?;
        m.sync_all()?;
        if let Ok(d) = File::open(&self.dir) {
            let _ = d.sync_all();
        }

        if let Some(tap) = &self.tap {
            let seq = self.tap_seq.fetch_add(1, Ordering::Relaxed);
            fs::write(tap.join(format!("{}-{seq:03}-{name}.bin", self.session_id)), &bytes)?;
        }
        Ok(())
    }

    /// Waits for `name`, verifies and consumes it.
    pub fn recv_batch(&self, direction: Direction, name: &str, timeout: Duration) -> Result<Vec<Vec<u8>>, TransportError> {
        self.recv_any(direction, &[name], timeout).map(|(_, r)| r)
    }

    /// Waits for whichever of `names` completes first.
    pub fn recv_any(
        &self,
        direction: Direction,
        names: &[&str],
        timeout: Duration,
    ) -> Result<(String, Vec<Vec<u8>>), TransportError> {
        for n in names {
            validate_ident(n)?;
        }
        let start = Instant::now();
        loop {
            for &name in names {
                if self.marker_path(name).exists() {
                    return self.consume(direction, name).map(|r| (name.to_string(), r));
                }
            }
            let waited = start.elapsed();
            if waited >= timeout {
                return Err(TransportError::Timeout { name: names.join("|"), waited });
            }
            thread::sleep(self.poll_interval.min(timeout - waited));
        }
    }

    fn consume(&self, direction: Direction, name: &str) -> Result<Vec<Vec<u8>>, TransportError> {
        let payload = self.payload_path(name);
        let bytes = fs::read(&payload)?;
        let env = BatchEnvelope::decode(&bytes).map_err(|e| match e {
            TransportError::DigestMismatch(_) => TransportError::DigestMismatch(name.to_string()),
            other => other,
        })?;
        if env.name != name {
            return Err(TransportError::Malformed(format!("envelope names `{}`, file `{name}`", env.name)));
        }
        if env.session_id != self.session_id {
            return Err(TransportError::SessionMismatch { expected: self.session_id.clone(), found: env.session_id });
        }
        if env.direction != direction {
            return Err(TransportError::DirectionMismatch { name: name.to_string() });
        }
        fs::remove_file(&payload)?;
        fs::remove_file(self.marker_path(name))?;
        Ok(env.records)
    }

    /// Entries currently in the session directory.
    pub fn pending(&self) -> Result<Vec<String>, TransportError> {
        let mut names = Vec::new();
        for e in fs::read_dir(&self.dir)? {
            names.push(e?.file_name().to_string_lossy().into_owned());
        }
        names.sort();
        Ok(names)
    }

    /// Removes the session directory if nothing is left in it.
    pub fn close(self) -> Result<(), TransportError> {
        match fs::remove_dir(&self.dir) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
            Err(_) if !self.pending()?.is_empty() => Ok(()),
            Err(e) => Err(e.into()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(n: usize) -> Vec<Vec<u8>> {
        (0..n).map(|i| (i as u32).to_be_bytes().repeat(i % 5)).collect()
    }

    #[test]
    fn send_lists_payload_and_marker() {
        let root = tempfile::tempdir().unwrap();
        let ch = Channel::open(root.path(), "s1").unwrap();
        ch.send_batch(Direction::P1ToP2, "hello", rows(3)).unwrap();
        assert_eq!(ch.pending().unwrap(), vec!["hello.bin", "hello.done"]);
        assert!(matches!(
            ch.send_batch(Direction::P1ToP2, "hello", rows(1)),
            Err(TransportError::ChannelBusy(_))
        ));
        let got = ch.recv_batch(Direction::P1ToP2, "hello", Duration::from_secs(1)).unwrap();
        assert_eq!(got, rows(3));
        assert!(ch.pending().unwrap().is_empty());
        ch.close().unwrap();
        assert!(!root.path().join("s1").exists());
    }

    #[test]
    fn timeout_and_tamper() {
        let root = tempfile::tempdir().unwrap();
        let ch = Channel::open(root.path(), "s2").unwrap().with_poll_interval(Duration::from_millis(1));
        assert!(matches!(
            ch.recv_batch(Direction::P2ToP1, "nothing", Duration::from_millis(30)),
            Err(TransportError::Timeout { .. })
        ));
        ch.send_batch(Direction::P2ToP1, "m", rows(10)).unwrap();
        let path = root.path().join("s2/m.bin");
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 40;
        bytes[last] ^= 0x01;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            ch.recv_batch(Direction::P2ToP1, "m", Duration::from_secs(1)),
            Err(TransportError::DigestMismatch(_))
        ));
    }

    #[test]
    fn envelope_checks() {
        let env = BatchEnvelope {
            session_id: "abc".into(),
            name: "x".into(),
            direction: Direction::P1ToP2,
            records: vec![vec![], vec![1, 2, 3]],
        };
        let bytes = env.encode();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(BatchEnvelope::decode(&bytes).unwrap(), env);
        assert!(BatchEnvelope::decode(&bytes[..20]).is_err());

        let root = tempfile::tempdir().unwrap();
        let ch = Channel::open(root.path(), "s3").unwrap();
        ch.send_batch(Direction::P1ToP2, "d", rows(2)).unwrap();
        assert!(matches!(
            ch.recv_batch(Direction::P2ToP1, "d", Duration::from_secs(1)),
            Err(TransportError::DirectionMismatch { .. })
        ));
        assert!(Channel::open(root.path(), "../escape").is_err());
        assert!(ch.send_batch(Direction::P1ToP2, "a/b", vec![]).is_err());
    }

    #[test]
    fn large_batch_round_trips_and_tap_copies() {
        let root = tempfile::tempdir().unwrap();
        let tap = tempfile::tempdir().unwrap();
        let ch = Channel::open(root.path(), "big").unwrap().with_tap(tap.path()).unwrap();
        let payload: Vec<Vec<u8>> = (0..100_000u32).map(|i| i.to_le_bytes().to_vec()).collect();
        ch.send_batch(Direction::P2ToP1, "bulk", payload.clone()).unwrap();
        let got = ch.recv_any(Direction::P2ToP1, &["other", "bulk"], Duration::from_secs(5)).unwrap();
        assert_eq!(got.0, "bulk");
        assert_eq!(Sha256::digest(got.1.concat()), Sha256::digest(payload.concat()));
        assert_eq!(fs::read_dir(tap.path()).unwrap().count(), 1);
    }
}
