//! Append-only log of committed writes, replayed at startup.
//!
//! Record layout (primitives as in `wire`):
//! - `0x01 txn:u64 ts:u64 count:u32 (key:bytes datum)*` for a commit
//! - `0x02 watermark:u64` for a garbage collection pass
//!
//! where `datum` is `0x00` (tombstone) or `0x01 value:bytes`.

use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use crate::wire::{Datum, Timestamp, TxnId};

const REC_COMMIT: u8 = 0x01;
const REC_GC: u8 = 0x02;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LogRecord {
    Commit { txn: TxnId, ts: Timestamp, writes: Vec<(Vec<u8>, Datum)> },
    Gc { watermark: Timestamp },
}

pub struct CommitLog {
    out: BufWriter<File>,
}

impl CommitLog {
    /// Open the log for appending and return every intact record. A torn
    /// record at the tail (crash mid-append) is cut off.
    pub fn open(path: &Path) -> io::Result<(CommitLog, Vec<LogRecord>)> {
        let mut bytes = Vec::new();
        match File::open(path) {
            Ok(mut f) => {
                f.read_to_end(&mut bytes)?;
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(e),
        }
        let (records, good) = parse_records(&bytes);
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        if good < bytes.len() {
            log::warn!("{}: dropping {} torn bytes", path.display(), bytes.len() - good);
            file.set_len(good as u64)?;
        }
        Ok((CommitLog { out: BufWriter::new(file) }, records))
    }

    pub fn append(&mut self, rec: &LogRecord) -> io::Result<()> {
        let mut buf = Vec::new();
        encode_record(rec, &mut buf);
        self.out.write_all(&buf)?;
        self.out.flush()
    }
}

fn put_bytes(buf: &mut Vec<u8>, b: &[u8]) {
    buf.extend_from_slice(&(b.len() as u32).to_be_bytes());
    buf.extend_from_slice(b);
}

fn encode_record(rec: &LogRecord, buf: &mut Vec<u8>) {
    match rec {
        LogRecord::Commit { txn, ts, writes } => {
            buf.push(REC_COMMIT);
            buf.extend_from_slice(&txn.0.to_be_bytes());
            buf.extend_from_slice(&ts.0.to_be_bytes());
            buf.extend_from_slice(&(writes.len() as u32).to_be_bytes());
            for (k, d) in writes {
                put_bytes(buf, k);
                match d {
                    Datum::Tombstone => buf.push(0),
                    Datum::Value(v) => {
                        buf.push(1);
                        put_bytes(buf, v);
                    }
                }
            }
        }
        LogRecord::Gc { watermark } => {
            buf.push(REC_GC);
            buf.extend_from_slice(&watermark.0.to_be_bytes());
        }
    }
}

struct Cursor<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.b.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }
    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|s| s[0])
    }
    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|s| u32::from_be_bytes(s.try_into().unwrap()))
    }
    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|s| u64::from_be_bytes(s.try_into().unwrap()))
    }
    fn bytes(&mut self) -> Option<Vec<u8>> {
        let n = self.u32()? as usize;
        self.take(n).map(<[u8]>::to_vec)
    }
    fn record(&mut self) -> Option<LogRecord> {
        match self.u8()? {
            REC_COMMIT => {
                let txn = TxnId(self.u64()?);
                let ts = Timestamp(self.u64()?);
                let n = self.u32()? as usize;
                let mut writes = Vec::with_capacity(n.min(1024));
                for _ in 0..n {
                    let key = self.bytes()?;
                    let datum = match self.u8()? {
                        0 => Datum::Tombstone,
                        1 => Datum::Value(self.bytes()?),
                        _ => return None,
                    };
                    writes.push((key, datum));
                }
                Some(LogRecord::Commit { txn, ts, writes })
            }
            REC_GC => Some(LogRecord::Gc { watermark: Timestamp(self.u64()?) }),
            _ => None,
        }
    }
}

/// Parse records until the first incomplete or invalid one; returns the
/// records and the byte length they span.
fn parse_records(bytes: &[u8]) -> (Vec<LogRecord>, usize) {
    let mut cur = Cursor { b: bytes, pos: 0 };
    let mut out = Vec::new();
    let mut good = 0;
    while cur.pos < bytes.len() {
        match cur.record() {
            Some(rec) => {
                out.push(rec);
                good = cur.pos;
            }
            None => break,
        }
    }
    (out, good)
}
