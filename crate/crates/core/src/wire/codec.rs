use std::fmt;
use std::io::Read;

use super::{
    kind, Body, Datum, ErrorCode, Message, ReadOutcome, ScanEntry, Timestamp, TxnId, Vote,
    MAX_FRAME_LEN, MAX_KEY_LEN, MAX_VALUE_LEN,
};

const HEADER_LEN: usize = 4 + 1 + 8;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EncodeError {
    #[error("frame of {0} bytes exceeds the 16 MiB limit")]
    Oversize(usize),
    #[error("key of {0} bytes is outside 1..=4096")]
    KeyBounds(usize),
    #[error("value of {0} bytes exceeds 1 MiB")]
    ValueBounds(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecodeReason {
    TruncatedFrame,
    UnknownKind(u8),
    LengthExceedsFrame,
    TrailingGarbage,
    FrameTooLarge(usize),
    BadTag(u8),
    BadUtf8,
    KeyBounds(usize),
    ValueBounds(usize),
}

impl fmt::Display for DecodeReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecodeReason::TruncatedFrame => f.write_str("truncated frame"),
            DecodeReason::UnknownKind(k) => write!(f, "unknown kind 0x{k:02x}"),
            DecodeReason::LengthExceedsFrame => f.write_str("length prefix exceeds frame"),
            DecodeReason::TrailingGarbage => f.write_str("trailing garbage within frame"),
            DecodeReason::FrameTooLarge(n) => write!(f, "frame length {n} exceeds limit"),
            DecodeReason::BadTag(t) => write!(f, "invalid tag 0x{t:02x}"),
            DecodeReason::BadUtf8 => f.write_str("invalid utf-8"),
            DecodeReason::KeyBounds(n) => write!(f, "key length {n} out of bounds"),
            DecodeReason::ValueBounds(n) => write!(f, "value length {n} out of bounds"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("decode error at offset {offset}: {reason}")]
pub struct DecodeError {
    pub offset: usize,
    pub reason: DecodeReason,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.buf.extend_from_slice(b);
    }
    fn key(&mut self, k: &[u8]) -> Result<(), EncodeError> {
        if k.is_empty() || k.len() > MAX_KEY_LEN {
            return Err(EncodeError::KeyBounds(k.len()));
        }
        self.bytes(k);
        Ok(())
    }
    fn bound(&mut self, k: &[u8]) -> Result<(), EncodeError> {
        if k.len() > MAX_KEY_LEN {
            return Err(EncodeError::KeyBounds(k.len()));
        }
        self.bytes(k);
        Ok(())
    }
    fn value(&mut self, v: &[u8]) -> Result<(), EncodeError> {
        if v.len() > MAX_VALUE_LEN {
            return Err(EncodeError::ValueBounds(v.len()));
        }
        self.bytes(v);
        Ok(())
    }
    fn datum(&mut self, d: &Datum) -> Result<(), EncodeError> {
        match d {
            Datum::Tombstone => self.u8(0),
            Datum::Value(v) => {
                self.u8(1);
                self.value(v)?;
            }
        }
        Ok(())
    }
}

/// Serialize a message into one length-prefixed frame.
pub fn encode(msg: &Message) -> Result<Vec<u8>, EncodeError> {
    let mut w = Writer { buf: Vec::with_capacity(64) };
    w.u32(0);
    w.u8(msg.body.kind());
    w.u64(msg.request_id);
    match &msg.body {
        Body::TsGet | Body::CommitReply | Body::AbortReply => {}
        Body::Read { key, snapshot } => {
            w.key(key)?;
            w.u64(snapshot.0);
        }
        Body::Scan { start, end, snapshot, limit } => {
            w.bound(start)?;
            w.bound(end)?;
            w.u64(snapshot.0);
            w.u32(*limit);
        }
        Body::Prepare { txn, snapshot, writes } => {
            w.u64(txn.0);
            w.u64(snapshot.0);
            w.u32(writes.len() as u32);
            for (k, d) in writes {
                w.key(k)?;
                w.datum(d)?;
            }
        }
        Body::Commit { txn, commit_ts } => {
            w.u64(txn.0);
            w.u64(commit_ts.0);
        }
        Body::Abort { txn } => w.u64(txn.0),
        Body::Gc { watermark } => w.u64(watermark.0),
        Body::TsReply { ts } => w.u64(ts.0),
        Body::ReadReply(outcome) => match outcome {
            ReadOutcome::Absent => w.u8(0),
            ReadOutcome::Found { ts, value } => {
                w.u8(1);
                w.u64(ts.0);
                w.value(value)?;
            }
            ReadOutcome::Deleted { ts } => {
                w.u8(2);
                w.u64(ts.0);
            }
            ReadOutcome::Locked => w.u8(3),
        },
        Body::ScanReply { entries } => {
            w.u32(entries.len() as u32);
            for e in entries {
                w.key(&e.key)?;
                w.u64(e.ts.0);
                w.value(&e.value)?;
            }
        }
        Body::PrepareReply { vote } => w.u8(match vote {
            Vote::Ok => 0,
            Vote::Conflict => 1,
            Vote::Locked => 2,
        }),
        Body::GcReply { removed } => w.u64(*removed),
        Body::Error { code, message } => {
            w.u8(*code as u8);
            w.bytes(message.as_bytes());
        }
    }
    let total = w.buf.len();
    if total > MAX_FRAME_LEN {
        return Err(EncodeError::Oversize(total));
    }
    let len = (total - 4) as u32;
    w.buf[..4].copy_from_slice(&len.to_be_bytes());
    Ok(w.buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, reason: DecodeReason) -> DecodeError {
        DecodeError { offset: self.pos, reason }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(DecodeReason::TruncatedFrame));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn bytes(&mut self) -> Result<&'a [u8], DecodeError> {
        let at = self.pos;
        let len = self.u32()? as usize;
        if self.buf.len() - self.pos < len {
            return Err(DecodeError { offset: at, reason: DecodeReason::LengthExceedsFrame });
        }
        self.take(len)
    }
    fn key(&mut self) -> Result<Vec<u8>, DecodeError> {
        let at = self.pos;
        let k = self.bytes()?;
        if k.is_empty() || k.len() > MAX_KEY_LEN {
            return Err(DecodeError { offset: at, reason: DecodeReason::KeyBounds(k.len()) });
        }
        Ok(k.to_vec())
    }
    fn bound(&mut self) -> Result<Vec<u8>, DecodeError> {
        let at = self.pos;
        let k = self.bytes()?;
        if k.len() > MAX_KEY_LEN {
            return Err(DecodeError { offset: at, reason: DecodeReason::KeyBounds(k.len()) });
        }
        Ok(k.to_vec())
    }
    fn value(&mut self) -> Result<Vec<u8>, DecodeError> {
        let at = self.pos;
        let v = self.bytes()?;
        if v.len() > MAX_VALUE_LEN {
            return Err(DecodeError { offset: at, reason: DecodeReason::ValueBounds(v.len()) });
        }
        Ok(v.to_vec())
    }
    fn datum(&mut self) -> Result<Datum, DecodeError> {
        let at = self.pos;
        match self.u8()? {
            0 => Ok(Datum::Tombstone),
            1 => Ok(Datum::Value(self.value()?)),
            t => Err(DecodeError { offset: at, reason: DecodeReason::BadTag(t) }),
        }
    }
    fn ts(&mut self) -> Result<Timestamp, DecodeError> {
        self.u64().map(Timestamp)
    }
    fn txn(&mut self) -> Result<TxnId, DecodeError> {
        self.u64().map(TxnId)
    }
    /// Element count for a repeated field; each element needs at least
    /// `min_elem` bytes, which bounds the allocation on hostile input.
    fn count(&mut self, min_elem: usize) -> Result<usize, DecodeError> {
        let at = self.pos;
        let n = self.u32()? as usize;
        if n.saturating_mul(min_elem) > self.buf.len() - self.pos {
            return Err(DecodeError { offset: at, reason: DecodeReason::LengthExceedsFrame });
        }
        Ok(n)
    }
}

/// Parse exactly one frame. The input must contain the whole frame and
/// nothing after it.
pub fn decode(bytes: &[u8]) -> Result<Message, DecodeError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if bytes.len() < HEADER_LEN {
        return Err(DecodeError { offset: bytes.len(), reason: DecodeReason::TruncatedFrame });
    }
    let len = r.u32()? as usize;
    if len + 4 > MAX_FRAME_LEN {
        return Err(DecodeError { offset: 0, reason: DecodeReason::FrameTooLarge(len) });
    }
    if len + 4 > bytes.len() {
        return Err(DecodeError { offset: bytes.len(), reason: DecodeReason::TruncatedFrame });
    }
    if len + 4 < bytes.len() {
        return Err(DecodeError { offset: len + 4, reason: DecodeReason::TrailingGarbage });
    }
    let kind_at = r.pos;
    let k = r.u8()?;
    let request_id = r.u64()?;
    let body = match k {
        kind::TS_GET => Body::TsGet,
        kind::READ => Body::Read { key: r.key()?, snapshot: r.ts()? },
        kind::SCAN => Body::Scan {
            start: r.bound()?,
            end: r.bound()?,
            snapshot: r.ts()?,
            limit: r.u32()?,
        },
        kind::PREPARE => {
            let txn = r.txn()?;
            let snapshot = r.ts()?;
            let n = r.count(6)?;
            let mut writes = Vec::with_capacity(n);
            for _ in 0..n {
                let key = r.key()?;
                writes.push((key, r.datum()?));
            }
            Body::Prepare { txn, snapshot, writes }
        }
        kind::COMMIT => Body::Commit { txn: r.txn()?, commit_ts: r.ts()? },
        kind::ABORT => Body::Abort { txn: r.txn()? },
        kind::GC => Body::Gc { watermark: r.ts()? },
        kind::TS_REPLY => Body::TsReply { ts: r.ts()? },
        kind::READ_REPLY => {
            let at = r.pos;
            Body::ReadReply(match r.u8()? {
                0 => ReadOutcome::Absent,
                1 => ReadOutcome::Found { ts: r.ts()?, value: r.value()? },
                2 => ReadOutcome::Deleted { ts: r.ts()? },
                3 => ReadOutcome::Locked,
                t => return Err(DecodeError { offset: at, reason: DecodeReason::BadTag(t) }),
            })
        }
        kind::SCAN_REPLY => {
            let n = r.count(17)?;
            let mut entries = Vec::with_capacity(n);
            for _ in 0..n {
                entries.push(ScanEntry { key: r.key()?, ts: r.ts()?, value: r.value()? });
            }
            Body::ScanReply { entries }
        }
        kind::PREPARE_REPLY => {
            let at = r.pos;
            let vote = match r.u8()? {
                0 => Vote::Ok,
                1 => Vote::Conflict,
                2 => Vote::Locked,
                t => return Err(DecodeError { offset: at, reason: DecodeReason::BadTag(t) }),
            };
            Body::PrepareReply { vote }
        }
        kind::COMMIT_REPLY => Body::CommitReply,
        kind::ABORT_REPLY => Body::AbortReply,
        kind::GC_REPLY => Body::GcReply { removed: r.u64()? },
        kind::ERROR => {
            let at = r.pos;
            let c = r.u8()?;
            let code = ErrorCode::from_u8(c)
                .ok_or(DecodeError { offset: at, reason: DecodeReason::BadTag(c) })?;
            let at = r.pos;
            let text = r.bytes()?;
            let message = std::str::from_utf8(text)
                .map_err(|_| DecodeError { offset: at, reason: DecodeReason::BadUtf8 })?
                .to_string();
            Body::Error { code, message }
        }
        other => return Err(DecodeError { offset: kind_at, reason: DecodeReason::UnknownKind(other) }),
    };
    if r.pos != bytes.len() {
        return Err(r.err(DecodeReason::TrailingGarbage));
    }
    Ok(Message { request_id, body })
}

/// Read one whole frame (length prefix included) from a stream. Returns
/// `Ok(None)` on a clean end of stream before any byte of a new frame.
pub fn read_frame<R: Read>(r: &mut R) -> std::io::Result<Option<Vec<u8>>> {
    let mut len_buf = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len_buf[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(std::io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let len = u32::from_be_bytes(len_buf) as usize;
    if len + 4 > MAX_FRAME_LEN || len < HEADER_LEN - 4 {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("bad frame length {len}"),
        ));
    }
    let mut frame = vec![0u8; len + 4];
    frame[..4].copy_from_slice(&len_buf);
    r.read_exact(&mut frame[4..])?;
    Ok(Some(frame))
}
