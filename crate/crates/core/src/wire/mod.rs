//! Message types, the binary frame codec, and the transports that carry
//! frames between clients and storage servers.
//!
//! Every frame is `len:u32 | kind:u8 | request_id:u64 | payload`, with `len`
//! counting everything after itself. Integers are big-endian fixed width and
//! byte strings carry a `u32` length prefix.

mod codec;
pub mod loopback;
pub mod sched;
pub mod tcp;

use std::fmt;
use std::time::Duration;

pub use codec::{decode, encode, read_frame, DecodeError, DecodeReason, EncodeError};

/// Largest permitted key, in bytes.
pub const MAX_KEY_LEN: usize = 4096;
/// Largest permitted value, in bytes.
pub const MAX_VALUE_LEN: usize = 1 << 20;
/// Largest permitted frame, length prefix included.
pub const MAX_FRAME_LEN: usize = 16 << 20;
/// Default per-request timeout.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);

/// Index of a storage server in the cluster membership list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ServerId(pub u16);

impl fmt::Display for ServerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

/// Logical time issued by the timestamp oracle. Zero precedes every
/// transaction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TxnId(pub u64);

impl fmt::Display for TxnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

/// A stored value or a deletion marker. A tombstone is distinct from the
/// empty value.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Datum {
    Value(Vec<u8>),
    Tombstone,
}

impl Datum {
    pub fn as_value(&self) -> Option<&[u8]> {
        match self {
            Datum::Value(v) => Some(v),
            Datum::Tombstone => None,
        }
    }

    pub fn into_value(self) -> Option<Vec<u8>> {
        match self {
            Datum::Value(v) => Some(v),
            Datum::Tombstone => None,
        }
    }
}

/// Result of a versioned point read.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ReadOutcome {
    /// The chain is empty at this snapshot.
    Absent,
    Found { ts: Timestamp, value: Vec<u8> },
    /// The visible version is a tombstone.
    Deleted { ts: Timestamp },
    /// A prepared transaction may commit below the snapshot; retry later.
    Locked,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Vote {
    Ok,
    Conflict,
    Locked,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScanEntry {
    pub key: Vec<u8>,
    pub ts: Timestamp,
    pub value: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum ErrorCode {
    NotOwner = 1,
    UnknownTxn = 2,
    DuplicatePrepare = 3,
    NotOracle = 4,
    Malformed = 5,
    Locked = 6,
    Internal = 7,
}

impl ErrorCode {
    pub fn from_u8(b: u8) -> Option<ErrorCode> {
        Some(match b {
            1 => ErrorCode::NotOwner,
            2 => ErrorCode::UnknownTxn,
            3 => ErrorCode::DuplicatePrepare,
            4 => ErrorCode::NotOracle,
            5 => ErrorCode::Malformed,
            6 => ErrorCode::Locked,
            7 => ErrorCode::Internal,
            _ => return None,
        })
    }
}

/// Message payloads. Request kinds have codes below 0x80, replies at or
/// above it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Body {
    TsGet,
    Read { key: Vec<u8>, snapshot: Timestamp },
    Scan { start: Vec<u8>, end: Vec<u8>, snapshot: Timestamp, limit: u32 },
    Prepare { txn: TxnId, snapshot: Timestamp, writes: Vec<(Vec<u8>, Datum)> },
    Commit { txn: TxnId, commit_ts: Timestamp },
    Abort { txn: TxnId },
    Gc { watermark: Timestamp },

    TsReply { ts: Timestamp },
    ReadReply(ReadOutcome),
    ScanReply { entries: Vec<ScanEntry> },
    PrepareReply { vote: Vote },
    CommitReply,
    AbortReply,
    GcReply { removed: u64 },
    Error { code: ErrorCode, message: String },
}

pub mod kind {
    pub const TS_GET: u8 = 0x01;
    pub const READ: u8 = 0x02;
    pub const SCAN: u8 = 0x03;
    pub const PREPARE: u8 = 0x04;
    pub const COMMIT: u8 = 0x05;
    pub const ABORT: u8 = 0x06;
    pub const GC: u8 = 0x07;
    pub const ERROR: u8 = 0x7f;
    pub const TS_REPLY: u8 = 0x81;
    pub const READ_REPLY: u8 = 0x82;
    pub const SCAN_REPLY: u8 = 0x83;
    pub const PREPARE_REPLY: u8 = 0x84;
    pub const COMMIT_REPLY: u8 = 0x85;
    pub const ABORT_REPLY: u8 = 0x86;
    pub const GC_REPLY: u8 = 0x87;

    pub const ALL: [u8; 15] = [
        TS_GET,
        READ,
        SCAN,
        PREPARE,
        COMMIT,
        ABORT,
        GC,
        ERROR,
        TS_REPLY,
        READ_REPLY,
        SCAN_REPLY,
        PREPARE_REPLY,
        COMMIT_REPLY,
        ABORT_REPLY,
        GC_REPLY,
    ];
}

impl Body {
    pub fn kind(&self) -> u8 {
        match self {
            Body::TsGet => kind::TS_GET,
            Body::Read { .. } => kind::READ,
            Body::Scan { .. } => kind::SCAN,
            Body::Prepare { .. } => kind::PREPARE,
            Body::Commit { .. } => kind::COMMIT,
            Body::Abort { .. } => kind::ABORT,
            Body::Gc { .. } => kind::GC,
            Body::Error { .. } => kind::ERROR,
            Body::TsReply { .. } => kind::TS_REPLY,
            Body::ReadReply(_) => kind::READ_REPLY,
            Body::ScanReply { .. } => kind::SCAN_REPLY,
            Body::PrepareReply { .. } => kind::PREPARE_REPLY,
            Body::CommitReply => kind::COMMIT_REPLY,
            Body::AbortReply => kind::ABORT_REPLY,
            Body::GcReply { .. } => kind::GC_REPLY,
        }
    }

    pub fn is_request(&self) -> bool {
        self.kind() < 0x7f
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Message {
    pub request_id: u64,
    pub body: Body,
}

impl Message {
    pub fn new(request_id: u64, body: Body) -> Message {
        Message { request_id, body }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("server {0} is not in the cluster")]
    UnknownServer(ServerId),
    #[error("connection to {server} failed: {source}")]
    Connect { server: ServerId, source: std::io::Error },
    #[error("connection to {server} lost: {reason}")]
    Disconnected { server: ServerId, reason: String },
    #[error("request to {server} timed out after {after:?}")]
    Timeout { server: ServerId, after: Duration },
    #[error("server {0} is stopped")]
    Stopped(ServerId),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

/// A handle to a request in flight.
pub trait PendingReply: Send {
    fn wait(self: Box<Self>) -> Result<Body, TransportError>;
}

/// Request/reply channel to every server in a cluster. Implementations
/// are shared between many client tasks; replies are matched to requests
/// by request id.
pub trait Transport: Send + Sync {
    fn cluster_size(&self) -> usize;

    /// Send a request without waiting for its reply.
    fn submit(&self, dest: ServerId, body: Body) -> Result<Box<dyn PendingReply>, TransportError>;

    fn call(&self, dest: ServerId, body: Body) -> Result<Body, TransportError> {
        self.submit(dest, body)?.wait()
    }

    /// Back off before retrying an operation that found a prepared lock.
    fn pause(&self, attempt: u32) {
        let micros = 50u64 << attempt.min(7);
        std::thread::sleep(Duration::from_micros(micros));
    }
}

/// Parse a cluster membership file: one `host:port` per line, blank lines
/// and `#` comments ignored. Line order defines the server ids.
pub fn parse_cluster_file(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

pub fn load_cluster_file(path: &std::path::Path) -> std::io::Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    let members = parse_cluster_file(&text);
    if members.is_empty() {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("{}: no cluster members", path.display()),
        ));
    }
    Ok(members)
}
