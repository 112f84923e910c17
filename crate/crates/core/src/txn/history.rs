//! Recorded transaction histories, one tab-separated line per event:
//!
//! ```text
//! kind  txn-id  key-hex  ts  [value]
//! ```
//!
//! `kind` is one of begin/read/write/commit/abort. `key-hex` is `-` for
//! begin/commit/abort. `ts` is the snapshot for begin/read/write/abort and
//! the commit timestamp for commit. Read and write events carry a fifth
//! field: the value (`-` when absent or deleted), hex-encoded when at most
//! 32 bytes long and otherwise as `#` plus a 128-bit SHA-256 prefix.

use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use crate::wire::{Timestamp, TxnId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EventKind {
    Begin,
    Read,
    Write,
    Commit,
    Abort,
}

impl EventKind {
    fn as_str(self) -> &'static str {
        match self {
            EventKind::Begin => "begin",
            EventKind::Read => "read",
            EventKind::Write => "write",
            EventKind::Commit => "commit",
            EventKind::Abort => "abort",
        }
    }
}

impl FromStr for EventKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "begin" => EventKind::Begin,
            "read" => EventKind::Read,
            "write" => EventKind::Write,
            "commit" => EventKind::Commit,
            "abort" => EventKind::Abort,
            other => return Err(format!("unknown event kind {other:?}")),
        })
    }
}

/// Canonical text form of a value as recorded in a history.
pub fn value_repr(value: Option<&[u8]>) -> String {
    match value {
        None => "-".to_string(),
        Some(v) if v.len() <= 32 => hex::encode(v),
        Some(v) => format!("#{}", hex::encode(&Sha256::digest(v)[..16])),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Event {
    pub kind: EventKind,
    pub txn: TxnId,
    pub key: Option<Vec<u8>>,
    pub ts: Timestamp,
    pub value: Option<String>,
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let key = self.key.as_deref().map(hex::encode).unwrap_or_else(|| "-".into());
        write!(f, "{}\t{}\t{}\t{}", self.kind.as_str(), self.txn, key, self.ts)?;
        if let Some(v) = &self.value {
            write!(f, "\t{v}")?;
        }
        Ok(())
    }
}

impl FromStr for Event {
    type Err = String;
    fn from_str(line: &str) -> Result<Self, String> {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 4 || fields.len() > 5 {
            return Err(format!("expected 4 or 5 fields, got {}", fields.len()));
        }
        let kind: EventKind = fields[0].parse()?;
        let txn = u64::from_str_radix(fields[1], 16).map_err(|e| format!("txn id: {e}"))?;
        let key = match fields[2] {
            "-" => None,
            k => Some(hex::decode(k).map_err(|e| format!("key: {e}"))?),
        };
        let ts = fields[3].parse::<u64>().map_err(|e| format!("ts: {e}"))?;
        let value = fields.get(4).map(|v| v.to_string());
        let needs_key = matches!(kind, EventKind::Read | EventKind::Write);
        if needs_key && (key.is_none() || value.is_none()) {
            return Err(format!("{} event without key and value", kind.as_str()));
        }
        Ok(Event { kind, txn: TxnId(txn), key, ts: Timestamp(ts), value })
    }
}

/// A totally ordered event sink shared by every transaction of a client.
#[derive(Default)]
pub struct HistoryLog {
    events: Mutex<Vec<Event>>,
}

impl HistoryLog {
    pub fn new() -> HistoryLog {
        HistoryLog::default()
    }

    pub fn record(&self, event: Event) {
        self.events.lock().unwrap().push(event);
    }

    pub fn len(&self) -> usize {
        self.events.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> History {
        History { events: self.events.lock().unwrap().clone() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct History {
    pub events: Vec<Event>,
}

impl History {
    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        for e in &self.events {
            writeln!(w, "{e}")?;
        }
        w.flush()
    }

    pub fn read_from<R: BufRead>(r: R) -> io::Result<History> {
        let mut events = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let ev = line.parse().map_err(|e| {
                io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", n + 1))
            })?;
            events.push(ev);
        }
        Ok(History { events })
    }
}
