//! Client-side snapshot-isolation transactions over the partitioned store.
//!
//! A transaction takes its snapshot from the oracle at begin, buffers every
//! write locally, and at commit runs two-phase commit against the servers
//! owning the written keys: prepare (first-committer-wins validation) on
//! each participant in ascending server order, then a commit timestamp
//! from the oracle, then commit on each participant.

pub mod history;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;

use crate::kvserver::owner_of;
use crate::wire::{
    Body, Datum, ErrorCode, PendingReply, ReadOutcome, ServerId, Timestamp, Transport, TransportError,
    TxnId, Vote, MAX_KEY_LEN, MAX_VALUE_LEN,
};
use self::history::{value_repr, Event, EventKind, HistoryLog};

pub const MAX_WRITE_SET: usize = 10_000;

#[derive(Debug, thiserror::Error)]
pub enum TxnError {
    #[error("transaction is no longer active")]
    Inactive,
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("server {server} replied {code:?}: {message}")]
    Server { server: ServerId, code: ErrorCode, message: String },
    #[error("unexpected reply from {server}: kind 0x{kind:02x}")]
    UnexpectedReply { server: ServerId, kind: u8 },
    #[error("write set exceeds {MAX_WRITE_SET} entries")]
    WriteSetTooLarge,
    #[error("key of {0} bytes is outside 1..=4096")]
    KeyBounds(usize),
    #[error("value of {0} bytes exceeds 1 MiB")]
    ValueBounds(usize),
    #[error("gave up waiting for a prepared write on {server} after {waited:?}")]
    LockWait { server: ServerId, waited: Duration },
    #[error("committed at {ts} but {pending} participant(s) never acknowledged")]
    CommitIncomplete { ts: Timestamp, pending: usize },
}

impl TxnError {
    fn server(server: ServerId, body: Body) -> TxnError {
        match body {
            Body::Error { code, message } => TxnError::Server { server, code, message },
            other => TxnError::UnexpectedReply { server, kind: other.kind() },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AbortReason {
    Conflict(ServerId),
    Locked(ServerId),
    Transport(String),
    Requested,
}

impl std::fmt::Display for AbortReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AbortReason::Conflict(s) => write!(f, "write conflict on {s}"),
            AbortReason::Locked(s) => write!(f, "keys locked on {s}"),
            AbortReason::Transport(e) => write!(f, "transport failure: {e}"),
            AbortReason::Requested => f.write_str("aborted by client"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Committed(Timestamp),
    Aborted(AbortReason),
}

impl Outcome {
    pub fn is_committed(&self) -> bool {
        matches!(self, Outcome::Committed(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Active,
    Committed,
    Aborted,
}

#[derive(Clone, Debug)]
pub struct ClientOptions {
    /// How long a read keeps retrying a key held by a prepared write.
    pub lock_wait: Duration,
    /// How long commit keeps re-sending unacknowledged commit messages.
    pub commit_retry: Duration,
}

impl Default for ClientOptions {
    fn default() -> Self {
        ClientOptions { lock_wait: Duration::from_secs(35), commit_retry: Duration::from_secs(35) }
    }
}

struct ClientInner {
    transport: Arc<dyn Transport>,
    history: Option<Arc<HistoryLog>>,
    opts: ClientOptions,
}

/// Entry point for transactions; cheap to clone and share across threads.
#[derive(Clone)]
pub struct Client {
    inner: Arc<ClientInner>,
}

impl Client {
    pub fn new(transport: Arc<dyn Transport>) -> Client {
        Client::with_options(transport, ClientOptions::default(), None)
    }

    pub fn with_options(
        transport: Arc<dyn Transport>,
        opts: ClientOptions,
        history: Option<Arc<HistoryLog>>,
    ) -> Client {
        Client { inner: Arc::new(ClientInner { transport, history, opts }) }
    }

    /// A client sharing this one's transport that records into `history`.
    pub fn recording(&self, history: Arc<HistoryLog>) -> Client {
        Client::with_options(self.inner.transport.clone(), self.inner.opts.clone(), Some(history))
    }

    pub fn transport(&self) -> &Arc<dyn Transport> {
        &self.inner.transport
    }

    pub fn n_servers(&self) -> usize {
        self.inner.transport.cluster_size()
    }

    pub fn history(&self) -> Option<&Arc<HistoryLog>> {
        self.inner.history.as_ref()
    }

    fn record(&self, kind: EventKind, txn: TxnId, key: Option<&[u8]>, ts: Timestamp, value: Option<String>) {
        if let Some(h) = &self.inner.history {
            h.record(Event { kind, txn, key: key.map(<[u8]>::to_vec), ts, value });
        }
    }

    fn call(&self, dest: ServerId, body: Body) -> Result<Body, TxnError> {
        Ok(self.inner.transport.call(dest, body)?)
    }

    /// A fresh timestamp from the oracle on server 0.
    pub fn timestamp(&self) -> Result<Timestamp, TxnError> {
        match self.call(ServerId(0), Body::TsGet)? {
            Body::TsReply { ts } => Ok(ts),
            other => Err(TxnError::server(ServerId(0), other)),
        }
    }

    pub fn begin(&self) -> Result<Txn, TxnError> {
        let snapshot = self.timestamp()?;
        let id = TxnId(rand::rng().random());
        self.record(EventKind::Begin, id, None, snapshot, None);
        Ok(Txn { client: self.clone(), id, snapshot, writes: BTreeMap::new(), status: Status::Active })
    }

    /// Committed state of `key` at `snapshot`, outside any transaction.
    pub fn read_at(&self, key: &[u8], snapshot: Timestamp) -> Result<Option<Vec<u8>>, TxnError> {
        let server = owner_of(key, self.n_servers());
        let started = Instant::now();
        let mut attempt = 0;
        loop {
            let reply = self.call(server, Body::Read { key: key.to_vec(), snapshot })?;
            match reply {
                Body::ReadReply(ReadOutcome::Found { value, .. }) => return Ok(Some(value)),
                Body::ReadReply(ReadOutcome::Absent | ReadOutcome::Deleted { .. }) => return Ok(None),
                Body::ReadReply(ReadOutcome::Locked) => {
                    let waited = started.elapsed();
                    if waited > self.inner.opts.lock_wait {
                        return Err(TxnError::LockWait { server, waited });
                    }
                    self.inner.transport.pause(attempt);
                    attempt += 1;
                }
                other => return Err(TxnError::server(server, other)),
            }
        }
    }
}

/// One transaction. Single-owner: not shared between threads while active.
pub struct Txn {
    client: Client,
    id: TxnId,
    snapshot: Timestamp,
    writes: BTreeMap<Vec<u8>, Datum>,
    status: Status,
}

impl Txn {
    pub fn id(&self) -> TxnId {
        self.id
    }

    pub fn snapshot(&self) -> Timestamp {
        self.snapshot
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn client(&self) -> &Client {
        &self.client
    }

    pub fn write_set(&self) -> &BTreeMap<Vec<u8>, Datum> {
        &self.writes
    }

    fn check_active(&self) -> Result<(), TxnError> {
        if self.status == Status::Active {
            Ok(())
        } else {
            Err(TxnError::Inactive)
        }
    }

    /// Read-your-writes first, then the snapshot.
    pub fn get(&self, key: &[u8]) -> Result<Option<Vec<u8>>, TxnError> {
        self.check_active()?;
        let value = match self.writes.get(key) {
            Some(d) => d.as_value().map(<[u8]>::to_vec),
            None => self.client.read_at(key, self.snapshot)?,
        };
        self.client.record(EventKind::Read, self.id, Some(key), self.snapshot, Some(value_repr(value.as_deref())));
        Ok(value)
    }

    pub fn put(&mut self, key: &[u8], value: &[u8]) -> Result<(), TxnError> {
        if value.len() > MAX_VALUE_LEN {
            return Err(TxnError::ValueBounds(value.len()));
        }
        self.buffer(key, Datum::Value(value.to_vec()))
    }

    pub fn delete(&mut self, key: &[u8]) -> Result<(), TxnError> {
        self.buffer(key, Datum::Tombstone)
    }

    fn buffer(&mut self, key: &[u8], datum: Datum) -> Result<(), TxnError> {
        self.check_active()?;
        if key.is_empty() || key.len() > MAX_KEY_LEN {
            return Err(TxnError::KeyBounds(key.len()));
        }
        if self.writes.len() >= MAX_WRITE_SET && !self.writes.contains_key(key) {
            return Err(TxnError::WriteSetTooLarge);
        }
        self.client.record(EventKind::Write, self.id, Some(key), self.snapshot, Some(value_repr(datum.as_value())));
        self.writes.insert(key.to_vec(), datum);
        Ok(())
    }

    /// Discard the write buffer. Nothing was staged on any server.
    pub fn abort(&mut self) -> Result<(), TxnError> {
        self.check_active()?;
        self.writes.clear();
        self.finish_aborted();
        Ok(())
    }

    fn finish_aborted(&mut self) {
        self.status = Status::Aborted;
        self.client.record(EventKind::Abort, self.id, None, self.snapshot, None);
    }

    pub fn commit(&mut self) -> Result<Outcome, TxnError> {
        self.check_active()?;
        if self.writes.is_empty() {
            self.status = Status::Committed;
            self.client.record(EventKind::Commit, self.id, None, self.snapshot, None);
            return Ok(Outcome::Committed(self.snapshot));
        }
        let n = self.client.n_servers();
        let mut groups: BTreeMap<ServerId, Vec<(Vec<u8>, Datum)>> = BTreeMap::new();
        for (k, d) in std::mem::take(&mut self.writes) {
            groups.entry(owner_of(&k, n)).or_default().push((k, d));
        }
        let participants: Vec<ServerId> = groups.keys().copied().collect();

        match self.prepare_all(groups) {
            Ok(None) => {}
            Ok(Some(reason)) => {
                self.abort_participants(&participants);
                self.finish_aborted();
                return Ok(Outcome::Aborted(reason));
            }
            Err(e) => {
                self.abort_participants(&participants);
                self.finish_aborted();
                return Ok(Outcome::Aborted(AbortReason::Transport(e.to_string())));
            }
        }

        let commit_ts = match self.client.timestamp() {
            Ok(ts) => ts,
            Err(e) => {
                self.abort_participants(&participants);
                self.finish_aborted();
                return Ok(Outcome::Aborted(AbortReason::Transport(e.to_string())));
            }
        };
        // Commit point: every participant voted ok and the timestamp exists.
        self.status = Status::Committed;
        self.client.record(EventKind::Commit, self.id, None, commit_ts, None);
        self.commit_participants(&participants, commit_ts)?;
        Ok(Outcome::Committed(commit_ts))
    }

    /// Returns the losing vote, if any.
    fn prepare_all(
        &self,
        groups: BTreeMap<ServerId, Vec<(Vec<u8>, Datum)>>,
    ) -> Result<Option<AbortReason>, TxnError> {
        let transport = self.client.transport();
        let mut pending: Vec<(ServerId, Box<dyn PendingReply>)> = Vec::with_capacity(groups.len());
        for (server, writes) in groups {
            let body = Body::Prepare { txn: self.id, snapshot: self.snapshot, writes };
            pending.push((server, transport.submit(server, body)?));
        }
        let mut losing = None;
        let mut failure = None;
        for (server, p) in pending {
            match p.wait() {
                Ok(Body::PrepareReply { vote: Vote::Ok }) => {}
                Ok(Body::PrepareReply { vote: Vote::Conflict }) => {
                    losing.get_or_insert(AbortReason::Conflict(server));
                }
                Ok(Body::PrepareReply { vote: Vote::Locked }) => {
                    losing.get_or_insert(AbortReason::Locked(server));
                }
                Ok(other) => {
                    failure.get_or_insert(TxnError::server(server, other));
                }
                Err(e) => {
                    failure.get_or_insert(TxnError::from(e));
                }
            }
        }
        match failure {
            Some(e) => Err(e),
            None => Ok(losing),
        }
    }

    fn abort_participants(&self, participants: &[ServerId]) {
        for &server in participants {
            if let Err(e) = self.client.call(server, Body::Abort { txn: self.id }) {
                // the lease on that server eventually releases the locks
                log::warn!("abort of {} on {server} failed: {e}", self.id);
            }
        }
    }

    fn commit_participants(&self, participants: &[ServerId], commit_ts: Timestamp) -> Result<(), TxnError> {
        let transport = self.client.transport();
        let started = Instant::now();
        let mut remaining: Vec<ServerId> = participants.to_vec();
        let mut attempt = 0;
        loop {
            let mut pending = Vec::with_capacity(remaining.len());
            for &server in &remaining {
                let body = Body::Commit { txn: self.id, commit_ts };
                pending.push((server, transport.submit(server, body)));
            }
            let mut failed = Vec::new();
            for (server, p) in pending {
                match p.and_then(|p| p.wait()) {
                    Ok(Body::CommitReply) => {}
                    Ok(other) => return Err(TxnError::server(server, other)),
                    Err(e) => {
                        log::warn!("commit of {} on {server} failed, retrying: {e}", self.id);
                        failed.push(server);
                    }
                }
            }
            if failed.is_empty() {
                return Ok(());
            }
            if started.elapsed() > self.client.inner.opts.commit_retry {
                return Err(TxnError::CommitIncomplete { ts: commit_ts, pending: failed.len() });
            }
            remaining = failed;
            transport.pause(attempt);
            attempt += 1;
        }
    }
}
