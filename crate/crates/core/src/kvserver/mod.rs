//! Storage server: a partition of the multi-version key-value store, a
//! two-phase-commit participant, and (on server 0) the timestamp oracle.

pub mod log;
pub mod net;
pub mod oracle;
pub mod store;

use std::io;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Duration;

use crate::wire::{Body, ErrorCode, ServerId, Timestamp};

use self::log::{CommitLog, LogRecord};
use self::oracle::TimestampOracle;
pub use self::store::{Finished, MvccStore, PreparedLock, ProtocolError, Version, VersionChain};

/// First byte of every tree-node key. Node keys are exactly
/// `tag | tree:u32 | hint:u16 | local:u48`.
pub const NODE_KEY_TAG: u8 = b'N';
pub const NODE_KEY_LEN: usize = 13;

pub const DEFAULT_LEASE: Duration = Duration::from_secs(30);

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// The server hint carried by a tree-node key, if `key` is one.
pub fn server_hint(key: &[u8]) -> Option<u16> {
    if key.len() == NODE_KEY_LEN && key[0] == NODE_KEY_TAG {
        Some(u16::from_be_bytes([key[5], key[6]]))
    } else {
        None
    }
}

/// Which server stores `key`: the node hint modulo the cluster size for
/// tree-node keys, a stable hash otherwise.
pub fn owner_of(key: &[u8], n_servers: usize) -> ServerId {
    assert!(n_servers >= 1, "cluster has no servers");
    let n = n_servers as u64;
    let slot = match server_hint(key) {
        Some(hint) => u64::from(hint) % n,
        None => fnv1a64(key) % n,
    };
    ServerId(slot as u16)
}

#[derive(Clone, Debug)]
pub struct ServerOptions {
    pub id: ServerId,
    pub n_servers: usize,
    pub data_dir: Option<PathBuf>,
    pub oracle: bool,
    pub oracle_block: u64,
    pub lease: Duration,
}

impl ServerOptions {
    pub fn new(id: ServerId, n_servers: usize) -> ServerOptions {
        ServerOptions {
            id,
            n_servers,
            data_dir: None,
            oracle: id.0 == 0,
            oracle_block: oracle::DEFAULT_BLOCK,
            lease: DEFAULT_LEASE,
        }
    }
}

pub struct KvServer {
    id: ServerId,
    n_servers: usize,
    store: Mutex<MvccStore>,
    oracle: Option<TimestampOracle>,
    log: Option<Mutex<CommitLog>>,
}

impl KvServer {
    /// Start a server, replaying its commit log when it has a data dir.
    pub fn open(opts: ServerOptions) -> io::Result<KvServer> {
        let mut store = MvccStore::new(opts.lease);
        let mut newest = Timestamp::ZERO;
        let log = match &opts.data_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let (log, records) = CommitLog::open(&dir.join("commit.log"))?;
                for rec in records {
                    match rec {
                        LogRecord::Commit { txn, ts, writes } => {
                            newest = newest.max(ts);
                            for (key, datum) in writes {
                                store.apply_committed(txn, ts, key, datum);
                            }
                        }
                        LogRecord::Gc { watermark } => {
                            store.gc(watermark);
                        }
                    }
                }
                Some(Mutex::new(log))
            }
            None => None,
        };
        let oracle = match (opts.oracle, &opts.data_dir) {
            (false, _) => None,
            (true, None) => Some(TimestampOracle::in_memory()),
            (true, Some(dir)) => {
                Some(TimestampOracle::open(&dir.join("oracle.hwm"), opts.oracle_block, newest)?)
            }
        };
        Ok(KvServer { id: opts.id, n_servers: opts.n_servers, store: Mutex::new(store), oracle, log })
    }

    /// A volatile server; server 0 hosts the oracle.
    pub fn in_memory(id: ServerId, n_servers: usize) -> KvServer {
        KvServer::open(ServerOptions::new(id, n_servers)).expect("no io without a data dir")
    }

    /// A volatile server starting from an existing store image.
    pub fn from_store(id: ServerId, n_servers: usize, store: MvccStore, oracle_from: Timestamp) -> KvServer {
        let oracle = (id.0 == 0).then(|| {
            let o = TimestampOracle::in_memory();
            while o.next().expect("in-memory") <= oracle_from {}
            o
        });
        KvServer { id, n_servers, store: Mutex::new(store), oracle, log: None }
    }

    pub fn id(&self) -> ServerId {
        self.id
    }

    pub fn store_image(&self) -> MvccStore {
        self.store.lock().unwrap().clone()
    }

    pub fn with_store<R>(&self, f: impl FnOnce(&mut MvccStore) -> R) -> R {
        f(&mut self.store.lock().unwrap())
    }

    fn owns(&self, key: &[u8]) -> bool {
        owner_of(key, self.n_servers) == self.id
    }

    fn error(code: ErrorCode, message: impl Into<String>) -> Body {
        Body::Error { code, message: message.into() }
    }

    /// Serve one request.
    pub fn handle(&self, body: Body) -> Body {
        match body {
            Body::TsGet => match &self.oracle {
                None => Self::error(ErrorCode::NotOracle, format!("{} hosts no oracle", self.id)),
                Some(o) => match o.next() {
                    Ok(ts) => Body::TsReply { ts },
                    Err(e) => Self::error(ErrorCode::Internal, format!("oracle: {e}")),
                },
            },
            Body::Read { key, snapshot } => {
                if !self.owns(&key) {
                    return Self::error(ErrorCode::NotOwner, format!("{} does not own key", self.id));
                }
                Body::ReadReply(self.store.lock().unwrap().read(&key, snapshot))
            }
            Body::Scan { start, end, snapshot, limit } => {
                match self.store.lock().unwrap().scan(&start, &end, snapshot, limit as usize) {
                    Ok(entries) => Body::ScanReply { entries },
                    Err(_) => Self::error(ErrorCode::Locked, "range holds a prepared write"),
                }
            }
            Body::Prepare { txn, snapshot, writes } => {
                if writes.iter().any(|(k, _)| !self.owns(k)) {
                    return Self::error(ErrorCode::NotOwner, format!("{} does not own every key", self.id));
                }
                match self.store.lock().unwrap().prepare(txn, snapshot, writes) {
                    Ok(vote) => Body::PrepareReply { vote },
                    Err(e) => Self::error(ErrorCode::DuplicatePrepare, e.to_string()),
                }
            }
            Body::Commit { txn, commit_ts } => {
                let mut store = self.store.lock().unwrap();
                match store.commit(txn, commit_ts) {
                    Ok(writes) if writes.is_empty() => Body::CommitReply,
                    Ok(writes) => {
                        if let Some(log) = &self.log {
                            let rec = LogRecord::Commit { txn, ts: commit_ts, writes };
                            if let Err(e) = log.lock().unwrap().append(&rec) {
                                ::log::error!("commit log append failed: {e}");
                                return Self::error(ErrorCode::Internal, format!("log: {e}"));
                            }
                        }
                        Body::CommitReply
                    }
                    Err(e) => Self::error(ErrorCode::UnknownTxn, e.to_string()),
                }
            }
            Body::Abort { txn } => {
                self.store.lock().unwrap().abort(txn);
                Body::AbortReply
            }
            Body::Gc { watermark } => {
                let mut store = self.store.lock().unwrap();
                let removed = store.gc(watermark);
                if let Some(log) = &self.log {
                    if let Err(e) = log.lock().unwrap().append(&LogRecord::Gc { watermark }) {
                        return Self::error(ErrorCode::Internal, format!("log: {e}"));
                    }
                }
                Body::GcReply { removed }
            }
            other => Self::error(ErrorCode::Malformed, format!("kind 0x{:02x} is not a request", other.kind())),
        }
    }
}
