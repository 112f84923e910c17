//! The multi-version store held by one server: an ordered map from key to
//! version chain, plus the participant state of two-phase commit.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::ops::Bound;
use std::time::{Duration, Instant};

use crate::wire::{Datum, ReadOutcome, ScanEntry, Timestamp, TxnId, Vote};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Version {
    pub ts: Timestamp,
    pub datum: Datum,
}

#[derive(Clone, Debug)]
pub struct PreparedLock {
    pub txn: TxnId,
    pub staged: Datum,
    pub snapshot: Timestamp,
}

/// All versions of one key, newest first, and the prepared write (if any)
/// waiting to join them.
#[derive(Clone, Debug, Default)]
pub struct VersionChain {
    versions: Vec<Version>,
    lock: Option<PreparedLock>,
}

impl VersionChain {
    pub fn versions(&self) -> &[Version] {
        &self.versions
    }

    pub fn lock(&self) -> Option<&PreparedLock> {
        self.lock.as_ref()
    }

    /// Newest version with `ts <= snapshot`.
    pub fn visible(&self, snapshot: Timestamp) -> Option<&Version> {
        let idx = self.versions.partition_point(|v| v.ts > snapshot);
        self.versions.get(idx)
    }

    fn newest_ts(&self) -> Option<Timestamp> {
        self.versions.first().map(|v| v.ts)
    }

    /// Insert keeping descending order; a version already present at `ts`
    /// is left as is.
    fn install(&mut self, ts: Timestamp, datum: Datum) {
        let idx = self.versions.partition_point(|v| v.ts > ts);
        if self.versions.get(idx).is_some_and(|v| v.ts == ts) {
            return;
        }
        self.versions.insert(idx, Version { ts, datum });
    }

    fn is_empty(&self) -> bool {
        self.versions.is_empty() && self.lock.is_none()
    }
}

#[derive(Clone, Debug)]
struct Prepared {
    snapshot: Timestamp,
    keys: Vec<Vec<u8>>,
    at: Instant,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Finished {
    Committed(Timestamp),
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolError {
    #[error("transaction {0} already prepared here")]
    DuplicatePrepare(TxnId),
    #[error("transaction {0} is not prepared here")]
    UnknownTxn(TxnId),
    #[error("transaction {0} was aborted")]
    AlreadyAborted(TxnId),
    #[error("commit ts {commit} does not follow snapshot {snapshot}")]
    StaleCommitTs { commit: Timestamp, snapshot: Timestamp },
}

/// Scan result when a prepared write may land below the snapshot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanLocked;

const FINISHED_CAPACITY: usize = 1 << 20;

#[derive(Clone, Debug)]
pub struct MvccStore {
    chains: BTreeMap<Vec<u8>, VersionChain>,
    prepared: HashMap<TxnId, Prepared>,
    finished: HashMap<TxnId, Finished>,
    finished_order: VecDeque<TxnId>,
    lease: Duration,
}

impl Default for MvccStore {
    fn default() -> Self {
        MvccStore::new(Duration::from_secs(30))
    }
}

impl MvccStore {
    pub fn new(lease: Duration) -> MvccStore {
        MvccStore {
            chains: BTreeMap::new(),
            prepared: HashMap::new(),
            finished: HashMap::new(),
            finished_order: VecDeque::new(),
            lease,
        }
    }

    pub fn chain(&self, key: &[u8]) -> Option<&VersionChain> {
        self.chains.get(key)
    }

    pub fn chains(&self) -> impl Iterator<Item = (&Vec<u8>, &VersionChain)> {
        self.chains.iter()
    }

    pub fn prepared_count(&self) -> usize {
        self.prepared.len()
    }

    pub fn outcome(&self, txn: TxnId) -> Option<Finished> {
        self.finished.get(&txn).copied()
    }

    fn lock_blocks(&self, lock: &PreparedLock, snapshot: Timestamp) -> bool {
        // The holder's commit ts will exceed its snapshot, so only readers
        // above that snapshot can be affected.
        lock.snapshot < snapshot
    }

    fn lease_expired(&self, txn: TxnId, now: Instant) -> bool {
        self.prepared.get(&txn).is_some_and(|p| now.duration_since(p.at) >= self.lease)
    }

    /// Abort every prepared transaction whose lease ran out.
    pub fn expire_leases(&mut self, now: Instant) -> usize {
        let expired: Vec<TxnId> = self
            .prepared
            .iter()
            .filter(|(_, p)| now.duration_since(p.at) >= self.lease)
            .map(|(t, _)| *t)
            .collect();
        for txn in &expired {
            log::warn!("lease expired for prepared txn {txn}; aborting");
            self.abort(*txn);
        }
        expired.len()
    }

    /// Read at a snapshot. A prepared write from a transaction whose
    /// snapshot precedes ours may still commit below our snapshot; that
    /// surfaces as `Locked` (the caller retries) unless its lease expired.
    pub fn read(&mut self, key: &[u8], snapshot: Timestamp) -> ReadOutcome {
        let expired = match self.chains.get(key) {
            None => return ReadOutcome::Absent,
            Some(chain) => match &chain.lock {
                Some(lock) if self.lock_blocks(lock, snapshot) => {
                    if !self.lease_expired(lock.txn, Instant::now()) {
                        return ReadOutcome::Locked;
                    }
                    Some(lock.txn)
                }
                _ => None,
            },
        };
        if let Some(txn) = expired {
            log::warn!("lease expired for prepared txn {txn}; aborting");
            self.abort(txn);
        }
        self.read_unlocked(key, snapshot)
    }

    /// Read ignoring prepared state entirely; lease expiry is not checked.
    pub fn read_unlocked(&self, key: &[u8], snapshot: Timestamp) -> ReadOutcome {
        match self.chains.get(key).and_then(|c| c.visible(snapshot)) {
            None => ReadOutcome::Absent,
            Some(Version { ts, datum: Datum::Value(v) }) => {
                ReadOutcome::Found { ts: *ts, value: v.clone() }
            }
            Some(Version { ts, datum: Datum::Tombstone }) => ReadOutcome::Deleted { ts: *ts },
        }
    }

    /// Visible, non-deleted entries in `[start, end)` in key order. An
    /// empty `end` means unbounded.
    pub fn scan(
        &mut self,
        start: &[u8],
        end: &[u8],
        snapshot: Timestamp,
        limit: usize,
    ) -> Result<Vec<ScanEntry>, ScanLocked> {
        if !end.is_empty() && end <= start {
            return Ok(Vec::new());
        }
        let upper = if end.is_empty() { Bound::Unbounded } else { Bound::Excluded(end) };
        let now = Instant::now();
        let mut expired = Vec::new();
        for (_, chain) in self.chains.range::<[u8], _>((Bound::Included(start), upper)) {
            if let Some(lock) = &chain.lock {
                if self.lock_blocks(lock, snapshot) {
                    if self.lease_expired(lock.txn, now) {
                        expired.push(lock.txn);
                    } else {
                        return Err(ScanLocked);
                    }
                }
            }
        }
        for txn in expired {
            self.abort(txn);
        }
        let mut out = Vec::new();
        for (key, chain) in self.chains.range::<[u8], _>((Bound::Included(start), upper)) {
            if out.len() >= limit {
                break;
            }
            if let Some(Version { ts, datum: Datum::Value(v) }) = chain.visible(snapshot) {
                out.push(ScanEntry { key: key.clone(), ts: *ts, value: v.clone() });
            }
        }
        Ok(out)
    }

    /// First phase of commit with first-committer-wins validation.
    /// All-or-nothing: on a non-`Ok` vote nothing is staged.
    pub fn prepare(
        &mut self,
        txn: TxnId,
        snapshot: Timestamp,
        writes: Vec<(Vec<u8>, Datum)>,
    ) -> Result<Vote, ProtocolError> {
        if self.prepared.contains_key(&txn) || self.finished.contains_key(&txn) {
            return Err(ProtocolError::DuplicatePrepare(txn));
        }
        for (key, _) in &writes {
            if let Some(newest) = self.chains.get(key).and_then(VersionChain::newest_ts) {
                if newest > snapshot {
                    return Ok(Vote::Conflict);
                }
            }
        }
        let now = Instant::now();
        let mut expired = Vec::new();
        for (key, _) in &writes {
            if let Some(lock) = self.chains.get(key).and_then(|c| c.lock.as_ref()) {
                if self.lease_expired(lock.txn, now) {
                    expired.push(lock.txn);
                } else {
                    return Ok(Vote::Locked);
                }
            }
        }
        for holder in expired {
            log::warn!("lease expired for prepared txn {holder}; aborting");
            self.abort(holder);
        }
        let mut keys = Vec::with_capacity(writes.len());
        for (key, datum) in writes {
            let chain = self.chains.entry(key.clone()).or_default();
            chain.lock = Some(PreparedLock { txn, staged: datum, snapshot });
            keys.push(key);
        }
        self.prepared.insert(txn, Prepared { snapshot, keys, at: now });
        Ok(Vote::Ok)
    }

    /// Install the staged writes of `txn` at `commit_ts` and return them.
    /// Replaying a finished commit returns an empty list.
    pub fn commit(
        &mut self,
        txn: TxnId,
        commit_ts: Timestamp,
    ) -> Result<Vec<(Vec<u8>, Datum)>, ProtocolError> {
        let Some(prep) = self.prepared.get(&txn) else {
            return match self.finished.get(&txn) {
                Some(Finished::Committed(_)) => Ok(Vec::new()),
                Some(Finished::Aborted) => Err(ProtocolError::AlreadyAborted(txn)),
                None => Err(ProtocolError::UnknownTxn(txn)),
            };
        };
        if commit_ts <= prep.snapshot {
            return Err(ProtocolError::StaleCommitTs { commit: commit_ts, snapshot: prep.snapshot });
        }
        let prep = self.prepared.remove(&txn).expect("checked above");
        let mut applied = Vec::with_capacity(prep.keys.len());
        for key in prep.keys {
            let chain = self.chains.get_mut(&key).expect("prepared key has a chain");
            let lock = chain.lock.take().expect("prepared key holds its lock");
            debug_assert_eq!(lock.txn, txn);
            chain.install(commit_ts, lock.staged.clone());
            applied.push((key, lock.staged));
        }
        self.remember(txn, Finished::Committed(commit_ts));
        Ok(applied)
    }

    /// Release everything `txn` staged. Unknown transactions are a no-op.
    pub fn abort(&mut self, txn: TxnId) {
        let Some(prep) = self.prepared.remove(&txn) else {
            return;
        };
        for key in prep.keys {
            if let Some(chain) = self.chains.get_mut(&key) {
                if chain.lock.as_ref().is_some_and(|l| l.txn == txn) {
                    chain.lock = None;
                }
                if chain.is_empty() {
                    self.chains.remove(&key);
                }
            }
        }
        self.remember(txn, Finished::Aborted);
    }

    /// Apply a committed write from the recovery log.
    pub fn apply_committed(&mut self, txn: TxnId, ts: Timestamp, key: Vec<u8>, datum: Datum) {
        self.chains.entry(key).or_default().install(ts, datum);
        if !self.finished.contains_key(&txn) {
            self.remember(txn, Finished::Committed(ts));
        }
    }

    /// Drop versions no snapshot at or above `watermark` can see.
    pub fn gc(&mut self, watermark: Timestamp) -> u64 {
        let mut removed = 0u64;
        self.chains.retain(|_, chain| {
            let keep = chain.versions.partition_point(|v| v.ts > watermark) + 1;
            if chain.versions.len() > keep {
                removed += (chain.versions.len() - keep) as u64;
                chain.versions.truncate(keep);
            }
            let dead = chain.lock.is_none()
                && chain.versions.len() == 1
                && chain.versions[0].ts <= watermark
                && chain.versions[0].datum == Datum::Tombstone;
            if dead {
                removed += 1;
            }
            !dead
        });
        removed
    }

    fn remember(&mut self, txn: TxnId, outcome: Finished) {
        if self.finished.insert(txn, outcome).is_none() {
            self.finished_order.push_back(txn);
            if self.finished_order.len() > FINISHED_CAPACITY {
                if let Some(old) = self.finished_order.pop_front() {
                    self.finished.remove(&old);
                }
            }
        }
    }
}
