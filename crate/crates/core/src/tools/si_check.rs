//! Offline snapshot-isolation checker over a recorded [`History`].

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use crate::txn::history::{EventKind, History};
use crate::wire::{Timestamp, TxnId};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum Violation {
    #[error("malformed history at event {index}: txn {txn} {reason}")]
    Malformed { index: usize, txn: TxnId, reason: String },
    #[error(
        "txn {txn} read key {key} = {found} at snapshot {snapshot}, but the snapshot holds {expected}{}",
        writer.map(|w| format!(" (written by txn {w})")).unwrap_or_default()
    )]
    BadRead {
        txn: TxnId,
        key: String,
        snapshot: Timestamp,
        found: String,
        expected: String,
        writer: Option<TxnId>,
    },
    #[error(
        "txns {first} and {second} both committed writes to key {key} with overlapping intervals \
         ({first_snapshot}, {first_commit}] and ({second_snapshot}, {second_commit}]"
    )]
    ConcurrentWrites {
        first: TxnId,
        second: TxnId,
        key: String,
        first_snapshot: Timestamp,
        first_commit: Timestamp,
        second_snapshot: Timestamp,
        second_commit: Timestamp,
    },
}

/// Summary of a history that passed.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SiReport {
    pub txns: usize,
    pub committed: usize,
    pub aborted: usize,
    pub reads: usize,
    pub writes: usize,
}

impl fmt::Display for SiReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "PASS: {} txns ({} committed, {} aborted), {} reads, {} writes",
            self.txns, self.committed, self.aborted, self.reads, self.writes
        )
    }
}

#[derive(Default)]
struct TxnInfo {
    snapshot: Option<Timestamp>,
    commit: Option<Timestamp>,
    aborted: bool,
    /// Final buffered value per key.
    writes: BTreeMap<Vec<u8>, String>,
}

pub fn check_si(history: &History) -> Result<SiReport, Violation> {
    let mut txns: HashMap<TxnId, TxnInfo> = HashMap::new();
    let mut order: Vec<TxnId> = Vec::new();
    let malformed = |index, txn, reason: &str| Violation::Malformed { index, txn, reason: reason.to_string() };

    // Pass 1: structure and per-transaction write sets.
    for (i, e) in history.events.iter().enumerate() {
        match e.kind {
            EventKind::Begin => {
                if txns.contains_key(&e.txn) {
                    return Err(malformed(i, e.txn, "begins twice"));
                }
                order.push(e.txn);
                txns.insert(e.txn, TxnInfo { snapshot: Some(e.ts), ..TxnInfo::default() });
            }
            _ => {
                let t = txns.get_mut(&e.txn).ok_or_else(|| malformed(i, e.txn, "has an event before its begin"))?;
                if t.commit.is_some() || t.aborted {
                    return Err(malformed(i, e.txn, "has an event after it finished"));
                }
                match e.kind {
                    EventKind::Write => {
                        let key = e.key.clone().ok_or_else(|| malformed(i, e.txn, "writes without a key"))?;
                        t.writes.insert(key, e.value.clone().unwrap_or_else(|| "-".into()));
                    }
                    EventKind::Commit => {
                        if !t.writes.is_empty() && Some(e.ts) <= t.snapshot {
                            return Err(malformed(i, e.txn, "commits at or before its snapshot"));
                        }
                        t.commit = Some(e.ts);
                    }
                    EventKind::Abort => t.aborted = true,
                    EventKind::Read | EventKind::Begin => {}
                }
            }
        }
    }

    // Committed versions per key, ordered by commit timestamp.
    let mut versions: HashMap<&[u8], Vec<(Timestamp, TxnId, &str)>> = HashMap::new();
    for id in &order {
        let t = &txns[id];
        if let Some(c) = t.commit {
            for (k, v) in &t.writes {
                versions.entry(k.as_slice()).or_default().push((c, *id, v.as_str()));
            }
        }
    }
    for list in versions.values_mut() {
        list.sort();
    }

    // Pass 2: every read sees its own latest write or the snapshot.
    let mut own: HashMap<(TxnId, &[u8]), &str> = HashMap::new();
    let mut report = SiReport::default();
    for e in &history.events {
        let Some(key) = e.key.as_deref() else { continue };
        let value = e.value.as_deref().unwrap_or("-");
        match e.kind {
            EventKind::Write => {
                report.writes += 1;
                own.insert((e.txn, key), value);
            }
            EventKind::Read => {
                report.reads += 1;
                let snapshot = txns[&e.txn].snapshot.unwrap();
                let (expected, writer) = match own.get(&(e.txn, key)) {
                    Some(v) => (*v, None),
                    None => {
                        let visible = versions
                            .get(key)
                            .and_then(|list| list.iter().rev().find(|(c, _, _)| *c <= snapshot));
                        match visible {
                            Some((_, w, v)) => (*v, Some(*w)),
                            None => ("-", None),
                        }
                    }
                };
                if expected != value {
                    return Err(Violation::BadRead {
                        txn: e.txn,
                        key: hex::encode(key),
                        snapshot,
                        found: value.to_string(),
                        expected: expected.to_string(),
                        writer,
                    });
                }
            }
            _ => {}
        }
    }

    // Pass 3: first-committer-wins. Checking adjacent writers of each key
    // suffices: any overlapping pair implies an overlapping adjacent pair.
    let mut worst: Option<Violation> = None;
    let mut worst_at = Timestamp(u64::MAX);
    for (key, list) in &versions {
        for w in list.windows(2) {
            let (c1, t1, _) = w[0];
            let (c2, t2, _) = w[1];
            let s2 = txns[&t2].snapshot.unwrap();
            if s2 < c1 && c2 < worst_at {
                worst_at = c2;
                worst = Some(Violation::ConcurrentWrites {
                    first: t1,
                    second: t2,
                    key: hex::encode(key),
                    first_snapshot: txns[&t1].snapshot.unwrap(),
                    first_commit: c1,
                    second_snapshot: s2,
                    second_commit: c2,
                });
            }
        }
    }
    if let Some(v) = worst {
        return Err(v);
    }

    report.txns = order.len();
    report.committed = txns.values().filter(|t| t.commit.is_some()).count();
    report.aborted = txns.values().filter(|t| t.aborted).count();
    Ok(report)
}
