//! Oracles and workload drivers shared by the integration suites.
#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::{Arc, Mutex};

use dbtree::dbt::{self, TreeId};
use dbtree::kvserver::KvServer;
use dbtree::sql::{
    load_table, parse, verify_indexes, CmpOp, ColumnType, Projection, QueryResult, Session, SessionOptions,
    SqlError, Statement, Value,
};
use dbtree::txn::history::{History, HistoryLog};
use dbtree::txn::Client;
use dbtree::wire::loopback::Loopback;
use dbtree::wire::sched::{Policy, Scheduler};
use dbtree::wire::{
    Body, Datum, ErrorCode, Message, ReadOutcome, ScanEntry, ServerId, Timestamp, Transport, TxnId, Vote,
};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Zipf};

pub fn loopback_client(n: usize) -> (Arc<Loopback>, Client) {
    let lb = Arc::new(Loopback::cluster(n));
    let client = Client::new(lb.clone());
    (lb, client)
}

// ---------------------------------------------------------------- wire

fn arb_bytes(min: usize, max: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(any::<u8>(), min..=max)
}

fn arb_ts() -> impl Strategy<Value = Timestamp> {
    any::<u64>().prop_map(Timestamp)
}

fn arb_datum() -> impl Strategy<Value = Datum> {
    prop_oneof![Just(Datum::Tombstone), arb_bytes(0, 48).prop_map(Datum::Value)]
}

fn arb_outcome() -> impl Strategy<Value = ReadOutcome> {
    prop_oneof![
        Just(ReadOutcome::Absent),
        Just(ReadOutcome::Locked),
        arb_ts().prop_map(|ts| ReadOutcome::Deleted { ts }),
        (arb_ts(), arb_bytes(0, 48)).prop_map(|(ts, value)| ReadOutcome::Found { ts, value }),
    ]
}

fn arb_code() -> impl Strategy<Value = ErrorCode> {
    (1u8..=7).prop_map(|c| ErrorCode::from_u8(c).unwrap())
}

/// Every message kind with fields inside the codec's bounds.
pub fn arb_body() -> impl Strategy<Value = Body> {
    let key = || arb_bytes(1, 40);
    prop_oneof![
        Just(Body::TsGet),
        (key(), arb_ts()).prop_map(|(key, snapshot)| Body::Read { key, snapshot }),
        (arb_bytes(0, 40), arb_bytes(0, 40), arb_ts(), any::<u32>())
            .prop_map(|(start, end, snapshot, limit)| Body::Scan { start, end, snapshot, limit }),
        (any::<u64>(), arb_ts(), prop::collection::vec((key(), arb_datum()), 0..6))
            .prop_map(|(t, snapshot, writes)| Body::Prepare { txn: TxnId(t), snapshot, writes }),
        (any::<u64>(), arb_ts()).prop_map(|(t, commit_ts)| Body::Commit { txn: TxnId(t), commit_ts }),
        any::<u64>().prop_map(|t| Body::Abort { txn: TxnId(t) }),
        arb_ts().prop_map(|watermark| Body::Gc { watermark }),
        arb_ts().prop_map(|ts| Body::TsReply { ts }),
        arb_outcome().prop_map(Body::ReadReply),
        prop::collection::vec((key(), arb_ts(), arb_bytes(0, 40)), 0..6).prop_map(|es| Body::ScanReply {
            entries: es.into_iter().map(|(key, ts, value)| ScanEntry { key, ts, value }).collect()
        }),
        prop_oneof![Just(Vote::Ok), Just(Vote::Conflict), Just(Vote::Locked)]
            .prop_map(|vote| Body::PrepareReply { vote }),
        Just(Body::CommitReply),
        Just(Body::AbortReply),
        any::<u64>().prop_map(|removed| Body::GcReply { removed }),
        (arb_code(), ".{0,30}").prop_map(|(code, message)| Body::Error { code, message }),
    ]
}

pub fn arb_message() -> impl Strategy<Value = Message> {
    (any::<u64>(), arb_body()).prop_map(|(id, body)| Message::new(id, body))
}

// ---------------------------------------------------------------- kv oracle

/// The store as one map of committed writes per key plus the set of
/// pending transactions, replayed with the protocol rules applied
/// directly.
#[derive(Default)]
pub struct KvModel {
    committed: BTreeMap<Vec<u8>, Vec<(u64, Option<Vec<u8>>)>>,
    pending: HashMap<u64, (u64, Vec<(Vec<u8>, Datum)>)>,
    done: HashMap<u64, Option<u64>>,
}

impl KvModel {
    fn lock_on(&self, key: &[u8]) -> Option<u64> {
        self.pending.values().find(|(_, w)| w.iter().any(|(k, _)| k == key)).map(|(snap, _)| *snap)
    }

    fn visible(&self, key: &[u8], snapshot: u64) -> Option<&(u64, Option<Vec<u8>>)> {
        self.committed.get(key)?.iter().filter(|(ts, _)| *ts <= snapshot).max_by_key(|(ts, _)| *ts)
    }

    fn err(code: ErrorCode) -> Body {
        Body::Error { code, message: String::new() }
    }

    pub fn apply(&mut self, req: &Body) -> Body {
        match req.clone() {
            Body::Read { key, snapshot } => {
                if self.lock_on(&key).is_some_and(|s| s < snapshot.0) {
                    return Body::ReadReply(ReadOutcome::Locked);
                }
                Body::ReadReply(match self.visible(&key, snapshot.0) {
                    None => ReadOutcome::Absent,
                    Some((ts, Some(v))) => ReadOutcome::Found { ts: Timestamp(*ts), value: v.clone() },
                    Some((ts, None)) => ReadOutcome::Deleted { ts: Timestamp(*ts) },
                })
            }
            Body::Scan { start, end, snapshot, limit } => {
                let in_range = |k: &[u8]| k >= start.as_slice() && (end.is_empty() || k < end.as_slice());
                let blocked = self
                    .pending
                    .values()
                    .any(|(s, w)| *s < snapshot.0 && w.iter().any(|(k, _)| in_range(k)));
                if blocked {
                    return Self::err(ErrorCode::Locked);
                }
                let mut entries = Vec::new();
                for key in self.committed.keys().filter(|k| in_range(k)) {
                    if entries.len() >= limit as usize {
                        break;
                    }
                    if let Some((ts, Some(v))) = self.visible(key, snapshot.0) {
                        entries.push(ScanEntry { key: key.clone(), ts: Timestamp(*ts), value: v.clone() });
                    }
                }
                Body::ScanReply { entries }
            }
            Body::Prepare { txn, snapshot, writes } => {
                if self.pending.contains_key(&txn.0) || self.done.contains_key(&txn.0) {
                    return Self::err(ErrorCode::DuplicatePrepare);
                }
                let newer = |k: &Vec<u8>| {
                    self.committed.get(k).is_some_and(|vs| vs.iter().any(|(ts, _)| *ts > snapshot.0))
                };
                if writes.iter().any(|(k, _)| newer(k)) {
                    return Body::PrepareReply { vote: Vote::Conflict };
                }
                if writes.iter().any(|(k, _)| self.lock_on(k).is_some()) {
                    return Body::PrepareReply { vote: Vote::Locked };
                }
                self.pending.insert(txn.0, (snapshot.0, writes));
                Body::PrepareReply { vote: Vote::Ok }
            }
            Body::Commit { txn, commit_ts } => match self.pending.get(&txn.0) {
                None => match self.done.get(&txn.0) {
                    Some(Some(_)) => Body::CommitReply,
                    _ => Self::err(ErrorCode::UnknownTxn),
                },
                Some((snap, _)) if commit_ts.0 <= *snap => Self::err(ErrorCode::UnknownTxn),
                Some(_) => {
                    let (_, writes) = self.pending.remove(&txn.0).unwrap();
                    for (k, d) in writes {
                        self.committed.entry(k).or_default().push((commit_ts.0, d.into_value()));
                    }
                    self.done.insert(txn.0, Some(commit_ts.0));
                    Body::CommitReply
                }
            },
            Body::Abort { txn } => {
                if self.pending.remove(&txn.0).is_some() {
                    self.done.insert(txn.0, None);
                }
                Body::AbortReply
            }
            Body::Gc { watermark } => {
                let w = watermark.0;
                let mut removed = 0u64;
                let locked: HashSet<Vec<u8>> =
                    self.pending.values().flat_map(|(_, ws)| ws.iter().map(|(k, _)| k.clone())).collect();
                self.committed.retain(|k, vs| {
                    vs.sort_by_key(|(ts, _)| *ts);
                    let newest_old = vs.iter().rposition(|(ts, _)| *ts <= w);
                    if let Some(i) = newest_old {
                        removed += i as u64;
                        vs.drain(..i);
                    }
                    if vs.len() == 1 && vs[0].0 <= w && vs[0].1.is_none() && !locked.contains(k) {
                        removed += 1;
                        return false;
                    }
                    true
                });
                Body::GcReply { removed }
            }
            other => panic!("not a request: {other:?}"),
        }
    }
}

/// Error replies compare by code only.
pub fn normalize(b: Body) -> Body {
    match b {
        Body::Error { code, .. } => Body::Error { code, message: String::new() },
        other => other,
    }
}

/// Random single-server requests over a small key set, biased towards
/// operations that interact (commits of prepared transactions, reads near
/// the current clock).
pub fn kv_requests(seed: u64, n: usize) -> Vec<Body> {
    let mut rng = StdRng::seed_from_u64(seed);
    let keys: Vec<Vec<u8>> = (0..10).map(|i| format!("k{i}").into_bytes()).collect();
    let mut clock = 1u64;
    let mut next_txn = 1u64;
    let mut issued: Vec<(u64, u64)> = Vec::new();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let r = rng.random_range(0..100);
        let body = if r < 30 {
            Body::Read { key: keys.choose(&mut rng).unwrap().clone(), snapshot: Timestamp(rng.random_range(0..=clock + 2)) }
        } else if r < 38 {
            let bound = |rng: &mut StdRng| if rng.random_bool(0.3) { Vec::new() } else { keys.choose(rng).unwrap().clone() };
            Body::Scan {
                start: bound(&mut rng),
                end: bound(&mut rng),
                snapshot: Timestamp(rng.random_range(0..=clock + 2)),
                limit: rng.random_range(0..6),
            }
        } else if r < 63 {
            let txn = if rng.random_bool(0.15) && !issued.is_empty() {
                issued.choose(&mut rng).unwrap().0
            } else {
                next_txn += 1;
                next_txn
            };
            let snapshot = clock.saturating_sub(rng.random_range(0..5));
            let n = rng.random_range(1..=4);
            let writes = keys
                .choose_multiple(&mut rng, n)
                .map(|k| {
                    let d = if rng.random_bool(0.8) {
                        Datum::Value(vec![rng.random(); rng.random_range(0..4)])
                    } else {
                        Datum::Tombstone
                    };
                    (k.clone(), d)
                })
                .collect();
            issued.push((txn, snapshot));
            Body::Prepare { txn: TxnId(txn), snapshot: Timestamp(snapshot), writes }
        } else if r < 83 {
            let (txn, snap) = match issued.choose(&mut rng) {
                Some(&t) if rng.random_bool(0.9) => t,
                _ => (rng.random_range(1_000_000..2_000_000), 0),
            };
            let commit_ts = if rng.random_bool(0.15) {
                snap.saturating_sub(rng.random_range(0..2))
            } else {
                clock += 1;
                clock
            };
            Body::Commit { txn: TxnId(txn), commit_ts: Timestamp(commit_ts) }
        } else if r < 95 {
            let txn = match issued.choose(&mut rng) {
                Some(&(t, _)) if rng.random_bool(0.9) => t,
                _ => rng.random_range(1_000_000..2_000_000),
            };
            Body::Abort { txn: TxnId(txn) }
        } else {
            Body::Gc { watermark: Timestamp(rng.random_range(0..=clock)) }
        };
        out.push(body);
    }
    out
}

/// Replay `n` random requests against a real server and the model.
/// Returns the number of requests checked.
pub fn kv_oracle_run(seed: u64, n: usize) -> Result<usize, String> {
    let server = KvServer::in_memory(ServerId(0), 1);
    let mut model = KvModel::default();
    for (i, req) in kv_requests(seed, n).into_iter().enumerate() {
        let want = normalize(model.apply(&req));
        let got = normalize(server.handle(req.clone()));
        if got != want {
            return Err(format!("request {i} {req:?}: server {got:?}, oracle {want:?}"));
        }
    }
    Ok(n)
}

// ---------------------------------------------------------------- SI workload

pub struct SiRun {
    pub history: History,
    pub committed: usize,
    pub aborted: usize,
}

/// `clients` scheduled clients run `txns` read-modify-write transactions in
/// total over `keys` zipf-distributed keys.
pub fn si_workload(seed: u64, servers: usize, clients: usize, txns: usize, keys: u64) -> SiRun {
    let (_lb, base) = loopback_client(servers);
    let log = Arc::new(HistoryLog::new());
    let counts = Mutex::new((0usize, 0usize));
    let per_client = txns / clients;
    let jobs: Vec<Box<dyn FnOnce() + Send + '_>> = (0..clients)
        .map(|c| {
            let client = base.recording(log.clone());
            let counts = &counts;
            Box::new(move || {
                let mut rng = StdRng::seed_from_u64(seed.wrapping_mul(1000).wrapping_add(c as u64));
                let zipf = Zipf::new(keys as f64, 0.99).unwrap();
                for t in 0..per_client {
                    let mut txn = client.begin().unwrap();
                    for op in 0..rng.random_range(1..=4) {
                        let key = format!("key{}", zipf.sample(&mut rng) as u64).into_bytes();
                        match rng.random_range(0..10) {
                            0..=3 => {
                                txn.get(&key).unwrap();
                            }
                            4..=8 => {
                                let old = txn.get(&key).unwrap().unwrap_or_default();
                                let mut v = format!("{c}.{t}.{op}:").into_bytes();
                                v.extend_from_slice(&old[..old.len().min(8)]);
                                txn.put(&key, &v).unwrap();
                            }
                            _ => txn.delete(&key).unwrap(),
                        }
                    }
                    let committed = txn.commit().unwrap().is_committed();
                    let mut g = counts.lock().unwrap();
                    if committed {
                        g.0 += 1;
                    } else {
                        g.1 += 1;
                    }
                }
            }) as Box<dyn FnOnce() + Send>
        })
        .collect();
    Scheduler::run(Policy::Seeded(seed), jobs);
    let (committed, aborted) = counts.into_inner().unwrap();
    SiRun { history: log.snapshot(), committed, aborted }
}

// ---------------------------------------------------------------- dbt oracle

pub fn tree_key(k: u32) -> Vec<u8> {
    format!("{k:06}").into_bytes()
}

pub struct DbtRun {
    pub checkpoints: usize,
    pub height: u8,
    pub entries: usize,
}

fn walk_now(client: &Client, tree: TreeId) -> dbt::WalkReport {
    let mut txn = client.begin().unwrap();
    let r = dbt::walk(&txn, tree).unwrap();
    txn.abort().unwrap();
    r
}

/// 60% insert, 30% delete, 10% lookup against a `BTreeMap`, ten
/// operations per transaction, with a full check every 1000 operations
/// and an aborted batch of inserts every 5000.
pub fn dbt_oracle_run(fanout: usize, ops: usize, seed: u64, servers: usize) -> Result<DbtRun, String> {
    let (_lb, client) = loopback_client(servers);
    let mut rng = StdRng::seed_from_u64(seed);
    let mut txn = client.begin().unwrap();
    let tree = dbt::create_tree(&mut txn, fanout).map_err(|e| e.to_string())?;
    txn.commit().unwrap();
    let mut oracle: BTreeMap<Vec<u8>, Vec<u8>> = BTreeMap::new();
    let key_space = (ops as u32 / 6).max(64);
    let mut checkpoints = 0;
    let mut done = 0;
    while done < ops {
        let mut txn = client.begin().unwrap();
        let mut staged = oracle.clone();
        for _ in 0..10.min(ops - done) {
            let key = tree_key(rng.random_range(0..key_space));
            match rng.random_range(0..10) {
                0..=5 => {
                    let val = format!("v{}", rng.random::<u32>()).into_bytes();
                    dbt::insert(&mut txn, tree, &key, &val).map_err(|e| e.to_string())?;
                    staged.insert(key, val);
                }
                6..=8 => {
                    dbt::delete(&mut txn, tree, &key).map_err(|e| e.to_string())?;
                    staged.remove(&key);
                }
                _ => {
                    let got = dbt::lookup(&txn, tree, &key).map_err(|e| e.to_string())?;
                    if got.as_ref() != staged.get(&key) {
                        return Err(format!("op {done}: lookup {key:?} gave {got:?}"));
                    }
                }
            }
            done += 1;
            if done % 1000 == 0 {
                checkpoints += 1;
            }
        }
        if !txn.commit().map_err(|e| e.to_string())?.is_committed() {
            return Err(format!("single-client commit aborted at op {done}"));
        }
        oracle = staged;

        if done % 1000 == 0 {
            let report = walk_now(&client, tree);
            if !report.passed() {
                return Err(format!("walk at op {done}:\n{report}"));
            }
            if report.entries != oracle.len() {
                return Err(format!("walk at op {done} counted {} entries, oracle {}", report.entries, oracle.len()));
            }
            let txn = client.begin().unwrap();
            let all = dbt::scan(&txn, tree, b"", None, usize::MAX).map_err(|e| e.to_string())?;
            let want: Vec<_> = oracle.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
            if all != want {
                return Err(format!("full scan at op {done} differs from oracle"));
            }
            for _ in 0..5 {
                let a = tree_key(rng.random_range(0..key_space));
                let b = tree_key(rng.random_range(0..key_space));
                let limit = rng.random_range(1..40);
                let got = dbt::scan(&txn, tree, &a, Some(&b), limit).map_err(|e| e.to_string())?;
                let want: Vec<_> = oracle
                    .range(a.clone()..)
                    .take_while(|(k, _)| **k < b)
                    .take(limit)
                    .map(|(k, v)| (k.clone(), v.clone()))
                    .collect();
                if got != want {
                    return Err(format!("scan [{a:?}, {b:?}) limit {limit} at op {done} differs"));
                }
            }
        }
        if done % 5000 == 0 {
            let before = walk_now(&client, tree);
            let mut txn = client.begin().unwrap();
            for _ in 0..3 * fanout {
                let key = tree_key(rng.random_range(0..key_space));
                dbt::insert(&mut txn, tree, &key, b"never").map_err(|e| e.to_string())?;
            }
            txn.abort().unwrap();
            let after = walk_now(&client, tree);
            if before != after {
                return Err(format!("aborted batch at op {done} changed the tree"));
            }
        }
    }
    let report = walk_now(&client, tree);
    Ok(DbtRun { checkpoints, height: report.height, entries: report.entries })
}

// ---------------------------------------------------------------- move_node exploration

pub struct MoveExploration {
    pub schedules: usize,
    pub targets: usize,
    /// Every target's schedule space was enumerated within the limit.
    pub exhaustive: bool,
    pub failures: Vec<String>,
}

/// Build a three-level tree, then for a root, an inner node and a leaf,
/// run every interleaving of one `move_node` with one lookup of each probe
/// key below that node.
pub fn explore_moves(limit_per_target: usize) -> MoveExploration {
    let (lb, client) = loopback_client(2);
    let mut txn = client.begin().unwrap();
    let tree = dbt::create_tree(&mut txn, 4).unwrap();
    txn.commit().unwrap();
    let mut n = 0u32;
    loop {
        let mut txn = client.begin().unwrap();
        dbt::insert(&mut txn, tree, &tree_key(n), format!("v{n}").as_bytes()).unwrap();
        assert!(txn.commit().unwrap().is_committed());
        n += 1;
        if walk_now(&client, tree).height >= 2 {
            break;
        }
    }
    let report = walk_now(&client, tree);
    assert!(report.passed() && report.height == 2, "{report}");
    let floor = client.timestamp().unwrap();
    let images: Vec<_> = lb.servers().iter().map(|s| s.store_image()).collect();

    let root = report.root;
    let inner = report.nodes.iter().find(|i| i.height == 1).unwrap();
    let leaf = report.nodes.iter().find(|i| i.height == 0 && i.parent != Some(inner.id)).unwrap();
    let keys_under = |first: &Option<Vec<u8>>| -> Vec<u32> {
        let start = first.as_ref().map(|k| String::from_utf8_lossy(k).parse::<u32>().unwrap()).unwrap_or(0);
        vec![start, (start + 1).min(n - 1)]
    };
    let targets = [(root, vec![0, n / 2, n - 1]), (inner.id, keys_under(&inner.first_key)), (leaf.id, keys_under(&leaf.first_key))];

    let mut out = MoveExploration { schedules: 0, targets: targets.len(), exhaustive: true, failures: Vec::new() };
    for (node, probe) in targets.into_iter().flat_map(|(node, keys)| keys.into_iter().map(move |k| (node, k))) {
        let failures = Mutex::new(Vec::new());
        let runs = dbtree::wire::sched::explore(
            |script| {
                let servers = images
                    .iter()
                    .enumerate()
                    .map(|(i, img)| Arc::new(KvServer::from_store(ServerId(i as u16), 2, img.clone(), floor)))
                    .collect();
                let client = Client::new(Arc::new(Loopback::new(servers)));
                let dest = ServerId(if node.server(2) == ServerId(0) { 1 } else { 0 });
                let mover = client.clone();
                let failures = &failures;
                let jobs: Vec<Box<dyn FnOnce() + Send + '_>> = vec![
                    Box::new(move || {
                        let mut txn = mover.begin().unwrap();
                        dbt::move_node(&mut txn, tree, node, dest).unwrap();
                        if !txn.commit().unwrap().is_committed() {
                            failures.lock().unwrap().push(format!("move of {node} aborted"));
                        }
                    }),
                    Box::new(move || {
                        let txn = client.begin().unwrap();
                        match dbt::lookup(&txn, tree, &tree_key(probe)) {
                            Ok(Some(v)) if v == format!("v{probe}").as_bytes() => {}
                            other => failures.lock().unwrap().push(format!("lookup {probe} near {node}: {other:?}")),
                        }
                    }),
                ];
                Scheduler::run(Policy::Script(script), jobs)
            },
            limit_per_target,
        );
        out.schedules += runs;
        out.exhaustive &= runs < limit_per_target;
        out.failures.extend(failures.into_inner().unwrap());
    }
    out
}

// ---------------------------------------------------------------- SQL reference

/// Canonical text of a value; zero floats of either sign are equal.
pub fn canon(v: &Value) -> String {
    match v {
        Value::Float(x) if *x == 0.0 => "F0".to_string(),
        Value::Float(x) => format!("F{x:e}"),
        Value::Int(i) => format!("I{i}"),
        Value::Text(s) => format!("T{s:?}"),
    }
}

/// Comparable outcome of one statement.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Rows { columns: Vec<String>, rows: Vec<Vec<String>> },
    Count(u64),
    Ok,
    Err(&'static str),
}

pub fn error_class(e: &SqlError) -> &'static str {
    match e {
        SqlError::Parse(_) => "parse",
        SqlError::Plan(_) => "plan",
        SqlError::Schema(_) => "schema",
        SqlError::DuplicateTable(_) => "duplicate-table",
        SqlError::DuplicateIndex { .. } => "duplicate-index",
        SqlError::DuplicateKey { .. } => "duplicate-key",
        SqlError::TxnState(_) => "txn-state",
        _ => "other",
    }
}

fn sorted_unless(ordered: bool, mut rows: Vec<Vec<String>>) -> Vec<Vec<String>> {
    if !ordered {
        rows.sort();
    }
    rows
}

pub fn engine_outcome(stmt: &Statement, r: Result<QueryResult, SqlError>) -> Outcome {
    let ordered = matches!(stmt, Statement::Select { order_by: Some(_), .. });
    match r {
        Ok(QueryResult::Rows { columns, rows }) => Outcome::Rows {
            columns,
            rows: sorted_unless(ordered, rows.iter().map(|r| r.iter().map(canon).collect()).collect()),
        },
        Ok(QueryResult::Count(n)) => Outcome::Count(n),
        Ok(QueryResult::Ok) => Outcome::Ok,
        Err(e) => Outcome::Err(error_class(&e)),
    }
}

#[derive(Clone, Debug)]
pub struct RefTable {
    pub columns: Vec<(String, ColumnType)>,
    pub pk: usize,
    pub indexed: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

fn ref_cmp(a: &Value, b: &Value) -> Ordering {
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => x.cmp(y),
        (Value::Text(x), Value::Text(y)) => x.as_bytes().cmp(y.as_bytes()),
        (Value::Float(x), Value::Float(y)) => x.partial_cmp(y).expect("no NaN in the workload"),
        _ => panic!("cross-type comparison {a:?} {b:?}"),
    }
}

fn ty(v: &Value) -> ColumnType {
    match v {
        Value::Int(_) => ColumnType::Int,
        Value::Float(_) => ColumnType::Float,
        Value::Text(_) => ColumnType::Text,
    }
}

/// Single-process executor for the SQL subset: tables are vectors of rows,
/// every query is a filter over all of them.
#[derive(Clone, Debug, Default)]
pub struct RefDb {
    pub tables: BTreeMap<String, RefTable>,
    saved: Option<BTreeMap<String, RefTable>>,
}

impl RefDb {
    fn col(&self, t: &RefTable, name: &str) -> Result<usize, &'static str> {
        t.columns.iter().position(|(c, _)| c == name).ok_or("plan")
    }

    fn matches(t: &RefTable, row: &[Value], pred: &[(usize, CmpOp, Value)]) -> bool {
        pred.iter().all(|(i, op, v)| {
            let o = ref_cmp(&row[*i], v);
            match op {
                CmpOp::Eq => o == Ordering::Equal,
                CmpOp::Lt => o == Ordering::Less,
                CmpOp::Le => o != Ordering::Greater,
                CmpOp::Gt => o == Ordering::Greater,
                CmpOp::Ge => o != Ordering::Less,
            }
        }) && !t.columns.is_empty()
    }

    fn resolve(&self, table: &str, pred: &[dbtree::sql::Comparison]) -> Result<Vec<(usize, CmpOp, Value)>, &'static str> {
        let t = self.tables.get(table).ok_or("plan")?;
        pred.iter()
            .map(|c| {
                let i = self.col(t, &c.column)?;
                if ty(&c.value) != t.columns[i].1 {
                    return Err("plan");
                }
                Ok((i, c.op, c.value.clone()))
            })
            .collect()
    }

    pub fn execute(&mut self, stmt: &Statement) -> Outcome {
        match self.exec(stmt) {
            Ok(o) => o,
            Err(e) => Outcome::Err(e),
        }
    }

    fn exec(&mut self, stmt: &Statement) -> Result<Outcome, &'static str> {
        match stmt {
            Statement::Begin => {
                if self.saved.is_some() {
                    return Err("txn-state");
                }
                self.saved = Some(self.tables.clone());
                Ok(Outcome::Ok)
            }
            Statement::Commit => self.saved.take().map(|_| Outcome::Ok).ok_or("txn-state"),
            Statement::Rollback => {
                self.tables = self.saved.take().ok_or("txn-state")?;
                Ok(Outcome::Ok)
            }
            Statement::CreateTable { name, columns } => {
                if self.tables.contains_key(name) {
                    return Err("duplicate-table");
                }
                let pk = columns.iter().position(|c| c.primary_key).ok_or("schema")?;
                self.tables.insert(
                    name.clone(),
                    RefTable {
                        columns: columns.iter().map(|c| (c.name.clone(), c.ty)).collect(),
                        pk,
                        indexed: Vec::new(),
                        rows: Vec::new(),
                    },
                );
                Ok(Outcome::Ok)
            }
            Statement::CreateIndex { table, column, .. } => {
                let t = self.tables.get_mut(table).ok_or("plan")?;
                t.indexed.push(column.clone());
                Ok(Outcome::Ok)
            }
            Statement::Insert { table, columns, values } => {
                let t = self.tables.get(table).ok_or("plan")?;
                let row: Vec<Value> = match columns {
                    None => values.clone(),
                    Some(names) => {
                        let mut slots = vec![None; t.columns.len()];
                        for (n, v) in names.iter().zip(values) {
                            slots[self.col(t, n)?] = Some(v.clone());
                        }
                        slots.into_iter().collect::<Option<_>>().ok_or("schema")?
                    }
                };
                if row.len() != t.columns.len() {
                    return Err("schema");
                }
                if row.iter().zip(&t.columns).any(|(v, (_, c))| ty(v) != *c) {
                    return Err("plan");
                }
                let pk = t.pk;
                if t.rows.iter().any(|r| ref_cmp(&r[pk], &row[pk]) == Ordering::Equal) {
                    return Err("duplicate-key");
                }
                self.tables.get_mut(table).unwrap().rows.push(row);
                Ok(Outcome::Count(1))
            }
            Statement::Select { projection, table, predicate, order_by, limit } => {
                let pred = self.resolve(table, predicate)?;
                let t = &self.tables[table];
                let cols: Vec<usize> = match projection {
                    Projection::All => (0..t.columns.len()).collect(),
                    Projection::Columns(names) => names.iter().map(|n| self.col(t, n)).collect::<Result<_, _>>()?,
                };
                let order = order_by.as_deref().map(|n| self.col(t, n)).transpose()?;
                let mut rows: Vec<&Vec<Value>> = t.rows.iter().filter(|r| Self::matches(t, r, &pred)).collect();
                if let Some(o) = order {
                    rows.sort_by(|a, b| ref_cmp(&a[o], &b[o]).then_with(|| ref_cmp(&a[t.pk], &b[t.pk])));
                }
                if let Some(l) = limit {
                    rows.truncate(*l as usize);
                }
                let out = rows.iter().map(|r| cols.iter().map(|&i| canon(&r[i])).collect()).collect();
                Ok(Outcome::Rows {
                    columns: cols.iter().map(|&i| t.columns[i].0.clone()).collect(),
                    rows: sorted_unless(order.is_some(), out),
                })
            }
            Statement::Update { table, assignments, predicate } => {
                let pred = self.resolve(table, predicate)?;
                let t = &self.tables[table];
                let mut set = Vec::new();
                for (name, v) in assignments {
                    let i = self.col(t, name)?;
                    if i == t.pk || set.iter().any(|(j, _)| *j == i) || ty(v) != t.columns[i].1 {
                        return Err("plan");
                    }
                    set.push((i, v.clone()));
                }
                let t = self.tables.get_mut(table).unwrap();
                let mut n = 0;
                for r in t.rows.iter_mut() {
                    let hit = pred.iter().all(|(i, op, v)| {
                        let o = ref_cmp(&r[*i], v);
                        match op {
                            CmpOp::Eq => o == Ordering::Equal,
                            CmpOp::Lt => o == Ordering::Less,
                            CmpOp::Le => o != Ordering::Greater,
                            CmpOp::Gt => o == Ordering::Greater,
                            CmpOp::Ge => o != Ordering::Less,
                        }
                    });
                    if hit {
                        for (i, v) in &set {
                            r[*i] = v.clone();
                        }
                        n += 1;
                    }
                }
                Ok(Outcome::Count(n))
            }
            Statement::Delete { table, predicate } => {
                let pred = self.resolve(table, predicate)?;
                let t = self.tables.get_mut(table).unwrap();
                let before = t.rows.len();
                let snapshot = t.clone();
                t.rows.retain(|r| !Self::matches(&snapshot, r, &pred));
                Ok(Outcome::Count((before - t.rows.len()) as u64))
            }
        }
    }

    /// Full contents of `table` in primary-key order.
    pub fn contents(&self, table: &str) -> Vec<Vec<String>> {
        let t = &self.tables[table];
        let mut rows = t.rows.clone();
        rows.sort_by(|a, b| ref_cmp(&a[t.pk], &b[t.pk]));
        rows.iter().map(|r| r.iter().map(canon).collect()).collect()
    }
}

// ---------------------------------------------------------------- SQL workload

pub const SQL_TABLES: [(&str, &str); 3] = [("a", "id"), ("b", "k"), ("c", "id")];

const SETUP: [&str; 5] = [
    "CREATE TABLE a (id INT PRIMARY KEY, x INT, s TEXT)",
    "CREATE INDEX ax ON a (x)",
    "CREATE TABLE b (k TEXT PRIMARY KEY, f FLOAT, n INT)",
    "CREATE INDEX bf ON b (f)",
    "CREATE TABLE c (id INT PRIMARY KEY, v TEXT, w FLOAT)",
];

const TEXTS: [&str; 14] = ["", "a", "a\0", "a\0b", "\0", "\0\0", "ab", "b", "a'b", "zz", "é", "a b", "A", "a\u{1}"];
const FLOATS: [f64; 15] = [
    -0.0,
    0.0,
    1.0,
    -1.0,
    1.5,
    -2.25,
    1e308,
    -1e308,
    5e-324,
    -5e-324,
    2.2250738585072014e-308,
    1e-300,
    0.1,
    3.0e15,
    f64::MAX,
];
const INT_EDGES: [i64; 6] = [i64::MIN, i64::MIN + 1, -1, 0, i64::MAX - 1, i64::MAX];

struct Gen {
    rng: StdRng,
}

impl Gen {
    fn int(&mut self) -> i64 {
        if self.rng.random_bool(0.1) {
            *INT_EDGES.choose(&mut self.rng).unwrap()
        } else {
            self.rng.random_range(-20..20)
        }
    }

    fn pk_int(&mut self) -> i64 {
        if self.rng.random_bool(0.03) {
            *INT_EDGES.choose(&mut self.rng).unwrap()
        } else {
            self.rng.random_range(0..600)
        }
    }

    fn text(&mut self) -> String {
        TEXTS.choose(&mut self.rng).unwrap().to_string()
    }

    fn pk_text(&mut self) -> String {
        if self.rng.random_bool(0.3) {
            self.text()
        } else {
            let n = self.rng.random_range(0..500);
            let sep = ["", "\0", "\0\0", " "].choose(&mut self.rng).unwrap();
            format!("k{sep}{n}")
        }
    }

    fn float(&mut self) -> f64 {
        if self.rng.random_bool(0.5) {
            *FLOATS.choose(&mut self.rng).unwrap()
        } else {
            self.rng.random_range(-8..8) as f64 * 0.5
        }
    }

    fn value(&mut self, ty: ColumnType) -> Value {
        match ty {
            ColumnType::Int => Value::Int(self.int()),
            ColumnType::Float => Value::Float(self.float()),
            ColumnType::Text => Value::Text(self.text()),
        }
    }

    fn wrong(&mut self, ty: ColumnType) -> Value {
        match ty {
            ColumnType::Int => Value::Text("1".into()),
            ColumnType::Float => Value::Int(1),
            ColumnType::Text => Value::Float(1.0),
        }
    }

    fn op(&mut self) -> &'static str {
        ["=", "<", "<=", ">", ">=", "="].choose(&mut self.rng).unwrap()
    }

    /// A literal for column `i`, half the time one already stored.
    fn literal(&mut self, t: &RefTable, i: usize) -> Value {
        if !t.rows.is_empty() && self.rng.random_bool(0.5) {
            return t.rows.choose(&mut self.rng).unwrap()[i].clone();
        }
        if i == t.pk {
            return match t.columns[i].1 {
                ColumnType::Int => Value::Int(self.pk_int()),
                _ => Value::Text(self.pk_text()),
            };
        }
        self.value(t.columns[i].1)
    }

    fn predicate(&mut self, t: &RefTable, max: usize) -> String {
        let n = self.rng.random_range(0..=max);
        let mut parts = Vec::new();
        for _ in 0..n {
            let i = self.rng.random_range(0..t.columns.len());
            let v = if self.rng.random_bool(0.01) { self.wrong(t.columns[i].1) } else { self.literal(t, i) };
            let op = self.op();
            parts.push(format!("{} {op} {}", t.columns[i].0, v.to_sql()));
        }
        if parts.is_empty() {
            String::new()
        } else {
            format!(" WHERE {}", parts.join(" AND "))
        }
    }

    fn insert(&mut self, name: &str, t: &RefTable) -> String {
        let mut vals: Vec<Value> = (0..t.columns.len())
            .map(|i| {
                if i == t.pk && !t.rows.is_empty() && self.rng.random_bool(0.08) {
                    t.rows.choose(&mut self.rng).unwrap()[i].clone()
                } else if i == t.pk {
                    self.literal(&RefTable { rows: Vec::new(), ..t.clone() }, i)
                } else {
                    self.value(t.columns[i].1)
                }
            })
            .collect();
        if self.rng.random_bool(0.03) {
            let i = self.rng.random_range(0..t.columns.len());
            vals[i] = self.wrong(t.columns[i].1);
        }
        if self.rng.random_bool(0.3) {
            let mut order: Vec<usize> = (0..t.columns.len()).collect();
            order.shuffle(&mut self.rng);
            let cols: Vec<&str> = order.iter().map(|&i| t.columns[i].0.as_str()).collect();
            let vs: Vec<String> = order.iter().map(|&i| vals[i].to_sql()).collect();
            format!("INSERT INTO {name} ({}) VALUES ({})", cols.join(", "), vs.join(", "))
        } else {
            let vs: Vec<String> = vals.iter().map(Value::to_sql).collect();
            format!("INSERT INTO {name} VALUES ({})", vs.join(", "))
        }
    }

    fn select(&mut self, name: &str, t: &RefTable) -> String {
        let proj = if self.rng.random_bool(0.4) {
            "*".to_string()
        } else {
            let n = self.rng.random_range(1..=t.columns.len());
            let cols: Vec<&str> =
                t.columns.choose_multiple(&mut self.rng, n).map(|(c, _)| c.as_str()).collect();
            cols.join(", ")
        };
        let mut sql = format!("SELECT {proj} FROM {name}{}", self.predicate(t, 2));
        if self.rng.random_bool(0.35) {
            let (c, _) = t.columns.choose(&mut self.rng).unwrap();
            sql.push_str(&format!(" ORDER BY {c}"));
            if self.rng.random_bool(0.5) {
                sql.push_str(&format!(" LIMIT {}", self.rng.random_range(0..12)));
            }
        }
        sql
    }

    fn update(&mut self, name: &str, t: &RefTable) -> String {
        let non_pk: Vec<usize> = (0..t.columns.len()).filter(|&i| i != t.pk).collect();
        let n = self.rng.random_range(1..=non_pk.len());
        let mut sets: Vec<String> = non_pk
            .choose_multiple(&mut self.rng, n)
            .map(|&i| format!("{} = {}", t.columns[i].0, self.value(t.columns[i].1).to_sql()))
            .collect();
        if self.rng.random_bool(0.02) {
            sets.push(format!("{} = {}", t.columns[t.pk].0, self.literal(t, t.pk).to_sql()));
        }
        let pred = self.predicate(t, 2);
        let pred = if pred.is_empty() && self.rng.random_bool(0.8) { self.predicate(t, 1) } else { pred };
        format!("UPDATE {name} SET {}{pred}", sets.join(", "))
    }

    fn delete(&mut self, name: &str, t: &RefTable) -> String {
        if self.rng.random_bool(0.6) {
            let v = self.literal(t, t.pk);
            return format!("DELETE FROM {name} WHERE {} = {}", t.columns[t.pk].0, v.to_sql());
        }
        let i = self.rng.random_range(0..t.columns.len());
        let v = self.literal(t, i);
        let pred = format!(" WHERE {} = {}{}", t.columns[i].0, v.to_sql(), self.predicate(t, 1).replacen(" WHERE", " AND", 1));
        format!("DELETE FROM {name}{pred}")
    }

    fn statement(&mut self, db: &RefDb) -> String {
        let (name, _) = SQL_TABLES.choose(&mut self.rng).unwrap();
        let t = &db.tables[*name];
        match self.rng.random_range(0..100) {
            0..=44 => self.insert(name, t),
            45..=74 => self.select(name, t),
            75..=89 => self.update(name, t),
            _ => self.delete(name, t),
        }
    }
}

/// A workload of `n` statements with the reference outcome of each.
pub fn sql_workload(seed: u64, n: usize) -> (Vec<String>, Vec<Outcome>, RefDb) {
    let mut g = Gen { rng: StdRng::seed_from_u64(seed) };
    let mut db = RefDb::default();
    let mut sqls = Vec::with_capacity(n);
    let mut outs = Vec::with_capacity(n);
    let run = |sql: String, db: &mut RefDb, sqls: &mut Vec<String>, outs: &mut Vec<Outcome>| {
        let stmt = parse(&sql).unwrap_or_else(|e| panic!("generated {sql:?}: {e}"));
        outs.push(db.execute(&stmt));
        sqls.push(sql);
    };
    for s in SETUP {
        run(s.to_string(), &mut db, &mut sqls, &mut outs);
    }
    while sqls.len() < n {
        if g.rng.random_bool(0.06) && n - sqls.len() >= 6 {
            run("BEGIN".into(), &mut db, &mut sqls, &mut outs);
            for _ in 0..g.rng.random_range(1..=4) {
                let s = g.statement(&db);
                run(s, &mut db, &mut sqls, &mut outs);
            }
            let end = if g.rng.random_bool(0.3) { "ROLLBACK" } else { "COMMIT" };
            run(end.into(), &mut db, &mut sqls, &mut outs);
        } else {
            let s = g.statement(&db);
            run(s, &mut db, &mut sqls, &mut outs);
        }
    }
    (sqls, outs, db)
}

pub struct SqlRun {
    pub outcomes: Vec<Outcome>,
    pub contents: BTreeMap<String, Vec<Vec<String>>>,
    pub index_findings: Vec<String>,
}

/// Execute `sqls` in one session and collect outcomes, final contents and
/// index-consistency findings.
pub fn run_sql(client: Client, sqls: &[String], fanout: usize) -> SqlRun {
    let mut session = Session::with_options(client.clone(), SessionOptions { fanout, ..SessionOptions::default() });
    let mut outcomes = Vec::with_capacity(sqls.len());
    for sql in sqls {
        let stmt = parse(sql).unwrap();
        outcomes.push(engine_outcome(&stmt, session.execute(sql)));
    }
    let mut contents = BTreeMap::new();
    let mut index_findings = Vec::new();
    for (t, pk) in SQL_TABLES {
        let sql = format!("SELECT * FROM {t} ORDER BY {pk}");
        match engine_outcome(&parse(&sql).unwrap(), session.execute(&sql)) {
            Outcome::Rows { rows, .. } => {
                contents.insert(t.to_string(), rows);
            }
            other => index_findings.push(format!("{sql}: {other:?}")),
        }
        let mut txn = client.begin().unwrap();
        let def = load_table(&txn, t).unwrap().unwrap();
        index_findings.extend(verify_indexes(&txn, &def).unwrap());
        txn.abort().unwrap();
    }
    SqlRun { outcomes, contents, index_findings }
}

/// Compare an engine run against the reference; the first few mismatches.
pub fn sql_mismatches(sqls: &[String], want: &[Outcome], db: &RefDb, run: &SqlRun) -> Vec<String> {
    let mut bad = Vec::new();
    for (i, (w, g)) in want.iter().zip(&run.outcomes).enumerate() {
        if w != g {
            bad.push(format!("statement {i} {:?}: engine {g:?}, reference {w:?}", sqls[i]));
        }
    }
    for (t, _) in SQL_TABLES {
        if run.contents.get(t) != Some(&db.contents(t)) {
            bad.push(format!("final contents of {t} differ"));
        }
    }
    bad.extend(run.index_findings.iter().cloned());
    bad.truncate(10);
    bad
}

pub fn outcome_summary(outs: &[Outcome]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for o in outs {
        let k = match o {
            Outcome::Rows { .. } => "rows".to_string(),
            Outcome::Count(_) => "count".to_string(),
            Outcome::Ok => "ok".to_string(),
            Outcome::Err(e) => format!("err:{e}"),
        };
        *m.entry(k).or_default() += 1;
    }
    m
}

pub fn distinct_nonempty(outs: &[Outcome]) -> usize {
    outs.iter()
        .filter_map(|o| match o {
            Outcome::Rows { rows, .. } if !rows.is_empty() => Some(rows.clone()),
            _ => None,
        })
        .collect::<BTreeSet<_>>()
        .len()
}

pub fn transport_of(client: &Client) -> Arc<dyn Transport> {
    client.transport().clone()
}
