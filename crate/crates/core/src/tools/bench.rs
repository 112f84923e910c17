//! YCSB-style workload driver running SQL sessions against a cluster.
//!
//! Every client owns a [`Session`]; all sessions share one transport and
//! one history log, so a run can be checked with [`check_si`](super::check_si).

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Zipf};

use crate::sql::{QueryResult, Session, SessionOptions, SqlError};
use crate::txn::history::{EventKind, History, HistoryLog};
use crate::txn::Client;
use crate::wire::Transport;

pub const TABLE: &str = "usertable";
const PRELOAD_BATCH: u64 = 50;
/// Row keys live in `0..KEY_SPACE`. Preloaded rows sit at multiples of a
/// stride so that inserted keys land between them across the whole tree.
const KEY_SPACE: u64 = 1 << 40;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KeyDist {
    Uniform,
    Zipfian(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadSpec {
    pub clients: usize,
    /// Total operations across all clients.
    pub ops: usize,
    /// Number of preloaded rows; reads, updates and scans target them.
    pub keyspace: u64,
    pub read_pct: u32,
    pub insert_pct: u32,
    pub update_pct: u32,
    pub scan_pct: u32,
    pub dist: KeyDist,
    pub seed: u64,
    pub scan_len: u64,
    pub value_len: usize,
    pub fanout: usize,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            clients: 4,
            ops: 1000,
            keyspace: 1000,
            read_pct: 50,
            insert_pct: 0,
            update_pct: 50,
            scan_pct: 0,
            dist: KeyDist::Zipfian(0.99),
            seed: 1,
            scan_len: 10,
            value_len: 32,
            fanout: crate::dbt::DEFAULT_FANOUT,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("workload spec line {line}: {message}")]
    Spec { line: usize, message: String },
    #[error("operation mix sums to {0}%, not 100%")]
    Mix(u32),
    #[error("{0}")]
    Invalid(String),
    #[error("setup failed: {0}")]
    Setup(#[from] SqlError),
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), BenchError> {
        let sum = self.read_pct + self.insert_pct + self.update_pct + self.scan_pct;
        if sum != 100 {
            return Err(BenchError::Mix(sum));
        }
        if self.clients == 0 {
            return Err(BenchError::Invalid("at least one client is required".into()));
        }
        let needs_rows = self.read_pct + self.update_pct + self.scan_pct > 0;
        if needs_rows && self.keyspace == 0 && self.ops > 0 {
            return Err(BenchError::Invalid("reads, updates and scans need a non-empty keyspace".into()));
        }
        if let KeyDist::Zipfian(theta) = self.dist {
            if !(theta > 0.0 && theta.is_finite()) {
                return Err(BenchError::Invalid(format!("zipfian theta {theta} must be positive")));
            }
        }
        Ok(())
    }

    /// Operations per client; the first `ops % clients` clients take one extra.
    pub fn ops_for(&self, client: usize) -> usize {
        self.ops / self.clients + usize::from(client < self.ops % self.clients)
    }

    /// Key of preloaded row `i`.
    pub fn row_key(&self, i: u64) -> i64 {
        (i * self.stride()) as i64
    }

    fn stride(&self) -> u64 {
        KEY_SPACE / self.keyspace.max(1)
    }

    /// The deterministic operation sequence of one client.
    pub fn client_ops(&self, client: usize) -> Vec<Op> {
        let mut rng = StdRng::seed_from_u64(self.seed ^ (client as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let zipf = match self.dist {
            KeyDist::Zipfian(theta) if self.keyspace > 0 => Some(Zipf::new(self.keyspace as f64, theta).unwrap()),
            _ => None,
        };
        let pick = |rng: &mut StdRng| -> i64 {
            match &zipf {
                Some(z) => self.row_key(z.sample(rng) as u64 - 1),
                None => self.row_key(rng.random_range(0..self.keyspace.max(1))),
            }
        };
        (0..self.ops_for(client))
            .map(|_| {
                let roll = rng.random_range(0..100u32);
                if roll < self.read_pct {
                    Op::Read(pick(&mut rng))
                } else if roll < self.read_pct + self.insert_pct {
                    let k = loop {
                        let k = rng.random_range(0..KEY_SPACE);
                        if k % self.stride() != 0 {
                            break k;
                        }
                    };
                    Op::Insert(k as i64)
                } else if roll < self.read_pct + self.insert_pct + self.update_pct {
                    Op::Update(pick(&mut rng), rng.random())
                } else {
                    Op::Scan(pick(&mut rng))
                }
            })
            .collect()
    }

    fn value(&self, tag: u64) -> String {
        let s = format!("{tag:016x}");
        s.chars().cycle().take(self.value_len).collect()
    }
}

/// `key: value` lines; `#` starts a comment. Unknown keys are errors.
impl FromStr for WorkloadSpec {
    type Err = BenchError;

    fn from_str(text: &str) -> Result<Self, BenchError> {
        let mut spec = WorkloadSpec::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| BenchError::Spec { line: n + 1, message };
            let (k, v) = line.split_once(':').ok_or_else(|| err("expected `key: value`".into()))?;
            let (k, v) = (k.trim(), v.trim());
            fn num<T: FromStr>(v: &str) -> Result<T, String> {
                v.parse().map_err(|_| format!("invalid number {v:?}"))
            }
            let r: Result<(), String> = (|| {
                match k {
                    "clients" => spec.clients = num(v)?,
                    "ops" => spec.ops = num(v)?,
                    "keyspace" => spec.keyspace = num(v)?,
                    "read" => spec.read_pct = num(v)?,
                    "insert" => spec.insert_pct = num(v)?,
                    "update" => spec.update_pct = num(v)?,
                    "scan" => spec.scan_pct = num(v)?,
                    "seed" => spec.seed = num(v)?,
                    "scan_len" => spec.scan_len = num(v)?,
                    "value_len" => spec.value_len = num(v)?,
                    "fanout" => spec.fanout = num(v)?,
                    "distribution" => {
                        spec.dist = match v.split_whitespace().collect::<Vec<_>>().as_slice() {
                            ["uniform"] => KeyDist::Uniform,
                            ["zipfian"] => KeyDist::Zipfian(0.99),
                            ["zipfian", theta] => KeyDist::Zipfian(num(theta)?),
                            _ => return Err(format!("unknown distribution {v:?}")),
                        }
                    }
                    _ => return Err(format!("unknown key {k:?}")),
                }
                Ok(())
            })();
            r.map_err(err)?;
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Read(i64),
    Insert(i64),
    Update(i64, u64),
    Scan(i64),
}

impl Op {
    fn sql(&self, spec: &WorkloadSpec) -> String {
        match *self {
            Op::Read(k) => format!("SELECT v FROM {TABLE} WHERE k = {k}"),
            Op::Insert(k) => format!("INSERT INTO {TABLE} VALUES ({k}, '{}')", spec.value(k as u64)),
            Op::Update(k, tag) => format!("UPDATE {TABLE} SET v = '{}' WHERE k = {k}", spec.value(tag)),
            Op::Scan(k) => format!("SELECT k, v FROM {TABLE} WHERE k >= {k} LIMIT {}", spec.scan_len),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchReport {
    pub clients: usize,
    pub ops: usize,
    pub elapsed: Duration,
    pub throughput: f64,
    pub p50_us: u64,
    pub p99_us: u64,
    pub txns: usize,
    pub aborts: usize,
    pub abort_rate: f64,
    /// Statements that failed after retries, including conflicts.
    pub errors: usize,
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "clients: {}", self.clients)?;
        writeln!(f, "ops: {}", self.ops)?;
        writeln!(f, "elapsed_s: {:.3}", self.elapsed.as_secs_f64())?;
        writeln!(f, "throughput_ops_per_s: {:.1}", self.throughput)?;
        writeln!(f, "latency_p50_us: {}", self.p50_us)?;
        writeln!(f, "latency_p99_us: {}", self.p99_us)?;
        writeln!(f, "txns: {}", self.txns)?;
        writeln!(f, "aborts: {}", self.aborts)?;
        writeln!(f, "abort_rate: {:.4}", self.abort_rate)?;
        writeln!(f, "errors: {}", self.errors)
    }
}

pub struct BenchResult {
    pub report: BenchReport,
    /// Every event of the run, including setup.
    pub history: History,
}

#[derive(Default)]
struct ClientStats {
    latencies_us: Vec<u64>,
    errors: usize,
}

/// A client job handed to a runner.
pub type Job<'a> = Box<dyn FnOnce() + Send + 'a>;

/// Create and preload the table, then run the clients on OS threads.
pub fn run_bench(spec: &WorkloadSpec, transport: Arc<dyn Transport>) -> Result<BenchResult, BenchError> {
    run_bench_with(spec, transport, |jobs| {
        thread::scope(|s| {
            for job in jobs {
                s.spawn(job);
            }
        })
    })
}

/// Like [`run_bench`], with the client jobs executed by `runner`, for
/// instance under the deterministic scheduler.
pub fn run_bench_with(
    spec: &WorkloadSpec,
    transport: Arc<dyn Transport>,
    runner: impl FnOnce(Vec<Job<'_>>),
) -> Result<BenchResult, BenchError> {
    spec.validate()?;
    let log = Arc::new(HistoryLog::new());
    let client = Client::new(transport).recording(log.clone());
    let opts = SessionOptions { fanout: spec.fanout, ..SessionOptions::default() };
    setup(spec, &client, &opts)?;
    let setup_events = log.len();

    let stats: Mutex<Vec<ClientStats>> = Mutex::new(Vec::new());
    let started = Instant::now();
    {
        let jobs: Vec<Job<'_>> = (0..spec.clients)
            .map(|c| {
                let mut session = Session::with_options(client.clone(), opts.clone());
                let ops = spec.client_ops(c);
                let stats = &stats;
                Box::new(move || {
                    let mut mine = ClientStats::default();
                    for op in ops {
                        let t = Instant::now();
                        if let Err(e) = session.execute(&op.sql(spec)) {
                            log::debug!("{op:?}: {e}");
                            mine.errors += 1;
                        }
                        mine.latencies_us.push(t.elapsed().as_micros() as u64);
                    }
                    stats.lock().unwrap().push(mine);
                }) as Job<'_>
            })
            .collect();
        runner(jobs);
    }
    let elapsed = started.elapsed();

    let history = log.snapshot();
    let run_events = &history.events[setup_events..];
    let txns = run_events.iter().filter(|e| e.kind == EventKind::Begin).count();
    let aborts = run_events.iter().filter(|e| e.kind == EventKind::Abort).count();
    let stats = stats.into_inner().unwrap();
    let mut lat: Vec<u64> = stats.iter().flat_map(|s| s.latencies_us.iter().copied()).collect();
    lat.sort_unstable();
    let pct = |p: f64| -> u64 {
        if lat.is_empty() {
            0
        } else {
            lat[((lat.len() as f64 * p).ceil() as usize).clamp(1, lat.len()) - 1]
        }
    };
    let secs = elapsed.as_secs_f64();
    let report = BenchReport {
        clients: spec.clients,
        ops: lat.len(),
        elapsed,
        throughput: if lat.is_empty() || secs == 0.0 { 0.0 } else { lat.len() as f64 / secs },
        p50_us: pct(0.50),
        p99_us: pct(0.99),
        txns,
        aborts,
        abort_rate: if txns == 0 { 0.0 } else { aborts as f64 / txns as f64 },
        errors: stats.iter().map(|s| s.errors).sum(),
    };
    Ok(BenchResult { report, history })
}

fn setup(spec: &WorkloadSpec, client: &Client, opts: &SessionOptions) -> Result<(), SqlError> {
    let mut s = Session::with_options(client.clone(), opts.clone());
    match s.execute(&format!("CREATE TABLE {TABLE} (k INT PRIMARY KEY, v TEXT)")) {
        Ok(_) | Err(SqlError::DuplicateTable(_)) => {}
        Err(e) => return Err(e),
    }
    let mut next = 0;
    while next < spec.keyspace {
        let end = (next + PRELOAD_BATCH).min(spec.keyspace);
        let (lo, hi) = (spec.row_key(next), spec.row_key(end));
        let existing = match s.execute(&format!("SELECT k FROM {TABLE} WHERE k >= {lo} AND k < {hi}"))? {
            QueryResult::Rows { rows, .. } => rows.len() as u64,
            _ => 0,
        };
        if existing < end - next {
            s.execute("BEGIN")?;
            for k in next..end {
                let key = spec.row_key(k);
                match s.execute(&format!("INSERT INTO {TABLE} VALUES ({key}, '{}')", spec.value(k))) {
                    Ok(_) | Err(SqlError::DuplicateKey { .. }) => {}
                    Err(e) => {
                        if s.in_transaction() {
                            s.execute("ROLLBACK")?;
                        }
                        return Err(e);
                    }
                }
            }
            s.execute("COMMIT")?;
        }
        next = end;
    }
    Ok(())
}
