//! Statement execution against the trees of a table and its indexes.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use super::ast::{ColumnDef, ColumnType, Comparison, Statement, Value};
use super::catalog::{catalog_store, load_table, Catalog, IndexDef, TableDef};
use super::keycode::{encode_key, prefix_end, successor};
use super::plan::{plan, AccessPath, Action, Bound, Plan, PlanError};
use super::row::{decode_row, encode_row};
use super::{parse, SqlError};
use crate::dbt::{self, TreeId, DEFAULT_FANOUT, MAX_ROW, MAX_TREE_KEY};
use crate::txn::{Client, Outcome, Txn};

pub const MAX_TEXT: usize = 64 * 1024;
const SCAN_BATCH: usize = 128;

#[derive(Clone, Debug, PartialEq)]
pub enum QueryResult {
    Rows { columns: Vec<String>, rows: Vec<Vec<Value>> },
    Count(u64),
    Ok,
}

/// Tab-separated rows under a header line, or `OK` / `OK <count>`.
impl fmt::Display for QueryResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QueryResult::Rows { columns, rows } => {
                writeln!(f, "{}", columns.join("\t"))?;
                for r in rows {
                    let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
                    writeln!(f, "{}", cells.join("\t"))?;
                }
                Ok(())
            }
            QueryResult::Count(n) => writeln!(f, "OK {n}"),
            QueryResult::Ok => writeln!(f, "OK"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SessionOptions {
    /// Fanout of trees created by this session.
    pub fanout: usize,
    /// Conflict retries for autocommit statements.
    pub retries: u32,
}

impl Default for SessionOptions {
    fn default() -> Self {
        SessionOptions { fanout: DEFAULT_FANOUT, retries: 5 }
    }
}

/// One embedded query processor: an optional open transaction plus options.
pub struct Session {
    client: Client,
    opts: SessionOptions,
    txn: Option<Txn>,
}

impl Session {
    pub fn new(client: Client) -> Session {
        Session::with_options(client, SessionOptions::default())
    }

    pub fn with_options(client: Client, opts: SessionOptions) -> Session {
        Session { client, opts, txn: None }
    }

    pub fn client(&self) -> &Client {
        &self.client
    }

    pub fn in_transaction(&self) -> bool {
        self.txn.is_some()
    }

    pub fn execute(&mut self, sql: &str) -> Result<QueryResult, SqlError> {
        let stmt = parse(sql)?;
        self.execute_stmt(&stmt)
    }

    pub fn execute_stmt(&mut self, stmt: &Statement) -> Result<QueryResult, SqlError> {
        match stmt {
            Statement::Begin => {
                if self.txn.is_some() {
                    return Err(SqlError::TxnState("a transaction is already open".into()));
                }
                self.txn = Some(self.client.begin()?);
                Ok(QueryResult::Ok)
            }
            Statement::Commit => {
                let mut txn = self.txn.take().ok_or_else(|| SqlError::TxnState("no transaction is open".into()))?;
                match txn.commit()? {
                    Outcome::Committed(_) => Ok(QueryResult::Ok),
                    Outcome::Aborted(reason) => Err(SqlError::Conflict(reason.to_string())),
                }
            }
            Statement::Rollback => {
                let mut txn = self.txn.take().ok_or_else(|| SqlError::TxnState("no transaction is open".into()))?;
                txn.abort()?;
                Ok(QueryResult::Ok)
            }
            _ => match self.txn.as_mut() {
                Some(txn) => {
                    let result = run(txn, stmt, &self.opts);
                    if let Err(e) = &result {
                        if e.aborts_transaction() {
                            let mut txn = self.txn.take().unwrap();
                            let _ = txn.abort();
                        }
                    }
                    result
                }
                None => self.autocommit(stmt),
            },
        }
    }

    fn autocommit(&mut self, stmt: &Statement) -> Result<QueryResult, SqlError> {
        let mut last = String::new();
        for attempt in 0..=self.opts.retries {
            if attempt > 0 {
                self.client.transport().pause(attempt + 3);
            }
            let mut txn = self.client.begin()?;
            let result = match run(&mut txn, stmt, &self.opts) {
                Ok(r) => r,
                Err(e) => {
                    let _ = txn.abort();
                    return Err(e);
                }
            };
            match txn.commit()? {
                Outcome::Committed(_) => return Ok(result),
                Outcome::Aborted(reason) => last = reason.to_string(),
            }
        }
        Err(SqlError::Conflict(format!("{last} (gave up after {} retries)", self.opts.retries)))
    }
}

/// Execute one non-transaction-control statement inside `txn`.
pub fn run(txn: &mut Txn, stmt: &Statement, opts: &SessionOptions) -> Result<QueryResult, SqlError> {
    match stmt {
        Statement::CreateTable { name, columns } => create_table(txn, name, columns, opts),
        Statement::CreateIndex { name, table, column } => create_index(txn, name, table, column, opts),
        Statement::Insert { table, columns, values } => insert(txn, table, columns.as_deref(), values),
        Statement::Select { .. } | Statement::Update { .. } | Statement::Delete { .. } => {
            let table = stmt.table().unwrap();
            let def = load_table(txn, table)?.ok_or_else(|| PlanError::UnknownTable(table.to_string()))?;
            let mut catalog = Catalog::default();
            catalog.insert(def);
            let plan = plan(stmt, &catalog)?;
            execute_plan(txn, &plan)
        }
        Statement::Begin | Statement::Commit | Statement::Rollback => {
            Err(SqlError::TxnState("transaction control is handled by the session".into()))
        }
    }
}

fn create_table(txn: &mut Txn, name: &str, columns: &[ColumnDef], opts: &SessionOptions) -> Result<QueryResult, SqlError> {
    let mut seen = BTreeSet::new();
    for c in columns {
        if !seen.insert(c.name.as_str()) {
            return Err(SqlError::Schema(format!("column {} declared twice", c.name)));
        }
    }
    let pks: Vec<&ColumnDef> = columns.iter().filter(|c| c.primary_key).collect();
    let pk = match pks.as_slice() {
        [pk] => *pk,
        [] => return Err(SqlError::Schema(format!("table {name} has no PRIMARY KEY column"))),
        _ => return Err(SqlError::Schema(format!("table {name} has more than one PRIMARY KEY column"))),
    };
    if pk.ty == ColumnType::Float {
        return Err(SqlError::Schema("a FLOAT column cannot be the primary key".into()));
    }
    if load_table(txn, name)?.is_some() {
        return Err(SqlError::DuplicateTable(name.to_string()));
    }
    let data_tree = dbt::create_tree(txn, opts.fanout)?;
    let def = TableDef {
        name: name.to_string(),
        columns: columns.iter().map(|c| (c.name.clone(), c.ty)).collect(),
        pk: pk.name.clone(),
        data_tree,
        indexes: Vec::new(),
    };
    catalog_store(txn, &def, opts.fanout)?;
    Ok(QueryResult::Ok)
}

fn create_index(
    txn: &mut Txn,
    name: &str,
    table: &str,
    column: &str,
    opts: &SessionOptions,
) -> Result<QueryResult, SqlError> {
    let mut def = load_table(txn, table)?.ok_or_else(|| PlanError::UnknownTable(table.to_string()))?;
    let col = def
        .column_index(column)
        .ok_or_else(|| PlanError::UnknownColumn { table: table.to_string(), column: column.to_string() })?;
    if def.indexes.iter().any(|ix| ix.name == name) {
        return Err(SqlError::DuplicateIndex { table: table.to_string(), index: name.to_string() });
    }
    let tree = dbt::create_tree(txn, opts.fanout)?;
    let types = def.types();
    let rows = dbt::scan(txn, def.data_tree, b"", None, usize::MAX)?;
    let mut entries = Vec::with_capacity(rows.len());
    for (pk_key, bytes) in rows {
        let row = decode_row(&bytes, &types)?;
        entries.push((index_key(&row[col], &pk_key)?, pk_key));
    }
    for (k, pk_key) in entries {
        dbt::insert(txn, tree, &k, &pk_key)?;
    }
    // concurrent writers of the table must conflict with the backfill
    dbt::touch_all_leaves(txn, def.data_tree)?;
    def.indexes.push(IndexDef { name: name.to_string(), column: column.to_string(), tree });
    catalog_store(txn, &def, opts.fanout)?;
    Ok(QueryResult::Ok)
}

fn index_key(value: &Value, pk_key: &[u8]) -> Result<Vec<u8>, SqlError> {
    let mut k = encode_key(value)?;
    k.extend_from_slice(pk_key);
    if k.len() > MAX_TREE_KEY {
        return Err(SqlError::KeyTooLarge(k.len()));
    }
    Ok(k)
}

fn check_row(def: &TableDef, row: &[Value]) -> Result<(Vec<u8>, Vec<u8>, Vec<Vec<u8>>), SqlError> {
    for (i, v) in row.iter().enumerate() {
        let (name, ty) = &def.columns[i];
        if v.column_type() != *ty {
            return Err(PlanError::TypeMismatch { column: name.clone(), expected: *ty, found: v.column_type() }.into());
        }
        match v {
            Value::Float(x) if x.is_nan() => return Err(SqlError::NaN(name.clone())),
            Value::Text(s) if s.len() > MAX_TEXT => {
                return Err(SqlError::ValueTooLarge { column: name.clone(), len: s.len() })
            }
            _ => {}
        }
    }
    let pk_key = encode_key(&row[def.pk_index()])?;
    if pk_key.len() > MAX_TREE_KEY {
        return Err(SqlError::KeyTooLarge(pk_key.len()));
    }
    let bytes = encode_row(row);
    if bytes.len() > MAX_ROW {
        return Err(SqlError::RowTooLarge(bytes.len()));
    }
    let index_keys = def
        .indexes
        .iter()
        .map(|ix| index_key(&row[def.column_index(&ix.column).unwrap()], &pk_key))
        .collect::<Result<_, _>>()?;
    Ok((pk_key, bytes, index_keys))
}

fn insert(txn: &mut Txn, table: &str, columns: Option<&[String]>, values: &[Value]) -> Result<QueryResult, SqlError> {
    let def = load_table(txn, table)?.ok_or_else(|| PlanError::UnknownTable(table.to_string()))?;
    let row: Vec<Value> = match columns {
        None => {
            if values.len() != def.columns.len() {
                return Err(SqlError::Schema(format!(
                    "table {table} has {} columns but {} values were given",
                    def.columns.len(),
                    values.len()
                )));
            }
            values.to_vec()
        }
        Some(names) => {
            if names.len() != values.len() {
                return Err(SqlError::Schema(format!("{} columns but {} values", names.len(), values.len())));
            }
            let mut slots: Vec<Option<Value>> = vec![None; def.columns.len()];
            for (n, v) in names.iter().zip(values) {
                let i = def
                    .column_index(n)
                    .ok_or_else(|| PlanError::UnknownColumn { table: table.to_string(), column: n.clone() })?;
                if slots[i].replace(v.clone()).is_some() {
                    return Err(SqlError::Schema(format!("column {n} given twice")));
                }
            }
            let missing: Vec<&str> =
                def.columns.iter().zip(&slots).filter(|(_, s)| s.is_none()).map(|((c, _), _)| c.as_str()).collect();
            if !missing.is_empty() {
                return Err(SqlError::Schema(format!("no value for column(s) {}", missing.join(", "))));
            }
            slots.into_iter().map(Option::unwrap).collect()
        }
    };
    let (pk_key, bytes, index_keys) = check_row(&def, &row)?;
    if dbt::lookup(txn, def.data_tree, &pk_key)?.is_some() {
        return Err(SqlError::DuplicateKey { table: table.to_string(), key: row[def.pk_index()].to_sql() });
    }
    dbt::insert(txn, def.data_tree, &pk_key, &bytes)?;
    for (ix, k) in def.indexes.iter().zip(index_keys) {
        dbt::insert(txn, ix.tree, &k, &pk_key)?;
    }
    Ok(QueryResult::Count(1))
}

fn lower_start(lo: &Bound) -> Result<Vec<u8>, SqlError> {
    Ok(match lo {
        None => Vec::new(),
        Some((v, true)) => encode_key(v)?,
        Some((v, false)) => successor(&encode_key(v)?),
    })
}

fn upper_end(hi: &Bound) -> Result<Option<Vec<u8>>, SqlError> {
    Ok(match hi {
        None => None,
        Some((v, true)) => Some(successor(&encode_key(v)?)),
        Some((v, false)) => Some(encode_key(v)?),
    })
}

/// Index keys are `enc(value) ++ pk`. Bounds are widened where a value
/// boundary cannot be expressed exactly; callers re-check every row.
fn index_bounds(lo: &Bound, hi: &Bound) -> Result<(Vec<u8>, Option<Vec<u8>>), SqlError> {
    let start = match lo {
        None => Vec::new(),
        Some((v, _)) => encode_key(v)?,
    };
    let end = match hi {
        None => None,
        Some((Value::Text(s), _)) if s.contains('\0') => prefix_end(s.split('\0').next().unwrap().as_bytes()),
        Some((v, true)) => prefix_end(&encode_key(v)?),
        Some((v, false)) => Some(encode_key(v)?),
    };
    Ok((start, end))
}

/// Visit entries of `tree` in `[start, end)` in batches until `f` says stop.
fn scan_each(
    txn: &Txn,
    tree: TreeId,
    start: Vec<u8>,
    end: Option<&[u8]>,
    mut f: impl FnMut(Vec<u8>, Vec<u8>) -> Result<bool, SqlError>,
) -> Result<(), SqlError> {
    let mut cursor = start;
    loop {
        let batch = dbt::scan(txn, tree, &cursor, end, SCAN_BATCH)?;
        let full = batch.len() == SCAN_BATCH;
        let Some(last) = batch.last().map(|e| successor(&e.0)) else { return Ok(()) };
        for (k, v) in batch {
            if !f(k, v)? {
                return Ok(());
            }
        }
        if !full {
            return Ok(());
        }
        cursor = last;
    }
}

fn matches(def: &TableDef, row: &[Value], preds: &[Comparison]) -> bool {
    preds.iter().all(|c| {
        let idx = def.column_index(&c.column).expect("planned column");
        row[idx].sql_cmp(&c.value).is_some_and(|o| c.op.holds(o))
    })
}

/// Rows selected by the plan's path and predicate, as `(pk key, row)`.
/// Stops after `limit` matches when given.
fn fetch(txn: &Txn, plan: &Plan, limit: Option<usize>) -> Result<Vec<(Vec<u8>, Vec<Value>)>, SqlError> {
    let def = &plan.table;
    let types = def.types();
    let mut out = Vec::new();
    let wanted = |out: &Vec<_>| limit.is_none_or(|l| out.len() < l);
    if limit == Some(0) {
        return Ok(out);
    }
    let accept = |out: &mut Vec<(Vec<u8>, Vec<Value>)>, pk: Vec<u8>, bytes: &[u8]| -> Result<bool, SqlError> {
        let row = decode_row(bytes, &types)?;
        if matches(def, &row, &plan.absorbed) && matches(def, &row, &plan.residual) {
            out.push((pk, row));
        }
        Ok(wanted(out))
    };
    match &plan.path {
        AccessPath::PkPoint(v) => {
            let key = encode_key(v)?;
            if let Some(bytes) = dbt::lookup(txn, def.data_tree, &key)? {
                accept(&mut out, key, &bytes)?;
            }
        }
        AccessPath::PkRange { lo, hi } => {
            let end = upper_end(hi)?;
            scan_each(txn, def.data_tree, lower_start(lo)?, end.as_deref(), |k, v| accept(&mut out, k, &v))?;
        }
        AccessPath::FullScan => {
            scan_each(txn, def.data_tree, Vec::new(), None, |k, v| accept(&mut out, k, &v))?;
        }
        AccessPath::IndexPoint { index, value } => {
            let ix = index_def(def, index)?;
            let start = encode_key(value)?;
            let end = prefix_end(&start);
            scan_each(txn, ix.tree, start, end.as_deref(), |_, pk| {
                let bytes = dbt::lookup(txn, def.data_tree, &pk)?.ok_or_else(|| dangling(def, ix))?;
                accept(&mut out, pk, &bytes)
            })?;
        }
        AccessPath::IndexRange { index, lo, hi } => {
            let ix = index_def(def, index)?;
            let (start, end) = index_bounds(lo, hi)?;
            scan_each(txn, ix.tree, start, end.as_deref(), |_, pk| {
                let bytes = dbt::lookup(txn, def.data_tree, &pk)?.ok_or_else(|| dangling(def, ix))?;
                accept(&mut out, pk, &bytes)
            })?;
        }
    }
    Ok(out)
}

fn index_def<'a>(def: &'a TableDef, name: &str) -> Result<&'a IndexDef, SqlError> {
    def.indexes
        .iter()
        .find(|ix| ix.name == name)
        .ok_or_else(|| SqlError::Schema(format!("index {name} vanished from table {}", def.name)))
}

fn dangling(def: &TableDef, ix: &IndexDef) -> SqlError {
    SqlError::Schema(format!("index {} of table {} points at a missing row", ix.name, def.name))
}

fn execute_plan(txn: &mut Txn, plan: &Plan) -> Result<QueryResult, SqlError> {
    let def = &plan.table;
    match &plan.action {
        Action::Project(cols) => {
            let early = if plan.sort { None } else { plan.limit.map(|l| l as usize) };
            let mut rows = fetch(txn, plan, early)?;
            if let (true, Some(col)) = (plan.sort, plan.order_by) {
                rows.sort_by(|a, b| {
                    a.1[col].sql_cmp(&b.1[col]).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0))
                });
            }
            if let Some(l) = plan.limit {
                rows.truncate(l as usize);
            }
            let rows = rows.into_iter().map(|(_, r)| cols.iter().map(|&i| r[i].clone()).collect()).collect();
            Ok(QueryResult::Rows { columns: plan.header(), rows })
        }
        Action::Update(set) => {
            let rows = fetch(txn, plan, None)?;
            let mut writes = Vec::with_capacity(rows.len());
            for (pk, old) in rows {
                let mut new = old.clone();
                for (i, v) in set {
                    new[*i] = v.clone();
                }
                let (_, bytes, new_keys) = check_row(def, &new)?;
                let old_keys = def
                    .indexes
                    .iter()
                    .map(|ix| index_key(&old[def.column_index(&ix.column).unwrap()], &pk))
                    .collect::<Result<Vec<_>, _>>()?;
                writes.push((pk, bytes, old_keys, new_keys));
            }
            let n = writes.len() as u64;
            for (pk, bytes, old_keys, new_keys) in writes {
                dbt::insert(txn, def.data_tree, &pk, &bytes)?;
                for ((ix, old), new) in def.indexes.iter().zip(old_keys).zip(new_keys) {
                    if old != new {
                        dbt::delete(txn, ix.tree, &old)?;
                        dbt::insert(txn, ix.tree, &new, &pk)?;
                    }
                }
            }
            Ok(QueryResult::Count(n))
        }
        Action::Delete => {
            let rows = fetch(txn, plan, None)?;
            let n = rows.len() as u64;
            for (pk, row) in rows {
                dbt::delete(txn, def.data_tree, &pk)?;
                for ix in &def.indexes {
                    let k = index_key(&row[def.column_index(&ix.column).unwrap()], &pk)?;
                    dbt::delete(txn, ix.tree, &k)?;
                }
            }
            Ok(QueryResult::Count(n))
        }
    }
}

/// Compare every index tree of `def` with the entries implied by its data
/// tree. Returns one line per discrepancy.
pub fn verify_indexes(txn: &Txn, def: &TableDef) -> Result<Vec<String>, SqlError> {
    let types = def.types();
    let rows = dbt::scan(txn, def.data_tree, b"", None, usize::MAX)?;
    let mut findings = Vec::new();
    for ix in &def.indexes {
        let col = def.column_index(&ix.column).unwrap();
        let mut expected = BTreeSet::new();
        for (pk, bytes) in &rows {
            let row = decode_row(bytes, &types)?;
            expected.insert((index_key(&row[col], pk)?, pk.clone()));
        }
        let actual: BTreeSet<(Vec<u8>, Vec<u8>)> =
            dbt::scan(txn, ix.tree, b"", None, usize::MAX)?.into_iter().collect();
        for missing in expected.difference(&actual) {
            findings.push(format!("{}.{}: missing entry {}", def.name, ix.name, hex::encode(&missing.0)));
        }
        for extra in actual.difference(&expected) {
            findings.push(format!("{}.{}: stray entry {}", def.name, ix.name, hex::encode(&extra.0)));
        }
    }
    Ok(findings)
}
