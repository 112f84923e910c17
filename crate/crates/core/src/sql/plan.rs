//! Rule-based planner: pk-point, then an index on the first indexed
//! column (catalog order) that the predicate constrains, then a pk range,
//! then a full scan.

use std::cmp::Ordering;
use std::fmt;

use super::ast::{CmpOp, Comparison, Projection, Statement, Value};
use super::catalog::{Catalog, TableDef};
use super::ColumnType;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error("unknown table {0}")]
    UnknownTable(String),
    #[error("unknown column {column} in table {table}")]
    UnknownColumn { table: String, column: String },
    #[error("type mismatch: column {column} is {expected}, literal is {found}")]
    TypeMismatch { column: String, expected: ColumnType, found: ColumnType },
    #[error("primary key column {0} cannot be updated")]
    PkUpdate(String),
    #[error("column {0} assigned more than once")]
    DuplicateAssignment(String),
    #[error("statement has no query plan")]
    NotPlannable,
}

/// `(value, inclusive)`
pub type Bound = Option<(Value, bool)>;

#[derive(Clone, Debug, PartialEq)]
pub enum AccessPath {
    PkPoint(Value),
    PkRange { lo: Bound, hi: Bound },
    IndexPoint { index: String, value: Value },
    IndexRange { index: String, lo: Bound, hi: Bound },
    FullScan,
}

impl AccessPath {
    pub fn is_pk_ordered(&self) -> bool {
        matches!(self, AccessPath::PkPoint(_) | AccessPath::PkRange { .. } | AccessPath::FullScan)
    }
}

impl fmt::Display for AccessPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AccessPath::PkPoint(_) => f.write_str("pk-point"),
            AccessPath::PkRange { .. } => f.write_str("pk-range"),
            AccessPath::IndexPoint { index, .. } => write!(f, "index-point({index})"),
            AccessPath::IndexRange { index, .. } => write!(f, "index-range({index})"),
            AccessPath::FullScan => f.write_str("full-scan"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    /// Column indices to output.
    Project(Vec<usize>),
    Update(Vec<(usize, Value)>),
    Delete,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub table: TableDef,
    pub path: AccessPath,
    /// Conjuncts answered by the access path itself.
    pub absorbed: Vec<Comparison>,
    pub residual: Vec<Comparison>,
    pub action: Action,
    pub order_by: Option<usize>,
    /// Whether rows must be sorted after retrieval.
    pub sort: bool,
    pub limit: Option<u64>,
}

impl Plan {
    pub fn header(&self) -> Vec<String> {
        match &self.action {
            Action::Project(cols) => cols.iter().map(|&i| self.table.columns[i].0.clone()).collect(),
            _ => Vec::new(),
        }
    }
}

impl fmt::Display for Plan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let residual: Vec<String> = self.residual.iter().map(|c| c.to_string()).collect();
        write!(f, "{} residual=[{}]", self.path, residual.join(", "))?;
        if self.sort {
            f.write_str(" sort")?;
        }
        Ok(())
    }
}

fn column(def: &TableDef, name: &str) -> Result<usize, PlanError> {
    def.column_index(name)
        .ok_or_else(|| PlanError::UnknownColumn { table: def.name.clone(), column: name.to_string() })
}

fn check_type(def: &TableDef, idx: usize, v: &Value) -> Result<(), PlanError> {
    let expected = def.column_type(idx);
    if v.column_type() != expected {
        return Err(PlanError::TypeMismatch {
            column: def.columns[idx].0.clone(),
            expected,
            found: v.column_type(),
        });
    }
    Ok(())
}

pub fn plan(stmt: &Statement, catalog: &Catalog) -> Result<Plan, PlanError> {
    let (table, predicate) = match stmt {
        Statement::Select { table, predicate, .. }
        | Statement::Update { table, predicate, .. }
        | Statement::Delete { table, predicate } => (table, predicate),
        _ => return Err(PlanError::NotPlannable),
    };
    let def = catalog.get(table).ok_or_else(|| PlanError::UnknownTable(table.clone()))?;
    for c in predicate {
        let idx = column(def, &c.column)?;
        check_type(def, idx, &c.value)?;
    }
    let (action, order_by, limit) = match stmt {
        Statement::Select { projection, order_by, limit, .. } => {
            let cols = match projection {
                Projection::All => (0..def.columns.len()).collect(),
                Projection::Columns(names) => names.iter().map(|n| column(def, n)).collect::<Result<_, _>>()?,
            };
            let order = order_by.as_deref().map(|n| column(def, n)).transpose()?;
            (Action::Project(cols), order, *limit)
        }
        Statement::Update { assignments, .. } => {
            let mut set: Vec<(usize, Value)> = Vec::new();
            for (name, v) in assignments {
                let idx = column(def, name)?;
                if name == &def.pk {
                    return Err(PlanError::PkUpdate(name.clone()));
                }
                if set.iter().any(|(i, _)| *i == idx) {
                    return Err(PlanError::DuplicateAssignment(name.clone()));
                }
                check_type(def, idx, v)?;
                set.push((idx, v.clone()));
            }
            (Action::Update(set), None, None)
        }
        _ => (Action::Delete, None, None),
    };
    let (path, absorbed, residual) = choose_path(def, predicate);
    let sort = match order_by {
        Some(col) => !(col == def.pk_index() && path.is_pk_ordered()),
        None => false,
    };
    Ok(Plan { table: def.clone(), path, absorbed, residual, action, order_by, sort, limit })
}

fn choose_path(def: &TableDef, predicate: &[Comparison]) -> (AccessPath, Vec<Comparison>, Vec<Comparison>) {
    let split = |pick: &dyn Fn(usize, &Comparison) -> bool| {
        let mut absorbed = Vec::new();
        let mut residual = Vec::new();
        for (i, c) in predicate.iter().enumerate() {
            if pick(i, c) {
                absorbed.push(c.clone());
            } else {
                residual.push(c.clone());
            }
        }
        (absorbed, residual)
    };
    let first_eq = |col: &str| predicate.iter().position(|c| c.column == col && c.op == CmpOp::Eq);
    let has_range = |col: &str| predicate.iter().any(|c| c.column == col && c.op != CmpOp::Eq);

    if let Some(i) = first_eq(&def.pk) {
        let (absorbed, residual) = split(&|j, _| j == i);
        return (AccessPath::PkPoint(predicate[i].value.clone()), absorbed, residual);
    }
    for ix in &def.indexes {
        if let Some(i) = first_eq(&ix.column) {
            let (absorbed, residual) = split(&|j, _| j == i);
            let path = AccessPath::IndexPoint { index: ix.name.clone(), value: predicate[i].value.clone() };
            return (path, absorbed, residual);
        }
        if has_range(&ix.column) {
            let (lo, hi) = bounds(predicate, &ix.column);
            let (absorbed, residual) = split(&|_, c| c.column == ix.column);
            return (AccessPath::IndexRange { index: ix.name.clone(), lo, hi }, absorbed, residual);
        }
    }
    if has_range(&def.pk) {
        let (lo, hi) = bounds(predicate, &def.pk);
        let (absorbed, residual) = split(&|_, c| c.column == def.pk);
        return (AccessPath::PkRange { lo, hi }, absorbed, residual);
    }
    (AccessPath::FullScan, Vec::new(), predicate.to_vec())
}

/// Tightest lower and upper bound over the inequalities on `col`.
fn bounds(predicate: &[Comparison], col: &str) -> (Bound, Bound) {
    let mut lo: Bound = None;
    let mut hi: Bound = None;
    for c in predicate.iter().filter(|c| c.column == col) {
        let (slot, incl, want) = match c.op {
            CmpOp::Gt => (&mut lo, false, Ordering::Greater),
            CmpOp::Ge => (&mut lo, true, Ordering::Greater),
            CmpOp::Lt => (&mut hi, false, Ordering::Less),
            CmpOp::Le => (&mut hi, true, Ordering::Less),
            CmpOp::Eq => continue,
        };
        let tighter = match slot {
            None => true,
            Some((v, was_incl)) => match c.value.sql_cmp(v) {
                Some(o) if o == want => true,
                Some(Ordering::Equal) => *was_incl && !incl,
                _ => false,
            },
        };
        if tighter {
            *slot = Some((c.value.clone(), incl));
        }
    }
    (lo, hi)
}
