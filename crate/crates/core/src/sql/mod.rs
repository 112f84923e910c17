//! A small SQL front end: tables with one INT or TEXT primary key,
//! secondary indexes, and single-table SELECT / INSERT / UPDATE / DELETE,
//! all stored in distributed B-trees.

pub mod ast;
pub mod catalog;
pub mod exec;
pub mod keycode;
pub mod lexer;
pub mod parser;
pub mod plan;
pub mod row;

pub use ast::{CmpOp, ColumnDef, ColumnType, Comparison, Projection, Statement, Value};
pub use catalog::{catalog_load, load_table, Catalog, IndexDef, TableDef};
pub use exec::{verify_indexes, QueryResult, Session, SessionOptions};
pub use keycode::{decode_key, encode_key, KeyError};
pub use lexer::split_statements;
pub use parser::{parse, ParseError};
pub use plan::{plan, AccessPath, Plan, PlanError};
pub use row::RowError;

use crate::dbt::DbtError;
use crate::txn::TxnError;

#[derive(Debug, thiserror::Error)]
pub enum SqlError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("{0}")]
    Schema(String),
    #[error("table {0} already exists")]
    DuplicateTable(String),
    #[error("index {index} already exists on table {table}")]
    DuplicateIndex { table: String, index: String },
    #[error("duplicate primary key {key} in table {table}")]
    DuplicateKey { table: String, key: String },
    #[error("column {0}: NaN cannot be stored")]
    NaN(String),
    #[error("column {column}: value of {len} bytes exceeds the 64 KiB limit")]
    ValueTooLarge { column: String, len: usize },
    #[error("encoded key of {0} bytes exceeds the 1024-byte limit")]
    KeyTooLarge(usize),
    #[error("encoded row of {0} bytes exceeds the 64 KiB limit")]
    RowTooLarge(usize),
    #[error("transaction aborted by a conflict: {0}")]
    Conflict(String),
    #[error("{0}")]
    TxnState(String),
    #[error(transparent)]
    Key(#[from] KeyError),
    #[error("corrupt row: {0}")]
    Row(#[from] RowError),
    #[error(transparent)]
    Storage(#[from] DbtError),
    #[error(transparent)]
    Txn(#[from] TxnError),
}

impl SqlError {
    /// Conflicts can succeed when the statement or transaction is re-run.
    pub fn is_retryable(&self) -> bool {
        matches!(self, SqlError::Conflict(_))
    }

    /// Errors that may leave partial writes behind; an open transaction is
    /// rolled back when one occurs.
    pub fn aborts_transaction(&self) -> bool {
        matches!(self, SqlError::Storage(_) | SqlError::Txn(_) | SqlError::Row(_) | SqlError::Conflict(_))
    }
}
