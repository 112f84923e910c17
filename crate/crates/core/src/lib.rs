//! A distributed balanced tree stored inside a snapshot-isolated,
//! multi-version key-value store, with an embedded SQL subset on top.
//!
//! Layers, bottom up:
//! - [`wire`]: frame codec and transports (TCP and in-process loopback)
//! - [`kvserver`]: storage servers, two-phase-commit participants, oracle
//! - [`txn`]: client-side snapshot-isolation transactions
//! - [`dbt`]: the B+tree whose nodes are key-value pairs
//! - [`sql`]: parser, planner and executor mapping statements to trees
//! - [`tools`]: history checker, benchmark driver, cluster launcher, shell

pub mod dbt;
pub mod kvserver;
pub mod sql;
pub mod tools;
pub mod txn;
pub mod wire;
