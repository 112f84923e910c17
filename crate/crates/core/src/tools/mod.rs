//! Operator and test tooling.

pub mod bench;
pub mod launch;
pub mod shell;
pub mod si_check;

pub use bench::{run_bench, run_bench_with, BenchReport, BenchResult, KeyDist, Op, WorkloadSpec};
pub use launch::{LaunchConfig, LaunchError, LocalCluster};
pub use shell::run_shell;
pub use si_check::{check_si, SiReport, Violation};

use crate::dbt::{self, DbtError, TreeId, WalkReport};
use crate::txn::Client;

/// Walk `tree` at a fresh snapshot.
pub fn walk_tree(client: &Client, tree: TreeId) -> Result<WalkReport, DbtError> {
    let mut txn = client.begin()?;
    let report = dbt::walk(&txn, tree);
    let _ = txn.abort();
    report
}
