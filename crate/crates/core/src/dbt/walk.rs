//! Full-tree traversal that checks every structural invariant.

use std::fmt;

use super::node::{root_key, RootPointer};
use super::{min_inner, min_leaf, DbtError, NodeId, Result, TreeId, TreeNode};
use crate::txn::Txn;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeInfo {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub height: u8,
    pub entries: usize,
    pub first_key: Option<Vec<u8>>,
    /// Encoded node as stored.
    pub bytes: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Finding {
    pub node: NodeId,
    pub invariant: &'static str,
    pub detail: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "node {}: {}: {}", self.node, self.invariant, self.detail)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WalkReport {
    pub tree: TreeId,
    pub root: NodeId,
    pub height: u8,
    pub fanout: usize,
    pub nodes: Vec<NodeInfo>,
    pub entries: usize,
    pub per_server: Vec<usize>,
    pub findings: Vec<Finding>,
}

impl WalkReport {
    pub fn passed(&self) -> bool {
        self.findings.is_empty()
    }
}

impl fmt::Display for WalkReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}: root {} height {} fanout {}", self.tree, self.root, self.height, self.fanout)?;
        writeln!(f, "nodes {} entries {}", self.nodes.len(), self.entries)?;
        for (s, n) in self.per_server.iter().enumerate() {
            writeln!(f, "server {s}: {n} nodes")?;
        }
        if self.findings.is_empty() {
            writeln!(f, "PASS")
        } else {
            for x in &self.findings {
                writeln!(f, "{x}")?;
            }
            writeln!(f, "FAIL: {} finding(s)", self.findings.len())
        }
    }
}

struct Visit {
    id: NodeId,
    parent: Option<NodeId>,
    height: u8,
    lo: Option<Vec<u8>>,
    hi: Option<Vec<u8>>,
}

/// Walk `tree` at the transaction's snapshot. Structural problems become
/// findings; only transport failures and a missing tree are errors.
pub fn walk(txn: &Txn, tree: TreeId) -> Result<WalkReport> {
    let bytes = txn.get(&root_key(tree))?.ok_or(DbtError::NoSuchTree(tree))?;
    let rp = RootPointer::decode(&bytes)
        .map_err(|reason| DbtError::Corrupt { tree, node: NodeId::new(0, 0), reason })?;
    let fanout = usize::from(rp.fanout);
    let n_servers = txn.client().n_servers();
    let mut report = WalkReport {
        tree,
        root: rp.root,
        height: rp.height,
        fanout,
        nodes: Vec::new(),
        entries: 0,
        per_server: vec![0; n_servers],
        findings: Vec::new(),
    };
    let mut stack = vec![Visit { id: rp.root, parent: None, height: rp.height, lo: None, hi: None }];
    while let Some(v) = stack.pop() {
        let mut find = |invariant, detail: String| report.findings.push(Finding { node: v.id, invariant, detail });
        let Some(bytes) = txn.get(&v.id.key(tree))? else {
            find("reachable", format!("child of {:?} is missing", v.parent));
            continue;
        };
        let node = match TreeNode::decode(&bytes) {
            Ok(n) => n,
            Err(e) => {
                find("format", e);
                continue;
            }
        };
        if node.height != v.height {
            find("height", format!("height {} where {} expected", node.height, v.height));
        }
        if let Some(w) = node.keys.windows(2).position(|w| w[0] >= w[1]) {
            find("sorted", format!("keys {w} and {} out of order", w + 1));
        }
        if let Some(lo) = &v.lo {
            if node.keys.first().is_some_and(|k| k < lo) {
                find("separator", format!("first key {} below parent bound {}", hex::encode(&node.keys[0]), hex::encode(lo)));
            }
        }
        if let Some(hi) = &v.hi {
            if node.keys.last().is_some_and(|k| k >= hi) {
                let last = node.keys.last().unwrap();
                find("separator", format!("last key {} not below parent bound {}", hex::encode(last), hex::encode(hi)));
            }
        }
        let is_root = v.parent.is_none();
        let entries = node.entries();
        let min = if node.is_leaf() { min_leaf(fanout) } else { min_inner(fanout) };
        if entries > fanout {
            find("occupancy", format!("{entries} entries over fanout {fanout}"));
        }
        if !node.is_leaf() && entries < 2 {
            find("occupancy", format!("inner node with {entries} child(ren)"));
        } else if !is_root && entries < min {
            find("occupancy", format!("{entries} entries under minimum {min}"));
        }
        if node.is_leaf() {
            report.entries += node.keys.len();
        } else {
            for (i, child) in node.children.iter().enumerate().rev() {
                let lo = if i == 0 { v.lo.clone() } else { Some(node.keys[i - 1].clone()) };
                let hi = if i == node.keys.len() { v.hi.clone() } else { Some(node.keys[i].clone()) };
                stack.push(Visit { id: *child, parent: Some(v.id), height: node.height.saturating_sub(1), lo, hi });
            }
        }
        report.per_server[v.id.server(n_servers).0 as usize] += 1;
        report.nodes.push(NodeInfo {
            id: v.id,
            parent: v.parent,
            height: node.height,
            entries,
            first_key: node.keys.first().cloned(),
            bytes,
        });
    }
    Ok(report)
}
