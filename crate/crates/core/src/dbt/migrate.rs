//! Transactional node migration and the load-balancing policy built on it.

use super::{alloc_node, free_node, read_node, read_root, walk, write_node, write_root, DbtError, NodeId, Result, TreeId};
use crate::txn::{Client, Txn};
use crate::wire::ServerId;

/// Copy `node` under a fresh id placed on `dest`, repoint its parent (or
/// the root pointer), and delete the old copy. Returns the new id.
pub fn move_node(txn: &mut Txn, tree: TreeId, node: NodeId, dest: ServerId) -> Result<NodeId> {
    let mut rp = read_root(txn, tree)?;
    let contents = read_node(txn, tree, node)?;
    let new_id = alloc_node(txn, tree, dest.0)?;
    if node == rp.root {
        write_node(txn, tree, new_id, &contents)?;
        free_node(txn, tree, node)?;
        rp.root = new_id;
        write_root(txn, tree, &rp)?;
        return Ok(new_id);
    }
    let orphan = || DbtError::ParentNotFound { tree, node };
    let probe = contents.keys.first().ok_or_else(orphan)?;
    let mut id = rp.root;
    loop {
        let mut parent = read_node(txn, tree, id)?;
        if parent.height <= contents.height {
            return Err(orphan());
        }
        let i = parent.child_index(probe);
        let child = *parent.children.get(i).ok_or_else(orphan)?;
        if parent.height == contents.height + 1 {
            if child != node {
                return Err(orphan());
            }
            parent.children[i] = new_id;
            write_node(txn, tree, id, &parent)?;
            write_node(txn, tree, new_id, &contents)?;
            free_node(txn, tree, node)?;
            return Ok(new_id);
        }
        id = child;
    }
}

fn imbalanced(max: usize, min: usize) -> bool {
    max - min > 4 && 2 * max > 3 * min
}

const MAX_FAILED_MOVES: usize = 16;

/// Move nodes from the most to the least loaded server, one transaction
/// per move, until per-server counts are within a 1.5 ratio or within 4
/// of each other. Returns the number of moves committed.
pub fn rebalance_step(client: &Client, tree: TreeId) -> Result<usize> {
    let n = client.n_servers();
    if n < 2 {
        return Ok(0);
    }
    let mut txn = client.begin()?;
    let report = walk(&txn, tree)?;
    txn.commit()?;
    let mut counts = report.per_server.clone();
    let mut resident: Vec<Vec<NodeId>> = vec![Vec::new(); n];
    for info in &report.nodes {
        resident[info.id.server(n).0 as usize].push(info.id);
    }
    let mut moves = 0;
    let mut failed = 0;
    while failed < MAX_FAILED_MOVES {
        let (from, &max) = counts.iter().enumerate().max_by_key(|(i, c)| (**c, usize::MAX - i)).unwrap();
        let (to, &min) = counts.iter().enumerate().min_by_key(|(i, c)| (**c, *i)).unwrap();
        if !imbalanced(max, min) {
            break;
        }
        let Some(node) = resident[from].pop() else { break };
        let mut txn = client.begin()?;
        match move_node(&mut txn, tree, node, ServerId(to as u16)) {
            Ok(_) => {
                if txn.commit()?.is_committed() {
                    counts[from] -= 1;
                    counts[to] += 1;
                    moves += 1;
                } else {
                    failed += 1;
                }
            }
            // the node changed under us; skip it
            Err(DbtError::MissingNode { .. } | DbtError::ParentNotFound { .. }) => {
                txn.abort()?;
                failed += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(moves)
}
