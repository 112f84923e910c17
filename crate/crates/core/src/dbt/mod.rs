//! Distributed balanced tree: a B+tree whose nodes are key-value pairs in
//! the transactional store. Every operation runs inside a caller-supplied
//! [`Txn`], so any sequence of operations over any number of trees
//! commits or aborts as a unit.
//!
//! Leaves have no sibling pointers. Range scans re-descend from the root
//! using the upper bound of the leaf just visited.

mod migrate;
pub mod node;
mod walk;

use crate::txn::{Txn, TxnError};
use crate::wire::MAX_VALUE_LEN;

pub use self::migrate::{move_node, rebalance_step};
pub use self::node::{NodeId, RootPointer, TreeId, TreeNode};
pub use self::walk::{walk, Finding, NodeInfo, WalkReport};

pub const MAX_TREE_KEY: usize = 1024;
pub const MAX_ROW: usize = 64 * 1024;
pub const DEFAULT_FANOUT: usize = 64;
pub const MIN_FANOUT: usize = 4;
pub const MAX_FANOUT: usize = 4096;

#[derive(Debug, thiserror::Error)]
pub enum DbtError {
    #[error(transparent)]
    Txn(#[from] TxnError),
    #[error("tree key of {0} bytes exceeds {MAX_TREE_KEY}")]
    KeyTooLarge(usize),
    #[error("row of {0} bytes exceeds {MAX_ROW}")]
    RowTooLarge(usize),
    #[error("fanout {0} outside {MIN_FANOUT}..={MAX_FANOUT}")]
    BadFanout(usize),
    #[error("{0} does not exist")]
    NoSuchTree(TreeId),
    #[error("{0} already exists")]
    TreeExists(TreeId),
    #[error("{tree}: node {node} not found")]
    MissingNode { tree: TreeId, node: NodeId },
    #[error("{tree}: parent of node {node} not found")]
    ParentNotFound { tree: TreeId, node: NodeId },
    #[error("{tree}: node {node} is corrupt: {reason}")]
    Corrupt { tree: TreeId, node: NodeId, reason: String },
    #[error("{tree}: node {node} would serialize to {size} bytes, over the value limit")]
    NodeTooLarge { tree: TreeId, node: NodeId, size: usize },
}

pub type Result<T> = std::result::Result<T, DbtError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InsertOutcome {
    Inserted,
    Replaced,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeleteOutcome {
    Deleted,
    NotFound,
}

fn min_leaf(fanout: usize) -> usize {
    (fanout / 4).max(1)
}

fn min_inner(fanout: usize) -> usize {
    (fanout / 4).max(2)
}

pub(crate) fn read_root(txn: &Txn, tree: TreeId) -> Result<RootPointer> {
    let bytes = txn.get(&node::root_key(tree))?.ok_or(DbtError::NoSuchTree(tree))?;
    RootPointer::decode(&bytes).map_err(|reason| DbtError::Corrupt { tree, node: NodeId::new(0, 0), reason })
}

pub(crate) fn write_root(txn: &mut Txn, tree: TreeId, rp: &RootPointer) -> Result<()> {
    txn.put(&node::root_key(tree), &rp.encode())?;
    Ok(())
}

pub(crate) fn read_node(txn: &Txn, tree: TreeId, id: NodeId) -> Result<TreeNode> {
    let bytes = txn.get(&id.key(tree))?.ok_or(DbtError::MissingNode { tree, node: id })?;
    TreeNode::decode(&bytes).map_err(|reason| DbtError::Corrupt { tree, node: id, reason })
}

pub(crate) fn write_node(txn: &mut Txn, tree: TreeId, id: NodeId, node: &TreeNode) -> Result<()> {
    let bytes = node.encode();
    if bytes.len() > MAX_VALUE_LEN {
        return Err(DbtError::NodeTooLarge { tree, node: id, size: bytes.len() });
    }
    txn.put(&id.key(tree), &bytes)?;
    Ok(())
}

pub(crate) fn free_node(txn: &mut Txn, tree: TreeId, id: NodeId) -> Result<()> {
    txn.delete(&id.key(tree))?;
    Ok(())
}

fn read_counter(txn: &Txn, key: &[u8]) -> Result<u64> {
    Ok(match txn.get(key)? {
        Some(b) if b.len() == 8 => u64::from_be_bytes(b.try_into().unwrap()),
        _ => 0,
    })
}

pub(crate) fn alloc_node(txn: &mut Txn, tree: TreeId, hint: u16) -> Result<NodeId> {
    let key = node::node_counter_key(tree, hint);
    let next = read_counter(txn, &key)? + 1;
    txn.put(&key, &next.to_be_bytes())?;
    Ok(NodeId::new(hint, next))
}

/// Allocate a tree id and write an empty root leaf.
pub fn create_tree(txn: &mut Txn, fanout: usize) -> Result<TreeId> {
    if !(MIN_FANOUT..=MAX_FANOUT).contains(&fanout) {
        return Err(DbtError::BadFanout(fanout));
    }
    let key = node::tree_counter_key();
    let id = TreeId((read_counter(txn, &key)? + 1) as u32);
    txn.put(&key, &u64::from(id.0).to_be_bytes())?;
    create_tree_at(txn, id, fanout)?;
    Ok(id)
}

/// Create a tree under a fixed id, such as the catalog.
pub fn create_tree_at(txn: &mut Txn, tree: TreeId, fanout: usize) -> Result<()> {
    if !(MIN_FANOUT..=MAX_FANOUT).contains(&fanout) {
        return Err(DbtError::BadFanout(fanout));
    }
    if txn.get(&node::root_key(tree))?.is_some() {
        return Err(DbtError::TreeExists(tree));
    }
    let hint = (tree.0 as usize % txn.client().n_servers()) as u16;
    let root = alloc_node(txn, tree, hint)?;
    write_node(txn, tree, root, &TreeNode::empty_leaf())?;
    write_root(txn, tree, &RootPointer { root, height: 0, fanout: fanout as u16 })
}

pub fn tree_exists(txn: &Txn, tree: TreeId) -> Result<bool> {
    Ok(txn.get(&node::root_key(tree))?.is_some())
}

pub fn lookup(txn: &Txn, tree: TreeId, key: &[u8]) -> Result<Option<Vec<u8>>> {
    let rp = read_root(txn, tree)?;
    let mut id = rp.root;
    loop {
        let node = read_node(txn, tree, id)?;
        if node.is_leaf() {
            return Ok(match node.keys.binary_search_by(|k| k.as_slice().cmp(key)) {
                Ok(i) => Some(node.values[i].clone()),
                Err(_) => None,
            });
        }
        id = *node.children.get(node.child_index(key)).ok_or_else(|| corrupt(tree, id, "child count"))?;
    }
}

fn corrupt(tree: TreeId, node: NodeId, reason: &str) -> DbtError {
    DbtError::Corrupt { tree, node, reason: reason.to_string() }
}

pub fn insert(txn: &mut Txn, tree: TreeId, key: &[u8], row: &[u8]) -> Result<InsertOutcome> {
    if key.len() > MAX_TREE_KEY {
        return Err(DbtError::KeyTooLarge(key.len()));
    }
    if row.len() > MAX_ROW {
        return Err(DbtError::RowTooLarge(row.len()));
    }
    let mut rp = read_root(txn, tree)?;
    let fanout = usize::from(rp.fanout);
    let (outcome, split) = insert_rec(txn, tree, fanout, rp.root, key, row)?;
    if let Some((sep, right)) = split {
        // new roots rotate over servers
        let hint = ((usize::from(rp.root.hint) + 1) % txn.client().n_servers()) as u16;
        let root = alloc_node(txn, tree, hint)?;
        let node = TreeNode::inner(rp.height + 1, vec![sep], vec![rp.root, right]);
        write_node(txn, tree, root, &node)?;
        rp.root = root;
        rp.height += 1;
        write_root(txn, tree, &rp)?;
    }
    Ok(outcome)
}

type Split = Option<(Vec<u8>, NodeId)>;

fn insert_rec(
    txn: &mut Txn,
    tree: TreeId,
    fanout: usize,
    id: NodeId,
    key: &[u8],
    row: &[u8],
) -> Result<(InsertOutcome, Split)> {
    let mut node = read_node(txn, tree, id)?;
    let outcome;
    if node.is_leaf() {
        match node.keys.binary_search_by(|k| k.as_slice().cmp(key)) {
            Ok(i) => {
                node.values[i] = row.to_vec();
                outcome = InsertOutcome::Replaced;
            }
            Err(i) => {
                node.keys.insert(i, key.to_vec());
                node.values.insert(i, row.to_vec());
                outcome = InsertOutcome::Inserted;
            }
        }
    } else {
        let i = node.child_index(key);
        let child = *node.children.get(i).ok_or_else(|| corrupt(tree, id, "child count"))?;
        let (out, split) = insert_rec(txn, tree, fanout, child, key, row)?;
        let Some((sep, right)) = split else { return Ok((out, None)) };
        node.keys.insert(i, sep);
        node.children.insert(i + 1, right);
        outcome = out;
    }
    if node.entries() <= fanout {
        write_node(txn, tree, id, &node)?;
        return Ok((outcome, None));
    }
    let (sep, right_node) = split_node(&mut node);
    let right = alloc_node(txn, tree, id.hint)?;
    write_node(txn, tree, id, &node)?;
    write_node(txn, tree, right, &right_node)?;
    Ok((outcome, Some((sep, right))))
}

/// Split an overfull node in half; returns the separator and right half.
fn split_node(node: &mut TreeNode) -> (Vec<u8>, TreeNode) {
    if node.is_leaf() {
        let mid = node.keys.len().div_ceil(2);
        let keys = node.keys.split_off(mid);
        let values = node.values.split_off(mid);
        let sep = keys[0].clone();
        (sep, TreeNode { height: 0, keys, children: Vec::new(), values })
    } else {
        let left_children = node.children.len().div_ceil(2);
        let children = node.children.split_off(left_children);
        let keys = node.keys.split_off(left_children);
        let sep = node.keys.pop().expect("inner node has a key per extra child");
        (sep, TreeNode::inner(node.height, keys, children))
    }
}

pub fn delete(txn: &mut Txn, tree: TreeId, key: &[u8]) -> Result<DeleteOutcome> {
    let mut rp = read_root(txn, tree)?;
    let fanout = usize::from(rp.fanout);
    let (found, _) = delete_rec(txn, tree, fanout, rp.root, key)?;
    if !found {
        return Ok(DeleteOutcome::NotFound);
    }
    let mut changed = false;
    while rp.height > 0 {
        let root = read_node(txn, tree, rp.root)?;
        if root.children.len() != 1 {
            break;
        }
        free_node(txn, tree, rp.root)?;
        rp.root = root.children[0];
        rp.height -= 1;
        changed = true;
    }
    if changed {
        write_root(txn, tree, &rp)?;
    }
    Ok(DeleteOutcome::Deleted)
}

/// Returns (found, underflowed).
fn delete_rec(txn: &mut Txn, tree: TreeId, fanout: usize, id: NodeId, key: &[u8]) -> Result<(bool, bool)> {
    let mut node = read_node(txn, tree, id)?;
    if node.is_leaf() {
        let Ok(i) = node.keys.binary_search_by(|k| k.as_slice().cmp(key)) else {
            return Ok((false, false));
        };
        node.keys.remove(i);
        node.values.remove(i);
        write_node(txn, tree, id, &node)?;
        return Ok((true, node.keys.len() < min_leaf(fanout)));
    }
    let i = node.child_index(key);
    let child = *node.children.get(i).ok_or_else(|| corrupt(tree, id, "child count"))?;
    let (found, underflow) = delete_rec(txn, tree, fanout, child, key)?;
    if !found || !underflow {
        return Ok((found, false));
    }
    fix_underflow(txn, tree, fanout, &mut node, i)?;
    write_node(txn, tree, id, &node)?;
    Ok((true, node.children.len() < min_inner(fanout)))
}

/// Borrow into, or merge away, the underfull child `i` of `parent`.
fn fix_underflow(txn: &mut Txn, tree: TreeId, fanout: usize, parent: &mut TreeNode, i: usize) -> Result<()> {
    let l = if i > 0 { i - 1 } else { i };
    let (lid, rid) = (parent.children[l], parent.children[l + 1]);
    let mut left = read_node(txn, tree, lid)?;
    let mut right = read_node(txn, tree, rid)?;
    let min = if left.is_leaf() { min_leaf(fanout) } else { min_inner(fanout) };
    let total = left.entries() + right.entries();
    if left.is_leaf() {
        left.keys.append(&mut right.keys);
        left.values.append(&mut right.values);
    } else {
        left.keys.push(parent.keys[l].clone());
        left.keys.append(&mut right.keys);
        left.children.append(&mut right.children);
    }
    if total < 2 * min {
        parent.keys.remove(l);
        parent.children.remove(l + 1);
        write_node(txn, tree, lid, &left)?;
        free_node(txn, tree, rid)?;
        return Ok(());
    }
    // redistribute: the combined node splits evenly
    let take = total / 2;
    let (sep, new_right) = if left.is_leaf() {
        let keys = left.keys.split_off(take);
        let values = left.values.split_off(take);
        (keys[0].clone(), TreeNode { height: 0, keys, children: Vec::new(), values })
    } else {
        let children = left.children.split_off(take);
        let keys = left.keys.split_off(take);
        let sep = left.keys.pop().expect("separator");
        (sep, TreeNode::inner(left.height, keys, children))
    };
    parent.keys[l] = sep;
    write_node(txn, tree, lid, &left)?;
    write_node(txn, tree, rid, &new_right)?;
    Ok(())
}

/// Entries with `start <= key < end` (no upper bound when `end` is `None`),
/// ascending, at most `limit`.
pub fn scan(
    txn: &Txn,
    tree: TreeId,
    start: &[u8],
    end: Option<&[u8]>,
    limit: usize,
) -> Result<Vec<(Vec<u8>, Vec<u8>)>> {
    let mut out = Vec::new();
    if limit == 0 || end.is_some_and(|e| e <= start) {
        return Ok(out);
    }
    let rp = read_root(txn, tree)?;
    let mut cursor = start.to_vec();
    loop {
        // descend to the leaf holding `cursor`, keeping its exclusive upper bound
        let mut id = rp.root;
        let mut high: Option<Vec<u8>> = None;
        let leaf = loop {
            let node = read_node(txn, tree, id)?;
            if node.is_leaf() {
                break node;
            }
            let i = node.child_index(&cursor);
            if let Some(k) = node.keys.get(i) {
                high = Some(k.clone());
            }
            id = *node.children.get(i).ok_or_else(|| corrupt(tree, id, "child count"))?;
        };
        let from = leaf.keys.partition_point(|k| k.as_slice() < cursor.as_slice());
        for (k, v) in leaf.keys[from..].iter().zip(&leaf.values[from..]) {
            if end.is_some_and(|e| k.as_slice() >= e) {
                return Ok(out);
            }
            out.push((k.clone(), v.clone()));
            if out.len() == limit {
                return Ok(out);
            }
        }
        match high {
            Some(h) if end.is_none_or(|e| h.as_slice() < e) => cursor = h,
            _ => return Ok(out),
        }
    }
}

/// Rewrite every leaf unchanged. Any concurrent transaction that modifies
/// the tree then write-conflicts with the caller.
pub fn touch_all_leaves(txn: &mut Txn, tree: TreeId) -> Result<usize> {
    let rp = read_root(txn, tree)?;
    let mut stack = vec![rp.root];
    let mut touched = 0;
    while let Some(id) = stack.pop() {
        let node = read_node(txn, tree, id)?;
        if node.is_leaf() {
            write_node(txn, tree, id, &node)?;
            touched += 1;
        } else {
            stack.extend(node.children.iter().rev());
        }
    }
    Ok(touched)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;
    use std::sync::Arc;

    use super::*;
    use crate::txn::Client;
    use crate::wire::loopback::Loopback;

    fn setup(n: usize, fanout: usize) -> (Client, TreeId) {
        let c = Client::new(Arc::new(Loopback::cluster(n)));
        let mut t = c.begin().unwrap();
        let tree = create_tree(&mut t, fanout).unwrap();
        assert!(t.commit().unwrap().is_committed());
        (c, tree)
    }

    fn k(i: u32) -> Vec<u8> {
        i.to_be_bytes().to_vec()
    }

    #[test]
    fn empty_tree() {
        let (c, tree) = setup(1, 4);
        let t = c.begin().unwrap();
        assert_eq!(lookup(&t, tree, b"x").unwrap(), None);
        assert!(scan(&t, tree, b"", None, usize::MAX).unwrap().is_empty());
        assert!(walk(&t, tree).unwrap().findings.is_empty());
    }

    #[test]
    fn two_creates_in_one_txn() {
        let c = Client::new(Arc::new(Loopback::cluster(2)));
        let mut t = c.begin().unwrap();
        let a = create_tree(&mut t, 8).unwrap();
        let b = create_tree(&mut t, 8).unwrap();
        assert_ne!(a, b);
        insert(&mut t, a, b"k", b"a").unwrap();
        insert(&mut t, b, b"k", b"b").unwrap();
        t.commit().unwrap();
        let t = c.begin().unwrap();
        assert_eq!(lookup(&t, a, b"k").unwrap(), Some(b"a".to_vec()));
        assert_eq!(lookup(&t, b, b"k").unwrap(), Some(b"b".to_vec()));
    }

    #[test]
    fn aborted_create_leaves_nothing() {
        let c = Client::new(Arc::new(Loopback::cluster(1)));
        let mut t = c.begin().unwrap();
        let tree = create_tree(&mut t, 4).unwrap();
        t.abort().unwrap();
        let t = c.begin().unwrap();
        assert_eq!(t.get(&node::root_key(tree)).unwrap(), None);
        assert!(matches!(lookup(&t, tree, b"k"), Err(DbtError::NoSuchTree(_))));
    }

    #[test]
    fn insert_replace_lookup() {
        let (c, tree) = setup(1, 4);
        let mut t = c.begin().unwrap();
        assert_eq!(insert(&mut t, tree, b"k", b"1").unwrap(), InsertOutcome::Inserted);
        assert_eq!(lookup(&t, tree, b"k").unwrap(), Some(b"1".to_vec()));
        assert_eq!(insert(&mut t, tree, b"k", b"2").unwrap(), InsertOutcome::Replaced);
        assert_eq!(lookup(&t, tree, b"k").unwrap(), Some(b"2".to_vec()));
        assert_eq!(delete(&mut t, tree, b"k").unwrap(), DeleteOutcome::Deleted);
        assert_eq!(delete(&mut t, tree, b"k").unwrap(), DeleteOutcome::NotFound);
        assert_eq!(lookup(&t, tree, b"k").unwrap(), None);
    }

    #[test]
    fn ascending_inserts_fanout_4() {
        let (c, tree) = setup(3, 4);
        let mut t = c.begin().unwrap();
        for i in 1..=100 {
            insert(&mut t, tree, &k(i), &k(i * 10)).unwrap();
        }
        let rows = scan(&t, tree, b"", None, usize::MAX).unwrap();
        assert_eq!(rows.iter().map(|(k, _)| k.clone()).collect::<Vec<_>>(), (1..=100).map(k).collect::<Vec<_>>());
        let report = walk(&t, tree).unwrap();
        assert!(report.findings.is_empty(), "{:?}", report.findings);
        assert!(report.height >= 3);
        assert_eq!(report.entries, 100);
    }

    #[test]
    fn scan_bounds() {
        let (c, tree) = setup(2, 4);
        let mut t = c.begin().unwrap();
        for i in 1..=10 {
            insert(&mut t, tree, &k(i), b"").unwrap();
        }
        let got: Vec<_> = scan(&t, tree, &k(3), Some(&k(7)), usize::MAX).unwrap().into_iter().map(|e| e.0).collect();
        assert_eq!(got, vec![k(3), k(4), k(5), k(6)]);
        assert!(scan(&t, tree, &k(5), Some(&k(5)), 10).unwrap().is_empty());
        assert_eq!(scan(&t, tree, &k(2), None, 3).unwrap().len(), 3);
    }

    #[test]
    fn oversize_inputs_rejected() {
        let (c, tree) = setup(1, 4);
        let mut t = c.begin().unwrap();
        assert!(matches!(insert(&mut t, tree, &[0; MAX_TREE_KEY + 1], b""), Err(DbtError::KeyTooLarge(_))));
        assert!(matches!(insert(&mut t, tree, b"k", &vec![0; MAX_ROW + 1]), Err(DbtError::RowTooLarge(_))));
        assert!(matches!(create_tree(&mut t, 3), Err(DbtError::BadFanout(3))));
    }

    #[test]
    fn random_ops_match_btreemap() {
        use rand::{Rng, SeedableRng};
        let (c, tree) = setup(4, 4);
        let mut rng = rand::rngs::StdRng::seed_from_u64(5);
        let mut oracle = BTreeMap::new();
        for round in 0..20 {
            let mut t = c.begin().unwrap();
            for _ in 0..50 {
                let key = k(rng.random_range(0..200));
                if rng.random_bool(0.6) {
                    let v = k(rng.random());
                    let expect = if oracle.insert(key.clone(), v.clone()).is_some() {
                        InsertOutcome::Replaced
                    } else {
                        InsertOutcome::Inserted
                    };
                    assert_eq!(insert(&mut t, tree, &key, &v).unwrap(), expect);
                } else {
                    let expect = if oracle.remove(&key).is_some() { DeleteOutcome::Deleted } else { DeleteOutcome::NotFound };
                    assert_eq!(delete(&mut t, tree, &key).unwrap(), expect);
                }
            }
            assert!(t.commit().unwrap().is_committed(), "round {round}");
            let r = c.begin().unwrap();
            let all = scan(&r, tree, b"", None, usize::MAX).unwrap();
            assert_eq!(all, oracle.iter().map(|(a, b)| (a.clone(), b.clone())).collect::<Vec<_>>());
            let report = walk(&r, tree).unwrap();
            assert!(report.findings.is_empty(), "{:?}", report.findings);
        }
    }

    #[test]
    fn delete_everything_collapses_root() {
        let (c, tree) = setup(2, 4);
        let mut t = c.begin().unwrap();
        for i in 0..64 {
            insert(&mut t, tree, &k(i), b"v").unwrap();
        }
        for i in (0..64).rev() {
            assert_eq!(delete(&mut t, tree, &k(i)).unwrap(), DeleteOutcome::Deleted);
            assert!(walk(&t, tree).unwrap().findings.is_empty(), "after deleting {i}");
        }
        let report = walk(&t, tree).unwrap();
        assert_eq!(report.height, 0);
        assert_eq!(report.nodes.len(), 1);
    }

    #[test]
    fn touch_all_leaves_conflicts_with_writers() {
        let (c, tree) = setup(2, 4);
        let mut t = c.begin().unwrap();
        for i in 0..20 {
            insert(&mut t, tree, &k(i), b"v").unwrap();
        }
        t.commit().unwrap();
        let mut a = c.begin().unwrap();
        let mut b = c.begin().unwrap();
        assert!(touch_all_leaves(&mut a, tree).unwrap() >= 5);
        insert(&mut b, tree, &k(7), b"w").unwrap();
        assert!(b.commit().unwrap().is_committed());
        assert!(!a.commit().unwrap().is_committed());
    }
}
