//! Node identifiers, their store keys, and the node/root-pointer formats.
//!
//! ```text
//! node       fmt:u8=1 kind:u8 height:u8 count:u16 (len:u32 key)*count
//!            then (child:u64)*(count+1) for inner or (len:u32 row)*count for leaf
//! root ptr   fmt:u8=1 root:u64 height:u8 fanout:u16
//! ```
//!
//! All integers are big-endian.

use std::fmt;

use crate::kvserver::{NODE_KEY_LEN, NODE_KEY_TAG};
use crate::wire::ServerId;

pub const FORMAT: u8 = 1;
const KIND_LEAF: u8 = 0;
const KIND_INNER: u8 = 1;
const LOCAL_MASK: u64 = (1 << 48) - 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TreeId(pub u32);

impl TreeId {
    pub const CATALOG: TreeId = TreeId(0);
}

impl fmt::Display for TreeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "tree {}", self.0)
    }
}

/// `hint` picks the server (modulo cluster size); `local` is a 48-bit
/// counter value unique within `(tree, hint)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId {
    pub hint: u16,
    pub local: u64,
}

impl NodeId {
    pub fn new(hint: u16, local: u64) -> NodeId {
        assert!(local <= LOCAL_MASK, "local node id exceeds 48 bits");
        NodeId { hint, local }
    }

    pub fn to_u64(self) -> u64 {
        (u64::from(self.hint) << 48) | self.local
    }

    pub fn from_u64(v: u64) -> NodeId {
        NodeId { hint: (v >> 48) as u16, local: v & LOCAL_MASK }
    }

    pub fn server(self, n_servers: usize) -> ServerId {
        ServerId((usize::from(self.hint) % n_servers) as u16)
    }

    pub fn key(self, tree: TreeId) -> Vec<u8> {
        let mut k = Vec::with_capacity(NODE_KEY_LEN);
        k.push(NODE_KEY_TAG);
        k.extend_from_slice(&tree.0.to_be_bytes());
        k.extend_from_slice(&self.hint.to_be_bytes());
        k.extend_from_slice(&self.local.to_be_bytes()[2..]);
        k
    }

    pub fn from_key(key: &[u8]) -> Option<(TreeId, NodeId)> {
        if key.len() != NODE_KEY_LEN || key[0] != NODE_KEY_TAG {
            return None;
        }
        let tree = TreeId(u32::from_be_bytes(key[1..5].try_into().unwrap()));
        let hint = u16::from_be_bytes([key[5], key[6]]);
        let mut local = [0u8; 8];
        local[2..].copy_from_slice(&key[7..13]);
        Some((tree, NodeId { hint, local: u64::from_be_bytes(local) }))
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.hint, self.local)
    }
}

pub fn root_key(tree: TreeId) -> Vec<u8> {
    let mut k = vec![b'R'];
    k.extend_from_slice(&tree.0.to_be_bytes());
    k
}

pub fn tree_counter_key() -> Vec<u8> {
    b"C.trees".to_vec()
}

pub fn node_counter_key(tree: TreeId, hint: u16) -> Vec<u8> {
    let mut k = vec![b'L'];
    k.extend_from_slice(&tree.0.to_be_bytes());
    k.extend_from_slice(&hint.to_be_bytes());
    k
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RootPointer {
    pub root: NodeId,
    pub height: u8,
    pub fanout: u16,
}

impl RootPointer {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12);
        out.push(FORMAT);
        out.extend_from_slice(&self.root.to_u64().to_be_bytes());
        out.push(self.height);
        out.extend_from_slice(&self.fanout.to_be_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<RootPointer, String> {
        if bytes.len() != 12 {
            return Err(format!("root pointer of {} bytes", bytes.len()));
        }
        if bytes[0] != FORMAT {
            return Err(format!("unknown root pointer format {}", bytes[0]));
        }
        Ok(RootPointer {
            root: NodeId::from_u64(u64::from_be_bytes(bytes[1..9].try_into().unwrap())),
            height: bytes[9],
            fanout: u16::from_be_bytes([bytes[10], bytes[11]]),
        })
    }
}

/// A tree node. Leaves (height 0) carry one row per key; inner nodes carry
/// one more child than keys.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeNode {
    pub height: u8,
    pub keys: Vec<Vec<u8>>,
    pub children: Vec<NodeId>,
    pub values: Vec<Vec<u8>>,
}

impl TreeNode {
    pub fn empty_leaf() -> TreeNode {
        TreeNode { height: 0, keys: Vec::new(), children: Vec::new(), values: Vec::new() }
    }

    pub fn inner(height: u8, keys: Vec<Vec<u8>>, children: Vec<NodeId>) -> TreeNode {
        TreeNode { height, keys, children, values: Vec::new() }
    }

    pub fn is_leaf(&self) -> bool {
        self.height == 0
    }

    /// Entries for occupancy purposes: rows in a leaf, children in an inner node.
    pub fn entries(&self) -> usize {
        if self.is_leaf() {
            self.keys.len()
        } else {
            self.children.len()
        }
    }

    /// Index of the child whose range holds `key`.
    pub fn child_index(&self, key: &[u8]) -> usize {
        self.keys.partition_point(|s| s.as_slice() <= key)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut size = 5 + self.keys.iter().map(|k| 4 + k.len()).sum::<usize>();
        size += if self.is_leaf() {
            self.values.iter().map(|v| 4 + v.len()).sum::<usize>()
        } else {
            8 * self.children.len()
        };
        let mut out = Vec::with_capacity(size);
        out.push(FORMAT);
        out.push(if self.is_leaf() { KIND_LEAF } else { KIND_INNER });
        out.push(self.height);
        out.extend_from_slice(&(self.keys.len() as u16).to_be_bytes());
        for k in &self.keys {
            put_bytes(&mut out, k);
        }
        if self.is_leaf() {
            for v in &self.values {
                put_bytes(&mut out, v);
            }
        } else {
            for c in &self.children {
                out.extend_from_slice(&c.to_u64().to_be_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<TreeNode, String> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let format = r.u8()?;
        if format != FORMAT {
            return Err(format!("unknown node format {format}"));
        }
        let kind = r.u8()?;
        let height = r.u8()?;
        let count = usize::from(r.u16()?);
        match (kind, height) {
            (KIND_LEAF, 0) | (KIND_INNER, 1..) => {}
            _ => return Err(format!("kind {kind} at height {height}")),
        }
        let mut keys = Vec::with_capacity(count);
        for _ in 0..count {
            keys.push(r.bytes()?);
        }
        let mut node = TreeNode { height, keys, children: Vec::new(), values: Vec::new() };
        if kind == KIND_LEAF {
            for _ in 0..count {
                node.values.push(r.bytes()?);
            }
        } else {
            for _ in 0..=count {
                node.children.push(NodeId::from_u64(r.u64()?));
            }
        }
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        Ok(node)
    }
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_be_bytes());
    out.extend_from_slice(b);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], String> {
        if self.buf.len() - self.pos < n {
            return Err(format!("truncated at byte {}", self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, String> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn bytes(&mut self) -> Result<Vec<u8>, String> {
        let n = u32::from_be_bytes(self.take(4)?.try_into().unwrap()) as usize;
        Ok(self.take(n)?.to_vec())
    }
}
