//! Table definitions, stored in tree 0 keyed by the encoded table name.

use std::collections::BTreeMap;

use super::ast::{ColumnType, Value};
use super::keycode::encode_key;
use crate::dbt::{self, DbtError, TreeId};
use crate::txn::Txn;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexDef {
    pub name: String,
    pub column: String,
    pub tree: TreeId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<(String, ColumnType)>,
    pub pk: String,
    pub data_tree: TreeId,
    pub indexes: Vec<IndexDef>,
}

impl TableDef {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|(c, _)| c == name)
    }

    pub fn pk_index(&self) -> usize {
        self.column_index(&self.pk).expect("pk is a declared column")
    }

    pub fn column_type(&self, idx: usize) -> ColumnType {
        self.columns[idx].1
    }

    pub fn types(&self) -> Vec<ColumnType> {
        self.columns.iter().map(|(_, t)| *t).collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = vec![1u8];
        put_str(&mut out, &self.name);
        out.extend_from_slice(&(self.columns.len() as u16).to_be_bytes());
        for (c, t) in &self.columns {
            put_str(&mut out, c);
            out.push(match t {
                ColumnType::Int => 1,
                ColumnType::Text => 2,
                ColumnType::Float => 3,
            });
        }
        put_str(&mut out, &self.pk);
        out.extend_from_slice(&self.data_tree.0.to_be_bytes());
        out.extend_from_slice(&(self.indexes.len() as u16).to_be_bytes());
        for ix in &self.indexes {
            put_str(&mut out, &ix.name);
            put_str(&mut out, &ix.column);
            out.extend_from_slice(&ix.tree.0.to_be_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<TableDef, String> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(1)?[0] != 1 {
            return Err("unknown catalog format".into());
        }
        let name = r.string()?;
        let n = r.u16()?;
        let mut columns = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let c = r.string()?;
            let t = match r.take(1)?[0] {
                1 => ColumnType::Int,
                2 => ColumnType::Text,
                3 => ColumnType::Float,
                other => return Err(format!("unknown column type {other}")),
            };
            columns.push((c, t));
        }
        let pk = r.string()?;
        let data_tree = TreeId(r.u32()?);
        let n = r.u16()?;
        let mut indexes = Vec::with_capacity(n as usize);
        for _ in 0..n {
            indexes.push(IndexDef { name: r.string()?, column: r.string()?, tree: TreeId(r.u32()?) });
        }
        if r.pos != bytes.len() {
            return Err("trailing bytes in catalog entry".into());
        }
        let def = TableDef { name, columns, pk, data_tree, indexes };
        if def.column_index(&def.pk).is_none() {
            return Err(format!("primary key {} is not a column", def.pk));
        }
        Ok(def)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_be_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], String> {
        let s = self.buf.get(self.pos..self.pos + n).ok_or("truncated catalog entry")?;
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, String> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "catalog string is not UTF-8".to_string())
    }
}

/// Every table definition, by name.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Catalog {
    pub tables: BTreeMap<String, TableDef>,
}

impl Catalog {
    pub fn get(&self, name: &str) -> Option<&TableDef> {
        self.tables.get(name)
    }

    pub fn insert(&mut self, def: TableDef) {
        self.tables.insert(def.name.clone(), def);
    }
}

fn name_key(name: &str) -> Vec<u8> {
    encode_key(&Value::Text(name.to_string())).expect("TEXT always encodes")
}

fn decode_def(bytes: &[u8]) -> Result<TableDef, DbtError> {
    TableDef::decode(bytes).map_err(|reason| DbtError::Corrupt {
        tree: TreeId::CATALOG,
        node: dbt::NodeId::new(0, 0),
        reason,
    })
}

/// The whole catalog at the transaction's snapshot; empty on a fresh cluster.
pub fn catalog_load(txn: &Txn) -> Result<Catalog, DbtError> {
    let mut cat = Catalog::default();
    if !dbt::tree_exists(txn, TreeId::CATALOG)? {
        return Ok(cat);
    }
    for (_, v) in dbt::scan(txn, TreeId::CATALOG, b"", None, usize::MAX)? {
        cat.insert(decode_def(&v)?);
    }
    Ok(cat)
}

pub fn load_table(txn: &Txn, name: &str) -> Result<Option<TableDef>, DbtError> {
    if !dbt::tree_exists(txn, TreeId::CATALOG)? {
        return Ok(None);
    }
    dbt::lookup(txn, TreeId::CATALOG, &name_key(name))?.map(|v| decode_def(&v)).transpose()
}

/// Write `def`, creating the catalog tree on first use.
pub fn catalog_store(txn: &mut Txn, def: &TableDef, fanout: usize) -> Result<(), DbtError> {
    if !dbt::tree_exists(txn, TreeId::CATALOG)? {
        dbt::create_tree_at(txn, TreeId::CATALOG, fanout)?;
    }
    dbt::insert(txn, TreeId::CATALOG, &name_key(&def.name), &def.encode())?;
    Ok(())
}
