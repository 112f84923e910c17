//! Row storage format: one cell per column in definition order, each
//! `tag:u8 len:u32 bytes`. Tags: 1 INT (8 bytes BE), 2 TEXT (UTF-8),
//! 3 FLOAT (8 bytes of IEEE bits, BE).

use super::ast::{ColumnType, Value};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum RowError {
    #[error("row truncated at byte {0}")]
    Truncated(usize),
    #[error("cell {index}: expected {expected}, found tag {tag}")]
    Tag { index: usize, expected: ColumnType, tag: u8 },
    #[error("cell {0}: bad length")]
    Length(usize),
    #[error("cell {0}: TEXT is not UTF-8")]
    Utf8(usize),
    #[error("{0} trailing bytes after row")]
    Trailing(usize),
}

fn tag(t: ColumnType) -> u8 {
    match t {
        ColumnType::Int => 1,
        ColumnType::Text => 2,
        ColumnType::Float => 3,
    }
}

pub fn encode_row(values: &[Value]) -> Vec<u8> {
    let mut out = Vec::new();
    for v in values {
        out.push(tag(v.column_type()));
        match v {
            Value::Int(i) => {
                out.extend_from_slice(&8u32.to_be_bytes());
                out.extend_from_slice(&i.to_be_bytes());
            }
            Value::Float(x) => {
                out.extend_from_slice(&8u32.to_be_bytes());
                out.extend_from_slice(&x.to_bits().to_be_bytes());
            }
            Value::Text(s) => {
                out.extend_from_slice(&(s.len() as u32).to_be_bytes());
                out.extend_from_slice(s.as_bytes());
            }
        }
    }
    out
}

pub fn decode_row(bytes: &[u8], types: &[ColumnType]) -> Result<Vec<Value>, RowError> {
    let mut pos = 0;
    let mut out = Vec::with_capacity(types.len());
    for (index, &ty) in types.iter().enumerate() {
        let header = bytes.get(pos..pos + 5).ok_or(RowError::Truncated(pos))?;
        if header[0] != tag(ty) {
            return Err(RowError::Tag { index, expected: ty, tag: header[0] });
        }
        let len = u32::from_be_bytes(header[1..5].try_into().unwrap()) as usize;
        pos += 5;
        let body = bytes.get(pos..pos + len).ok_or(RowError::Truncated(pos))?;
        pos += len;
        out.push(match ty {
            ColumnType::Int | ColumnType::Float => {
                let raw: [u8; 8] = body.try_into().map_err(|_| RowError::Length(index))?;
                if ty == ColumnType::Int {
                    Value::Int(i64::from_be_bytes(raw))
                } else {
                    Value::Float(f64::from_bits(u64::from_be_bytes(raw)))
                }
            }
            ColumnType::Text => Value::Text(String::from_utf8(body.to_vec()).map_err(|_| RowError::Utf8(index))?),
        });
    }
    if pos != bytes.len() {
        return Err(RowError::Trailing(bytes.len() - pos));
    }
    Ok(out)
}
