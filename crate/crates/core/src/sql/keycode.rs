//! Order-preserving key encodings: byte order of encodings equals SQL
//! order of values of the same type.
//!
//! - INT: two's complement with the sign bit flipped, 8 bytes big-endian.
//! - TEXT: UTF-8 bytes with 0x00 escaped as 0x00 0xFF, then a 0x00 terminator.
//! - FLOAT: IEEE bits, all flipped if negative, else sign bit flipped.
//!   `-0.0` encodes as `+0.0`, since the two compare equal.
//!
//! Every encoding is self-delimiting, so composite keys are plain
//! concatenations.

use super::ast::{ColumnType, Value};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum KeyError {
    #[error("expected {expected} key, got {found}")]
    TypeMismatch { expected: ColumnType, found: ColumnType },
    #[error("NaN cannot be stored")]
    NaN,
    #[error("truncated {0} key")]
    Truncated(ColumnType),
    #[error("invalid escape in TEXT key")]
    BadEscape,
    #[error("TEXT key is not UTF-8")]
    BadUtf8,
    #[error("{0} trailing bytes after key")]
    Trailing(usize),
}

const SIGN: u64 = 1 << 63;

pub fn encode_into(v: &Value, out: &mut Vec<u8>) -> Result<(), KeyError> {
    match v {
        Value::Int(i) => out.extend_from_slice(&((*i as u64) ^ SIGN).to_be_bytes()),
        Value::Float(x) => {
            if x.is_nan() {
                return Err(KeyError::NaN);
            }
            let x = if *x == 0.0 { 0.0f64 } else { *x };
            let bits = x.to_bits();
            let bits = if bits & SIGN != 0 { !bits } else { bits ^ SIGN };
            out.extend_from_slice(&bits.to_be_bytes());
        }
        Value::Text(s) => {
            for &b in s.as_bytes() {
                out.push(b);
                if b == 0 {
                    out.push(0xFF);
                }
            }
            out.push(0);
        }
    }
    Ok(())
}

pub fn encode_key(v: &Value) -> Result<Vec<u8>, KeyError> {
    let mut out = Vec::with_capacity(9);
    encode_into(v, &mut out)?;
    Ok(out)
}

/// Encode `v` as a key for a column of type `ty`.
pub fn encode_typed(v: &Value, ty: ColumnType) -> Result<Vec<u8>, KeyError> {
    if v.column_type() != ty {
        return Err(KeyError::TypeMismatch { expected: ty, found: v.column_type() });
    }
    encode_key(v)
}

/// Decode one value from the front of `bytes`; returns it and the bytes used.
pub fn decode_prefix(bytes: &[u8], ty: ColumnType) -> Result<(Value, usize), KeyError> {
    match ty {
        ColumnType::Int | ColumnType::Float => {
            let raw: [u8; 8] = bytes.get(..8).ok_or(KeyError::Truncated(ty))?.try_into().unwrap();
            let bits = u64::from_be_bytes(raw);
            let v = if ty == ColumnType::Int {
                Value::Int((bits ^ SIGN) as i64)
            } else {
                let bits = if bits & SIGN != 0 { bits ^ SIGN } else { !bits };
                Value::Float(f64::from_bits(bits))
            };
            Ok((v, 8))
        }
        ColumnType::Text => {
            let mut s = Vec::new();
            let mut i = 0;
            loop {
                match bytes.get(i) {
                    None => return Err(KeyError::Truncated(ty)),
                    Some(0) => match bytes.get(i + 1) {
                        Some(0xFF) => {
                            s.push(0);
                            i += 2;
                        }
                        _ => {
                            i += 1;
                            break;
                        }
                    },
                    Some(&b) => {
                        s.push(b);
                        i += 1;
                    }
                }
            }
            let s = String::from_utf8(s).map_err(|_| KeyError::BadUtf8)?;
            Ok((Value::Text(s), i))
        }
    }
}

pub fn decode_key(bytes: &[u8], ty: ColumnType) -> Result<Value, KeyError> {
    let (v, used) = decode_prefix(bytes, ty)?;
    if used != bytes.len() {
        return Err(KeyError::Trailing(bytes.len() - used));
    }
    Ok(v)
}

/// Smallest byte string greater than every string starting with `prefix`;
/// `None` when no such bound exists.
pub fn prefix_end(prefix: &[u8]) -> Option<Vec<u8>> {
    let mut end = prefix.to_vec();
    while let Some(last) = end.pop() {
        if last < 0xFF {
            end.push(last + 1);
            return Some(end);
        }
    }
    None
}

/// Smallest full encoding strictly greater than `key` in a prefix-free set.
pub fn successor(key: &[u8]) -> Vec<u8> {
    let mut k = key.to_vec();
    k.push(0);
    k
}
