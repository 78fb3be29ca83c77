//! Scalar values and the canonical index-value encoding.
//!
//! The engine deals in three scalar types plus null. Values serialize to
//! plain JSON scalars: strings as strings, int64 as integer numbers,
//! float64 as float numbers (serde_json always renders a fractional part
//! or exponent for floats, so the two numeric types survive a round trip
//! through our own files without a schema).

use std::cmp::Ordering;
use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Separator for the canonical id encoding: index values joined in entity
/// column order. Unit separator keeps encoded keys unambiguous as long as
/// string index values never contain it, which record validation enforces.
pub const ID_SEPARATOR: char = '\u{1f}';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarType {
    String,
    Int64,
    Float64,
}

impl fmt::Display for ScalarType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ScalarType::String => "string",
            ScalarType::Int64 => "int64",
            ScalarType::Float64 => "float64",
        };
        f.write_str(s)
    }
}

impl ScalarType {
    pub fn is_numeric(self) -> bool {
        matches!(self, ScalarType::Int64 | ScalarType::Float64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Int(i64),
    Float(f64),
    Str(String),
}

impl Value {
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    /// Concrete type of a non-null value.
    pub fn scalar_type(&self) -> Option<ScalarType> {
        match self {
            Value::Null => None,
            Value::Int(_) => Some(ScalarType::Int64),
            Value::Float(_) => Some(ScalarType::Float64),
            Value::Str(_) => Some(ScalarType::String),
        }
    }

    /// Null matches every column type; int64 widens into float64 columns.
    pub fn conforms_to(&self, ty: ScalarType) -> bool {
        match (self, ty) {
            (Value::Null, _) => true,
            (Value::Int(_), ScalarType::Int64) => true,
            (Value::Float(_), ScalarType::Float64) => true,
            (Value::Int(_), ScalarType::Float64) => true,
            (Value::Str(_), ScalarType::String) => true,
            _ => false,
        }
    }

    /// Widen to the column type where lossless (int64 → float64).
    pub fn coerce(self, ty: ScalarType) -> Result<Value> {
        match (self, ty) {
            (Value::Null, _) => Ok(Value::Null),
            (Value::Int(v), ScalarType::Int64) => Ok(Value::Int(v)),
            (Value::Int(v), ScalarType::Float64) => Ok(Value::Float(v as f64)),
            (Value::Float(v), ScalarType::Float64) => Ok(Value::Float(v)),
            (Value::Str(s), ScalarType::String) => Ok(Value::Str(s)),
            (other, ty) => Err(Error::TypeMismatch(format!(
                "value {other:?} does not fit column type {ty}"
            ))),
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(v) => Some(*v),
            _ => None,
        }
    }

    /// Numeric view used by aggregation and expression evaluation.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(v) => Some(*v as f64),
            Value::Float(v) => Some(*v),
            _ => None,
        }
    }

    /// Total order across all values: null < numbers < strings, numbers
    /// compared numerically. Used for canonical row ordering.
    pub fn total_cmp(&self, other: &Value) -> Ordering {
        fn rank(v: &Value) -> u8 {
            match v {
                Value::Null => 0,
                Value::Int(_) | Value::Float(_) => 1,
                Value::Str(_) => 2,
            }
        }
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            (Value::Float(a), Value::Float(b)) => a.total_cmp(b),
            (Value::Int(a), Value::Float(b)) => (*a as f64).total_cmp(b),
            (Value::Float(a), Value::Int(b)) => a.total_cmp(&(*b as f64)),
            (Value::Str(a), Value::Str(b)) => a.cmp(b),
            (a, b) => rank(a).cmp(&rank(b)),
        }
    }

    /// Encoding of one index value inside a canonical id key.
    pub fn id_fragment(&self) -> Result<String> {
        match self {
            Value::Int(v) => Ok(v.to_string()),
            Value::Str(s) => {
                if s.contains(ID_SEPARATOR) {
                    return Err(Error::InvalidRecord(format!(
                        "string index value {s:?} contains the reserved id separator"
                    )));
                }
                Ok(s.clone())
            }
            other => Err(Error::InvalidRecord(format!(
                "index values must be string or int64, got {other:?}"
            ))),
        }
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Value> {
        match v {
            serde_json::Value::Null => Ok(Value::Null),
            serde_json::Value::String(s) => Ok(Value::Str(s.clone())),
            serde_json::Value::Number(n) => {
                if let Some(i) = n.as_i64() {
                    Ok(Value::Int(i))
                } else if let Some(f) = n.as_f64() {
                    Ok(Value::Float(f))
                } else {
                    Err(Error::TypeMismatch(format!("number {n} out of range")))
                }
            }
            other => Err(Error::TypeMismatch(format!(
                "unsupported json value {other} (expected scalar)"
            ))),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("null"),
            Value::Int(v) => write!(f, "{v}"),
            Value::Float(v) => write!(f, "{v:?}"),
            Value::Str(s) => f.write_str(s),
        }
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Value::Null => serializer.serialize_unit(),
            Value::Int(v) => serializer.serialize_i64(*v),
            Value::Float(v) => serializer.serialize_f64(*v),
            Value::Str(s) => serializer.serialize_str(s),
        }
    }
}

struct ValueVisitor;

impl<'de> Visitor<'de> for ValueVisitor {
    type Value = Value;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("a JSON scalar (null, number, or string)")
    }

    fn visit_unit<E: de::Error>(self) -> std::result::Result<Value, E> {
        Ok(Value::Null)
    }

    fn visit_none<E: de::Error>(self) -> std::result::Result<Value, E> {
        Ok(Value::Null)
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Value, E> {
        Ok(Value::Int(v))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Value, E> {
        i64::try_from(v)
            .map(Value::Int)
            .map_err(|_| E::custom("integer out of i64 range"))
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Value, E> {
        Ok(Value::Float(v))
    }

    fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Value, E> {
        Ok(Value::Str(v.to_owned()))
    }

    fn visit_string<E: de::Error>(self, v: String) -> std::result::Result<Value, E> {
        Ok(Value::Str(v))
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Value, D::Error> {
        deserializer.deserialize_any(ValueVisitor)
    }
}

/// True when a name is usable as an asset or column identifier.
pub fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_keeps_numeric_kind() {
        let float = serde_json::to_string(&Value::Float(5.0)).unwrap();
        assert_eq!(float, "5.0");
        let int = serde_json::to_string(&Value::Int(5)).unwrap();
        assert_eq!(int, "5");
        assert_eq!(serde_json::from_str::<Value>(&float).unwrap(), Value::Float(5.0));
        assert_eq!(serde_json::from_str::<Value>(&int).unwrap(), Value::Int(5));
    }

    #[test]
    fn id_fragment_rejects_separator() {
        let bad = Value::Str(format!("a{ID_SEPARATOR}b"));
        assert!(bad.id_fragment().is_err());
        assert_eq!(Value::Int(42).id_fragment().unwrap(), "42");
    }

    #[test]
    fn identifier_rules() {
        assert!(is_identifier("account_id"));
        assert!(is_identifier("_x9"));
        assert!(!is_identifier("9lives"));
        assert!(!is_identifier(""));
        assert!(!is_identifier("a-b"));
    }
}
