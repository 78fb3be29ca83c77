//! Tabular data passed between source reads, transforms, and stores.

use crate::error::{Error, Result};
use crate::value::{ScalarType, Value};

/// An ordered schema plus rows of scalar values. Transforms consume and
/// produce frames; the output side is validated against the feature set
/// contract before records are cut from it.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    schema: Vec<(String, ScalarType)>,
    rows: Vec<Vec<Value>>,
}

impl Frame {
    pub fn new(schema: Vec<(String, ScalarType)>) -> Result<Frame> {
        let mut seen = std::collections::HashSet::new();
        for (name, _) in &schema {
            if !seen.insert(name.as_str()) {
                return Err(Error::SchemaConflict(format!(
                    "duplicate column '{name}' in frame schema"
                )));
            }
        }
        Ok(Frame {
            schema,
            rows: Vec::new(),
        })
    }

    pub fn schema(&self) -> &[(String, ScalarType)] {
        &self.schema
    }

    pub fn rows(&self) -> &[Vec<Value>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|(n, _)| n == name)
    }

    pub fn column_type(&self, name: &str) -> Option<ScalarType> {
        self.schema
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| *t)
    }

    /// Append a row, checking arity and per-column type conformance
    /// (nulls pass; int64 values are widened into float64 columns).
    pub fn push_row(&mut self, row: Vec<Value>) -> Result<()> {
        if row.len() != self.schema.len() {
            return Err(Error::TypeMismatch(format!(
                "row arity {} does not match schema arity {}",
                row.len(),
                self.schema.len()
            )));
        }
        let mut coerced = Vec::with_capacity(row.len());
        for (value, (name, ty)) in row.into_iter().zip(&self.schema) {
            if !value.conforms_to(*ty) {
                return Err(Error::TypeMismatch(format!(
                    "column '{name}' expects {ty}, got {value:?}"
                )));
            }
            coerced.push(value.coerce(*ty)?);
        }
        self.rows.push(coerced);
        Ok(())
    }

    /// Canonical ordering: rows sorted by the total order over their
    /// values, left to right. Makes equal logical contents byte-equal
    /// once serialized.
    pub fn sort_rows(&mut self) {
        self.rows.sort_by(|a, b| {
            for (x, y) in a.iter().zip(b.iter()) {
                let ord = x.total_cmp(y);
                if ord != std::cmp::Ordering::Equal {
                    return ord;
                }
            }
            std::cmp::Ordering::Equal
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_row_enforces_schema() {
        let mut f = Frame::new(vec![
            ("id".into(), ScalarType::String),
            ("amount".into(), ScalarType::Float64),
        ])
        .unwrap();
        f.push_row(vec![Value::Str("a".into()), Value::Int(3)]).unwrap();
        // int widened into the float column
        assert_eq!(f.rows()[0][1], Value::Float(3.0));
        assert!(f.push_row(vec![Value::Str("a".into())]).is_err());
        assert!(f
            .push_row(vec![Value::Int(1), Value::Float(2.0)])
            .is_err());
    }

    #[test]
    fn duplicate_schema_columns_rejected() {
        assert!(Frame::new(vec![
            ("x".into(), ScalarType::Int64),
            ("x".into(), ScalarType::Int64),
        ])
        .is_err());
    }
}
