//! Materialized feature records and their validation contract.
//!
//! A record is the unit both stores agree on: index values, an event
//! timestamp (what time the value pertains to), a creation timestamp
//! (when it was materialized), and the feature values. For a feature set
//! version the full key `(ids, event_ts, creation_ts)` is unique; the
//! offline store keeps every key, the online store keeps the per-id
//! maximum of `(event_ts, creation_ts)`.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::value::{ScalarType, Value, ID_SEPARATOR};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    /// Index values in entity column order.
    pub ids: IndexMap<String, Value>,
    /// Event-time milliseconds; end of the aggregation period for
    /// windowed features.
    pub event_ts: i64,
    /// Materialization time; strictly greater than `event_ts`.
    pub creation_ts: i64,
    /// Feature values in declared order; nulls allowed.
    pub features: IndexMap<String, Value>,
}

impl FeatureRecord {
    /// Canonical id encoding: index values joined in column order with
    /// the unit separator. Offline and online agree on this byte for
    /// byte.
    pub fn id_key(&self) -> Result<String> {
        encode_id_key(self.ids.values())
    }

    /// Ordering key for "latest": lexicographic (event_ts, creation_ts).
    pub fn version_key(&self) -> (i64, i64) {
        (self.event_ts, self.creation_ts)
    }

    /// Full uniqueness key within a feature set version.
    pub fn full_key(&self) -> Result<(String, i64, i64)> {
        Ok((self.id_key()?, self.event_ts, self.creation_ts))
    }
}

pub fn encode_id_key<'a>(values: impl Iterator<Item = &'a Value>) -> Result<String> {
    let mut parts = Vec::new();
    for v in values {
        parts.push(v.id_fragment()?);
    }
    Ok(parts.join(&ID_SEPARATOR.to_string()))
}

/// The record-shaped view of a feature set version: index columns in
/// entity order, the timestamp column name, and the declared features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSchema {
    pub index_columns: Vec<(String, ScalarType)>,
    pub timestamp_column: String,
    pub features: Vec<(String, ScalarType)>,
}

impl RecordSchema {
    /// Validate one record against this schema: id columns present, in
    /// order, non-null, and separator-safe; features exactly the declared
    /// set in order; `creation_ts > event_ts`; floats finite.
    pub fn validate_record(&self, record: &FeatureRecord) -> Result<()> {
        if record.ids.len() != self.index_columns.len() {
            return Err(Error::InvalidRecord(format!(
                "expected {} index values, got {}",
                self.index_columns.len(),
                record.ids.len()
            )));
        }
        for ((col, ty), (name, value)) in self.index_columns.iter().zip(record.ids.iter()) {
            if col != name {
                return Err(Error::InvalidRecord(format!(
                    "index column order mismatch: expected '{col}', got '{name}'"
                )));
            }
            if value.is_null() {
                return Err(Error::InvalidRecord(format!(
                    "index column '{col}' is null"
                )));
            }
            if !value.conforms_to(*ty) {
                return Err(Error::InvalidRecord(format!(
                    "index column '{col}' expects {ty}, got {value:?}"
                )));
            }
            value.id_fragment()?;
        }
        if record.creation_ts <= record.event_ts {
            return Err(Error::InvalidRecord(format!(
                "creation_ts {} must be greater than event_ts {}",
                record.creation_ts, record.event_ts
            )));
        }
        if record.features.len() != self.features.len() {
            return Err(Error::InvalidRecord(format!(
                "expected {} feature values, got {}",
                self.features.len(),
                record.features.len()
            )));
        }
        for ((col, ty), (name, value)) in self.features.iter().zip(record.features.iter()) {
            if col != name {
                return Err(Error::InvalidRecord(format!(
                    "feature order mismatch: expected '{col}', got '{name}'"
                )));
            }
            if !value.conforms_to(*ty) {
                return Err(Error::InvalidRecord(format!(
                    "feature '{col}' expects {ty}, got {value:?}"
                )));
            }
            if let Value::Float(f) = value {
                if !f.is_finite() {
                    return Err(Error::InvalidRecord(format!(
                        "feature '{col}' is not finite: {f}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn validate_all(&self, records: &[FeatureRecord]) -> Result<()> {
        for r in records {
            self.validate_record(r)?;
        }
        Ok(())
    }
}

/// Outcome of an offline merge.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OfflineMergeReport {
    pub inserted: usize,
    pub skipped: usize,
}

/// Outcome of an online merge.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OnlineMergeReport {
    pub inserted: usize,
    pub overridden: usize,
    pub noop: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use indexmap::indexmap;

    fn schema() -> RecordSchema {
        RecordSchema {
            index_columns: vec![("account_id".into(), ScalarType::String)],
            timestamp_column: "ts".into(),
            features: vec![("amt".into(), ScalarType::Int64)],
        }
    }

    fn record(event: i64, creation: i64) -> FeatureRecord {
        FeatureRecord {
            ids: indexmap! {"account_id".to_string() => Value::Str("a1".into())},
            event_ts: event,
            creation_ts: creation,
            features: indexmap! {"amt".to_string() => Value::Int(5)},
        }
    }

    #[test]
    fn creation_must_exceed_event() {
        assert!(schema().validate_record(&record(10, 20)).is_ok());
        assert!(schema().validate_record(&record(10, 10)).is_err());
        assert!(schema().validate_record(&record(10, 5)).is_err());
    }

    #[test]
    fn wrong_feature_set_rejected() {
        let mut r = record(10, 20);
        r.features = indexmap! {"other".to_string() => Value::Int(5)};
        assert!(schema().validate_record(&r).is_err());
    }

    #[test]
    fn record_json_round_trips() {
        let r = record(10, 20);
        let line = serde_json::to_string(&r).unwrap();
        let back: FeatureRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, r);
    }
}
