//! Leakage-safe feature retrieval.
//!
//! Offline retrieval joins an observation spine against one or more
//! feature sets point-in-time: for an observation at `ts0`, only
//! records with `event_ts < ts0 - source_delay` qualify (strictly the
//! past, allowing for expected source lateness), and among qualifying
//! records the one maximizing `(event_ts, creation_ts)` wins — the same
//! total order the online store keeps, so training and serving see the
//! same values.
//!
//! Cells distinguish three outcomes: a value, `no_data` (the queried
//! range is materialized but holds no qualifying record), and
//! `not_materialized` (no materialized coverage intersects the lookup
//! range at all).

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{encode_id_key, FeatureRecord};
use crate::registry::{FsvId, ResolvedFeatureSet};
use crate::value::Value;
use crate::window::IntervalSet;

/// Reserved spine column holding each observation's timestamp.
pub const OBSERVATION_TS_COLUMN: &str = "observation_ts";

/// Rows of (ids, observation timestamp, passthrough columns) driving
/// point-in-time retrieval.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSpine {
    pub rows: Vec<IndexMap<String, Value>>,
}

impl ObservationSpine {
    pub fn from_rows(rows: Vec<IndexMap<String, Value>>) -> Result<ObservationSpine> {
        for (i, row) in rows.iter().enumerate() {
            match row.get(OBSERVATION_TS_COLUMN) {
                Some(Value::Int(_)) => {}
                other => {
                    return Err(Error::InvalidSpec(format!(
                        "spine row {i} needs an integer '{OBSERVATION_TS_COLUMN}', got {other:?}"
                    )))
                }
            }
        }
        Ok(ObservationSpine { rows })
    }

    pub fn from_jsonl(text: &str) -> Result<ObservationSpine> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: IndexMap<String, Value> =
                serde_json::from_str(line).map_err(|e| Error::Encoding {
                    path: format!("spine line {}", i + 1),
                    message: e.to_string(),
                })?;
            rows.push(row);
        }
        ObservationSpine::from_rows(rows)
    }

    fn observation_ts(row: &IndexMap<String, Value>) -> i64 {
        match row.get(OBSERVATION_TS_COLUMN) {
            Some(Value::Int(ts)) => *ts,
            _ => unreachable!("validated at construction"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Value,
    NoData,
    NotMaterialized,
}

impl CellStatus {
    pub fn label(self) -> &'static str {
        match self {
            CellStatus::Value => "value",
            CellStatus::NoData => "no_data",
            CellStatus::NotMaterialized => "not_materialized",
        }
    }
}

/// One requested feature column in one result row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCell {
    pub feature_set: FsvId,
    pub feature: String,
    pub status: CellStatus,
    pub value: Value,
    /// Event/creation timestamps of the chosen record, kept for
    /// leakage auditing.
    pub source_event_ts: Option<i64>,
    pub source_creation_ts: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRow {
    pub spine: IndexMap<String, Value>,
    pub cells: Vec<FeatureCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    /// (feature set, feature name) per output column, in request order.
    pub feature_columns: Vec<(FsvId, String)>,
    pub rows: Vec<RetrievalRow>,
}

impl RetrievalResult {
    /// Serialize as JSON lines: spine columns, then per feature its
    /// value (null unless status is `value`) and a `<name>__status`
    /// column.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for row in &self.rows {
            let mut doc = serde_json::Map::new();
            for (k, v) in &row.spine {
                doc.insert(k.clone(), serde_json::to_value(v).expect("scalar"));
            }
            for cell in &row.cells {
                doc.insert(
                    cell.feature.clone(),
                    serde_json::to_value(&cell.value).expect("scalar"),
                );
                doc.insert(
                    format!("{}__status", cell.feature),
                    serde_json::Value::String(cell.status.label().to_string()),
                );
            }
            out.push_str(&serde_json::Value::Object(doc).to_string());
            out.push('\n');
        }
        Ok(out)
    }
}

/// A feature set's materialized state as seen by the join: its records
/// and its data-state coverage.
pub struct JoinSource {
    pub feature_set: ResolvedFeatureSet,
    pub features: Vec<String>,
    pub records: Vec<FeatureRecord>,
    pub coverage: IntervalSet,
}

/// Validate a request list against resolved feature sets and reject
/// output column collisions.
pub fn validate_requests(requests: &[(ResolvedFeatureSet, Vec<String>)]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for (fs, features) in requests {
        for feature in features {
            if !fs.spec.features.iter().any(|(n, _)| n == feature) {
                return Err(Error::UnknownFeature {
                    name: fs.spec.name.clone(),
                    version: fs.spec.version,
                    feature: feature.clone(),
                });
            }
            if !seen.insert(feature.clone()) {
                return Err(Error::SchemaConflict(format!(
                    "feature column '{feature}' requested more than once"
                )));
            }
        }
    }
    Ok(())
}

/// Extract and key-encode one feature set's index values from a spine
/// row.
fn spine_id_key(
    row: &IndexMap<String, Value>,
    fs: &ResolvedFeatureSet,
) -> Result<String> {
    let mut values = Vec::new();
    for (col, ty) in fs.index_columns() {
        let v = row.get(&col).ok_or_else(|| {
            Error::EntityMismatch(format!(
                "spine row lacks index column '{col}' required by '{}'",
                fs.spec.name
            ))
        })?;
        if !v.conforms_to(ty) {
            return Err(Error::EntityMismatch(format!(
                "spine column '{col}' expects {ty}, got {v:?}"
            )));
        }
        values.push(v.clone());
    }
    encode_id_key(values.iter())
}

/// Point-in-time join of a spine against pre-scanned store state.
pub fn point_in_time_join(
    spine: &ObservationSpine,
    sources: &[JoinSource],
    as_of: Option<i64>,
) -> Result<RetrievalResult> {
    // index records per source by canonical id, sorted by version key
    let mut indexes: Vec<std::collections::HashMap<String, Vec<&FeatureRecord>>> = Vec::new();
    for source in sources {
        let mut by_key: std::collections::HashMap<String, Vec<&FeatureRecord>> =
            std::collections::HashMap::new();
        for r in &source.records {
            by_key.entry(r.id_key()?).or_default().push(r);
        }
        for list in by_key.values_mut() {
            list.sort_by_key(|r| r.version_key());
        }
        indexes.push(by_key);
    }

    let feature_columns: Vec<(FsvId, String)> = sources
        .iter()
        .flat_map(|s| {
            s.features
                .iter()
                .map(|f| (s.feature_set.spec.id(), f.clone()))
        })
        .collect();

    let mut rows = Vec::with_capacity(spine.rows.len());
    for spine_row in &spine.rows {
        let ts0 = ObservationSpine::observation_ts(spine_row);
        let mut cells = Vec::new();
        for (source, index) in sources.iter().zip(&indexes) {
            let bound = ts0 - source.feature_set.spec.source.source_delay;
            let key = spine_id_key(spine_row, &source.feature_set)?;
            let chosen = index.get(&key).and_then(|list| {
                // list sorted ascending by (event_ts, creation_ts):
                // take the greatest entry under the bounds
                list.iter()
                    .rev()
                    .find(|r| {
                        r.event_ts < bound
                            && as_of.map(|a| r.creation_ts <= a).unwrap_or(true)
                    })
                    .copied()
            });
            let status = match (&chosen, source.coverage.any_before(bound)) {
                (Some(_), _) => CellStatus::Value,
                (None, true) => CellStatus::NoData,
                (None, false) => CellStatus::NotMaterialized,
            };
            for feature in &source.features {
                let (value, event, creation) = match chosen {
                    Some(r) => (
                        r.features.get(feature).cloned().unwrap_or(Value::Null),
                        Some(r.event_ts),
                        Some(r.creation_ts),
                    ),
                    None => (Value::Null, None, None),
                };
                cells.push(FeatureCell {
                    feature_set: source.feature_set.spec.id(),
                    feature: feature.clone(),
                    status,
                    value,
                    source_event_ts: event,
                    source_creation_ts: creation,
                });
            }
        }
        rows.push(RetrievalRow {
            spine: spine_row.clone(),
            cells,
        });
    }
    Ok(RetrievalResult {
        feature_columns,
        rows,
    })
}

/// One leakage violation: a value cell whose source record would not
/// have been observable at prediction time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageViolation {
    pub row: usize,
    pub feature_set: FsvId,
    pub feature: String,
    pub observation_ts: i64,
    pub source_delay: i64,
    pub source_event_ts: i64,
}

/// Re-verify every value cell of a result: its source record must have
/// `event_ts < observation_ts - source_delay`. Empty on a correct
/// engine.
pub fn audit_leakage(
    result: &RetrievalResult,
    delays: &std::collections::HashMap<FsvId, i64>,
) -> Result<Vec<LeakageViolation>> {
    let mut violations = Vec::new();
    for (row_idx, row) in result.rows.iter().enumerate() {
        let ts0 = match row.spine.get(OBSERVATION_TS_COLUMN) {
            Some(Value::Int(ts)) => *ts,
            other => {
                return Err(Error::InvalidSpec(format!(
                    "result row {row_idx} lacks an integer observation_ts: {other:?}"
                )))
            }
        };
        for cell in &row.cells {
            if cell.status != CellStatus::Value {
                continue;
            }
            let delay = *delays.get(&cell.feature_set).ok_or_else(|| Error::NotFound {
                kind: "feature set",
                what: cell.feature_set.to_string(),
            })?;
            let event_ts = cell.source_event_ts.ok_or_else(|| {
                Error::InvalidSpec(format!(
                    "value cell '{}' in row {row_idx} has no source event timestamp",
                    cell.feature
                ))
            })?;
            if event_ts >= ts0 - delay {
                violations.push(LeakageViolation {
                    row: row_idx,
                    feature_set: cell.feature_set.clone(),
                    feature: cell.feature.clone(),
                    observation_ts: ts0,
                    source_delay: delay,
                    source_event_ts: event_ts,
                });
            }
        }
    }
    Ok(violations)
}

/// Per-feature lookup against the online store, shaped for serving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineFeature {
    pub status: String,
    pub value: Value,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OnlineResult {
    pub features: IndexMap<String, OnlineFeature>,
}

pub(crate) fn online_key_for(
    ids: &IndexMap<String, Value>,
    fs: &ResolvedFeatureSet,
) -> Result<String> {
    let mut values = Vec::new();
    for (col, ty) in fs.index_columns() {
        let v = ids.get(&col).ok_or_else(|| {
            Error::EntityMismatch(format!(
                "ids lack index column '{col}' required by '{}'",
                fs.spec.name
            ))
        })?;
        if !v.conforms_to(ty) {
            return Err(Error::EntityMismatch(format!(
                "id column '{col}' expects {ty}, got {v:?}"
            )));
        }
        values.push(v.clone());
    }
    encode_id_key(values.iter())
}
