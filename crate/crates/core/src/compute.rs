//! Feature calculation: derive the source read window from the feature
//! window, run the transformation, and keep only output rows inside the
//! feature window.
//!
//! The same flow backs materialization jobs and on-the-fly offline
//! retrieval. Calculation is pure given its inputs, so jobs on disjoint
//! windows can run concurrently.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use indexmap::IndexMap;

use crate::dsl;
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::record::FeatureRecord;
use crate::registry::{ResolvedFeatureSet, SourceDef, TransformDef};
use crate::value::{ScalarType, Value};
use crate::window::FeatureWindow;

/// Everything an opaque transform gets to see about its invocation.
#[derive(Debug, Clone)]
pub struct TransformContext {
    pub feature_set_name: String,
    pub feature_set_version: u32,
    pub feature_window: FeatureWindow,
    pub source_window: FeatureWindow,
    pub job_id: Option<String>,
}

/// In-process hook for opaque (non-DSL) transformations. The engine
/// validates the same output contract the DSL path satisfies by
/// construction.
pub trait TransformHook: Send + Sync {
    fn transform(&self, source: &Frame, ctx: &TransformContext) -> Result<Frame>;
}

/// Registered opaque transforms, looked up by id at calculation time.
#[derive(Default)]
pub struct HookRegistry {
    hooks: HashMap<String, Arc<dyn TransformHook>>,
}

impl HookRegistry {
    pub fn register(&mut self, id: impl Into<String>, hook: Arc<dyn TransformHook>) {
        self.hooks.insert(id.into(), hook);
    }

    pub fn get(&self, id: &str) -> Option<Arc<dyn TransformHook>> {
        self.hooks.get(id).cloned()
    }
}

/// Source read window per the calculation contract: the feature window
/// start pulled back by `source_lookback`, clamped at the epoch.
pub fn derive_source_window(w: FeatureWindow, source_lookback: i64) -> FeatureWindow {
    FeatureWindow {
        start_ts: (w.start_ts - source_lookback).max(0),
        end_ts: w.end_ts,
    }
}

/// Read all and only the source rows with timestamp in `window` from a
/// directory of JSON-lines files.
///
/// The source schema is inferred over every row read: columns appear in
/// first-seen order, integer-only numeric columns are int64, columns
/// with any fractional value are float64, and a column mixing strings
/// and numbers is a schema mismatch. Missing fields read as null; the
/// timestamp column must be a non-null integer in every row.
pub fn read_source(src: &SourceDef, window: FeatureWindow) -> Result<Frame> {
    let dir = Path::new(&src.path);
    if !dir.is_dir() {
        return Err(Error::SourceUnavailable(format!(
            "source path '{}' is not a directory",
            src.path
        )));
    }
    let mut files: Vec<std::path::PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::SourceUnavailable(format!("{}: {e}", src.path)))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "jsonl").unwrap_or(false))
        .collect();
    files.sort();

    // pass 1: row objects in (file, line) order with inferred column types
    let mut raw_rows: Vec<serde_json::Map<String, serde_json::Value>> = Vec::new();
    let mut columns: Vec<String> = Vec::new();
    let mut types: HashMap<String, Option<ScalarType>> = HashMap::new();
    for file in &files {
        let text = std::fs::read_to_string(file)
            .map_err(|e| Error::SourceUnavailable(format!("{}: {e}", file.display())))?;
        for (line_no, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let doc: serde_json::Value = serde_json::from_str(line).map_err(|e| {
                Error::SourceSchemaMismatch(format!(
                    "{}:{}: invalid json: {e}",
                    file.display(),
                    line_no + 1
                ))
            })?;
            let obj = match doc {
                serde_json::Value::Object(obj) => obj,
                other => {
                    return Err(Error::SourceSchemaMismatch(format!(
                        "{}:{}: expected an object per line, got {other}",
                        file.display(),
                        line_no + 1
                    )))
                }
            };
            for (key, value) in &obj {
                if !types.contains_key(key) {
                    columns.push(key.clone());
                    types.insert(key.clone(), None);
                }
                let observed = match Value::from_json(value)
                    .map_err(|e| Error::SourceSchemaMismatch(e.to_string()))?
                {
                    Value::Null => continue,
                    v => v.scalar_type().expect("non-null value has a type"),
                };
                let slot = types.get_mut(key).expect("column registered above");
                *slot = match (*slot, observed) {
                    (None, t) => Some(t),
                    (Some(a), b) if a == b => Some(a),
                    (Some(ScalarType::Int64), ScalarType::Float64)
                    | (Some(ScalarType::Float64), ScalarType::Int64) => {
                        Some(ScalarType::Float64)
                    }
                    (Some(a), b) => {
                        return Err(Error::SourceSchemaMismatch(format!(
                            "column '{key}' mixes {a} and {b}"
                        )))
                    }
                };
            }
            raw_rows.push(obj);
        }
    }

    // columns never observed non-null default to string
    let schema: Vec<(String, ScalarType)> = columns
        .iter()
        .map(|c| (c.clone(), types[c].unwrap_or(ScalarType::String)))
        .collect();
    let ts_col = &src.timestamp_column;
    if !raw_rows.is_empty() && !schema.iter().any(|(n, _)| n == ts_col) {
        return Err(Error::SourceSchemaMismatch(format!(
            "timestamp column '{ts_col}' not present in source data"
        )));
    }

    // pass 2: materialize rows, filtering on the source window
    let mut frame = Frame::new(schema.clone())?;
    for obj in &raw_rows {
        let ts = match obj.get(ts_col).map(Value::from_json).transpose()? {
            Some(Value::Int(ts)) => ts,
            other => {
                return Err(Error::SourceSchemaMismatch(format!(
                    "timestamp column '{ts_col}' must be an integer in every row, got {other:?}"
                )))
            }
        };
        if ts < window.start_ts || ts >= window.end_ts {
            continue;
        }
        let mut row = Vec::with_capacity(schema.len());
        for (name, ty) in &schema {
            let v = match obj.get(name) {
                Some(raw) => Value::from_json(raw)
                    .map_err(|e| Error::SourceSchemaMismatch(e.to_string()))?,
                None => Value::Null,
            };
            row.push(v.coerce(*ty).map_err(|e| {
                Error::SourceSchemaMismatch(format!("column '{name}': {e}"))
            })?);
        }
        frame.push_row(row)?;
    }
    Ok(frame)
}

/// Calculate the feature records for one feature window.
///
/// Runs the feature set's transform over the derived source window,
/// keeps output rows with event timestamp inside the feature window,
/// validates the output contract (index columns + timestamp + every
/// declared feature, no duplicate (ids, timestamp) pairs), and stamps
/// every record with `creation_ts = now`.
pub fn calculate(
    fs: &ResolvedFeatureSet,
    window: FeatureWindow,
    now: i64,
    hooks: &HookRegistry,
    job_id: Option<&str>,
) -> Result<Vec<FeatureRecord>> {
    let source_window = derive_source_window(window, fs.spec.source.source_lookback);
    let source = read_source(&fs.spec.source, source_window)?;
    let ctx = TransformContext {
        feature_set_name: fs.spec.name.clone(),
        feature_set_version: fs.spec.version,
        feature_window: window,
        source_window,
        job_id: job_id.map(|s| s.to_string()),
    };

    let index_columns = fs.index_columns();
    let output = match &fs.spec.transformation {
        TransformDef::Dsl { dsl_program } => {
            let program = dsl::parse(dsl_program)?;
            let bound = dsl::bind(
                &program,
                source.schema(),
                &index_columns,
                &fs.spec.source.timestamp_column,
                &fs.spec.timestamp_column,
            )?;
            dsl::execute(
                &bound,
                &source,
                window,
                fs.spec.materialization.schedule_interval,
            )?
        }
        TransformDef::Opaque { opaque_id } => {
            let hook = hooks
                .get(opaque_id)
                .ok_or_else(|| Error::UnknownTransformHook(opaque_id.clone()))?;
            hook.transform(&source, &ctx)?
        }
    };

    records_from_output(fs, &output, window, now)
}

/// Validate a transform output frame against the feature set contract
/// and cut it into records for the given window.
fn records_from_output(
    fs: &ResolvedFeatureSet,
    output: &Frame,
    window: FeatureWindow,
    now: i64,
) -> Result<Vec<FeatureRecord>> {
    let index_columns = fs.index_columns();
    let mut expected: Vec<(String, ScalarType)> = index_columns.clone();
    expected.push((fs.spec.timestamp_column.clone(), ScalarType::Int64));
    expected.extend(fs.spec.features.iter().cloned());

    // exact column set; order may differ
    if output.schema().len() != expected.len() {
        let got: Vec<&str> = output.schema().iter().map(|(n, _)| n.as_str()).collect();
        let want: Vec<&str> = expected.iter().map(|(n, _)| n.as_str()).collect();
        return Err(Error::TransformOutputSchema(format!(
            "expected columns {want:?}, got {got:?}"
        )));
    }
    let mut positions = Vec::with_capacity(expected.len());
    for (name, ty) in &expected {
        match output.column_index(name) {
            Some(i) => {
                let actual = output.schema()[i].1;
                if actual != *ty && !(actual == ScalarType::Int64 && *ty == ScalarType::Float64)
                {
                    return Err(Error::TransformOutputSchema(format!(
                        "column '{name}' expected {ty}, got {actual}"
                    )));
                }
                positions.push(i);
            }
            None => {
                return Err(Error::TransformOutputSchema(format!(
                    "missing required column '{name}'"
                )))
            }
        }
    }

    let ts_pos = positions[index_columns.len()];
    let schema = fs.record_schema();
    let mut records = Vec::new();
    let mut seen_keys = std::collections::HashSet::new();
    for row in output.rows() {
        let event_ts = match &row[ts_pos] {
            Value::Int(ts) => *ts,
            other => {
                return Err(Error::TransformOutputSchema(format!(
                    "timestamp column '{}' must be int64, got {other:?}",
                    fs.spec.timestamp_column
                )))
            }
        };
        if !window.contains(event_ts) {
            continue;
        }
        let mut ids = IndexMap::new();
        for (slot, (name, ty)) in positions[..index_columns.len()]
            .iter()
            .zip(&index_columns)
        {
            let v = row[*slot].clone().coerce(*ty).map_err(|e| {
                Error::TransformOutputSchema(format!("index column '{name}': {e}"))
            })?;
            ids.insert(name.clone(), v);
        }
        let mut features = IndexMap::new();
        for (slot, (name, ty)) in positions[index_columns.len() + 1..]
            .iter()
            .zip(&fs.spec.features)
        {
            let v = row[*slot].clone().coerce(*ty).map_err(|e| {
                Error::TransformOutputSchema(format!("feature '{name}': {e}"))
            })?;
            features.insert(name.clone(), v);
        }
        let record = FeatureRecord {
            ids,
            event_ts,
            creation_ts: now,
            features,
        };
        schema.validate_record(&record)?;
        if !seen_keys.insert((record.id_key()?, event_ts)) {
            return Err(Error::TransformOutputSchema(format!(
                "duplicate output row for ids {:?} at timestamp {event_ts}",
                record.ids
            )));
        }
        records.push(record);
    }
    Ok(records)
}
