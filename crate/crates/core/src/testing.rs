//! Test support: brute-force oracles and fault scripting.
//!
//! The oracles re-derive expected results by exhaustive rescan, sharing
//! no evaluation state with the optimized paths they check. They exist
//! for the test suites (unit, property, and acceptance) and are not
//! part of the engine proper.

use std::collections::HashMap;
use std::sync::Arc;

use indexmap::IndexMap;
use parking_lot::Mutex;

use crate::dsl::{AggFunc, BinOp, BoundProgram, ResolvedExpr};
use crate::frame::Frame;
use crate::record::{encode_id_key, FeatureRecord};
use crate::scheduler::{FaultInjector, InjectedFault, Sink};
use crate::value::Value;
use crate::window::FeatureWindow;

struct OracleRow {
    ts: i64,
    order: usize,
    values: Vec<Value>,
}

/// Naive DSL oracle: for every output row, rescan the whole source.
///
/// Implements the documented semantics directly — a group is emitted at
/// `t` iff it has a row in `[t - horizon, t)` (the global group
/// always), each aggregation rescans `[t - W, t)` from scratch, row
/// expressions evaluate on the newest row in `[t - interval, t)` — with
/// none of the executor's incremental state.
pub fn naive_execute(
    program: &BoundProgram,
    source: &Frame,
    window: FeatureWindow,
    interval: i64,
) -> Frame {
    let mut groups: IndexMap<String, (Vec<Value>, Vec<OracleRow>)> = IndexMap::new();
    for (order, row) in source.rows().iter().enumerate() {
        let ts = row[program.source_ts_index]
            .as_int()
            .expect("integer timestamp");
        let key_values: Vec<Value> = program
            .group_indices
            .iter()
            .map(|&i| row[i].clone())
            .collect();
        let key = encode_id_key(key_values.iter()).expect("string/int ids");
        groups
            .entry(key)
            .or_insert_with(|| (key_values, Vec::new()))
            .1
            .push(OracleRow {
                ts,
                order,
                values: row.clone(),
            });
    }
    if program.group_indices.is_empty() && groups.is_empty() {
        groups.insert(String::new(), (Vec::new(), Vec::new()));
    }

    let horizon = program.relevance_horizon(interval);
    let mut out = Frame::new(program.output_schema.clone()).unwrap();
    for (key_values, rows) in groups.values() {
        let rem = window.start_ts.rem_euclid(interval);
        let mut t = if rem == 0 {
            window.start_ts
        } else {
            window.start_ts - rem + interval
        };
        while t < window.end_ts {
            let has_context = rows.iter().any(|r| r.ts >= t - horizon && r.ts < t);
            if has_context || program.group_indices.is_empty() {
                let mut out_row: Vec<Value> = key_values.clone();
                out_row.push(Value::Int(t));
                for agg in &program.aggs {
                    let window_ms = agg.spec.window.millis();
                    let in_window: Vec<&OracleRow> = rows
                        .iter()
                        .filter(|r| r.ts >= t - window_ms && r.ts < t)
                        .collect();
                    out_row.push(naive_aggregate(agg.spec.func, &in_window, agg.input_index));
                }
                if !program.exprs.is_empty() {
                    let latest = rows
                        .iter()
                        .filter(|r| r.ts >= t - interval && r.ts < t)
                        .max_by_key(|r| (r.ts, r.order));
                    for bound in &program.exprs {
                        match latest {
                            Some(r) => out_row.push(naive_eval(&bound.expr, &r.values)),
                            None => out_row.push(Value::Null),
                        }
                    }
                }
                out.push_row(out_row).unwrap();
            }
            t += interval;
        }
    }
    out.sort_rows();
    out
}

fn naive_aggregate(func: AggFunc, rows: &[&OracleRow], input: usize) -> Value {
    let non_null: Vec<Value> = rows
        .iter()
        .map(|r| r.values[input].clone())
        .filter(|v| !v.is_null())
        .collect();
    match func {
        AggFunc::Sum => {
            if non_null.iter().all(|v| matches!(v, Value::Int(_))) {
                Value::Int(non_null.iter().map(|v| v.as_int().unwrap()).sum())
            } else {
                Value::Float(non_null.iter().map(|v| v.as_f64().unwrap()).sum())
            }
        }
        AggFunc::Count => Value::Int(non_null.len() as i64),
        AggFunc::Avg => {
            if non_null.is_empty() {
                Value::Null
            } else {
                let total: f64 = non_null.iter().map(|v| v.as_f64().unwrap()).sum();
                Value::Float(total / non_null.len() as f64)
            }
        }
        AggFunc::Min => non_null
            .iter()
            .min_by(|a, b| a.total_cmp(b))
            .cloned()
            .unwrap_or(Value::Null),
        AggFunc::Max => non_null
            .iter()
            .max_by(|a, b| a.total_cmp(b))
            .cloned()
            .unwrap_or(Value::Null),
        AggFunc::Latest => rows
            .iter()
            .max_by_key(|r| (r.ts, r.order))
            .map(|r| r.values[input].clone())
            .unwrap_or(Value::Null),
    }
}

/// Reference expression evaluation, written independently of the
/// executor's evaluator: nulls propagate, `/` is float division with
/// zero divisors yielding null, int64 arithmetic nulls on overflow.
fn naive_eval(expr: &ResolvedExpr, row: &[Value]) -> Value {
    match expr {
        ResolvedExpr::Col(i) => row[*i].clone(),
        ResolvedExpr::Int(v) => Value::Int(*v),
        ResolvedExpr::Float(v) => Value::Float(*v),
        ResolvedExpr::Binary { op, lhs, rhs } => {
            let (l, r) = (naive_eval(lhs, row), naive_eval(rhs, row));
            let (Some(a), Some(b)) = (l.as_f64(), r.as_f64()) else {
                return Value::Null;
            };
            if *op == BinOp::Div {
                return if b == 0.0 { Value::Null } else { Value::Float(a / b) };
            }
            if let (Value::Int(x), Value::Int(y)) = (&l, &r) {
                let computed = match op {
                    BinOp::Add => x.checked_add(*y),
                    BinOp::Sub => x.checked_sub(*y),
                    BinOp::Mul => x.checked_mul(*y),
                    BinOp::Div => unreachable!(),
                };
                return computed.map(Value::Int).unwrap_or(Value::Null);
            }
            Value::Float(match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => unreachable!(),
            })
        }
    }
}

/// Brute-force "latest per id" over a record multiset: the reference
/// for what the online store must hold after any merge sequence.
pub fn brute_force_latest_per_id(records: &[FeatureRecord]) -> Vec<FeatureRecord> {
    let mut best: HashMap<String, FeatureRecord> = HashMap::new();
    for r in records {
        let key = r.id_key().expect("valid ids");
        match best.get(&key) {
            Some(current) if current.version_key() >= r.version_key() => {}
            _ => {
                best.insert(key, r.clone());
            }
        }
    }
    let mut out: Vec<FeatureRecord> = best.into_values().collect();
    out.sort_by_key(|r| (r.id_key().unwrap(), r.version_key()));
    out
}

/// Brute-force deduplicated record set ordered by (ids, event_ts,
/// creation_ts): what the offline store must hold after any merge
/// sequence.
pub fn brute_force_dedup(records: &[FeatureRecord]) -> Vec<FeatureRecord> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for r in records {
        if seen.insert(r.full_key().expect("valid ids")) {
            out.push(r.clone());
        }
    }
    out.sort_by_key(|r| (r.id_key().unwrap(), r.version_key()));
    out
}

/// Scripted fault injector: a queue of faults per (job, sink) slot,
/// consumed in order as merges are attempted.
#[derive(Default)]
pub struct ScriptedFaults {
    plan: Mutex<HashMap<(String, Sink), Vec<InjectedFault>>>,
}

impl ScriptedFaults {
    pub fn new() -> Arc<ScriptedFaults> {
        Arc::new(ScriptedFaults::default())
    }

    /// Queue `count` merge failures for a (job, sink) slot.
    pub fn fail_times(&self, job_id: &str, sink: Sink, count: usize) {
        let mut plan = self.plan.lock();
        let slot = plan.entry((job_id.to_string(), sink)).or_default();
        for _ in 0..count {
            slot.push(InjectedFault::FailMerge);
        }
    }

    /// Queue a simulated crash before the next merge into `sink`.
    pub fn abort_once(&self, job_id: &str, sink: Sink) {
        self.plan
            .lock()
            .entry((job_id.to_string(), sink))
            .or_default()
            .push(InjectedFault::Abort);
    }
}

impl FaultInjector for ScriptedFaults {
    fn before_sink_merge(&self, job_id: &str, sink: Sink, _attempt: u32) -> Option<InjectedFault> {
        let mut plan = self.plan.lock();
        let slot = plan.get_mut(&(job_id.to_string(), sink))?;
        if slot.is_empty() {
            None
        } else {
            Some(slot.remove(0))
        }
    }
}
