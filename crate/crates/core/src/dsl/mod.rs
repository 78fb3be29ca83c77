//! The transformation DSL: rolling-window aggregations and row-level
//! arithmetic over source data.
//!
//! A program is a list of statements, one per line:
//!
//! ```text
//! # 30-day rolling sum, emitted per schedule interval
//! agg sum(amount) over 30d as amt_30d_sum
//! expr price * qty as total
//! ```
//!
//! Execution emits one output row per (group-key combination, aligned
//! timestamp): output timestamps are the multiples of the feature set's
//! schedule interval inside the feature window, and each marks the end
//! of its aggregation period. An aggregation over window `W` at output
//! time `t` covers source rows with timestamp in `[t - W, t)`; `latest`
//! picks the newest in-window row (ties broken by source row order).
//! Row expressions evaluate against the group's newest row in the
//! current period `[t - interval, t)`.
//!
//! A group appears at time `t` when it has at least one source row in
//! the relevance horizon `[t - H, t)`, where `H` is the largest
//! aggregation window (and at least the emission interval when row
//! expressions are present). With no group keys there is a single
//! global group that is emitted on every grid point, so an empty source
//! still produces rows (sum/count zero, everything else null). Nulls
//! propagate through row expressions, as do runtime division by zero
//! and int64 overflow.
//!
//! `parse` and `bind` are pure; `execute` is pure given its inputs.

mod exec;
mod parser;

pub use parser::parse;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::value::ScalarType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggFunc {
    Sum,
    Count,
    Avg,
    Min,
    Max,
    Latest,
}

impl AggFunc {
    pub fn from_name(name: &str) -> Option<AggFunc> {
        Some(match name {
            "sum" => AggFunc::Sum,
            "count" => AggFunc::Count,
            "avg" => AggFunc::Avg,
            "min" => AggFunc::Min,
            "max" => AggFunc::Max,
            "latest" => AggFunc::Latest,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            AggFunc::Sum => "sum",
            AggFunc::Count => "count",
            AggFunc::Avg => "avg",
            AggFunc::Min => "min",
            AggFunc::Max => "max",
            AggFunc::Latest => "latest",
        }
    }

    fn requires_numeric_input(&self) -> bool {
        matches!(
            self,
            AggFunc::Sum | AggFunc::Avg | AggFunc::Min | AggFunc::Max
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DurationUnit {
    Minutes,
    Hours,
    Days,
}

impl DurationUnit {
    pub fn from_suffix(s: &str) -> Option<DurationUnit> {
        Some(match s {
            "m" => DurationUnit::Minutes,
            "h" => DurationUnit::Hours,
            "d" => DurationUnit::Days,
            _ => return None,
        })
    }

    pub fn suffix(&self) -> &'static str {
        match self {
            DurationUnit::Minutes => "m",
            DurationUnit::Hours => "h",
            DurationUnit::Days => "d",
        }
    }

    pub fn millis(&self) -> i64 {
        match self {
            DurationUnit::Minutes => 60_000,
            DurationUnit::Hours => 3_600_000,
            DurationUnit::Days => 86_400_000,
        }
    }
}

/// Aggregation window as written in the source (`90m`, `12h`, `30d`),
/// kept in its original unit so pretty-printing round-trips.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub value: i64,
    pub unit: DurationUnit,
}

impl WindowSpec {
    pub fn millis(&self) -> i64 {
        self.value * self.unit.millis()
    }
}

impl std::fmt::Display for WindowSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}{}", self.value, self.unit.suffix())
    }
}

/// One rolling-window aggregation statement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggSpec {
    pub output: String,
    pub func: AggFunc,
    pub input: String,
    pub window: WindowSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(&self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }
}

/// Arithmetic expression over input columns and numeric literals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Column(String),
    IntLiteral(i64),
    FloatLiteral(f64),
    Binary {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
}

impl Expr {
    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary { op, .. } => op.precedence(),
            _ => 3,
        }
    }

    fn print(&self, out: &mut String) {
        match self {
            Expr::Column(name) => out.push_str(name),
            Expr::IntLiteral(v) => out.push_str(&v.to_string()),
            // {:?} renders the shortest representation that parses back
            // to the same f64 and always marks it as a float
            Expr::FloatLiteral(v) => out.push_str(&format!("{v:?}")),
            Expr::Binary { op, lhs, rhs } => {
                let prec = op.precedence();
                if lhs.precedence() < prec {
                    out.push('(');
                    lhs.print(out);
                    out.push(')');
                } else {
                    lhs.print(out);
                }
                out.push(' ');
                out.push_str(op.symbol());
                out.push(' ');
                // left-associative grammar: a right operand at the same
                // precedence level needs parentheses to reparse equal
                if rhs.precedence() <= prec {
                    out.push('(');
                    rhs.print(out);
                    out.push(')');
                } else {
                    rhs.print(out);
                }
            }
        }
    }
}

/// A parsed program: aggregations and row expressions in declaration
/// order. Group keys and the timestamp column are supplied at bind time
/// from the owning feature set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DslProgram {
    pub aggregations: Vec<AggSpec>,
    pub row_exprs: Vec<(String, Expr)>,
}

/// Render a program back to DSL source such that
/// `parse(pretty_print(p))` structurally equals `p`.
pub fn pretty_print(program: &DslProgram) -> String {
    let mut out = String::new();
    for agg in &program.aggregations {
        out.push_str(&format!(
            "agg {}({}) over {} as {}\n",
            agg.func.name(),
            agg.input,
            agg.window,
            agg.output
        ));
    }
    for (name, expr) in &program.row_exprs {
        let mut rendered = String::new();
        expr.print(&mut rendered);
        out.push_str(&format!("expr {rendered} as {name}\n"));
    }
    out
}

/// Expression with column references resolved to source positions.
#[derive(Debug, Clone)]
pub(crate) enum ResolvedExpr {
    Col(usize),
    Int(i64),
    Float(f64),
    Binary {
        op: BinOp,
        lhs: Box<ResolvedExpr>,
        rhs: Box<ResolvedExpr>,
    },
}

#[derive(Debug, Clone)]
pub(crate) struct BoundAgg {
    pub spec: AggSpec,
    pub input_index: usize,
    pub input_type: ScalarType,
    pub output_type: ScalarType,
}

#[derive(Debug, Clone)]
pub(crate) struct BoundExpr {
    pub name: String,
    pub expr: ResolvedExpr,
    pub output_type: ScalarType,
}

/// A program bound against a concrete source schema: every column
/// reference resolved, output schema computed as index columns +
/// timestamp + declared outputs.
#[derive(Debug, Clone)]
pub struct BoundProgram {
    pub group_keys: Vec<String>,
    /// Name of the timestamp column in the output schema.
    pub timestamp_column: String,
    pub output_schema: Vec<(String, ScalarType)>,
    pub(crate) source_schema: Vec<(String, ScalarType)>,
    pub(crate) group_indices: Vec<usize>,
    pub(crate) source_ts_index: usize,
    pub(crate) aggs: Vec<BoundAgg>,
    pub(crate) exprs: Vec<BoundExpr>,
}

impl BoundProgram {
    /// Largest lookback any output at time `t` can depend on. Source
    /// coverage of `[window.start - horizon, window.end)` makes results
    /// independent of how the feature window is split.
    pub fn relevance_horizon(&self, emit_interval: i64) -> i64 {
        let max_window = self
            .aggs
            .iter()
            .map(|a| a.spec.window.millis())
            .max()
            .unwrap_or(0);
        if self.exprs.is_empty() {
            max_window
        } else {
            max_window.max(emit_interval)
        }
    }
}

fn resolve_column(
    schema: &[(String, ScalarType)],
    name: &str,
) -> Result<(usize, ScalarType)> {
    schema
        .iter()
        .position(|(n, _)| n == name)
        .map(|i| (i, schema[i].1))
        .ok_or_else(|| Error::UnknownColumn(name.to_string()))
}

fn bind_expr(
    expr: &Expr,
    schema: &[(String, ScalarType)],
) -> Result<(ResolvedExpr, ScalarType)> {
    match expr {
        Expr::Column(name) => {
            let (idx, ty) = resolve_column(schema, name)?;
            if !ty.is_numeric() {
                return Err(Error::TypeMismatch(format!(
                    "column '{name}' has type {ty}; expressions require numeric operands"
                )));
            }
            Ok((ResolvedExpr::Col(idx), ty))
        }
        Expr::IntLiteral(v) => Ok((ResolvedExpr::Int(*v), ScalarType::Int64)),
        Expr::FloatLiteral(v) => Ok((ResolvedExpr::Float(*v), ScalarType::Float64)),
        Expr::Binary { op, lhs, rhs } => {
            let (l, lt) = bind_expr(lhs, schema)?;
            let (r, rt) = bind_expr(rhs, schema)?;
            let ty = if *op == BinOp::Div
                || lt == ScalarType::Float64
                || rt == ScalarType::Float64
            {
                ScalarType::Float64
            } else {
                ScalarType::Int64
            };
            Ok((
                ResolvedExpr::Binary {
                    op: *op,
                    lhs: Box::new(l),
                    rhs: Box::new(r),
                },
                ty,
            ))
        }
    }
}

/// Bind a parsed program to a source schema, the entity index columns
/// (the group keys), and the source/output timestamp column names.
pub fn bind(
    program: &DslProgram,
    source_schema: &[(String, ScalarType)],
    index_columns: &[(String, ScalarType)],
    source_timestamp_column: &str,
    output_timestamp_column: &str,
) -> Result<BoundProgram> {
    let mut group_indices = Vec::new();
    for (name, ty) in index_columns {
        let (idx, source_ty) = resolve_column(source_schema, name)?;
        if source_ty != *ty {
            return Err(Error::TypeMismatch(format!(
                "index column '{name}' is {ty} in the entity but {source_ty} in the source"
            )));
        }
        if *ty == ScalarType::Float64 {
            return Err(Error::TypeMismatch(format!(
                "index column '{name}' must be string or int64"
            )));
        }
        group_indices.push(idx);
    }

    let (source_ts_index, ts_ty) = resolve_column(source_schema, source_timestamp_column)?;
    if ts_ty != ScalarType::Int64 {
        return Err(Error::TypeMismatch(format!(
            "timestamp column '{source_timestamp_column}' must be int64 milliseconds, got {ts_ty}"
        )));
    }

    let mut aggs = Vec::new();
    for spec in &program.aggregations {
        let (input_index, input_type) = resolve_column(source_schema, &spec.input)?;
        if spec.func.requires_numeric_input() && !input_type.is_numeric() {
            return Err(Error::TypeMismatch(format!(
                "{}({}) requires a numeric column, got {input_type}",
                spec.func.name(),
                spec.input
            )));
        }
        let output_type = match spec.func {
            AggFunc::Sum | AggFunc::Min | AggFunc::Max => input_type,
            AggFunc::Count => ScalarType::Int64,
            AggFunc::Avg => ScalarType::Float64,
            AggFunc::Latest => input_type,
        };
        aggs.push(BoundAgg {
            spec: spec.clone(),
            input_index,
            input_type,
            output_type,
        });
    }

    let mut exprs = Vec::new();
    for (name, expr) in &program.row_exprs {
        let (resolved, output_type) = bind_expr(expr, source_schema)?;
        exprs.push(BoundExpr {
            name: name.clone(),
            expr: resolved,
            output_type,
        });
    }

    // output schema: index columns + timestamp + declared outputs
    let mut output_schema: Vec<(String, ScalarType)> = index_columns.to_vec();
    output_schema.push((output_timestamp_column.to_string(), ScalarType::Int64));
    let reserved: std::collections::HashSet<&str> = output_schema
        .iter()
        .map(|(n, _)| n.as_str())
        .collect();
    for agg in &aggs {
        if reserved.contains(agg.spec.output.as_str()) {
            return Err(Error::SchemaConflict(format!(
                "output '{}' collides with an index or timestamp column",
                agg.spec.output
            )));
        }
    }
    for e in &exprs {
        if reserved.contains(e.name.as_str()) {
            return Err(Error::SchemaConflict(format!(
                "output '{}' collides with an index or timestamp column",
                e.name
            )));
        }
    }
    for agg in &aggs {
        output_schema.push((agg.spec.output.clone(), agg.output_type));
    }
    for e in &exprs {
        output_schema.push((e.name.clone(), e.output_type));
    }

    Ok(BoundProgram {
        group_keys: index_columns.iter().map(|(n, _)| n.clone()).collect(),
        timestamp_column: output_timestamp_column.to_string(),
        output_schema,
        source_schema: source_schema.to_vec(),
        group_indices,
        source_ts_index,
        aggs,
        exprs,
    })
}

pub use exec::execute;

#[cfg(test)]
mod tests;
