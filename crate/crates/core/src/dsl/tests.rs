use proptest::prelude::*;

use crate::error::Error;
use crate::frame::Frame;
use crate::testing::naive_execute;
use crate::value::{ScalarType, Value};
use crate::window::FeatureWindow;

use super::*;

fn source_schema() -> Vec<(String, ScalarType)> {
    vec![
        ("account_id".into(), ScalarType::String),
        ("ts".into(), ScalarType::Int64),
        ("amount".into(), ScalarType::Int64),
        ("price".into(), ScalarType::Float64),
        ("qty".into(), ScalarType::Int64),
        ("label".into(), ScalarType::String),
    ]
}

fn index_columns() -> Vec<(String, ScalarType)> {
    vec![("account_id".into(), ScalarType::String)]
}

fn bind_default(program: &DslProgram) -> BoundProgram {
    bind(program, &source_schema(), &index_columns(), "ts", "ts").unwrap()
}

fn frame_with(rows: Vec<(&str, i64, i64, f64, i64, &str)>) -> Frame {
    let mut f = Frame::new(source_schema()).unwrap();
    for (id, ts, amount, price, qty, label) in rows {
        f.push_row(vec![
            Value::Str(id.into()),
            Value::Int(ts),
            Value::Int(amount),
            Value::Float(price),
            Value::Int(qty),
            Value::Str(label.into()),
        ])
        .unwrap();
    }
    f
}

fn window(a: i64, b: i64) -> FeatureWindow {
    FeatureWindow::new(a, b).unwrap()
}

// ── parsing ──────────────────────────────────────────────────────────

#[test]
fn parses_single_aggregation() {
    let p = parse("agg sum(amount) over 30d as amt_30d_sum").unwrap();
    assert_eq!(
        p.aggregations,
        vec![AggSpec {
            output: "amt_30d_sum".into(),
            func: AggFunc::Sum,
            input: "amount".into(),
            window: WindowSpec {
                value: 30,
                unit: DurationUnit::Days
            },
        }]
    );
    assert_eq!(p.aggregations[0].window.millis(), 30 * 86_400_000);
    assert!(p.row_exprs.is_empty());
}

#[test]
fn parses_row_expression_product_tree() {
    let p = parse("expr price * qty as total").unwrap();
    assert_eq!(
        p.row_exprs,
        vec![(
            "total".into(),
            Expr::Binary {
                op: BinOp::Mul,
                lhs: Box::new(Expr::Column("price".into())),
                rhs: Box::new(Expr::Column("qty".into())),
            }
        )]
    );
}

#[test]
fn reports_position_of_missing_paren() {
    let err = parse("agg sum(amount over 30d").unwrap_err();
    let Error::DslParse(detail) = err else {
        panic!("expected a parse error")
    };
    assert_eq!(detail.line, 1);
    // the ')' should have appeared where 'over' sits
    assert_eq!(detail.column, 16);
    assert!(detail.expected.iter().any(|e| e.contains(")")));
}

#[test]
fn rejects_division_by_literal_zero() {
    assert!(parse("expr amount / 0 as x").is_err());
    assert!(parse("expr amount / 0.0 as x").is_err());
    assert!(parse("expr amount / (0) as x").is_err());
    // non-literal divisors are a runtime concern
    assert!(parse("expr amount / qty as x").is_ok());
}

#[test]
fn rejects_duplicate_outputs_and_empty_programs() {
    assert!(parse("").is_err());
    assert!(parse("# only a comment\n").is_err());
    let err = parse("agg sum(amount) over 1d as x\nexpr price as x").unwrap_err();
    assert!(matches!(err, Error::DslParse(_)));
}

#[test]
fn rejects_zero_width_window() {
    assert!(parse("agg sum(amount) over 0d as x").is_err());
}

#[test]
fn comments_and_blank_lines_are_ignored() {
    let p = parse("# daily totals\n\nagg count(amount) over 1d as n # trailing\n").unwrap();
    assert_eq!(p.aggregations.len(), 1);
}

// ── pretty printing ──────────────────────────────────────────────────

#[test]
fn pretty_print_round_trips_fixed_cases() {
    let cases = [
        "agg sum(amount) over 30d as amt_30d_sum",
        "agg latest(label) over 12h as last_label\nexpr price * qty as total",
        "expr price * (qty + 1) as a\nexpr price / qty - 2.5 as b",
        "expr qty - (qty - 1) as nested",
        "expr qty / (price * qty) as ratio",
    ];
    for text in cases {
        let p = parse(text).unwrap();
        let printed = pretty_print(&p);
        let reparsed = parse(&printed).unwrap();
        assert_eq!(reparsed, p, "round trip failed for {printed:?}");
    }
}

fn arb_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        prop_oneof![Just("amount"), Just("price"), Just("qty")]
            .prop_map(|c| Expr::Column(c.into())),
        (0i64..1000).prop_map(Expr::IntLiteral),
        (0.001f64..1000.0).prop_map(Expr::FloatLiteral),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        (
            prop_oneof![
                Just(BinOp::Add),
                Just(BinOp::Sub),
                Just(BinOp::Mul),
                Just(BinOp::Div)
            ],
            inner.clone(),
            inner,
        )
            .prop_map(|(op, lhs, rhs)| Expr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            })
    })
}

pub(crate) fn arb_program() -> impl Strategy<Value = DslProgram> {
    let agg = (
        prop_oneof![
            Just(AggFunc::Sum),
            Just(AggFunc::Count),
            Just(AggFunc::Avg),
            Just(AggFunc::Min),
            Just(AggFunc::Max),
            Just(AggFunc::Latest),
        ],
        prop_oneof![Just("amount"), Just("price"), Just("qty")],
        1i64..48,
        prop_oneof![
            Just(DurationUnit::Minutes),
            Just(DurationUnit::Hours),
            Just(DurationUnit::Days)
        ],
    )
        .prop_map(|(func, input, value, unit)| AggSpec {
            output: String::new(), // named below
            func,
            input: input.into(),
            window: WindowSpec { value, unit },
        });
    (
        prop::collection::vec(agg, 0..=3),
        prop::collection::vec(arb_expr(), 0..=2),
    )
        .prop_filter_map("programs need at least one statement", |(aggs, exprs)| {
            if aggs.is_empty() && exprs.is_empty() {
                return None;
            }
            let aggregations = aggs
                .into_iter()
                .enumerate()
                .map(|(i, mut a)| {
                    a.output = format!("agg_{i}");
                    a
                })
                .collect();
            let row_exprs = exprs
                .into_iter()
                .enumerate()
                .map(|(i, e)| (format!("expr_{i}"), e))
                .collect();
            Some(DslProgram {
                aggregations,
                row_exprs,
            })
        })
}

proptest! {
    #[test]
    fn pretty_print_parse_is_identity(program in arb_program()) {
        // filter out programs with a literal-zero divisor; the printer
        // would render something parse rejects
        let printed = pretty_print(&program);
        if let Ok(reparsed) = parse(&printed) {
            prop_assert_eq!(reparsed, program);
        } else {
            prop_assert!(printed.contains("/ 0"), "unexpected parse failure:\n{}", printed);
        }
    }
}

// ── binding ──────────────────────────────────────────────────────────

#[test]
fn bind_resolves_columns_and_types() {
    let p = parse("agg sum(amount) over 1h as s\nagg avg(price) over 1h as a\nexpr price * qty as t").unwrap();
    let bp = bind_default(&p);
    assert_eq!(
        bp.output_schema,
        vec![
            ("account_id".to_string(), ScalarType::String),
            ("ts".to_string(), ScalarType::Int64),
            ("s".to_string(), ScalarType::Int64),
            ("a".to_string(), ScalarType::Float64),
            ("t".to_string(), ScalarType::Float64),
        ]
    );
}

#[test]
fn bind_rejects_unknown_column() {
    let p = parse("agg sum(missing) over 1h as s").unwrap();
    let err = bind(&p, &source_schema(), &index_columns(), "ts", "ts").unwrap_err();
    assert_eq!(err.kind(), "UnknownColumn");
}

#[test]
fn bind_rejects_non_numeric_aggregation_input() {
    let p = parse("agg sum(label) over 1h as s").unwrap();
    let err = bind(&p, &source_schema(), &index_columns(), "ts", "ts").unwrap_err();
    assert_eq!(err.kind(), "TypeMismatch");
    // count and latest accept any input type
    let p = parse("agg count(label) over 1h as c\nagg latest(label) over 1h as l").unwrap();
    let bp = bind_default(&p);
    assert_eq!(bp.output_schema[3], ("l".to_string(), ScalarType::String));
}

#[test]
fn bind_rejects_output_colliding_with_index_column() {
    let p = parse("agg sum(amount) over 1h as account_id").unwrap();
    let err = bind(&p, &source_schema(), &index_columns(), "ts", "ts").unwrap_err();
    assert_eq!(err.kind(), "SchemaConflict");
}

// ── execution ────────────────────────────────────────────────────────

#[test]
fn sum_over_two_intervals() {
    // interval = 1ms, window = 2 intervals; rows at ts=1 and ts=2;
    // the output at t=3 covers [1, 3) and sums to 12
    let p = DslProgram {
        aggregations: vec![AggSpec {
            output: "s".into(),
            func: AggFunc::Sum,
            input: "amount".into(),
            window: WindowSpec {
                value: 2,
                unit: DurationUnit::Minutes,
            },
        }],
        row_exprs: vec![],
    };
    // use minutes as the base unit: interval one minute, window two
    let interval = 60_000;
    let bp = bind_default(&p);
    let source = frame_with(vec![
        ("a", 60_000, 5, 1.0, 1, "x"),
        ("a", 120_000, 7, 1.0, 1, "x"),
    ]);
    let out = execute(&bp, &source, window(3 * 60_000, 4 * 60_000), interval).unwrap();
    assert_eq!(out.len(), 1);
    let row = &out.rows()[0];
    assert_eq!(row[1], Value::Int(180_000));
    assert_eq!(row[2], Value::Int(12));
}

#[test]
fn empty_source_without_group_keys_emits_aligned_rows() {
    let p = parse(
        "agg sum(amount) over 2h as s\nagg count(amount) over 2h as c\nagg avg(amount) over 2h as a\nagg min(amount) over 2h as lo\nagg max(amount) over 2h as hi\nagg latest(label) over 2h as last",
    )
    .unwrap();
    let bp = bind(&p, &source_schema(), &[], "ts", "ts").unwrap();
    let source = Frame::new(source_schema()).unwrap();
    let hour = 3_600_000;
    let out = execute(&bp, &source, window(0, 3 * hour), hour).unwrap();
    assert_eq!(out.len(), 3);
    for row in out.rows() {
        assert_eq!(row[1], Value::Int(0)); // sum
        assert_eq!(row[2], Value::Int(0)); // count
        assert_eq!(row[3], Value::Null); // avg
        assert_eq!(row[4], Value::Null); // min
        assert_eq!(row[5], Value::Null); // max
        assert_eq!(row[6], Value::Null); // latest
    }
}

#[test]
fn empty_source_with_group_keys_emits_nothing() {
    let p = parse("agg sum(amount) over 2h as s").unwrap();
    let bp = bind_default(&p);
    let source = Frame::new(source_schema()).unwrap();
    let out = execute(&bp, &source, window(0, 3_600_000 * 3), 3_600_000).unwrap();
    assert!(out.is_empty());
}

#[test]
fn avg_equals_sum_over_count_when_count_positive() {
    let p = parse("agg sum(price) over 3h as s\nagg count(price) over 3h as c\nagg avg(price) over 3h as a").unwrap();
    let bp = bind_default(&p);
    let hour = 3_600_000;
    let source = frame_with(vec![
        ("a", hour / 2, 1, 2.5, 1, "x"),
        ("a", hour, 1, 4.0, 1, "x"),
        ("a", 2 * hour + 1, 1, 1.5, 1, "x"),
        ("b", hour, 1, 10.0, 1, "x"),
    ]);
    let out = execute(&bp, &source, window(0, 6 * hour), hour).unwrap();
    assert!(!out.is_empty());
    for row in out.rows() {
        let (s, c, a) = (&row[2], &row[3], &row[4]);
        let count = c.as_int().unwrap();
        if count > 0 {
            // recompute the quotient independently
            let expected = s.as_f64().unwrap() / count as f64;
            assert!((a.as_f64().unwrap() - expected).abs() < 1e-12);
        } else {
            assert_eq!(a, &Value::Null);
        }
    }
}

#[test]
fn latest_breaks_timestamp_ties_by_source_order() {
    let p = parse("agg latest(amount) over 2h as last").unwrap();
    let bp = bind_default(&p);
    let hour = 3_600_000;
    let source = frame_with(vec![
        ("a", hour, 5, 1.0, 1, "x"),
        ("a", hour, 9, 1.0, 1, "x"), // same ts, later in source order
    ]);
    let out = execute(&bp, &source, window(2 * hour, 3 * hour), hour).unwrap();
    assert_eq!(out.rows()[0][2], Value::Int(9));
}

#[test]
fn window_discipline_ignores_rows_at_or_after_t() {
    // a row exactly at the output timestamp belongs to the next period
    let p = parse("agg sum(amount) over 1h as s").unwrap();
    let bp = bind_default(&p);
    let hour = 3_600_000;
    let source = frame_with(vec![
        ("a", hour, 100, 1.0, 1, "x"),
        ("a", hour - 1, 1, 1.0, 1, "x"),
    ]);
    let out = execute(&bp, &source, window(hour, 2 * hour), hour).unwrap();
    // at t = 1h the row at ts = 1h is excluded
    assert_eq!(out.rows()[0][2], Value::Int(1));
}

#[test]
fn row_expressions_use_latest_row_of_current_period() {
    let p = parse("expr price * qty as total").unwrap();
    let bp = bind_default(&p);
    let hour = 3_600_000;
    let source = frame_with(vec![
        ("a", 10, 1, 2.0, 3, "x"),
        ("a", 20, 1, 5.0, 4, "x"),
    ]);
    let out = execute(&bp, &source, window(0, 3 * hour), hour).unwrap();
    // t = 1h sees the newest row of [0, 1h) which is ts=20
    assert_eq!(out.rows()[0][2], Value::Float(20.0));
    // t = 2h has no row in [1h, 2h): expression is null, row not
    // emitted at all since nothing is in the horizon either
    assert_eq!(out.len(), 1);
}

#[test]
fn null_inputs_are_skipped_by_aggregates() {
    let p = parse("agg sum(amount) over 2h as s\nagg count(amount) over 2h as c").unwrap();
    let bp = bind_default(&p);
    let hour = 3_600_000;
    let mut source = Frame::new(source_schema()).unwrap();
    source
        .push_row(vec![
            Value::Str("a".into()),
            Value::Int(10),
            Value::Null,
            Value::Float(1.0),
            Value::Int(1),
            Value::Str("x".into()),
        ])
        .unwrap();
    source
        .push_row(vec![
            Value::Str("a".into()),
            Value::Int(20),
            Value::Int(7),
            Value::Float(1.0),
            Value::Int(1),
            Value::Str("x".into()),
        ])
        .unwrap();
    let out = execute(&bp, &source, window(hour, 2 * hour), hour).unwrap();
    assert_eq!(out.rows()[0][2], Value::Int(7));
    assert_eq!(out.rows()[0][3], Value::Int(1));
}

#[test]
fn execute_is_deterministic() {
    let p = parse("agg sum(price) over 2h as s\nexpr price + 0.5 as shifted").unwrap();
    let bp = bind_default(&p);
    let hour = 3_600_000;
    let source = frame_with(vec![
        ("b", hour, 1, 2.5, 1, "x"),
        ("a", hour / 2, 1, 4.5, 1, "x"),
        ("a", hour + 1, 1, 1.25, 1, "x"),
    ]);
    let a = execute(&bp, &source, window(0, 4 * hour), hour).unwrap();
    let b = execute(&bp, &source, window(0, 4 * hour), hour).unwrap();
    assert_eq!(a, b);
}

// ── oracle equivalence ───────────────────────────────────────────────

fn arb_source(max_rows: usize) -> impl Strategy<Value = Vec<(String, i64, i64, f64, i64, String)>> {
    prop::collection::vec(
        (
            prop_oneof![Just("a"), Just("b"), Just("c")],
            0i64..(6 * 3_600_000),
            -50i64..50,
            -10.0f64..10.0,
            0i64..20,
            prop_oneof![Just("x"), Just("y")],
        )
            .prop_map(|(id, ts, amount, price, qty, label)| {
                (id.to_string(), ts, amount, price, qty, label.to_string())
            }),
        0..max_rows,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn executor_matches_naive_rescan(
        program in arb_program(),
        rows in arb_source(200),
        start_slot in 0i64..4,
        width_slots in 1i64..4,
    ) {
        let bp = match bind(&program, &source_schema(), &index_columns(), "ts", "ts") {
            Ok(bp) => bp,
            Err(_) => return Ok(()), // arbitrary programs may not bind
        };
        let interval = 3_600_000i64;
        let w = window(start_slot * interval, (start_slot + width_slots) * interval);
        let mut source = Frame::new(source_schema()).unwrap();
        for (id, ts, amount, price, qty, label) in rows {
            source.push_row(vec![
                Value::Str(id),
                Value::Int(ts),
                Value::Int(amount),
                Value::Float(price),
                Value::Int(qty),
                Value::Str(label),
            ]).unwrap();
        }
        let fast = execute(&bp, &source, w, interval).unwrap();
        let naive = naive_execute(&bp, &source, w, interval);
        prop_assert_eq!(fast.schema(), naive.schema());
        prop_assert_eq!(fast.len(), naive.len());
        for (fr, nr) in fast.rows().iter().zip(naive.rows()) {
            for (fv, nv) in fr.iter().zip(nr) {
                match (fv, nv) {
                    (Value::Float(a), Value::Float(b)) => {
                        let scale = a.abs().max(b.abs()).max(1.0);
                        prop_assert!((a - b).abs() <= 1e-9 * scale,
                            "float mismatch: {a} vs {b}");
                    }
                    (a, b) => prop_assert_eq!(a, b, "cell mismatch"),
                }
            }
        }
    }

    #[test]
    fn no_output_depends_on_rows_at_or_after_its_timestamp(
        program in arb_program(),
        rows in arb_source(60),
    ) {
        // window discipline: removing all source rows with ts >= t must
        // not change the output row at t
        let bp = match bind(&program, &source_schema(), &index_columns(), "ts", "ts") {
            Ok(bp) => bp,
            Err(_) => return Ok(()),
        };
        let interval = 3_600_000i64;
        let w = window(0, 4 * interval);
        let mut source = Frame::new(source_schema()).unwrap();
        for (id, ts, amount, price, qty, label) in &rows {
            source.push_row(vec![
                Value::Str(id.clone()),
                Value::Int(*ts),
                Value::Int(*amount),
                Value::Float(*price),
                Value::Int(*qty),
                Value::Str(label.clone()),
            ]).unwrap();
        }
        let full = execute(&bp, &source, w, interval).unwrap();
        for grid in 1..4 {
            let t = grid * interval;
            let mut truncated = Frame::new(source_schema()).unwrap();
            for (id, ts, amount, price, qty, label) in &rows {
                if *ts >= t {
                    continue;
                }
                truncated.push_row(vec![
                    Value::Str(id.clone()),
                    Value::Int(*ts),
                    Value::Int(*amount),
                    Value::Float(*price),
                    Value::Int(*qty),
                    Value::Str(label.clone()),
                ]).unwrap();
            }
            let partial = execute(&bp, &truncated, window(t - interval, t), interval).unwrap();
            let full_at_t: Vec<_> = full
                .rows()
                .iter()
                .filter(|r| r[1] == Value::Int(t - interval))
                .cloned()
                .collect();
            let partial_at_t: Vec<_> = partial
                .rows()
                .iter()
                .filter(|r| r[1] == Value::Int(t - interval))
                .cloned()
                .collect();
            prop_assert_eq!(full_at_t, partial_at_t);
        }
    }
}
