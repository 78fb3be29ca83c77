//! Line-oriented tokenizer and recursive-descent parser for the
//! transformation DSL.
//!
//! One statement per line, `#` starts a comment:
//!
//! ```text
//! agg sum(amount) over 30d as amt_30d_sum
//! expr price * qty as total
//! ```

use crate::error::{DslParseDetail, Error, Result};

use super::{AggFunc, AggSpec, BinOp, DslProgram, DurationUnit, Expr, WindowSpec};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Float(f64),
    Duration(i64, DurationUnit),
    LParen,
    RParen,
    Plus,
    Minus,
    Star,
    Slash,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier '{s}'"),
            Tok::Int(v) => format!("integer {v}"),
            Tok::Float(v) => format!("number {v:?}"),
            Tok::Duration(v, u) => format!("duration {v}{}", u.suffix()),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::Plus => "'+'".into(),
            Tok::Minus => "'-'".into(),
            Tok::Star => "'*'".into(),
            Tok::Slash => "'/'".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn parse_err(line: usize, col: usize, expected: &[&str], found: impl Into<String>) -> Error {
    Error::DslParse(DslParseDetail {
        line,
        column: col,
        expected: expected.iter().map(|s| s.to_string()).collect(),
        found: found.into(),
    })
}

fn tokenize_line(line_no: usize, line: &str) -> Result<Vec<Spanned>> {
    let code = match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    };
    let mut toks = Vec::new();
    let chars: Vec<char> = code.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        match c {
            c if c.is_whitespace() => {
                i += 1;
            }
            '(' => {
                toks.push(Spanned { tok: Tok::LParen, line: line_no, col });
                i += 1;
            }
            ')' => {
                toks.push(Spanned { tok: Tok::RParen, line: line_no, col });
                i += 1;
            }
            '+' => {
                toks.push(Spanned { tok: Tok::Plus, line: line_no, col });
                i += 1;
            }
            '-' => {
                toks.push(Spanned { tok: Tok::Minus, line: line_no, col });
                i += 1;
            }
            '*' => {
                toks.push(Spanned { tok: Tok::Star, line: line_no, col });
                i += 1;
            }
            '/' => {
                toks.push(Spanned { tok: Tok::Slash, line: line_no, col });
                i += 1;
            }
            c if c.is_ascii_digit() => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                // fractional part or exponent makes it a float literal
                let mut is_float = false;
                if i < chars.len() && chars[i] == '.' {
                    is_float = true;
                    i += 1;
                    if i >= chars.len() || !chars[i].is_ascii_digit() {
                        return Err(parse_err(line_no, i, &["digit"], "end of number"));
                    }
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mark = i;
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        is_float = true;
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    } else {
                        i = mark;
                    }
                }
                let text: String = chars[start..i].iter().collect();
                if is_float {
                    let v: f64 = text.parse().map_err(|_| {
                        parse_err(line_no, col, &["number"], format!("'{text}'"))
                    })?;
                    toks.push(Spanned { tok: Tok::Float(v), line: line_no, col });
                } else if i < chars.len() && chars[i].is_ascii_alphabetic() {
                    // duration suffix: 30d, 12h, 90m
                    let sstart = i;
                    while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                        i += 1;
                    }
                    let suffix: String = chars[sstart..i].iter().collect();
                    let unit = DurationUnit::from_suffix(&suffix).ok_or_else(|| {
                        parse_err(
                            line_no,
                            sstart + 1,
                            &["duration unit 'm'", "duration unit 'h'", "duration unit 'd'"],
                            format!("'{suffix}'"),
                        )
                    })?;
                    let v: i64 = text.parse().map_err(|_| {
                        parse_err(line_no, col, &["integer"], format!("'{text}'"))
                    })?;
                    toks.push(Spanned { tok: Tok::Duration(v, unit), line: line_no, col });
                } else {
                    let v: i64 = text.parse().map_err(|_| {
                        parse_err(line_no, col, &["integer"], format!("'{text}'"))
                    })?;
                    toks.push(Spanned { tok: Tok::Int(v), line: line_no, col });
                }
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                toks.push(Spanned { tok: Tok::Ident(word), line: line_no, col });
            }
            other => {
                return Err(parse_err(line_no, col, &["token"], format!("'{other}'")));
            }
        }
    }
    Ok(toks)
}

struct LineParser {
    toks: Vec<Spanned>,
    pos: usize,
    line: usize,
    line_len: usize,
}

impl LineParser {
    fn peek(&self) -> Option<&Spanned> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Spanned> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn eol_col(&self) -> usize {
        self.line_len + 1
    }

    fn fail(&self, expected: &[&str]) -> Error {
        match self.peek() {
            Some(t) => parse_err(t.line, t.col, expected, t.tok.describe()),
            None => parse_err(self.line, self.eol_col(), expected, "end of line"),
        }
    }

    fn expect_ident(&mut self, expected: &[&str]) -> Result<(String, usize)> {
        match self.peek() {
            Some(Spanned { tok: Tok::Ident(_), .. }) => {
                let t = self.next().unwrap();
                if let Tok::Ident(s) = t.tok {
                    Ok((s, t.col))
                } else {
                    unreachable!()
                }
            }
            _ => Err(self.fail(expected)),
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<()> {
        match self.peek() {
            Some(Spanned { tok: Tok::Ident(s), .. }) if s == kw => {
                self.next();
                Ok(())
            }
            _ => Err(self.fail(&[&format!("'{kw}'")])),
        }
    }

    fn expect_tok(&mut self, tok: Tok, name: &str) -> Result<()> {
        match self.peek() {
            Some(t) if t.tok == tok => {
                self.next();
                Ok(())
            }
            _ => Err(self.fail(&[name])),
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    // arith := term (('+' | '-') term)*
    fn parse_arith(&mut self) -> Result<Expr> {
        let mut lhs = self.parse_term()?;
        loop {
            let op = match self.peek().map(|t| &t.tok) {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => break,
            };
            self.next();
            let rhs = self.parse_term()?;
            lhs = Expr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    // term := factor (('*' | '/') factor)*
    fn parse_term(&mut self) -> Result<Expr> {
        let mut lhs = self.parse_factor()?;
        loop {
            let op = match self.peek().map(|t| &t.tok) {
                Some(Tok::Star) => BinOp::Mul,
                Some(Tok::Slash) => BinOp::Div,
                _ => break,
            };
            let op_span = self.next().unwrap();
            let rhs = self.parse_factor()?;
            if op == BinOp::Div {
                let zero = matches!(rhs, Expr::IntLiteral(0)) || matches!(rhs, Expr::FloatLiteral(f) if f == 0.0);
                if zero {
                    return Err(parse_err(
                        op_span.line,
                        op_span.col,
                        &["non-zero divisor"],
                        "division by literal zero",
                    ));
                }
            }
            lhs = Expr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    // factor := NUMBER | IDENT | '(' arith ')'
    fn parse_factor(&mut self) -> Result<Expr> {
        match self.peek().map(|t| t.tok.clone()) {
            Some(Tok::Int(v)) => {
                self.next();
                Ok(Expr::IntLiteral(v))
            }
            Some(Tok::Float(v)) => {
                self.next();
                Ok(Expr::FloatLiteral(v))
            }
            Some(Tok::Ident(name)) => {
                self.next();
                Ok(Expr::Column(name))
            }
            Some(Tok::LParen) => {
                self.next();
                let inner = self.parse_arith()?;
                self.expect_tok(Tok::RParen, "')'")?;
                Ok(inner)
            }
            _ => Err(self.fail(&["number", "column name", "'('"])),
        }
    }
}

enum Statement {
    Agg(AggSpec),
    Expr(String, Expr),
}

fn parse_statement(parser: &mut LineParser) -> Result<Statement> {
    let (head, head_col) = parser.expect_ident(&["'agg'", "'expr'"])?;
    match head.as_str() {
        "agg" => {
            let (func_name, func_col) = parser.expect_ident(&["aggregation function"])?;
            let func = AggFunc::from_name(&func_name).ok_or_else(|| {
                parse_err(
                    parser.line,
                    func_col,
                    &["'sum'", "'count'", "'avg'", "'min'", "'max'", "'latest'"],
                    format!("'{func_name}'"),
                )
            })?;
            parser.expect_tok(Tok::LParen, "'('")?;
            let (input, _) = parser.expect_ident(&["input column"])?;
            parser.expect_tok(Tok::RParen, "')'")?;
            parser.expect_keyword("over")?;
            let window = match parser.peek().map(|t| t.tok.clone()) {
                Some(Tok::Duration(v, unit)) => {
                    let span = parser.next().unwrap();
                    if v <= 0 {
                        return Err(parse_err(
                            span.line,
                            span.col,
                            &["positive window duration"],
                            format!("{v}{}", unit.suffix()),
                        ));
                    }
                    WindowSpec { value: v, unit }
                }
                _ => return Err(parser.fail(&["window duration like '30d'"])),
            };
            parser.expect_keyword("as")?;
            let (output, _) = parser.expect_ident(&["output name"])?;
            Ok(Statement::Agg(AggSpec {
                output,
                func,
                input,
                window,
            }))
        }
        "expr" => {
            let expr = parser.parse_arith()?;
            parser.expect_keyword("as")?;
            let (output, _) = parser.expect_ident(&["output name"])?;
            Ok(Statement::Expr(output, expr))
        }
        other => Err(parse_err(
            parser.line,
            head_col,
            &["'agg'", "'expr'"],
            format!("'{other}'"),
        )),
    }
}

/// Parse DSL source text into a program.
pub fn parse(text: &str) -> Result<DslProgram> {
    let mut aggregations = Vec::new();
    let mut row_exprs: Vec<(String, Expr)> = Vec::new();
    let mut seen_outputs: std::collections::HashSet<String> = std::collections::HashSet::new();

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let toks = tokenize_line(line_no, raw_line)?;
        if toks.is_empty() {
            continue;
        }
        let mut parser = LineParser {
            toks,
            pos: 0,
            line: line_no,
            line_len: raw_line.chars().count(),
        };
        let statement = parse_statement(&mut parser)?;
        if !parser.at_end() {
            return Err(parser.fail(&["end of line"]));
        }
        let output = match &statement {
            Statement::Agg(a) => a.output.clone(),
            Statement::Expr(name, _) => name.clone(),
        };
        if !seen_outputs.insert(output.clone()) {
            return Err(parse_err(
                line_no,
                1,
                &["unique output name"],
                format!("duplicate output '{output}'"),
            ));
        }
        match statement {
            Statement::Agg(a) => aggregations.push(a),
            Statement::Expr(name, expr) => row_exprs.push((name, expr)),
        }
    }

    if aggregations.is_empty() && row_exprs.is_empty() {
        return Err(parse_err(
            1,
            1,
            &["at least one 'agg' or 'expr' statement"],
            "empty program",
        ));
    }
    Ok(DslProgram {
        aggregations,
        row_exprs,
    })
}
