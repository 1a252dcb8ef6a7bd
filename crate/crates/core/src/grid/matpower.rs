//! Reader for the MATPOWER case subset: `baseMVA` plus the `bus`, `gen`
//! and `branch` matrices. Other assignments (`gencost`, `areas`, ...) are
//! tokenized and ignored.

use super::{Branch, Bus, BusId, BusKind, CaseError, Generator, GridCase, RowRef};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(String),
    Str,
    Assign,
    Open,
    Close,
    Semi,
    Comma,
    Newline,
    Other(char),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, CaseError> {
    let mut out = Vec::new();
    for (l, raw) in text.lines().enumerate() {
        let line = l + 1;
        let chars: Vec<char> = raw.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let column = i + 1;
            let push = |tok, out: &mut Vec<Token>| out.push(Token { tok, line, column });
            match c {
                '%' => break,
                ' ' | '\t' | '\r' => i += 1,
                '=' => {
                    push(Tok::Assign, &mut out);
                    i += 1;
                }
                '[' | '{' => {
                    push(Tok::Open, &mut out);
                    i += 1;
                }
                ']' | '}' => {
                    push(Tok::Close, &mut out);
                    i += 1;
                }
                ';' => {
                    push(Tok::Semi, &mut out);
                    i += 1;
                }
                ',' => {
                    push(Tok::Comma, &mut out);
                    i += 1;
                }
                '\'' | '"' => {
                    let quote = c;
                    i += 1;
                    while i < chars.len() && chars[i] != quote {
                        i += 1;
                    }
                    if i == chars.len() {
                        return Err(CaseError::Syntax {
                            line,
                            column,
                            message: "unterminated string".into(),
                        });
                    }
                    i += 1;
                    push(Tok::Str, &mut out);
                }
                c if c.is_ascii_alphabetic() || c == '_' => {
                    let start = i;
                    while i < chars.len()
                        && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || chars[i] == '.')
                    {
                        i += 1;
                    }
                    push(Tok::Ident(chars[start..i].iter().collect()), &mut out);
                }
                c if c.is_ascii_digit() || c == '.' || c == '-' || c == '+' => {
                    let start = i;
                    i += 1;
                    while i < chars.len()
                        && !matches!(chars[i], ' ' | '\t' | '\r' | ';' | ',' | ']' | '%')
                    {
                        i += 1;
                    }
                    push(Tok::Number(chars[start..i].iter().collect()), &mut out);
                }
                other => {
                    push(Tok::Other(other), &mut out);
                    i += 1;
                }
            }
        }
        out.push(Token {
            tok: Tok::Newline,
            line,
            column: chars.len() + 1,
        });
    }
    Ok(out)
}

fn number(token: &Token) -> Result<f64, CaseError> {
    let malformed = |text: &str| CaseError::MalformedNumber {
        line: token.line,
        column: token.column,
        token: text.to_string(),
    };
    match &token.tok {
        Tok::Number(s) => s.parse::<f64>().map_err(|_| malformed(s)),
        Tok::Ident(s) => match s.as_str() {
            "Inf" | "inf" => Ok(f64::INFINITY),
            _ => Err(malformed(s)),
        },
        Tok::Other(c) => Err(malformed(&c.to_string())),
        _ => Err(CaseError::Syntax {
            line: token.line,
            column: token.column,
            message: "expected a number".into(),
        }),
    }
}

/// A parsed matrix row: numeric cells with the position of each cell.
struct Row {
    line: usize,
    cells: Vec<(f64, usize)>,
}

#[derive(Default)]
struct Tables {
    base_mva: Option<f64>,
    bus: Option<Vec<Row>>,
    gen: Option<Vec<Row>>,
    branch: Option<Vec<Row>>,
}

fn parse_tables(tokens: &[Token]) -> Result<Tables, CaseError> {
    let mut tables = Tables::default();
    let mut i = 0;
    while i < tokens.len() {
        let Tok::Ident(name) = &tokens[i].tok else {
            i += 1;
            continue;
        };
        if name == "function" {
            while i < tokens.len() && tokens[i].tok != Tok::Newline {
                i += 1;
            }
            continue;
        }
        let field = name.rsplit('.').next().unwrap_or(name).to_string();
        let at = &tokens[i];
        i += 1;
        if tokens.get(i).map(|t| &t.tok) != Some(&Tok::Assign) {
            return Err(CaseError::Syntax {
                line: at.line,
                column: at.column,
                message: format!("expected '=' after '{name}'"),
            });
        }
        i += 1;
        match tokens.get(i).map(|t| &t.tok) {
            Some(Tok::Open) => {
                i += 1;
                let (rows, next) = parse_matrix(tokens, i)?;
                i = next;
                match field.as_str() {
                    "bus" => tables.bus = Some(rows),
                    "gen" => tables.gen = Some(rows),
                    "branch" => tables.branch = Some(rows),
                    _ => {}
                }
            }
            Some(_) => {
                if field == "baseMVA" {
                    tables.base_mva = Some(number(&tokens[i])?);
                }
                while i < tokens.len() && !matches!(tokens[i].tok, Tok::Newline | Tok::Semi) {
                    i += 1;
                }
            }
            None => {
                return Err(CaseError::Syntax {
                    line: at.line,
                    column: at.column,
                    message: "assignment without a value".into(),
                })
            }
        }
    }
    Ok(tables)
}

fn parse_matrix(tokens: &[Token], mut i: usize) -> Result<(Vec<Row>, usize), CaseError> {
    let mut rows = Vec::new();
    let mut current: Option<Row> = None;
    loop {
        let Some(token) = tokens.get(i) else {
            let last = tokens.last().map_or((1, 1), |t| (t.line, t.column));
            return Err(CaseError::Syntax {
                line: last.0,
                column: last.1,
                message: "matrix is missing its closing ']'".into(),
            });
        };
        match &token.tok {
            Tok::Close => {
                rows.extend(current.take());
                return Ok((rows, i + 1));
            }
            Tok::Semi | Tok::Newline => rows.extend(current.take()),
            Tok::Comma => {}
            _ => {
                let value = number(token)?;
                current
                    .get_or_insert_with(|| Row {
                        line: token.line,
                        cells: Vec::new(),
                    })
                    .cells
                    .push((value, token.column));
            }
        }
        i += 1;
    }
}

fn check_width(rows: &[Row], table: &'static str, expected: usize) -> Result<(), CaseError> {
    for row in rows {
        if row.cells.len() < expected {
            return Err(CaseError::ShortRow {
                line: row.line,
                table,
                found: row.cells.len(),
                expected,
            });
        }
    }
    Ok(())
}

fn bus_id(row: &Row, col: usize) -> Result<BusId, CaseError> {
    let (v, column) = row.cells[col];
    if v.fract() != 0.0 || v < 1.0 || v > BusId::MAX as f64 {
        return Err(CaseError::MalformedNumber {
            line: row.line,
            column,
            token: format!("{v} (bus numbers must be positive integers)"),
        });
    }
    Ok(v as BusId)
}

pub(super) fn parse(text: &str) -> Result<GridCase, CaseError> {
    let tokens = lex(text)?;
    let tables = parse_tables(&tokens)?;
    let base_mva = tables
        .base_mva
        .ok_or(CaseError::MissingTable("mpc.baseMVA"))?;
    let bus_rows = tables.bus.ok_or(CaseError::MissingTable("mpc.bus"))?;
    let gen_rows = tables.gen.unwrap_or_default();
    let branch_rows = tables.branch.ok_or(CaseError::MissingTable("mpc.branch"))?;
    check_width(&bus_rows, "bus", 10)?;
    check_width(&gen_rows, "gen", 8)?;
    check_width(&branch_rows, "branch", 11)?;

    let mut buses = Vec::with_capacity(bus_rows.len());
    for row in &bus_rows {
        let v = |c: usize| row.cells[c].0;
        let kind = match v(1) as i64 {
            3 => BusKind::Slack,
            2 => BusKind::Pv,
            1 => BusKind::Pq,
            t => {
                let id = bus_id(row, 0)?;
                let reason = if t == 4 {
                    "isolated buses (type 4) are not supported".to_string()
                } else {
                    format!("unknown bus type {}", v(1))
                };
                return Err(CaseError::AtLine {
                    line: row.line,
                    source: Box::new(CaseError::InvalidBus { id, reason }),
                });
            }
        };
        buses.push(Bus {
            id: bus_id(row, 0)?,
            kind,
            p_load: v(2),
            q_load: v(3),
            gs: v(4),
            bs: v(5),
            vm_init: v(7),
            va_init: v(8),
            base_kv: v(9),
        });
    }

    let mut generators = Vec::with_capacity(gen_rows.len());
    for row in &gen_rows {
        let v = |c: usize| row.cells[c].0;
        generators.push(Generator {
            bus: bus_id(row, 0)?,
            p_set: v(1),
            vm_set: v(5),
            in_service: v(7) > 0.0,
        });
    }

    let mut branches = Vec::with_capacity(branch_rows.len());
    for row in &branch_rows {
        let v = |c: usize| row.cells[c].0;
        branches.push(Branch {
            from_bus: bus_id(row, 0)?,
            to_bus: bus_id(row, 1)?,
            r: v(2),
            x: v(3),
            b_charge: v(4),
            rate_a: v(5),
            tap: if v(8) == 0.0 { 1.0 } else { v(8) },
            shift: v(9),
            in_service: v(10) != 0.0,
        });
    }

    GridCase::build(base_mva, buses, branches, generators).map_err(|(error, row)| {
        let line = match row {
            Some(RowRef::Bus(i)) => bus_rows[i].line,
            Some(RowRef::Branch(i)) => branch_rows[i].line,
            Some(RowRef::Generator(i)) => gen_rows[i].line,
            None => return error,
        };
        CaseError::AtLine {
            line,
            source: Box::new(error),
        }
    })
}
