//! CPLEX-style LP text format.
//!
//! The writer emits `Minimize`, `Subject To` (omitted when there are no rows),
//! `Bounds` with an explicit entry for every variable, `Binary` and `End`.
//! Numbers use Rust's shortest round-trip formatting so a re-read problem is
//! bit-identical. The reader accepts that layout plus the common variations
//! (case-insensitive keywords, `st`/`s.t.`, multi-line expressions, implicit
//! default bounds `[0, +inf)`).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::MilpError;
use crate::problem::{MilpProblem, Row, Sense, VarType};

fn sanitize(name: &str, fallback: &str) -> String {
    let mut out: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "_.[]{}!#$%&()/,;?@`'|~".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect();
    let bad_start = out
        .chars()
        .next()
        .is_none_or(|c| c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E');
    if bad_start {
        out = format!("{fallback}{out}");
    }
    out
}

fn unique_names(raw: impl Iterator<Item = String>, prefix: &str) -> Vec<String> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    raw.enumerate()
        .map(|(i, n)| {
            let base = sanitize(&n, &format!("{prefix}{i}_"));
            let count = seen.entry(base.clone()).or_insert(0);
            *count += 1;
            if *count == 1 {
                base
            } else {
                format!("{base}__{i}")
            }
        })
        .collect()
}

fn write_term(out: &mut String, first: bool, coef: f64, var: &str) {
    if first {
        if coef < 0.0 {
            let _ = write!(out, " - {:?} {}", -coef, var);
        } else {
            let _ = write!(out, " {:?} {}", coef, var);
        }
    } else if coef < 0.0 {
        let _ = write!(out, " - {:?} {}", -coef, var);
    } else {
        let _ = write!(out, " + {:?} {}", coef, var);
    }
}

fn fmt_num(v: f64) -> String {
    if v == f64::INFINITY {
        "+inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:?}")
    }
}

/// Renders `problem` as LP text.
pub fn to_lp_string(problem: &MilpProblem) -> String {
    let vars = unique_names(problem.names.iter().cloned(), "x");
    let rows = unique_names(problem.rows.iter().map(|r| r.name.clone()), "c");
    let mut out = String::new();
    out.push_str("\\ gridshed MILP export\nMinimize\n obj:");
    let mut first = true;
    // every variable appears here, zeros included, so a reader sees them in index order
    for (j, &c) in problem.objective.iter().enumerate() {
        write_term(&mut out, first, c, &vars[j]);
        first = false;
    }
    if problem.objective_offset != 0.0 {
        let c = problem.objective_offset;
        let _ = write!(out, " {} {:?}", if c < 0.0 { '-' } else { '+' }, c.abs());
    }
    out.push('\n');
    if !problem.rows.is_empty() {
        out.push_str("Subject To\n");
        for (i, row) in problem.rows.iter().enumerate() {
            let _ = write!(out, " {}:", rows[i]);
            let mut first = true;
            for &(j, a) in &row.coeffs {
                write_term(&mut out, first, a, &vars[j]);
                first = false;
            }
            if first {
                let _ = write!(out, " 0.0 {}", vars.first().map_or("x0", |s| s.as_str()));
            }
            let _ = writeln!(out, " {} {:?}", row.sense.symbol(), row.rhs);
        }
    }
    out.push_str("Bounds\n");
    for j in 0..problem.num_vars() {
        let (lo, hi) = (problem.lower[j], problem.upper[j]);
        if lo == f64::NEG_INFINITY && hi == f64::INFINITY {
            let _ = writeln!(out, " {} free", vars[j]);
        } else if lo == hi {
            let _ = writeln!(out, " {} = {}", vars[j], fmt_num(lo));
        } else {
            let _ = writeln!(out, " {} <= {} <= {}", fmt_num(lo), vars[j], fmt_num(hi));
        }
    }
    let bins: Vec<&str> = (0..problem.num_vars())
        .filter(|&j| problem.var_types[j] == VarType::Binary)
        .map(|j| vars[j].as_str())
        .collect();
    if !bins.is_empty() {
        out.push_str("Binary\n");
        for b in bins {
            let _ = writeln!(out, " {b}");
        }
    }
    out.push_str("End\n");
    out
}

pub fn export_problem(problem: &MilpProblem, path: &Path) -> Result<(), MilpError> {
    fs::write(path, to_lp_string(problem))?;
    Ok(())
}

pub fn import_problem(path: &Path) -> Result<MilpProblem, MilpError> {
    parse_lp(&fs::read_to_string(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Section {
    None,
    Objective,
    Constraints,
    Bounds,
    Binary,
    End,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(String),
    Colon,
}

fn tokenize(line: &str, lineno: usize) -> Result<Vec<Tok>, MilpError> {
    let mut toks = Vec::new();
    let chars: Vec<char> = line.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == ':' {
            toks.push(Tok::Colon);
            i += 1;
        } else if c == '<' || c == '>' || c == '=' {
            let mut op = String::from(c);
            if i + 1 < chars.len() && chars[i + 1] == '=' {
                op.push('=');
                i += 1;
            } else if c == '=' && i + 1 < chars.len() && (chars[i + 1] == '<' || chars[i + 1] == '>') {
                op = format!("{}=", chars[i + 1]);
                i += 1;
            }
            let norm = match op.as_str() {
                "<" | "<=" => "<=",
                ">" | ">=" => ">=",
                _ => "=",
            };
            toks.push(Tok::Op(norm.into()));
            i += 1;
        } else if c == '+' || c == '-' {
            // signed infinity literal
            let rest: String = chars[i + 1..].iter().collect();
            let lower = rest.to_ascii_lowercase();
            if lower.starts_with("infinity") || lower.starts_with("inf") {
                let len = if lower.starts_with("infinity") { 8 } else { 3 };
                toks.push(Tok::Num(if c == '+' { f64::INFINITY } else { f64::NEG_INFINITY }));
                i += 1 + len;
            } else {
                toks.push(Tok::Op(c.to_string()));
                i += 1;
            }
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len()
                && (chars[i].is_ascii_digit()
                    || chars[i] == '.'
                    || ((chars[i] == 'e' || chars[i] == 'E')
                        && i + 1 < chars.len()
                        && (chars[i + 1].is_ascii_digit() || chars[i + 1] == '-' || chars[i + 1] == '+'))
                    || ((chars[i] == '-' || chars[i] == '+') && (chars[i - 1] == 'e' || chars[i - 1] == 'E')))
            {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            let v = s.parse::<f64>().map_err(|_| MilpError::Parse {
                line: lineno,
                msg: format!("bad number '{s}'"),
            })?;
            toks.push(Tok::Num(v));
        } else {
            let start = i;
            while i < chars.len()
                && !chars[i].is_whitespace()
                && !":<>=+-".contains(chars[i])
            {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            let lower = s.to_ascii_lowercase();
            if lower == "inf" || lower == "infinity" {
                toks.push(Tok::Num(f64::INFINITY));
            } else {
                toks.push(Tok::Ident(s));
            }
        }
    }
    Ok(toks)
}

struct Builder {
    problem: MilpProblem,
    index: HashMap<String, usize>,
    bounded: Vec<bool>,
}

impl Builder {
    fn var(&mut self, name: &str) -> usize {
        if let Some(&j) = self.index.get(name) {
            return j;
        }
        let j = self
            .problem
            .add_var(name, 0.0, 0.0, f64::INFINITY, VarType::Continuous);
        self.index.insert(name.to_string(), j);
        self.bounded.push(false);
        j
    }
}

/// Parses a linear expression `[+|-] [coef] var ...` into terms; returns the
/// remaining tokens (comparison and rhs).
fn parse_expr(b: &mut Builder, toks: &[Tok], lineno: usize) -> Result<(Vec<(usize, f64)>, f64, usize), MilpError> {
    let mut constant = 0.0;
    let mut terms: Vec<(usize, f64)> = Vec::new();
    let mut i = 0;
    let mut sign: f64 = 1.0;
    let mut coef: Option<f64> = None;
    while i < toks.len() {
        match &toks[i] {
            Tok::Op(op) if op == "+" || op == "-" => {
                if let Some(c) = coef.take() {
                    constant += sign * c;
                    sign = 1.0;
                }
                if op == "-" {
                    sign = -sign;
                }
            }
            Tok::Op(_) => break,
            Tok::Num(v) => {
                coef = Some(coef.unwrap_or(1.0) * v);
            }
            Tok::Ident(name) => {
                let j = b.var(name);
                terms.push((j, sign * coef.unwrap_or(1.0)));
                sign = 1.0;
                coef = None;
            }
            Tok::Colon => {
                return Err(MilpError::Parse {
                    line: lineno,
                    msg: "unexpected ':'".into(),
                })
            }
        }
        i += 1;
    }
    if let Some(c) = coef {
        constant += sign * c;
    }
    Ok((terms, constant, i))
}

pub fn parse_lp(text: &str) -> Result<MilpProblem, MilpError> {
    let mut b = Builder {
        problem: MilpProblem::new(),
        index: HashMap::new(),
        bounded: Vec::new(),
    };
    let mut section = Section::None;
    // constraint statements may span lines; accumulate tokens until a rhs appears
    let mut pending: Vec<Tok> = Vec::new();
    let mut pending_line = 0;
    let mut objective_toks: Vec<Tok> = Vec::new();

    for (k, raw) in text.lines().enumerate() {
        let lineno = k + 1;
        let line = raw.split('\\').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lower = line.to_ascii_lowercase();
        let header = match lower.as_str() {
            "minimize" | "minimise" | "min" => Some(Section::Objective),
            "maximize" | "maximise" | "max" => {
                return Err(MilpError::Parse {
                    line: lineno,
                    msg: "only minimization is supported".into(),
                })
            }
            "subject to" | "such that" | "st" | "s.t." | "st." => Some(Section::Constraints),
            "bounds" | "bound" => Some(Section::Bounds),
            "binary" | "binaries" | "bin" => Some(Section::Binary),
            "general" | "generals" | "gen" | "integer" | "integers" => {
                return Err(MilpError::Parse {
                    line: lineno,
                    msg: "general integer variables are not supported".into(),
                })
            }
            "end" => Some(Section::End),
            _ => None,
        };
        if let Some(sec) = header {
            if !pending.is_empty() {
                return Err(MilpError::Parse {
                    line: pending_line,
                    msg: "incomplete constraint".into(),
                });
            }
            if section == Section::Objective {
                let toks = strip_label(&objective_toks);
                let (terms, constant, _) = parse_expr(&mut b, toks, lineno)?;
                for (j, c) in terms {
                    b.problem.objective[j] += c;
                }
                b.problem.objective_offset += constant;
                objective_toks.clear();
            }
            section = sec;
            continue;
        }
        let toks = tokenize(line, lineno)?;
        match section {
            Section::None => {
                return Err(MilpError::Parse {
                    line: lineno,
                    msg: "content before the objective section".into(),
                })
            }
            Section::Objective => objective_toks.extend(toks),
            Section::Constraints => {
                if pending.is_empty() {
                    pending_line = lineno;
                }
                pending.extend(toks);
                let has_rhs = pending
                    .iter()
                    .position(|t| matches!(t, Tok::Op(o) if o == "<=" || o == ">=" || o == "="))
                    .is_some_and(|p| p + 1 < pending.len());
                if has_rhs {
                    let stmt = std::mem::take(&mut pending);
                    parse_constraint(&mut b, &stmt, pending_line)?;
                }
            }
            Section::Bounds => parse_bound(&mut b, &toks, lineno)?,
            Section::Binary => {
                for t in toks {
                    if let Tok::Ident(name) = t {
                        let j = b.var(&name);
                        b.problem.var_types[j] = VarType::Binary;
                        if !b.bounded[j] {
                            b.problem.upper[j] = 1.0;
                        }
                    }
                }
            }
            Section::End => {}
        }
    }
    if section == Section::Objective {
        let toks = strip_label(&objective_toks).to_vec();
        let (terms, constant, _) = parse_expr(&mut b, &toks, 0)?;
        for (j, c) in terms {
            b.problem.objective[j] += c;
        }
        b.problem.objective_offset += constant;
    }
    if !pending.is_empty() {
        return Err(MilpError::Parse {
            line: pending_line,
            msg: "incomplete constraint".into(),
        });
    }
    b.problem.validate()?;
    Ok(b.problem)
}

fn strip_label(toks: &[Tok]) -> &[Tok] {
    if toks.len() >= 2 && matches!(toks[0], Tok::Ident(_)) && toks[1] == Tok::Colon {
        &toks[2..]
    } else {
        toks
    }
}

fn parse_constraint(b: &mut Builder, toks: &[Tok], lineno: usize) -> Result<(), MilpError> {
    let (name, body) = if toks.len() >= 2 && toks[1] == Tok::Colon {
        match &toks[0] {
            Tok::Ident(n) => (n.clone(), &toks[2..]),
            _ => (format!("c{}", b.problem.num_rows()), toks),
        }
    } else {
        (format!("c{}", b.problem.num_rows()), toks)
    };
    let (terms, constant, at) = parse_expr(b, body, lineno)?;
    if constant != 0.0 {
        return Err(MilpError::Parse {
            line: lineno,
            msg: "constant terms on the left of a constraint are not supported".into(),
        });
    }
    let sense = match body.get(at) {
        Some(Tok::Op(o)) if o == "<=" => Sense::Le,
        Some(Tok::Op(o)) if o == ">=" => Sense::Ge,
        Some(Tok::Op(o)) if o == "=" => Sense::Eq,
        _ => {
            return Err(MilpError::Parse {
                line: lineno,
                msg: "missing comparison operator".into(),
            })
        }
    };
    let rhs = parse_signed_number(&body[at + 1..], lineno)?;
    b.problem.add_row(Row::new(name, terms, sense, rhs));
    Ok(())
}

fn parse_signed_number(toks: &[Tok], lineno: usize) -> Result<f64, MilpError> {
    match toks {
        [Tok::Num(v)] => Ok(*v),
        [Tok::Op(s), Tok::Num(v)] if s == "-" => Ok(-v),
        [Tok::Op(s), Tok::Num(v)] if s == "+" => Ok(*v),
        _ => Err(MilpError::Parse {
            line: lineno,
            msg: "expected a number".into(),
        }),
    }
}

fn parse_bound(b: &mut Builder, toks: &[Tok], lineno: usize) -> Result<(), MilpError> {
    let err = |msg: &str| MilpError::Parse {
        line: lineno,
        msg: msg.into(),
    };
    // collapse sign operators into numbers
    let mut t: Vec<Tok> = Vec::new();
    let mut k = 0;
    while k < toks.len() {
        match (&toks[k], toks.get(k + 1)) {
            (Tok::Op(s), Some(Tok::Num(v))) if s == "-" || s == "+" => {
                t.push(Tok::Num(if s == "-" { -v } else { *v }));
                k += 2;
            }
            (tok, _) => {
                t.push(tok.clone());
                k += 1;
            }
        }
    }
    let op = |o: &Tok| match o {
        Tok::Op(s) => Some(s.clone()),
        _ => None,
    };
    match t.as_slice() {
        [Tok::Ident(v), Tok::Ident(kw)] if kw.eq_ignore_ascii_case("free") => {
            let j = b.var(v);
            b.problem.lower[j] = f64::NEG_INFINITY;
            b.problem.upper[j] = f64::INFINITY;
            b.bounded[j] = true;
        }
        [Tok::Num(lo), o1, Tok::Ident(v), o2, Tok::Num(hi)] => {
            if op(o1).as_deref() != Some("<=") || op(o2).as_deref() != Some("<=") {
                return Err(err("double bound must use '<='"));
            }
            let j = b.var(v);
            b.problem.lower[j] = *lo;
            b.problem.upper[j] = *hi;
            b.bounded[j] = true;
        }
        [Tok::Ident(v), o, Tok::Num(val)] => {
            let j = b.var(v);
            match op(o).as_deref() {
                Some("<=") => b.problem.upper[j] = *val,
                Some(">=") => b.problem.lower[j] = *val,
                Some("=") => {
                    b.problem.lower[j] = *val;
                    b.problem.upper[j] = *val;
                }
                _ => return Err(err("bad bound operator")),
            }
            b.bounded[j] = true;
        }
        [Tok::Num(val), o, Tok::Ident(v)] => {
            let j = b.var(v);
            match op(o).as_deref() {
                Some("<=") => b.problem.lower[j] = *val,
                Some(">=") => b.problem.upper[j] = *val,
                Some("=") => {
                    b.problem.lower[j] = *val;
                    b.problem.upper[j] = *val;
                }
                _ => return Err(err("bad bound operator")),
            }
            b.bounded[j] = true;
        }
        _ => return Err(err("unrecognized bound statement")),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MilpProblem {
        let mut p = MilpProblem::new();
        let x = p.add_var("gen[1]", 0.5, 0.0, 3.25, VarType::Continuous);
        let th = p.add_var("theta b2", 0.0, -0.6, 0.6, VarType::Continuous);
        let z = p.add_var("z_L1", 0.01, 0.0, 1.0, VarType::Binary);
        let f = p.add_var("f", 0.0, f64::NEG_INFINITY, f64::INFINITY, VarType::Continuous);
        p.add_row(Row::new("bal", vec![(x, 1.0), (f, -1.0)], Sense::Eq, 1.5));
        p.add_row(Row::new("cap", vec![(f, 1.0), (z, -2.0)], Sense::Le, 0.0));
        p.add_row(Row::new("ang", vec![(f, 1.0), (th, -12.5), (z, 1.2e-7)], Sense::Ge, -3.0));
        p
    }

    #[test]
    fn round_trip_is_exact() {
        let mut p = sample();
        p.objective_offset = 0.16;
        let text = to_lp_string(&p);
        let q = parse_lp(&text).unwrap();
        assert_eq!(q.objective, p.objective);
        assert_eq!(q.objective_offset, p.objective_offset);
        assert_eq!(q.lower, p.lower);
        assert_eq!(q.upper, p.upper);
        assert_eq!(q.var_types, p.var_types);
        assert_eq!(q.rows.len(), p.rows.len());
        for (a, b) in p.rows.iter().zip(&q.rows) {
            assert_eq!(a.coeffs, b.coeffs);
            assert_eq!(a.sense, b.sense);
            assert_eq!(a.rhs, b.rhs);
        }
        // names are sanitized once, then stable
        assert_eq!(to_lp_string(&q), text);
    }

    #[test]
    fn no_rows_writes_bounds_only() {
        let mut p = MilpProblem::new();
        p.add_var("a", 1.0, 0.0, 2.0, VarType::Continuous);
        let text = to_lp_string(&p);
        assert!(!text.contains("Subject To"));
        assert!(text.contains("Bounds"));
        assert_eq!(parse_lp(&text).unwrap().lower, vec![0.0]);
    }

    #[test]
    fn reads_hand_written_file() {
        let text = "\\ comment\nMINIMIZE\n obj: 2 x + 3 y\n - z\nST\n c1: x + y\n >= 2\n c2: x - z <= 4\nBOUNDS\n y <= 10\n -1 <= z <= 1\nBINARIES\n x\nEND\n";
        let p = parse_lp(text).unwrap();
        assert_eq!(p.num_vars(), 3);
        assert_eq!(p.objective, vec![2.0, 3.0, -1.0]);
        assert_eq!(p.var_types[0], VarType::Binary);
        assert_eq!((p.lower[0], p.upper[0]), (0.0, 1.0));
        assert_eq!((p.lower[1], p.upper[1]), (0.0, 10.0));
        assert_eq!((p.lower[2], p.upper[2]), (-1.0, 1.0));
        assert_eq!(p.rows[0].coeffs, vec![(0, 1.0), (1, 1.0)]);
        assert_eq!(p.rows[1].sense, Sense::Le);
    }

    #[test]
    fn rejects_general_integers() {
        assert!(parse_lp("Minimize\n obj: x\nGeneral\n x\nEnd\n").is_err());
    }
}
