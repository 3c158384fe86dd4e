//! CPLEX-style LP text writer and reader for the emitted subset:
//! `Minimize`, `Subject To`, `Bounds`, `Binaries`, `End`, with the quadratic
//! objective in `[ ... ] / 2` brackets. Grammar notes live in
//! `docs/formats.md`.

use super::{LinearModel, LpError, Sense, VarKind};
use std::collections::HashMap;
use std::fmt::Write as _;

fn fmt_signed(first: bool, coef: f64, atom: &str) -> String {
    let sign = if coef < 0.0 {
        "- "
    } else if first {
        ""
    } else {
        "+ "
    };
    let mag = coef.abs();
    if mag == 1.0 && !atom.is_empty() {
        format!("{sign}{atom}")
    } else if atom.is_empty() {
        format!("{sign}{mag}")
    } else {
        format!("{sign}{mag} {atom}")
    }
}

fn name_safe(name: &str) -> bool {
    // Leading digits, `.`, or sign characters would be tokenized as numbers.
    name.chars()
        .next()
        .map(|c| c.is_ascii_alphabetic() || c == '_')
        .unwrap_or(false)
        && !name.contains(['+', '-', '*', '^', '[', ']', '/', '<', '>', '='])
}

/// Serialize to LP text.
pub fn write_lp_text(model: &LinearModel) -> Result<String, LpError> {
    for name in model.var_names().chain(model.row_names()) {
        if !name_safe(name) {
            return Err(LpError::Export(format!(
                "name `{name}` cannot be represented in LP text"
            )));
        }
    }
    let mut out = String::new();
    let _ = writeln!(out, "\\ Problem: {}", model.name);
    out.push_str("Minimize\n obj:");
    let (c, offset) = model.canonical_linear();
    let mut first = true;
    // Every variable is listed (zero coefficients included) so that a
    // re-parse recreates the exact variable order.
    for v in 0..model.num_vars() {
        if v > 0 && v % 8 == 0 {
            out.push_str("\n     ");
        }
        let _ = write!(out, " {}", fmt_signed(first, c[v], model.var_name(super::VarId(v))));
        first = false;
    }
    if offset != 0.0 {
        let _ = write!(out, " {}", fmt_signed(first, offset, ""));
        first = false;
    }
    let quad = model.canonical_quad();
    if !quad.is_empty() {
        let _ = write!(out, " + [");
        let mut qfirst = true;
        for &(i, j, q) in &quad {
            let atom = if i == j {
                format!("{} ^ 2", model.var_name(super::VarId(i)))
            } else {
                format!(
                    "{} * {}",
                    model.var_name(super::VarId(i)),
                    model.var_name(super::VarId(j))
                )
            };
            // Off-diagonal Q entries appear twice in x'Qx.
            let coef = if i == j { q } else { 2.0 * q };
            let _ = write!(out, " {}", fmt_signed(qfirst, coef, &atom));
            qfirst = false;
        }
        let _ = write!(out, " ] / 2");
        first = false;
    }
    if first {
        let _ = write!(out, " 0");
    }
    out.push('\n');

    out.push_str("Subject To\n");
    let rows = model.matrix_rows();
    for r in 0..model.num_rows() {
        let id = super::RowId(r);
        let _ = write!(out, " {}:", model.row_name(id));
        let mut rfirst = true;
        for &(col, coef) in &rows[r] {
            let _ = write!(
                out,
                " {}",
                fmt_signed(rfirst, coef, model.var_name(super::VarId(col)))
            );
            rfirst = false;
        }
        if rfirst {
            let _ = write!(out, " 0");
        }
        let op = match model.row_sense(id) {
            Sense::Le => "<=",
            Sense::Eq => "=",
            Sense::Ge => ">=",
        };
        let _ = writeln!(out, " {} {}", op, model.row_rhs(id));
    }

    out.push_str("Bounds\n");
    for v in 0..model.num_vars() {
        let id = super::VarId(v);
        if model.var_kind(id) == VarKind::Binary {
            continue;
        }
        let name = model.var_name(id);
        let (lo, up) = model.var_bounds(id);
        match (lo.is_finite(), up.is_finite()) {
            (true, true) if lo == up => {
                let _ = writeln!(out, " {name} = {lo}");
            }
            (true, true) => {
                let _ = writeln!(out, " {lo} <= {name} <= {up}");
            }
            (true, false) => {
                let _ = writeln!(out, " {name} >= {lo}");
            }
            (false, true) => {
                let _ = writeln!(out, " -inf <= {name} <= {up}");
            }
            (false, false) => {
                let _ = writeln!(out, " {name} free");
            }
        }
    }
    let binaries: Vec<&str> = (0..model.num_vars())
        .filter(|&v| model.var_kind(super::VarId(v)) == VarKind::Binary)
        .map(|v| model.var_name(super::VarId(v)))
        .collect();
    if !binaries.is_empty() {
        out.push_str("Binaries\n");
        for b in binaries {
            let _ = writeln!(out, " {b}");
        }
    }
    out.push_str("End\n");
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Name(String),
    Plus,
    Minus,
    Star,
    Caret,
    LBracket,
    RBracket,
    Slash,
    Le,
    Ge,
    Eq,
    Colon,
}

fn tokenize(line: &str, lineno: usize) -> Result<Vec<Tok>, LpError> {
    let mut toks = Vec::new();
    let mut chars = line.chars().peekable();
    while let Some(&ch) = chars.peek() {
        match ch {
            c if c.is_whitespace() => {
                chars.next();
            }
            '+' => {
                chars.next();
                toks.push(Tok::Plus);
            }
            '-' => {
                chars.next();
                // `-inf` in bounds.
                if chars.peek() == Some(&'i') {
                    let word: String = chars.by_ref().take_while(|c| c.is_alphanumeric()).collect();
                    if word == "inf" {
                        toks.push(Tok::Num(f64::NEG_INFINITY));
                        continue;
                    }
                    return Err(LpError::Parse {
                        line: lineno,
                        msg: format!("bad token `-{word}`"),
                    });
                }
                toks.push(Tok::Minus);
            }
            '*' => {
                chars.next();
                toks.push(Tok::Star);
            }
            '^' => {
                chars.next();
                toks.push(Tok::Caret);
            }
            '[' => {
                chars.next();
                toks.push(Tok::LBracket);
            }
            ']' => {
                chars.next();
                toks.push(Tok::RBracket);
            }
            '/' => {
                chars.next();
                toks.push(Tok::Slash);
            }
            ':' => {
                chars.next();
                toks.push(Tok::Colon);
            }
            '<' | '>' | '=' => {
                chars.next();
                if chars.peek() == Some(&'=') {
                    chars.next();
                }
                toks.push(match ch {
                    '<' => Tok::Le,
                    '>' => Tok::Ge,
                    _ => Tok::Eq,
                });
            }
            c if c.is_ascii_digit() || c == '.' => {
                let mut s = String::new();
                while let Some(&c2) = chars.peek() {
                    if c2.is_ascii_digit() || c2 == '.' || c2 == 'e' || c2 == 'E' {
                        s.push(c2);
                        chars.next();
                        // exponent sign
                        if (s.ends_with('e') || s.ends_with('E'))
                            && matches!(chars.peek(), Some('+') | Some('-'))
                        {
                            s.push(chars.next().unwrap());
                        }
                    } else {
                        break;
                    }
                }
                let v: f64 = s.parse().map_err(|_| LpError::Parse {
                    line: lineno,
                    msg: format!("bad number `{s}`"),
                })?;
                toks.push(Tok::Num(v));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut s = String::new();
                while let Some(&c2) = chars.peek() {
                    if c2.is_alphanumeric() || c2 == '_' || c2 == '.' || c2 == '(' || c2 == ')' {
                        s.push(c2);
                        chars.next();
                    } else {
                        break;
                    }
                }
                if s == "inf" {
                    toks.push(Tok::Num(f64::INFINITY));
                } else {
                    toks.push(Tok::Name(s));
                }
            }
            other => {
                return Err(LpError::Parse {
                    line: lineno,
                    msg: format!("unexpected character `{other}`"),
                })
            }
        }
    }
    Ok(toks)
}

/// Linear expression as (terms, constant).
fn parse_linear(
    toks: &[Tok],
    lineno: usize,
) -> Result<(Vec<(String, f64)>, f64), LpError> {
    let mut terms = Vec::new();
    let mut constant = 0.0;
    let mut sign = 1.0;
    let mut pending: Option<f64> = None;
    let err = |msg: &str| LpError::Parse {
        line: lineno,
        msg: msg.to_string(),
    };
    for tok in toks {
        match tok {
            Tok::Plus => {
                if let Some(c) = pending.take() {
                    constant += sign * c;
                }
                sign = 1.0;
            }
            Tok::Minus => {
                if let Some(c) = pending.take() {
                    constant += sign * c;
                }
                sign = -1.0;
            }
            Tok::Num(v) => {
                if pending.is_some() {
                    return Err(err("two numbers in a row"));
                }
                pending = Some(*v);
            }
            Tok::Name(n) => {
                let coef = pending.take().unwrap_or(1.0);
                terms.push((n.clone(), sign * coef));
                sign = 1.0;
            }
            _ => return Err(err("unexpected token in linear expression")),
        }
    }
    if let Some(c) = pending {
        constant += sign * c;
    }
    Ok((terms, constant))
}

/// Quadratic bracket contents: list of (name_i, name_j, coefficient of x_i x_j
/// in x'Qx form, i.e. after the `/ 2` is applied the objective gains q/2).
fn parse_quad(
    toks: &[Tok],
    lineno: usize,
) -> Result<Vec<(String, String, f64)>, LpError> {
    let err = |msg: &str| LpError::Parse {
        line: lineno,
        msg: msg.to_string(),
    };
    let mut out = Vec::new();
    let mut i = 0;
    let mut sign = 1.0;
    while i < toks.len() {
        match &toks[i] {
            Tok::Plus => {
                sign = 1.0;
                i += 1;
            }
            Tok::Minus => {
                sign = -1.0;
                i += 1;
            }
            _ => {
                let coef = if let Tok::Num(v) = &toks[i] {
                    i += 1;
                    *v
                } else {
                    1.0
                };
                let Tok::Name(n1) = &toks[i] else {
                    return Err(err("expected variable in quadratic term"));
                };
                i += 1;
                match toks.get(i) {
                    Some(Tok::Caret) => {
                        let Some(Tok::Num(two)) = toks.get(i + 1) else {
                            return Err(err("expected exponent 2"));
                        };
                        if *two != 2.0 {
                            return Err(err("only squares are supported"));
                        }
                        i += 2;
                        out.push((n1.clone(), n1.clone(), sign * coef));
                    }
                    Some(Tok::Star) => {
                        let Some(Tok::Name(n2)) = toks.get(i + 1) else {
                            return Err(err("expected variable after *"));
                        };
                        i += 2;
                        out.push((n1.clone(), n2.clone(), sign * coef));
                    }
                    _ => return Err(err("quadratic term must be `v ^ 2` or `u * v`")),
                }
                sign = 1.0;
            }
        }
    }
    Ok(out)
}

#[derive(PartialEq, Clone, Copy)]
enum LpSection {
    Objective,
    Constraints,
    Bounds,
    Binaries,
    Done,
}

/// Parse LP text emitted by [`write_lp_text`].
pub fn parse_lp_text(text: &str) -> Result<LinearModel, LpError> {
    let mut model = LinearModel::new("");
    let mut vars: HashMap<String, super::VarId> = HashMap::new();
    // Variables are created with LP-default bounds [0, inf); Bounds lines
    // then overwrite both sides explicitly.
    let mut section: Option<LpSection> = None;
    let obj_lin: Vec<(String, f64)>;
    let obj_const: f64;
    let mut quad: Vec<(String, String, f64)> = Vec::new();
    let mut constraints: Vec<(String, Vec<(String, f64)>, Sense, f64)> = Vec::new();
    let mut bounds: Vec<(String, f64, f64)> = Vec::new();
    let mut binaries: Vec<String> = Vec::new();
    // The multi-line objective is buffered and parsed once.
    let mut obj_tokens: Vec<Tok> = Vec::new();

    for (lineno0, raw) in text.lines().enumerate() {
        let lineno = lineno0 + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('\\') {
            if let Some(rest) = line.strip_prefix("\\ Problem: ") {
                model.name = rest.to_string();
            }
            continue;
        }
        let lower = line.to_ascii_lowercase();
        let new_section = match lower.as_str() {
            "minimize" | "min" => Some(LpSection::Objective),
            "subject to" | "st" | "s.t." => Some(LpSection::Constraints),
            "bounds" => Some(LpSection::Bounds),
            "binaries" | "binary" => Some(LpSection::Binaries),
            "end" => Some(LpSection::Done),
            _ => None,
        };
        if let Some(s) = new_section {
            section = Some(s);
            continue;
        }
        let Some(section) = section else {
            return Err(LpError::Parse {
                line: lineno,
                msg: "content before any section header".into(),
            });
        };
        let toks = tokenize(line, lineno)?;
        match section {
            LpSection::Objective => {
                obj_tokens.extend(toks);
            }
            LpSection::Constraints => {
                let mut name = String::new();
                let mut body = toks.as_slice();
                if toks.len() >= 2 && matches!(toks[1], Tok::Colon) {
                    if let Tok::Name(n) = &toks[0] {
                        name = n.clone();
                        body = &toks[2..];
                    }
                }
                let op_pos = body
                    .iter()
                    .position(|t| matches!(t, Tok::Le | Tok::Ge | Tok::Eq))
                    .ok_or_else(|| LpError::Parse {
                        line: lineno,
                        msg: "constraint without comparison".into(),
                    })?;
                let sense = match body[op_pos] {
                    Tok::Le => Sense::Le,
                    Tok::Ge => Sense::Ge,
                    _ => Sense::Eq,
                };
                let (terms, lhs_const) = parse_linear(&body[..op_pos], lineno)?;
                let (rhs_terms, rhs_const) = parse_linear(&body[op_pos + 1..], lineno)?;
                if !rhs_terms.is_empty() {
                    return Err(LpError::Parse {
                        line: lineno,
                        msg: "variables on the right-hand side are not supported".into(),
                    });
                }
                if name.is_empty() {
                    name = format!("c{}", constraints.len());
                }
                constraints.push((name, terms, sense, rhs_const - lhs_const));
            }
            LpSection::Bounds => {
                // Forms: `l <= x <= u`, `x >= l`, `x <= u`, `x = v`, `x free`.
                match toks.as_slice() {
                    [Tok::Num(l), Tok::Le, Tok::Name(n), Tok::Le, Tok::Num(u)] => {
                        bounds.push((n.clone(), *l, *u));
                    }
                    [Tok::Name(n), Tok::Ge, Tok::Num(l)] => {
                        bounds.push((n.clone(), *l, f64::INFINITY));
                    }
                    [Tok::Name(n), Tok::Le, Tok::Num(u)] => {
                        bounds.push((n.clone(), 0.0, *u));
                    }
                    [Tok::Name(n), Tok::Eq, Tok::Num(v)] => {
                        bounds.push((n.clone(), *v, *v));
                    }
                    [Tok::Name(n), Tok::Name(free)] if free == "free" => {
                        bounds.push((n.clone(), f64::NEG_INFINITY, f64::INFINITY));
                    }
                    _ => {
                        return Err(LpError::Parse {
                            line: lineno,
                            msg: "unrecognized bound line".into(),
                        })
                    }
                }
            }
            LpSection::Binaries => {
                for t in toks {
                    if let Tok::Name(n) = t {
                        binaries.push(n);
                    } else {
                        return Err(LpError::Parse {
                            line: lineno,
                            msg: "binaries section expects names".into(),
                        });
                    }
                }
            }
            LpSection::Done => {
                return Err(LpError::Parse {
                    line: lineno,
                    msg: "content after End".into(),
                })
            }
        }
    }
    if section != Some(LpSection::Done) {
        return Err(LpError::Parse {
            line: 0,
            msg: "missing End".into(),
        });
    }

    // Split objective tokens into the linear part and the bracketed quadratic.
    if let Some(colon) = obj_tokens.iter().position(|t| matches!(t, Tok::Colon)) {
        obj_tokens.drain(..=colon);
    }
    if let Some(lb) = obj_tokens.iter().position(|t| matches!(t, Tok::LBracket)) {
        let rb = obj_tokens
            .iter()
            .position(|t| matches!(t, Tok::RBracket))
            .ok_or(LpError::Parse {
                line: 0,
                msg: "unterminated quadratic bracket".into(),
            })?;
        quad = parse_quad(&obj_tokens[lb + 1..rb], 0)?;
        // Expect `/ 2` after the bracket; the preceding `+` is part of the
        // linear tail handling below.
        match (obj_tokens.get(rb + 1), obj_tokens.get(rb + 2)) {
            (Some(Tok::Slash), Some(Tok::Num(two))) if *two == 2.0 => {}
            _ => {
                return Err(LpError::Parse {
                    line: 0,
                    msg: "quadratic bracket must be followed by / 2".into(),
                })
            }
        }
        let mut rest: Vec<Tok> = obj_tokens[..lb].to_vec();
        // Strip a dangling `+`/`-` introduced by the bracket join.
        if matches!(rest.last(), Some(Tok::Plus)) {
            rest.pop();
        }
        rest.extend_from_slice(&obj_tokens[rb + 3..]);
        let (lin, konst) = parse_linear(&rest, 0)?;
        obj_lin = lin;
        obj_const = konst;
    } else {
        let (lin, konst) = parse_linear(&obj_tokens, 0)?;
        obj_lin = lin;
        obj_const = konst;
    }

    let mut ensure_var = |model: &mut LinearModel, name: &str| -> Result<super::VarId, LpError> {
        if let Some(v) = vars.get(name) {
            return Ok(*v);
        }
        let v = model.add_var(name, 0.0, f64::INFINITY)?;
        vars.insert(name.to_string(), v);
        Ok(v)
    };

    for (name, coef) in &obj_lin {
        let v = ensure_var(&mut model, name)?;
        let cur = model.obj_coef(v);
        model.set_obj_coef(v, cur + coef);
    }
    // A lone `0` objective contributes nothing.
    model.add_obj_offset(obj_const);
    for (name, terms, sense, rhs) in constraints {
        let mut ids = Vec::with_capacity(terms.len());
        for (n, c) in terms {
            let v = ensure_var(&mut model, &n)?;
            ids.push((v, c));
        }
        // A literal `0` left-hand side comes through as an empty term list.
        model.add_row(name, sense, rhs, &ids)?;
    }
    for (name, lo, up) in bounds {
        let v = ensure_var(&mut model, &name)?;
        model.set_var_bounds(v, lo, up);
    }
    for name in binaries {
        let v = ensure_var(&mut model, &name)?;
        model.set_var_bounds(v, 0.0, 1.0);
        model.cols[v.0].kind = VarKind::Binary;
    }
    // [ q x^2 + p x*y ] / 2 means obj += q/2 x^2 + p/2 xy; in 1/2 x'Qx terms
    // the diagonal entry is q and each symmetric off-diagonal pair is p/2.
    for (n1, n2, coef) in quad {
        let v1 = ensure_var(&mut model, &n1)?;
        let v2 = ensure_var(&mut model, &n2)?;
        if v1 == v2 {
            model.add_quad_triplet(v1, v2, coef);
        } else {
            model.add_quad_triplet(v1, v2, coef / 2.0);
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::models_identical;

    fn toy() -> LinearModel {
        let mut m = LinearModel::new("toy");
        let x = m.add_var("x1", 0.0, 4.0).unwrap();
        let y = m.add_var("x2", f64::NEG_INFINITY, f64::INFINITY).unwrap();
        m.set_obj_coef(x, 1.0);
        m.set_obj_coef(y, -2.5);
        m.add_obj_offset(3.0);
        m.add_row("lim", Sense::Le, 10.0, &[(x, 2.0), (y, 1.0)]).unwrap();
        m.add_row("bal", Sense::Eq, 1.0, &[(x, 1.0), (y, -1.0)]).unwrap();
        m
    }

    #[test]
    fn round_trip_linear() {
        let m = toy();
        let text = write_lp_text(&m).unwrap();
        let back = parse_lp_text(&text).unwrap();
        models_identical(&m, &back).unwrap();
    }

    #[test]
    fn round_trip_quad_and_binaries() {
        let mut m = toy();
        let z = m.add_binary("z1").unwrap();
        let x = super::super::VarId(0);
        let y = super::super::VarId(1);
        m.add_row("link", Sense::Ge, 0.0, &[(x, 1.0), (z, -4.0)]).unwrap();
        m.add_sq_term(1.5, vec![(x, 1.0), (y, -1.0)], 0.25).unwrap();
        let text = write_lp_text(&m).unwrap();
        let back = parse_lp_text(&text).unwrap();
        assert_eq!(m.canonical_quad(), back.canonical_quad());
        assert_eq!(m.canonical_linear().0, back.canonical_linear().0);
        assert!((m.canonical_linear().1 - back.canonical_linear().1).abs() < 1e-12);
        assert_eq!(m.matrix_rows(), back.matrix_rows());
        assert_eq!(back.var_kind(super::super::VarId(2)), VarKind::Binary);
        let text2 = write_lp_text(&back).unwrap();
        assert_eq!(text, text2);
    }

    #[test]
    fn rejects_unrepresentable_names() {
        let mut m = LinearModel::new("bad");
        m.add_var("2x", 0.0, 1.0).unwrap();
        assert!(matches!(write_lp_text(&m), Err(LpError::Export(_))));
    }
}
